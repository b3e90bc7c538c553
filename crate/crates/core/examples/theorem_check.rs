//! Variance of a function over a small ball against the linearized
//! prediction, for a linear and a nonlinear function.

use mtl_lab::validation::{theorem_check, TestFunction};

fn main() -> mtl_lab::Result<()> {
    let linear = TestFunction::Linear { a: vec![2.0, 0.0, 0.0] };
    let r = theorem_check(&linear, &[0.0; 3], 0.1, 100_000, 0)?;
    println!(
        "linear d=3 delta=0.1: Var {:.6} predicted {:.6} (rel. error {:.2}%)",
        r.variance,
        r.predicted_variance,
        100.0 * r.relative_error().unwrap_or(f64::NAN)
    );

    let nonlinear = TestFunction::Tanh { a: vec![1.0, -0.5, 2.0, 0.3] };
    let x0 = [0.4, 0.9, -0.2, 1.3];
    for delta in [1.0, 0.3, 0.1, 0.01] {
        let r = theorem_check(&nonlinear, &x0, delta, 100_000, 1)?;
        let ratio = r.empirical_k1.unwrap_or(f64::NAN) / r.k1;
        println!(
            "tanh d=4 delta={delta:<5} Var/||grad||^2 = {:.4e}  ratio to delta^2/(d+2) = {ratio:.4}  curvature gap {:.2e}",
            r.empirical_k1.unwrap_or(f64::NAN),
            r.nonlinearity_gap().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
