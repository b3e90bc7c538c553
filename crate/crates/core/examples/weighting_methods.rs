//! Drives each weighting rule with synthetic loss streams whose scales
//! differ by task, without training a network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtl_lab::weighting::{gradnorm_closed_form, pcgrad_combine_traced, DwaState, GradNormState, SlawState};
use mtl_lab::autodiff::{GradientMap, ParamId, Tensor};

fn main() -> mtl_lab::Result<()> {
    let scales = [1.0, 4.0, 9.0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut slaw = SlawState::new(3, 0.99)?;
    let mut dwa = DwaState::new(3, 2.0, 0.9)?;
    let mut gradnorm = GradNormState::new(3, 0.12, 0.025)?;
    for step in 1..=2000 {
        let decay = (-(step as f64) / 800.0).exp();
        let losses: Vec<f64> = scales
            .iter()
            .map(|s| s * (1.0 + decay + 0.1 * rng.random::<f64>()))
            .collect();
        let norms: Vec<f64> = scales.iter().map(|s| s * (0.5 + 0.05 * rng.random::<f64>())).collect();
        let ws = slaw.update(&losses)?;
        let wd = dwa.update(&losses)?;
        let wg = gradnorm.update(&losses, &norms)?;
        if step % 500 == 0 {
            println!("step {step:>4}  SLAW {:?}", round(&ws.0));
            println!("           DWA  {:?}", round(&wd.0));
            println!("           GradNorm {:?}", round(&wg.0));
        }
    }
    let closed = gradnorm_closed_form(&[0.5, 2.0, 4.5], &[1.0; 3], 0.0)?;
    println!("GradNorm optimum at alpha = 0: {:?}", round(&closed.0));

    let g = |v: [f64; 2]| {
        let mut m = GradientMap::new();
        m.insert(ParamId(0), Tensor::vector(&v).expect("finite"));
        m
    };
    let (combined, trace) = pcgrad_combine_traced(&[g([1.0, 0.0]), g([-1.0, 1.0])], &mut rng);
    println!("PCGrad combined {:?}", combined.get(ParamId(0)).map(|t| t.data().to_vec()));
    for p in trace {
        println!("  projected task {} off task {}: dot {:+.3} -> {:+.3}", p.task, p.against, p.dot_before, p.dot_after);
    }
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
