//! Records a small computation on a tape, runs reverse mode and checks the
//! result against central finite differences.

use mtl_lab::autodiff::{ParamId, Tape, Tensor};

fn loss(w: &Tensor, x: &Tensor) -> mtl_lab::Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let wv = tape.param(ParamId(0), w.clone());
    let xv = tape.constant(x.clone());
    let z = tape.matmul(xv, wv)?;
    let h = tape.tanh(z);
    let sq = tape.square(h);
    let out = tape.mean(sq);
    let grads = tape.backward(out)?;
    Ok((tape.scalar(out), grads.get(ParamId(0)).expect("gradient of w").clone()))
}

fn main() -> mtl_lab::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.2, -0.7])?;
    let w = Tensor::matrix(3, 2, vec![0.1, -0.3, 0.8, 0.05, -0.4, 0.6])?;
    let (value, grad) = loss(&w, &x)?;
    println!("loss = {value:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let fd = (loss(&plus, &x)?.0 - loss(&minus, &x)?.0) / (2.0 * h);
        let ad = grad.data()[i];
        let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-12);
        worst = worst.max(rel);
        println!("dL/dw[{i}]  reverse {ad:+.8}  finite difference {fd:+.8}");
    }
    println!("largest relative error {worst:.2e}");
    Ok(())
}
