use super::{check_losses, Weights};
use crate::autodiff::{GradientMap, ParamId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};

/// Lower bound applied to learned weights after renormalization.
pub const GRADNORM_MIN_WEIGHT: f64 = 1e-4;
/// Replacement for a zero first-step loss.
const MIN_INITIAL_LOSS: f64 = 1e-8;

/// `r_i = (L_i / L0_i) / mean_j (L_j / L0_j)`.
pub fn inverse_training_rates(losses: &[f64], initial: &[f64]) -> Vec<f64> {
    let ratios: Vec<f64> = losses.iter().zip(initial).map(|(l, l0)| l / l0).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ratios.iter().map(|r| r / mean).collect()
}

/// `sum_i | w_i ||g_i|| - G r_i^alpha |` with `G` the mean of `norms`.
pub fn gradnorm_loss(weights: &[f64], norms: &[f64], r: &[f64], alpha: f64) -> f64 {
    let g = norms.iter().sum::<f64>() / norms.len() as f64;
    weights
        .iter()
        .zip(norms)
        .zip(r)
        .map(|((w, n), ri)| (w * n - g * ri.powf(alpha)).abs())
        .sum()
}

/// Weights at which the GradNorm objective vanishes: `G r_i^alpha / ||g_i||`.
pub fn gradnorm_zero_weights(norms: &[f64], r: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_norms(norms)?;
    let g = norms.iter().sum::<f64>() / norms.len() as f64;
    Ok(norms.iter().zip(r).map(|(n, ri)| g * ri.powf(alpha) / n).collect())
}

/// Global minimizer of the GradNorm objective rescaled to mean 1:
/// `w_i = n (r_i^alpha / ||g_i||) / sum_j (r_j^alpha / ||g_j||)`.
pub fn gradnorm_closed_form(norms: &[f64], r: &[f64], alpha: f64) -> Result<Weights> {
    check_norms(norms)?;
    if r.len() != norms.len() {
        return Err(Error::Shape {
            op: "gradnorm_closed_form",
            lhs: vec![norms.len()],
            rhs: vec![r.len()],
        });
    }
    let n = norms.len() as f64;
    let raw: Vec<f64> = norms.iter().zip(r).map(|(g, ri)| ri.powf(alpha) / g).collect();
    let total: f64 = raw.iter().sum();
    Ok(Weights(raw.iter().map(|v| n * v / total).collect()))
}

fn check_norms(norms: &[f64]) -> Result<()> {
    if norms.is_empty() {
        return Err(Error::config("no gradient norms given"));
    }
    if let Some(n) = norms.iter().find(|n| !(**n > 0.0) || !n.is_finite()) {
        return Err(Error::config(format!("gradient norms must be positive and finite, got {n}")));
    }
    Ok(())
}

/// Learned GradNorm weights.
///
/// Each update takes one Adam step on the GradNorm objective, pulling the
/// weighted gradient norms `w_i ||g_i||` toward `G r_i^alpha`, where `G` is
/// the mean weighted norm held fixed for the step. Weights are then rescaled
/// to mean 1 and floored at [`GRADNORM_MIN_WEIGHT`].
#[derive(Debug, Clone)]
pub struct GradNormState {
    pub w: Vec<f64>,
    pub initial_losses: Option<Vec<f64>>,
    pub alpha: f64,
    optimizer: AdamState,
}

impl GradNormState {
    pub fn new(n: usize, alpha: f64, weight_lr: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("GradNorm needs at least one task"));
        }
        if !(weight_lr > 0.0) {
            return Err(Error::config("GradNorm weight learning rate must be positive"));
        }
        let w = vec![1.0; n];
        let optimizer = AdamState::new(AdamConfig::with_lr(weight_lr), &[Tensor::zeros(&[n])]);
        Ok(Self {
            w,
            initial_losses: None,
            alpha,
            optimizer,
        })
    }

    pub fn weights(&self) -> Weights {
        Weights(self.w.clone())
    }

    /// One weight update from this step's losses and the per-task gradient
    /// norms (unweighted) on the last shared layer.
    pub fn update(&mut self, losses: &[f64], norms: &[f64]) -> Result<Weights> {
        let n = self.w.len();
        if losses.len() != n || norms.len() != n {
            return Err(Error::Shape {
                op: "gradnorm_update",
                lhs: vec![losses.len(), norms.len()],
                rhs: vec![n],
            });
        }
        check_losses(losses)?;
        if let Some(bad) = norms.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(format!("gradient norm must be finite and nonnegative, got {bad}")));
        }
        let initial = self
            .initial_losses
            .get_or_insert_with(|| losses.iter().map(|&l| if l > 0.0 { l } else { MIN_INITIAL_LOSS }).collect());
        let r = inverse_training_rates(losses, initial);

        let weighted: Vec<f64> = self.w.iter().zip(norms).map(|(w, g)| w * g).collect();
        let mean_weighted = weighted.iter().sum::<f64>() / n as f64;
        let grad: Vec<f64> = weighted
            .iter()
            .zip(norms)
            .zip(&r)
            .map(|((wg, g), ri)| {
                let diff = wg - mean_weighted * ri.powf(self.alpha);
                if diff > 0.0 {
                    *g
                } else if diff < 0.0 {
                    -*g
                } else {
                    0.0
                }
            })
            .collect();

        let mut params = [Tensor::from_parts(vec![n], self.w.clone())];
        let mut grads = GradientMap::new();
        grads.insert(ParamId(0), Tensor::from_parts(vec![n], grad));
        self.optimizer.step(&mut params, &grads)?;
        let [updated] = params;
        self.w = updated.into_data();
        renormalize(&mut self.w);
        Ok(self.weights())
    }
}

/// Rescales to mean 1, floors, and rescales again so the sum is exactly `n`.
fn renormalize(w: &mut [f64]) {
    let n = w.len() as f64;
    let scale_to_mean_one = |w: &mut [f64]| {
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v *= n / total);
    };
    w.iter_mut().for_each(|v| *v = v.max(GRADNORM_MIN_WEIGHT));
    scale_to_mean_one(w);
}
