use super::{check_losses, Weights};
use crate::error::{Error, Result};

/// Floor applied to every standard-deviation estimate.
pub const SLAW_MIN_SCALE: f64 = 1e-5;

/// Scaled loss approximate weighting.
///
/// Keeps exponential moving averages of each task's loss and squared loss;
/// their difference estimates the loss variance, whose square root stands in
/// for the norm of the task gradient. Weights are inversely proportional to
/// that estimate and sum to `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlawState {
    /// EMA of `L_i^2`.
    pub a: Vec<f64>,
    /// EMA of `L_i`.
    pub b: Vec<f64>,
    /// Clamped standard-deviation estimate.
    pub s: Vec<f64>,
    pub beta: f64,
}

impl SlawState {
    pub fn new(n: usize, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("SLAW needs at least one task"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::config(format!("SLAW beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            s: vec![0.0; n],
            beta,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.a.len()
    }

    /// Folds one step of losses into the moments and returns the new weights.
    pub fn update(&mut self, losses: &[f64]) -> Result<Weights> {
        if losses.len() != self.n_tasks() {
            return Err(Error::Shape {
                op: "slaw_update",
                lhs: vec![losses.len()],
                rhs: vec![self.n_tasks()],
            });
        }
        check_losses(losses)?;
        let beta = self.beta;
        for (i, &l) in losses.iter().enumerate() {
            self.a[i] = beta * self.a[i] + (1.0 - beta) * l * l;
            self.b[i] = beta * self.b[i] + (1.0 - beta) * l;
            // Rounding can push a - b^2 slightly negative; the floor covers it.
            let var = (self.a[i] - self.b[i] * self.b[i]).max(0.0);
            self.s[i] = var.sqrt().max(SLAW_MIN_SCALE);
        }
        Ok(slaw_weights_from_scales(&self.s))
    }
}

/// `w_i = (n / s_i) / sum_j (1 / s_j)`.
pub fn slaw_weights_from_scales(s: &[f64]) -> Weights {
    let n = s.len() as f64;
    let total: f64 = s.iter().map(|v| 1.0 / v).sum();
    Weights(s.iter().map(|v| n / v / total).collect())
}
