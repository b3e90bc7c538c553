use super::Weights;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Learned task log-variances `eta_i = log sigma_i^2` for the regression
/// form of uncertainty weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    pub eta: Vec<f64>,
}

impl UncertaintyState {
    pub fn new(n: usize) -> Self {
        Self { eta: vec![0.0; n] }
    }

    /// Effective loss weights `exp(-eta_i) / 2`.
    pub fn weights(&self) -> Weights {
        Weights(self.eta.iter().map(|e| 0.5 * (-e).exp()).collect())
    }

    /// `d/d eta_i` of the combined loss: `(1 - exp(-eta_i) L_i) / 2`.
    pub fn eta_gradient(&self, losses: &[f64]) -> Vec<f64> {
        self.eta
            .iter()
            .zip(losses)
            .map(|(e, l)| 0.5 * (1.0 - (-e).exp() * l))
            .collect()
    }
}

/// `sum_i ( exp(-eta_i) L_i / 2 + eta_i / 2 )`.
pub fn uncertainty_loss_value(losses: &[f64], eta: &[f64]) -> f64 {
    losses
        .iter()
        .zip(eta)
        .map(|(l, e)| 0.5 * (-e).exp() * l + 0.5 * e)
        .sum()
}

/// The same combined loss recorded on a tape; each `eta[i]` is a
/// one-element node.
pub fn uncertainty_loss(tape: &mut Tape, losses: &[Var], eta: &[Var]) -> Result<Var> {
    if losses.len() != eta.len() || losses.is_empty() {
        return Err(Error::Shape {
            op: "uncertainty_loss",
            lhs: vec![losses.len()],
            rhs: vec![eta.len()],
        });
    }
    let mut total: Option<Var> = None;
    for (&l, &e) in losses.iter().zip(eta) {
        let neg = tape.scale(e, -1.0);
        let precision = tape.exp(neg);
        let weighted = tape.mul(precision, l)?;
        let term = tape.add(weighted, e)?;
        let half = tape.scale(term, 0.5);
        total = Some(match total {
            Some(t) => tape.add(t, half)?,
            None => half,
        });
    }
    Ok(total.expect("at least one task"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamId, Tensor};

    #[test]
    fn zero_eta_halves_the_sum() {
        let losses = [1.0, 4.0, 2.5];
        assert_eq!(uncertainty_loss_value(&losses, &[0.0; 3]), 3.75);
    }

    #[test]
    fn stationary_at_log_loss() {
        let st = UncertaintyState::new(1);
        assert_eq!(st.eta_gradient(&[1.0]), vec![0.0]);
        let st = UncertaintyState { eta: vec![3.0f64.ln()] };
        assert!(st.eta_gradient(&[3.0])[0].abs() < 1e-15);
    }

    #[test]
    fn tape_matches_closed_form_and_derivative() {
        let losses = [0.7, 3.0];
        let eta = [0.2, -0.4];
        let mut tape = Tape::new();
        let lv: Vec<Var> = losses.iter().map(|&l| tape.constant(Tensor::scalar(l))).collect();
        let ev: Vec<Var> = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| tape.param(ParamId(i), Tensor::scalar(e)))
            .collect();
        let total = uncertainty_loss(&mut tape, &lv, &ev).unwrap();
        assert!((tape.scalar(total) - uncertainty_loss_value(&losses, &eta)).abs() < 1e-15);
        let g = tape.backward(total).unwrap();
        let expected = UncertaintyState { eta: eta.to_vec() }.eta_gradient(&losses);
        for i in 0..2 {
            assert!((g.get(ParamId(i)).unwrap().data()[0] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_track_eta() {
        let st = UncertaintyState { eta: vec![0.0, 2.0f64.ln()] };
        let w = st.weights();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    }
}
