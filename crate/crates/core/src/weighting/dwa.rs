use super::{check_losses, Weights};
use crate::error::{Error, Result};

/// Dynamic weight averaging: a softmax over each task's recent loss ratio
/// `L_i(t-1) / L_i(t-2)`, scaled so the weights sum to `n`.
///
/// With `smoothing > 0` the tracked loss is an exponential moving average
/// with that coefficient instead of the raw per-step loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DwaState {
    pub temperature: f64,
    pub smoothing: f64,
    /// Most recent tracked losses, newest last; at most two entries.
    history: Vec<Vec<f64>>,
    ema: Option<Vec<f64>>,
    n: usize,
}

impl DwaState {
    pub fn new(n: usize, temperature: f64, smoothing: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("DWA needs at least one task"));
        }
        if !(temperature > 0.0) {
            return Err(Error::config(format!("DWA temperature must be positive, got {temperature}")));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::config(format!("DWA smoothing must lie in [0, 1), got {smoothing}")));
        }
        Ok(Self {
            temperature,
            smoothing,
            history: Vec::with_capacity(2),
            ema: None,
            n,
        })
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Weights for the current step from the two previous steps, then records
    /// this step's losses.
    pub fn update(&mut self, losses: &[f64]) -> Result<Weights> {
        if losses.len() != self.n {
            return Err(Error::Shape {
                op: "dwa_update",
                lhs: vec![losses.len()],
                rhs: vec![self.n],
            });
        }
        check_losses(losses)?;
        let weights = match self.history.as_slice() {
            [older, newer] => {
                let ratios: Vec<f64> = older
                    .iter()
                    .zip(newer)
                    .map(|(&o, &nw)| if o > 0.0 { nw / o } else { 1.0 })
                    .collect();
                softmax_weights(&ratios, self.temperature)
            }
            _ => Weights::ones(self.n),
        };

        let tracked = match &mut self.ema {
            Some(ema) if self.smoothing > 0.0 => {
                for (e, &l) in ema.iter_mut().zip(losses) {
                    *e = self.smoothing * *e + (1.0 - self.smoothing) * l;
                }
                ema.clone()
            }
            _ => {
                self.ema = Some(losses.to_vec());
                losses.to_vec()
            }
        };
        if self.history.len() == 2 {
            self.history.remove(0);
        }
        self.history.push(tracked);
        Ok(weights)
    }
}

/// `w_i = n * exp(r_i / T) / sum_k exp(r_k / T)`.
pub fn softmax_weights(ratios: &[f64], temperature: f64) -> Weights {
    let n = ratios.len() as f64;
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ratios.iter().map(|r| ((r - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Weights(exps.iter().map(|e| n * e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_ratios_give_ones() {
        let w = softmax_weights(&[1.3, 1.3, 1.3], 2.0);
        assert!(w.0.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_task_softmax() {
        let w = softmax_weights(&[1.0, 2.0], 2.0);
        let (e1, e2) = (0.5f64.exp(), 1.0f64.exp());
        assert!((w[0] - 2.0 * e1 / (e1 + e2)).abs() < 1e-15);
        assert!((w[0] - 0.7551).abs() < 1e-4);
        assert!((w[1] - 1.2449).abs() < 1e-4);
    }

    #[test]
    fn large_temperature_flattens() {
        let w = softmax_weights(&[0.5, 1.0, 3.0], 1e9);
        assert!(w.0.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn first_two_steps_are_ones_then_ratios() {
        let mut st = DwaState::new(2, 2.0, 0.0).unwrap();
        assert_eq!(st.update(&[4.0, 4.0]).unwrap(), Weights::ones(2));
        assert_eq!(st.update(&[4.0, 8.0]).unwrap(), Weights::ones(2));
        let w = st.update(&[1.0, 1.0]).unwrap();
        let expected = softmax_weights(&[1.0, 2.0], 2.0);
        assert_eq!(w, expected);
        assert_eq!(st.history_len(), 2);
    }

    #[test]
    fn zero_denominator_falls_back_to_unit_ratio() {
        let mut st = DwaState::new(2, 2.0, 0.0).unwrap();
        st.update(&[0.0, 1.0]).unwrap();
        st.update(&[5.0, 1.0]).unwrap();
        let w = st.update(&[1.0, 1.0]).unwrap();
        assert!(w.0.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn uniform_history_ratios_give_ones() {
        let mut st = DwaState::new(3, 2.0, 0.0).unwrap();
        // every task's loss halves each step
        let mut l = [8.0, 80.0, 0.8];
        for step in 0..10 {
            let w = st.update(&l).unwrap();
            if step >= 2 {
                assert!(w.0.iter().all(|v| (v - 1.0).abs() < 1e-12), "{w:?}");
            }
            l.iter_mut().for_each(|v| *v *= 0.5);
        }
    }

    #[test]
    fn smoothing_tracks_ema() {
        let mut st = DwaState::new(1, 2.0, 0.5).unwrap();
        st.update(&[4.0]).unwrap();
        st.update(&[2.0]).unwrap();
        // tracked: 4.0, then 0.5*4 + 0.5*2 = 3.0
        assert_eq!(st.history, vec![vec![4.0], vec![3.0]]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(DwaState::new(2, 0.0, 0.0).is_err());
        assert!(DwaState::new(2, 1.0, 1.0).is_err());
        assert!(DwaState::new(0, 1.0, 0.0).is_err());
    }
}
