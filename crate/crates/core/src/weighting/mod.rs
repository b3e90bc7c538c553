//! Loss-weighting strategies for multi-task training.
//!
//! Every strategy turns per-task losses (and, for the gradient-based ones,
//! per-task gradient information) into weights `w_i`. The dynamic methods
//! keep `sum(w) == n`, so the mean weight is 1 and the global learning rate
//! keeps its meaning.

mod dwa;
mod gradnorm;
mod pcgrad;
mod slaw;
mod uncertainty;

use serde::{Deserialize, Serialize};

pub use dwa::DwaState;
pub use gradnorm::{gradnorm_closed_form, gradnorm_loss, gradnorm_zero_weights, inverse_training_rates, GradNormState, GRADNORM_MIN_WEIGHT};
pub use pcgrad::{pcgrad_combine, pcgrad_combine_traced, Projection};
pub use slaw::{slaw_weights_from_scales, SlawState, SLAW_MIN_SCALE};
pub use uncertainty::{uncertainty_loss, uncertainty_loss_value, UncertaintyState};

use crate::error::{Error, Result};

/// Loss weights, one per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub Vec<f64>);

impl Weights {
    pub fn ones(n: usize) -> Self {
        Weights(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }
}

impl std::ops::Index<usize> for Weights {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// The weighting methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Constant,
    #[serde(rename = "ideal")]
    IdealConstant,
    Uncertainty,
    GradNorm,
    Dwa,
    PcGrad,
    Slaw,
}

impl Method {
    /// Table order.
    pub const ALL: [Method; 7] = [
        Method::Constant,
        Method::IdealConstant,
        Method::Uncertainty,
        Method::GradNorm,
        Method::Dwa,
        Method::PcGrad,
        Method::Slaw,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Constant => "constant",
            Method::IdealConstant => "ideal",
            Method::Uncertainty => "uncertainty",
            Method::GradNorm => "gradnorm",
            Method::Dwa => "dwa",
            Method::PcGrad => "pcgrad",
            Method::Slaw => "slaw",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Constant => "Constant",
            Method::IdealConstant => "IdealConstant",
            Method::Uncertainty => "Uncertainty",
            Method::GradNorm => "GradNorm",
            Method::Dwa => "DWA",
            Method::PcGrad => "PCGrad",
            Method::Slaw => "SLAW",
        }
    }

    /// Whether the method needs one backward pass per task.
    pub fn needs_task_gradients(self) -> bool {
        matches!(self, Method::GradNorm | Method::PcGrad)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.display_name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.key() == lower || m.display_name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}`")))
    }
}

/// `w_i = 1` for every task.
pub fn constant_weights(n: usize) -> Weights {
    Weights::ones(n)
}

/// `w_i = 1 / sigma_i^2`, not renormalized.
pub fn ideal_constant_weights(sigma: &[f64]) -> Result<Weights> {
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::config(format!("sigma must be positive, got {s}")));
    }
    Ok(Weights(sigma.iter().map(|s| 1.0 / (s * s)).collect()))
}

pub(crate) fn check_losses(losses: &[f64]) -> Result<()> {
    for (task, &value) in losses.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidLoss { task, value });
        }
    }
    Ok(())
}
