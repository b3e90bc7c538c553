//! Empirical checks of the loss-variance estimator: a scatter of true-norm
//! weights against SLAW weights during training, and a Monte-Carlo check of
//! the variance of a function over a small ball.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, StepOutcome, Trainer};
use crate::mtregression::MultiTaskDataset;
use crate::weighting::{slaw_weights_from_scales, Method};

/// One (true-norm weight, SLAW weight) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub run_seed: u64,
    pub step: usize,
    pub task: usize,
    /// `n / ||g_i|| / sum_j 1 / ||g_j||`.
    pub x: f64,
    /// The SLAW weight of the same task at the same step.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub samples: usize,
    pub first_step: usize,
    pub last_step: usize,
    /// Emit every task of a sampled step instead of one random task.
    pub all_tasks: bool,
    /// Seed of the first run; run `k` uses `base_seed + k`.
    pub base_seed: u64,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            samples: 120,
            first_step: 10,
            last_step: 1000,
            all_tasks: false,
            base_seed: 1000,
        }
    }
}

/// Weights proportional to the inverse of each norm, summing to `n`.
pub fn inverse_norm_weights(norms: &[f64]) -> Result<Vec<f64>> {
    if norms.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::config("gradient norms must be positive and finite"));
    }
    Ok(slaw_weights_from_scales(norms).0)
}

/// One SLAW training run per sample, each stopped at a uniformly random
/// step in `[first_step, last_step]`. At that step the true per-task
/// gradient norms over every shared parameter are measured on the step's
/// batch and compared with the SLAW weights used for the step.
pub fn estimator_scatter(
    config: &ExperimentConfig,
    data: &MultiTaskDataset,
    scatter: &ScatterConfig,
) -> Result<Vec<ScatterPoint>> {
    if scatter.samples == 0 {
        return Err(Error::config("estimator_scatter needs at least one sample"));
    }
    if scatter.first_step == 0 || scatter.first_step > scatter.last_step {
        return Err(Error::config("scatter step range must satisfy 1 <= first <= last"));
    }
    let config = ExperimentConfig {
        method: Method::Slaw,
        max_steps: None,
        ..config.clone()
    };
    if config.total_steps() < scatter.last_step {
        return Err(Error::config("training is shorter than the scatter step range"));
    }
    let mut points = Vec::new();
    for k in 0..scatter.samples {
        let seed = scatter.base_seed + k as u64;
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        pick.set_stream(3);
        let stop = pick.random_range(scatter.first_step..=scatter.last_step);
        let mut trainer = Trainer::new(&config, data, seed)?;
        let shared = trainer.net().shared_ids();
        for _ in 1..stop {
            if let StepOutcome::Diverged { reason, .. } = trainer.step()? {
                return Err(Error::config(format!("scatter run {seed} diverged: {reason}")));
            }
        }
        let (outcome, norms) = trainer.step_with_norms(&shared)?;
        let record = match outcome {
            StepOutcome::Completed(r) => r,
            StepOutcome::Diverged { reason, .. } => {
                return Err(Error::config(format!("scatter run {seed} diverged: {reason}")))
            }
        };
        let x = inverse_norm_weights(&norms)?;
        let tasks: Vec<usize> = if scatter.all_tasks {
            (0..x.len()).collect()
        } else {
            vec![pick.random_range(0..x.len())]
        };
        for task in tasks {
            points.push(ScatterPoint {
                run_seed: seed,
                step: stop,
                task,
                x: x[task],
                y: record.weights[task],
            });
        }
    }
    Ok(points)
}

/// Sample Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "run_seed,step,task,x,y")?;
    for p in points {
        writeln!(out, "{},{},{},{:.16e},{:.16e}", p.run_seed, p.step, p.task, p.x, p.y)?;
    }
    out.flush()?;
    Ok(())
}

/// Supported test functions for the ball check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestFunction {
    /// `f(x) = c`.
    Constant { value: f64 },
    /// `f(x) = a . x`.
    Linear { a: Vec<f64> },
    /// `f(x) = sum_k a_k tanh(x_k)`.
    Tanh { a: Vec<f64> },
}

impl TestFunction {
    /// Builds a function by name with coefficient vector `a` in `d`
    /// dimensions. Names: `constant`, `linear`, `tanh`.
    pub fn by_name(name: &str, a: Vec<f64>) -> Result<Self> {
        match name {
            "constant" => Ok(TestFunction::Constant { value: 1.0 }),
            "linear" => Ok(TestFunction::Linear { a }),
            "tanh" | "nonlinear" => Ok(TestFunction::Tanh { a }),
            other => Err(Error::UnknownFunction(other.to_string())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            TestFunction::Constant { .. } => "constant",
            TestFunction::Linear { .. } => "linear",
            TestFunction::Tanh { .. } => "tanh",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Linear { a } => a.iter().zip(x).map(|(a, x)| a * x).sum(),
            TestFunction::Tanh { a } => a.iter().zip(x).map(|(a, x)| a * x.tanh()).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Constant { .. } => vec![0.0; x.len()],
            TestFunction::Linear { a } => a.clone(),
            TestFunction::Tanh { a } => a
                .iter()
                .zip(x)
                .map(|(a, x)| {
                    let t = x.tanh();
                    a * (1.0 - t * t)
                })
                .collect(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            TestFunction::Constant { .. } => Ok(()),
            TestFunction::Linear { a } | TestFunction::Tanh { a } if a.len() == d => Ok(()),
            TestFunction::Linear { a } | TestFunction::Tanh { a } => Err(Error::Shape {
                op: "theorem_check",
                lhs: vec![a.len()],
                rhs: vec![d],
            }),
        }
    }
}

/// Draws a point uniformly from the open ball of radius `delta` around `x0`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, x0: &[f64], delta: f64) -> Vec<f64> {
    let d = x0.len();
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: f64 = rng.random();
    let r = delta * u.powf(1.0 / d as f64);
    x0.iter().zip(&dir).map(|(x, v)| x + r * v / norm).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSampleReport {
    pub function: String,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub n_samples: usize,
    pub variance: f64,
    pub grad_norm: f64,
    /// `variance / ||grad f(x0)||^2`; undefined for a zero gradient.
    pub empirical_k1: Option<f64>,
    /// `delta^2 / (d + 2)`.
    pub k1: f64,
    /// `k1 * ||grad f(x0)||^2`.
    pub predicted_variance: f64,
    /// Empirical variance of the first-order expansion of `f` at `x0` over
    /// the same draws.
    pub linearized_variance: f64,
}

impl BallSampleReport {
    /// Relative gap between the empirical and the predicted variance.
    pub fn relative_error(&self) -> Option<f64> {
        (self.predicted_variance > 0.0).then(|| (self.variance - self.predicted_variance).abs() / self.predicted_variance)
    }

    /// `|Var f / Var linearized - 1|`: the part of the gap due to curvature
    /// alone, with the sampling noise shared by both terms.
    pub fn nonlinearity_gap(&self) -> Option<f64> {
        (self.linearized_variance > 0.0).then(|| (self.variance / self.linearized_variance - 1.0).abs())
    }
}

/// Variance of `f` over the uniform `delta`-ball around `x0`, compared with
/// `delta^2 / (d + 2) * ||grad f(x0)||^2`, which is exact for linear `f`.
pub fn theorem_check(f: &TestFunction, x0: &[f64], delta: f64, n_samples: usize, seed: u64) -> Result<BallSampleReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::config("delta must be positive"));
    }
    if n_samples < 1000 {
        return Err(Error::config("theorem_check needs at least 1000 samples"));
    }
    if x0.is_empty() {
        return Err(Error::config("x0 must have at least one coordinate"));
    }
    f.check_dim(x0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = f.gradient(x0);
    let mut exact = Welford::default();
    let mut linear = Welford::default();
    for _ in 0..n_samples {
        let x = sample_ball(&mut rng, x0, delta);
        exact.push(f.eval(&x));
        linear.push(grad.iter().zip(&x).zip(x0).map(|((g, x), c)| g * (x - c)).sum());
    }
    let variance = exact.variance();
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let k1 = delta * delta / (x0.len() + 2) as f64;
    Ok(BallSampleReport {
        function: f.id().to_string(),
        x0: x0.to_vec(),
        delta,
        n_samples,
        variance,
        grad_norm,
        empirical_k1: (grad_norm > 0.0).then(|| variance / (grad_norm * grad_norm)),
        k1,
        predicted_variance: k1 * grad_norm * grad_norm,
        linearized_variance: linear.variance(),
    })
}

/// Running mean and variance; stays accurate when the variance is tiny
/// next to the mean.
#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }
}

pub fn write_ball_report(path: &Path, report: &BallSampleReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_variance() {
        let r = theorem_check(&TestFunction::Constant { value: 2.0 }, &[0.0; 4], 0.5, 2000, 1).unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.empirical_k1, None);
    }

    #[test]
    fn linear_variance_matches_closed_form() {
        let f = TestFunction::Linear { a: vec![2.0, 0.0, 0.0] };
        let r = theorem_check(&f, &[0.3, -0.1, 0.7], 0.1, 100_000, 5).unwrap();
        assert!((r.predicted_variance - 0.008).abs() < 1e-15);
        assert!(r.relative_error().unwrap() < 0.05, "{r:?}");
    }

    #[test]
    fn curvature_gap_shrinks_with_radius() {
        let f = TestFunction::Tanh { a: vec![1.0, -0.5, 2.0] };
        let x0 = [0.4, 0.9, -0.2];
        let wide = theorem_check(&f, &x0, 0.1, 20_000, 3).unwrap();
        let narrow = theorem_check(&f, &x0, 0.01, 20_000, 3).unwrap();
        assert!(narrow.nonlinearity_gap().unwrap() < wide.nonlinearity_gap().unwrap());
        let lin = theorem_check(&TestFunction::Linear { a: vec![1.0, 2.0] }, &[0.0; 2], 0.5, 5000, 0).unwrap();
        assert!(lin.nonlinearity_gap().unwrap() < 1e-9);
    }

    #[test]
    fn ball_second_moment() {
        for d in [1, 2, 5, 16] {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let delta = 0.7;
            let x0 = vec![1.0; d];
            let m = 100_000;
            let mut acc = 0.0;
            for _ in 0..m {
                let x = sample_ball(&mut rng, &x0, delta);
                let r2: f64 = x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(r2 < delta * delta);
                acc += r2;
            }
            let expected = delta * delta * d as f64 / (d + 2) as f64;
            assert!((acc / m as f64 - expected).abs() / expected < 0.02, "d = {d}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = TestFunction::Linear { a: vec![1.0, 2.0] };
        assert!(theorem_check(&f, &[0.0; 3], 0.1, 1000, 0).is_err());
        assert!(theorem_check(&f, &[0.0; 2], 0.0, 1000, 0).is_err());
        assert!(theorem_check(&f, &[0.0; 2], 0.1, 10, 0).is_err());
        assert!(matches!(TestFunction::by_name("cubic", vec![]), Err(Error::UnknownFunction(_))));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn inverse_norm_weights_sum_to_n() {
        let w = inverse_norm_weights(&[0.5, 1.0, 3.0, 9.0]).unwrap();
        assert!((w.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(inverse_norm_weights(&[1.0, 0.0]).is_err());
    }
}
