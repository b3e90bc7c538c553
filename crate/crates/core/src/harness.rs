//! Training loop, per-step metrics, multi-seed aggregation and the
//! task-count scaling benchmark.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, ParamId, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mtregression::{
    generate_dataset, generate_suite, loss_weight_error, normalized_loss, squared_error, squared_error_value,
    DatasetConfig, MultiTaskDataset, Split, SuiteConfig,
};
use crate::nn::{clip_global_norm, Activation, AdamConfig, AdamState, MultiTaskNet, NetConfig};
use crate::weighting::{
    ideal_constant_weights, pcgrad_combine, uncertainty_loss, DwaState, GradNormState, Method, SlawState,
    UncertaintyState, Weights,
};

/// Steps excluded from step-time means.
pub const WARMUP_STEPS: usize = 10;
const SCALING_CHUNK: usize = 10;

/// Rows per forward pass when evaluating a whole split.
const EVAL_CHUNK: usize = 1000;

/// Everything that determines a training run apart from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Maximum global gradient norm.
    pub clip: f64,
    pub slaw_beta: f64,
    pub dwa_temperature: f64,
    /// EMA coefficient for the losses DWA compares; 0 uses raw step losses.
    pub dwa_smoothing: f64,
    pub gradnorm_alpha: f64,
    pub gradnorm_lr: f64,
    pub n_tasks: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub activation: Activation,
    pub input_std: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Seed of the task suite and dataset, shared by every run.
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    /// Stops a run early after this many steps.
    pub max_steps: Option<usize>,
    /// Worker threads for multi-seed experiments.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Slaw,
            epochs: 300,
            batch_size: 304,
            lr: 7e-4,
            clip: 0.5,
            slaw_beta: 0.99,
            dwa_temperature: 2.0,
            dwa_smoothing: 0.9,
            gradnorm_alpha: 0.12,
            gradnorm_lr: 0.025,
            n_tasks: 10,
            input_dim: 250,
            output_dim: 100,
            hidden: 100,
            depth: 4,
            activation: Activation::Relu,
            input_std: 0.0093,
            train_size: 9000,
            test_size: 1000,
            data_seed: 0,
            seeds: (0..10).collect(),
            max_steps: None,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_tasks", self.n_tasks),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("jobs", self.jobs),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("lr", self.lr),
            ("clip", self.clip),
            ("dwa_temperature", self.dwa_temperature),
            ("gradnorm_lr", self.gradnorm_lr),
            ("input_std", self.input_std),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.slaw_beta > 0.0 && self.slaw_beta < 1.0) {
            return Err(Error::config(format!("slaw_beta must lie in (0, 1), got {}", self.slaw_beta)));
        }
        if !(0.0..1.0).contains(&self.dwa_smoothing) {
            return Err(Error::config(format!("dwa_smoothing must lie in [0, 1), got {}", self.dwa_smoothing)));
        }
        if !(self.gradnorm_alpha >= 0.0 && self.gradnorm_alpha.is_finite()) {
            return Err(Error::config("gradnorm_alpha must be nonnegative"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be positive"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_size.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let full = self.epochs * self.steps_per_epoch();
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig::new(self.n_tasks, self.input_dim, self.output_dim)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            train_size: self.train_size,
            test_size: self.test_size,
            input_std: self.input_std,
        }
    }

    pub fn net_config(&self, init_seed: u64) -> NetConfig {
        NetConfig {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            hidden: self.hidden,
            depth: self.depth,
            n_tasks: self.n_tasks,
            activation: self.activation,
            init_seed,
        }
    }

    /// Generates the suite and dataset described by this config.
    pub fn dataset(&self) -> Result<MultiTaskDataset> {
        self.validate()?;
        let suite = generate_suite(self.data_seed, self.suite_config())?;
        generate_dataset(&suite, &self.dataset_config(), self.data_seed.wrapping_add(1))
    }
}

/// Measurements of one optimizer step. `losses` are the batch losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based step index.
    pub step: usize,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub normalized_loss: f64,
    pub loss_weight_error: f64,
    pub step_time_s: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged { step: usize, reason: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// One finished (or diverged) training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub status: RunStatus,
    pub records: Vec<MetricsRecord>,
    pub final_train_losses: Option<Vec<f64>>,
    pub final_test_losses: Option<Vec<f64>>,
    pub train_nl: Option<f64>,
    pub test_nl: Option<f64>,
    pub mean_step_time_s: f64,
}

pub enum StepOutcome {
    Completed(MetricsRecord),
    Diverged { step: usize, reason: String },
}

enum Weighter {
    Fixed(Weights),
    Slaw(SlawState),
    Dwa(DwaState),
    GradNorm(GradNormState),
    Uncertainty(Vec<ParamId>),
    PcGrad(ChaCha8Rng),
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Step-by-step training of one seed.
pub struct Trainer<'a> {
    config: &'a ExperimentConfig,
    data: &'a MultiTaskDataset,
    net: MultiTaskNet,
    adam: AdamState,
    weighter: Weighter,
    batch_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    elapsed: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a ExperimentConfig, data: &'a MultiTaskDataset, seed: u64) -> Result<Self> {
        config.validate()?;
        if data.n_tasks() != config.n_tasks || data.input_dim() != config.input_dim || data.output_dim() != config.output_dim
        {
            return Err(Error::config("dataset does not match the experiment dimensions"));
        }
        let n = config.n_tasks;
        let mut net = MultiTaskNet::new(config.net_config(seed))?;
        let weighter = match config.method {
            Method::Constant => Weighter::Fixed(Weights::ones(n)),
            Method::IdealConstant => Weighter::Fixed(ideal_constant_weights(&data.sigma)?),
            Method::Slaw => Weighter::Slaw(SlawState::new(n, config.slaw_beta)?),
            Method::Dwa => Weighter::Dwa(DwaState::new(n, config.dwa_temperature, config.dwa_smoothing)?),
            Method::GradNorm => {
                Weighter::GradNorm(GradNormState::new(n, config.gradnorm_alpha, config.gradnorm_lr)?)
            }
            Method::Uncertainty => {
                let init = UncertaintyState::new(n);
                let ids = init.eta.iter().map(|&e| net.add_auxiliary(Tensor::scalar(e))).collect();
                Weighter::Uncertainty(ids)
            }
            Method::PcGrad => Weighter::PcGrad(stream_rng(seed, 2)),
        };
        let adam = AdamState::new(AdamConfig::with_lr(config.lr), net.params());
        Ok(Self {
            config,
            data,
            net,
            adam,
            weighter,
            batch_rng: stream_rng(seed, 1),
            order: (0..data.train.len()).collect(),
            cursor: usize::MAX,
            step: 0,
            elapsed: 0.0,
        })
    }

    pub fn net(&self) -> &MultiTaskNet {
        &self.net
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.batch_rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let rows = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        rows
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        Ok(self.step_inner(None)?.0)
    }

    /// Takes a step and also returns, for each task, the norm of its
    /// unweighted loss gradient with respect to `ids`, measured on the same
    /// batch before the update.
    pub fn step_with_norms(&mut self, ids: &[ParamId]) -> Result<(StepOutcome, Vec<f64>)> {
        let (outcome, norms) = self.step_inner(Some(ids))?;
        Ok((outcome, norms.unwrap_or_default()))
    }

    fn step_inner(&mut self, probe: Option<&[ParamId]>) -> Result<(StepOutcome, Option<Vec<f64>>)> {
        let start = Instant::now();
        let n = self.config.n_tasks;
        self.step += 1;
        let step = self.step;
        let rows = self.next_batch();
        let batch = self.data.train.select(&rows);

        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape);
        let x = tape.constant(batch.inputs);
        let fwd = self.net.forward(&mut tape, &vars, x)?;
        let mut loss_vars = Vec::with_capacity(n);
        for (t, labels) in batch.labels.into_iter().enumerate() {
            let y = tape.constant(labels);
            loss_vars.push(squared_error(&mut tape, fwd.outputs[t], y)?);
        }
        let losses: Vec<f64> = loss_vars.iter().map(|&v| tape.scalar(v)).collect();
        let diverged = |reason: String| Ok((StepOutcome::Diverged { step, reason }, None));
        if let Some(t) = losses.iter().position(|l| !l.is_finite()) {
            return diverged(format!("non-finite loss for task {t}"));
        }

        let probe_norms = match probe {
            Some(ids) => Some(
                loss_vars
                    .iter()
                    .map(|&l| tape.backward_wrt(l, ids).map(|g| g.norm()))
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        };

        let (weights, mut grads) = match &mut self.weighter {
            Weighter::Fixed(w) => {
                let w = w.clone();
                let total = weighted_sum(&mut tape, &loss_vars, &w)?;
                let grads = tape.backward(total)?;
                (w, grads)
            }
            Weighter::Slaw(state) => {
                let w = state.update(&losses)?;
                let total = weighted_sum(&mut tape, &loss_vars, &w)?;
                (w.clone(), tape.backward(total)?)
            }
            Weighter::Dwa(state) => {
                let w = state.update(&losses)?;
                let total = weighted_sum(&mut tape, &loss_vars, &w)?;
                (w.clone(), tape.backward(total)?)
            }
            Weighter::GradNorm(state) => {
                let last = self.net.last_shared_ids();
                let norms = loss_vars
                    .iter()
                    .map(|&l| tape.backward_wrt(l, &last).map(|g| g.norm()))
                    .collect::<Result<Vec<f64>>>()?;
                if norms.iter().any(|g| !g.is_finite()) {
                    return diverged("non-finite gradient norm".into());
                }
                let w = state.weights();
                let total = weighted_sum(&mut tape, &loss_vars, &w)?;
                let grads = tape.backward(total)?;
                state.update(&losses, &norms)?;
                (w, grads)
            }
            Weighter::Uncertainty(ids) => {
                let eta_vars: Vec<Var> = ids.iter().map(|id| vars[id.0]).collect();
                let eta: Vec<f64> = eta_vars.iter().map(|&v| tape.scalar(v)).collect();
                let w = UncertaintyState { eta }.weights();
                let total = uncertainty_loss(&mut tape, &loss_vars, &eta_vars)?;
                (w, tape.backward(total)?)
            }
            Weighter::PcGrad(rng) => {
                let shared = self.net.shared_ids();
                let mut shared_parts = Vec::with_capacity(n);
                let mut grads = GradientMap::new();
                for (t, &l) in loss_vars.iter().enumerate() {
                    let head = self.net.task_ids(t);
                    let wrt: Vec<ParamId> = shared.iter().chain(&head).copied().collect();
                    let g = tape.backward_wrt(l, &wrt)?;
                    for &id in &head {
                        grads.insert(id, g.get(id).expect("requested gradient").clone());
                    }
                    shared_parts.push(g.restrict(&shared)?);
                }
                grads.add_scaled(1.0, &pcgrad_combine(&shared_parts, rng));
                (Weights::ones(n), grads)
            }
        };
        if !weights.all_finite() {
            return diverged("non-finite loss weight".into());
        }
        if !grads.all_finite() {
            return diverged("non-finite gradient".into());
        }
        clip_global_norm(&mut grads, self.config.clip);
        self.adam.step(self.net.params_mut(), &grads)?;

        let step_time_s = start.elapsed().as_secs_f64();
        self.elapsed += step_time_s;
        let record = MetricsRecord {
            step,
            normalized_loss: normalized_loss(&losses, &self.data.sigma),
            loss_weight_error: loss_weight_error(&weights.0, &self.data.sigma),
            losses,
            weights: weights.0,
            step_time_s,
            elapsed_s: self.elapsed,
        };
        Ok((StepOutcome::Completed(record), probe_norms))
    }
}

fn weighted_sum(tape: &mut Tape, losses: &[Var], weights: &Weights) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&l, &w) in losses.iter().zip(&weights.0) {
        let term = tape.scale(l, w);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::config("no task losses"))
}

/// Per-task loss of `net` over a whole split.
pub fn evaluate(net: &MultiTaskNet, split: &Split) -> Result<Vec<f64>> {
    let m = split.len();
    let mut totals = vec![0.0; split.labels.len()];
    let mut start = 0;
    while start < m {
        let end = (start + EVAL_CHUNK).min(m);
        let preds = net.predict(&split.inputs.slice_rows(start, end))?;
        for (t, p) in preds.iter().enumerate() {
            let y = split.labels[t].slice_rows(start, end);
            totals[t] += squared_error_value(p, &y) * (end - start) as f64;
        }
        start = end;
    }
    Ok(totals.into_iter().map(|v| v / m as f64).collect())
}

/// Mean step time ignoring the first [`WARMUP_STEPS`] steps (all steps if
/// the run is shorter).
pub fn mean_step_time(records: &[MetricsRecord]) -> f64 {
    let tail = if records.len() > WARMUP_STEPS {
        &records[WARMUP_STEPS..]
    } else {
        records
    };
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|r| r.step_time_s).sum::<f64>() / tail.len() as f64
}

/// Trains one seed on a prepared dataset.
pub fn train_on(config: &ExperimentConfig, data: &MultiTaskDataset, seed: u64) -> Result<RunResult> {
    let mut trainer = Trainer::new(config, data, seed)?;
    let total = config.total_steps();
    let mut records = Vec::with_capacity(total);
    let mut status = RunStatus::Ok;
    for _ in 0..total {
        match trainer.step()? {
            StepOutcome::Completed(r) => records.push(r),
            StepOutcome::Diverged { step, reason } => {
                status = RunStatus::Diverged { step, reason };
                break;
            }
        }
    }
    let mean_step_time_s = mean_step_time(&records);
    let mut result = RunResult {
        seed,
        status,
        records,
        final_train_losses: None,
        final_test_losses: None,
        train_nl: None,
        test_nl: None,
        mean_step_time_s,
    };
    if result.status.is_ok() {
        let train = evaluate(trainer.net(), &data.train)?;
        let test = evaluate(trainer.net(), &data.test)?;
        if train.iter().chain(&test).all(|v| v.is_finite()) {
            result.train_nl = Some(normalized_loss(&train, &data.sigma));
            result.test_nl = Some(normalized_loss(&test, &data.sigma));
            result.final_train_losses = Some(train);
            result.final_test_losses = Some(test);
        } else {
            result.status = RunStatus::Diverged {
                step: trainer.steps_done(),
                reason: "non-finite evaluation loss".into(),
            };
        }
    }
    Ok(result)
}

/// Generates the dataset from the config and trains one seed.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let data = config.dataset()?;
    train_on(config, &data, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlPair {
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub train_nl: Option<f64>,
    pub test_nl: Option<f64>,
    pub mean_step_time_s: f64,
    pub steps: usize,
}

/// Aggregate over the seeds of one experiment. Diverged seeds are left out
/// of the means and counted in `diverged_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedFinal>,
    /// Number of completed seeds.
    pub k: usize,
    pub mean: Option<NlPair>,
    /// Half-width `1.96 sd / sqrt(k)`; 0 when `k == 1`.
    pub ci95: Option<NlPair>,
    pub mean_step_time_s: f64,
    pub diverged_count: usize,
    pub all_diverged: bool,
}

/// Sample mean and 95% half-width `1.96 sd / sqrt(k)`.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let k = values.len();
    if k == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    Some((mean, 1.96 * var.sqrt() / (k as f64).sqrt()))
}

pub fn summarize(config: &ExperimentConfig, runs: &[RunResult]) -> RunSummary {
    let per_seed: Vec<SeedFinal> = runs
        .iter()
        .map(|r| SeedFinal {
            seed: r.seed,
            status: r.status.clone(),
            train_nl: r.train_nl,
            test_nl: r.test_nl,
            mean_step_time_s: r.mean_step_time_s,
            steps: r.records.len(),
        })
        .collect();
    let ok: Vec<&RunResult> = runs.iter().filter(|r| r.status.is_ok()).collect();
    let train: Vec<f64> = ok.iter().filter_map(|r| r.train_nl).collect();
    let test: Vec<f64> = ok.iter().filter_map(|r| r.test_nl).collect();
    let (mean, ci95) = match (mean_ci95(&train), mean_ci95(&test)) {
        (Some((mtr, ctr)), Some((mte, cte))) => (
            Some(NlPair { train: mtr, test: mte }),
            Some(NlPair { train: ctr, test: cte }),
        ),
        _ => (None, None),
    };
    let times: Vec<f64> = runs.iter().filter(|r| !r.records.is_empty()).map(|r| r.mean_step_time_s).collect();
    let diverged_count = runs.len() - ok.len();
    RunSummary {
        method: config.method,
        config: config.clone(),
        per_seed,
        k: ok.len(),
        mean,
        ci95,
        mean_step_time_s: if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        },
        diverged_count,
        all_diverged: !runs.is_empty() && ok.is_empty(),
    }
}

/// All runs of an experiment together with their summary.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub summary: RunSummary,
    pub runs: Vec<RunResult>,
}

/// Runs every seed of `config` on a prepared dataset, on up to
/// `config.jobs` threads.
pub fn run_experiment_on(config: &ExperimentConfig, data: &MultiTaskDataset) -> Result<Experiment> {
    config.validate()?;
    if config.seeds.is_empty() {
        return Err(Error::config("an experiment needs at least one seed"));
    }
    let jobs = config.jobs.min(config.seeds.len());
    let runs = if jobs <= 1 {
        config
            .seeds
            .iter()
            .map(|&s| train_on(config, data, s))
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut slots: Vec<Option<Result<RunResult>>> = (0..config.seeds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    scope.spawn(move || {
                        config
                            .seeds
                            .iter()
                            .enumerate()
                            .skip(j)
                            .step_by(jobs)
                            .map(|(i, &s)| (i, train_on(config, data, s)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("training thread panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every seed ran")).collect::<Result<Vec<_>>>()?
    };
    Ok(Experiment {
        summary: summarize(config, &runs),
        runs,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    let data = config.dataset()?;
    run_experiment_on(config, &data)
}

/// Writes one row per step. Reals carry 17 significant digits.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord], n_tasks: usize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["step".to_string()];
    header.extend((0..n_tasks).map(|t| format!("loss_{t}")));
    header.extend((0..n_tasks).map(|t| format!("weight_{t}")));
    header.extend(["normalized_loss", "loss_weight_error", "step_time_s"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.step.to_string()];
        row.extend(r.losses.iter().chain(&r.weights).map(|v| real(*v)));
        row.extend([r.normalized_loss, r.loss_weight_error, r.step_time_s].map(real));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_summary_json(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, summary)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub task_counts: Vec<usize>,
    pub methods: Vec<Method>,
    /// Timed steps per measurement, after the warmup.
    pub steps: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            task_counts: vec![16, 32, 64, 128],
            methods: vec![Method::Constant, Method::Slaw, Method::GradNorm, Method::PcGrad],
            steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_tasks: usize,
    pub method: Method,
    /// Median over the timed steps.
    pub step_time_s: f64,
}

/// Base config for the scaling benchmark: a single output per task, so the
/// heads are small next to the shared trunk.
pub fn scaling_base_config() -> ExperimentConfig {
    ExperimentConfig {
        output_dim: 1,
        train_size: 3040,
        test_size: 1,
        ..ExperimentConfig::default()
    }
}

/// Median steady-state step time for each task count and method.
pub fn scaling_benchmark(base: &ExperimentConfig, scaling: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if scaling.steps == 0 {
        return Err(Error::config("the scaling benchmark needs at least one timed step"));
    }
    if scaling.task_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("task counts must be strictly ascending"));
    }
    let steps = WARMUP_STEPS + scaling.steps;
    let mut configs = Vec::new();
    let mut datasets = Vec::new();
    for &n in &scaling.task_counts {
        let mut config = ExperimentConfig {
            n_tasks: n,
            max_steps: Some(steps),
            ..base.clone()
        };
        config.epochs = steps.div_ceil(config.steps_per_epoch());
        datasets.push(config.dataset()?);
        configs.push(config);
    }
    let mut rows = Vec::new();
    for &method in &scaling.methods {
        let method_configs: Vec<ExperimentConfig> =
            configs.iter().map(|c| ExperimentConfig { method, ..c.clone() }).collect();
        let mut trainers = Vec::new();
        for (config, data) in method_configs.iter().zip(&datasets) {
            trainers.push(Trainer::new(config, data, scaling.seed)?);
        }
        // Task counts take turns in short chunks so machine drift hits all alike.
        let mut times = vec![Vec::with_capacity(scaling.steps); trainers.len()];
        let mut done = 0;
        while done < steps {
            let chunk = SCALING_CHUNK.min(steps - done);
            for (trainer, times) in trainers.iter_mut().zip(&mut times) {
                for i in done..done + chunk {
                    let t = match trainer.step()? {
                        StepOutcome::Completed(r) => r.step_time_s,
                        StepOutcome::Diverged { reason, .. } => {
                            return Err(Error::config(format!("benchmark run diverged: {reason}")))
                        }
                    };
                    if i >= WARMUP_STEPS {
                        times.push(t);
                    }
                }
            }
            done += chunk;
        }
        for (&n, mut times) in scaling.task_counts.iter().zip(times) {
            times.sort_by(f64::total_cmp);
            rows.push(ScalingRow {
                n_tasks: n,
                method,
                step_time_s: times[times.len() / 2],
            });
        }
    }
    Ok(rows)
}

/// `time(n_last) / time(n_first)` for one method.
pub fn scaling_ratio(rows: &[ScalingRow], method: Method) -> Option<f64> {
    let mine: Vec<&ScalingRow> = rows.iter().filter(|r| r.method == method).collect();
    let first = mine.iter().min_by_key(|r| r.n_tasks)?;
    let last = mine.iter().max_by_key(|r| r.n_tasks)?;
    Some(last.step_time_s / first.step_time_s)
}
