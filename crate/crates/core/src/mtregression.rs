//! Synthetic multi-task regression with known ideal loss weights.
//!
//! Task `i` maps `x` to `sigma_i * tanh((B + eps_i) x)`. `B` is shared by
//! all tasks and `eps_i` perturbs it per task, so the tasks are related but
//! their losses live on scales that differ by `sigma_i^2`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Generator parameters. `b_std` and `eps_std` are standard deviations;
/// the defaults are `sqrt(10)` and `sqrt(3.5)`, i.e. variances 10 and 3.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_tasks: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub b_std: f64,
    pub eps_std: f64,
}

impl SuiteConfig {
    pub fn new(n_tasks: usize, input_dim: usize, output_dim: usize) -> Self {
        Self {
            n_tasks,
            input_dim,
            output_dim,
            b_std: 10f64.sqrt(),
            eps_std: 3.5f64.sqrt(),
        }
    }
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self::new(10, 250, 100)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub config: SuiteConfig,
    /// Shared matrix, `output_dim x input_dim`.
    pub b: Tensor,
    /// Per-task perturbations, same shape as `b`.
    pub eps: Vec<Tensor>,
    pub sigma: Vec<f64>,
}

impl TaskSuite {
    pub fn n_tasks(&self) -> usize {
        self.sigma.len()
    }

    /// `(B + eps_i)^T`, laid out `input_dim x output_dim` so that a row-major
    /// batch times it gives the pre-activations.
    fn task_matrix(&self, task: usize) -> Tensor {
        let (out, inp) = (self.config.output_dim, self.config.input_dim);
        let (b, e) = (self.b.data(), self.eps[task].data());
        let mut t = vec![0.0; inp * out];
        for r in 0..out {
            for c in 0..inp {
                t[c * out + r] = b[r * inp + c] + e[r * inp + c];
            }
        }
        Tensor::from_parts(vec![inp, out], t)
    }

    /// Exact labels of one task for a batch of inputs.
    pub fn labels(&self, task: usize, inputs: &Tensor) -> Result<Tensor> {
        if inputs.shape().len() != 2 || inputs.cols() != self.config.input_dim {
            return Err(Error::Shape {
                op: "labels",
                lhs: inputs.shape().to_vec(),
                rhs: vec![self.config.input_dim],
            });
        }
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let m = tape.constant(self.task_matrix(task));
        let z = tape.matmul(x, m)?;
        let s = self.sigma[task];
        Ok(tape.value(z).map(|v| s * v.tanh()))
    }

    /// Ideal loss weights `1 / sigma_i^2`.
    pub fn ideal_weights(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| 1.0 / (s * s)).collect()
    }
}

/// Draws `B`, `eps_i` and sets `sigma_i = i` (1-based).
pub fn generate_suite(seed: u64, config: SuiteConfig) -> Result<TaskSuite> {
    if config.n_tasks == 0 {
        return Err(Error::config("a task suite needs at least one task"));
    }
    if config.input_dim == 0 || config.output_dim == 0 {
        return Err(Error::config("suite dimensions must be positive"));
    }
    if !(config.b_std > 0.0 && config.eps_std >= 0.0) {
        return Err(Error::config("suite standard deviations must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = config.input_dim * config.output_dim;
    let shape = vec![config.output_dim, config.input_dim];
    let b_dist = Normal::new(0.0, config.b_std).expect("positive std");
    let e_dist = Normal::new(0.0, config.eps_std).expect("nonnegative std");
    let b = Tensor::from_parts(shape.clone(), (0..len).map(|_| b_dist.sample(&mut rng)).collect());
    let eps = (0..config.n_tasks)
        .map(|_| Tensor::from_parts(shape.clone(), (0..len).map(|_| e_dist.sample(&mut rng)).collect()))
        .collect();
    let sigma = (1..=config.n_tasks).map(|i| i as f64).collect();
    Ok(TaskSuite { config, b, eps, sigma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// `m x input_dim`.
    pub inputs: Tensor,
    /// One `m x output_dim` tensor per task.
    pub labels: Vec<Tensor>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        Split {
            inputs: self.inputs.select_rows(rows),
            labels: self.labels.iter().map(|l| l.select_rows(rows)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    pub sigma: Vec<f64>,
    pub train: Split,
    pub test: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train_size: usize,
    pub test_size: usize,
    /// Standard deviation of the i.i.d. normal inputs.
    pub input_std: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_size: 9000,
            test_size: 1000,
            input_std: 1.0,
        }
    }
}

/// Samples inputs and computes the exact labels of every task.
pub fn generate_dataset(suite: &TaskSuite, config: &DatasetConfig, seed: u64) -> Result<MultiTaskDataset> {
    if config.train_size == 0 || config.test_size == 0 {
        return Err(Error::config("train and test sizes must be at least 1"));
    }
    if !(config.input_std > 0.0) {
        return Err(Error::config("input_std must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, config.input_std).expect("positive std");
    let d = suite.config.input_dim;
    let mut split = |m: usize| -> Result<Split> {
        let inputs = Tensor::from_parts(vec![m, d], (0..m * d).map(|_| dist.sample(&mut rng)).collect());
        let labels = (0..suite.n_tasks())
            .map(|t| suite.labels(t, &inputs))
            .collect::<Result<_>>()?;
        Ok(Split { inputs, labels })
    };
    let train = split(config.train_size)?;
    let test = split(config.test_size)?;
    Ok(MultiTaskDataset {
        sigma: suite.sigma.clone(),
        train,
        test,
    })
}

/// Squared error summed over output dimensions and averaged over the batch.
pub fn squared_error(tape: &mut Tape, prediction: Var, target: Var) -> Result<Var> {
    let rows = tape.value(prediction).rows() as f64;
    let diff = tape.sub(prediction, target)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / rows))
}

/// Same quantity as [`squared_error`] computed directly on tensors.
pub fn squared_error_value(prediction: &Tensor, target: &Tensor) -> f64 {
    let total: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    total / prediction.rows() as f64
}

/// Mean over tasks of `L_i / sigma_i^2`.
pub fn normalized_loss(losses: &[f64], sigma: &[f64]) -> f64 {
    let n = losses.len() as f64;
    losses.iter().zip(sigma).map(|(l, s)| l / (s * s)).sum::<f64>() / n
}

fn mean_one(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v / mean).collect()
}

/// Mean squared error between the weights and the ideal weights
/// `1 / sigma_i^2`, after rescaling both to mean 1.
pub fn loss_weight_error(weights: &[f64], sigma: &[f64]) -> f64 {
    let ideal: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let (w, ideal) = (mean_one(weights), mean_one(&ideal));
    w.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / w.len() as f64
}

// ---------------------------------------------------------------------------
// Export / import.
//
// CSV layout: one row per sample. Columns are
//   split, x_0 .. x_{d-1}, y{t}_{k} for t in 0..n, k in 0..output_dim
// with `split` equal to `train` or `test`, train rows first. The header row
// carries the column names, and a leading comment line records sigma:
//   # sigma=1,2,...,n
//
// Binary layout (little endian):
//   magic b"MTRD", u32 version (1), u32 n_tasks, u32 input_dim,
//   u32 output_dim, u64 train_rows, u64 test_rows, f64 sigma[n],
//   then for train and test in turn: inputs row-major, then each task's
//   labels row-major.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"MTRD";

impl MultiTaskDataset {
    pub fn n_tasks(&self) -> usize {
        self.sigma.len()
    }

    pub fn input_dim(&self) -> usize {
        self.train.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.train.labels[0].cols()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let sigma: Vec<String> = self.sigma.iter().map(|s| format!("{s:?}")).collect();
        writeln!(w, "# sigma={}", sigma.join(","))?;
        let mut header = vec!["split".to_string()];
        header.extend((0..self.input_dim()).map(|k| format!("x_{k}")));
        for t in 0..self.n_tasks() {
            header.extend((0..self.output_dim()).map(|k| format!("y{t}_{k}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            let (d, o) = (self.input_dim(), self.output_dim());
            for r in 0..split.len() {
                write!(w, "{name}")?;
                for v in &split.inputs.data()[r * d..(r + 1) * d] {
                    write!(w, ",{v:?}")?;
                }
                for l in &split.labels {
                    for v in &l.data()[r * o..(r + 1) * o] {
                        write!(w, ",{v:?}")?;
                    }
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let bad = |msg: &str| Error::Parse(format!("dataset csv: {msg}"));
        let first = lines.next().ok_or_else(|| bad("empty file"))??;
        let sigma: Vec<f64> = first
            .strip_prefix("# sigma=")
            .ok_or_else(|| bad("missing sigma line"))?
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
            .collect::<Result<_>>()?;
        let header = lines.next().ok_or_else(|| bad("missing header"))??;
        let cols: Vec<&str> = header.split(',').collect();
        let d = cols.iter().filter(|c| c.starts_with("x_")).count();
        let n = sigma.len();
        let label_cols = cols.len() - 1 - d;
        if n == 0 || d == 0 || label_cols % n != 0 || label_cols == 0 {
            return Err(bad("inconsistent header"));
        }
        let o = label_cols / n;
        let mut parts: [(Vec<f64>, Vec<Vec<f64>>, usize); 2] =
            [(Vec::new(), vec![Vec::new(); n], 0), (Vec::new(), vec![Vec::new(); n], 0)];
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let which = match fields.next() {
                Some("train") => 0,
                Some("test") => 1,
                _ => return Err(bad("unknown split")),
            };
            let values: Vec<f64> = fields
                .map(|s| s.parse::<f64>().map_err(|e| bad(&e.to_string())))
                .collect::<Result<_>>()?;
            if values.len() != d + n * o {
                return Err(bad("row width"));
            }
            let part = &mut parts[which];
            part.0.extend_from_slice(&values[..d]);
            for t in 0..n {
                part.1[t].extend_from_slice(&values[d + t * o..d + (t + 1) * o]);
            }
            part.2 += 1;
        }
        let [train, test] = parts;
        let build = |(x, ys, m): (Vec<f64>, Vec<Vec<f64>>, usize)| -> Result<Split> {
            Ok(Split {
                inputs: Tensor::new(vec![m, d], x)?,
                labels: ys
                    .into_iter()
                    .map(|y| Tensor::new(vec![m, o], y))
                    .collect::<Result<_>>()?,
            })
        };
        Ok(Self {
            sigma,
            train: build(train)?,
            test: build(test)?,
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        for v in [1u32, self.n_tasks() as u32, self.input_dim() as u32, self.output_dim() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.train.len() as u64, self.test.len() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut put = |vals: &[f64]| -> std::io::Result<()> {
            for v in vals {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        put(&self.sigma)?;
        for split in [&self.train, &self.test] {
            put(split.inputs.data())?;
            for l in &split.labels {
                put(l.data())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("dataset binary: bad magic".into()));
        }
        let mut u32s = [0u32; 4];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, n, d, o] = u32s.map(|v| v as usize);
        if version != 1 {
            return Err(Error::Parse(format!("dataset binary: unsupported version {version}")));
        }
        let mut rows = [0usize; 2];
        for v in &mut rows {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = u64::from_le_bytes(b) as usize;
        }
        let mut take = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            let mut b = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut b)?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        let sigma = take(n)?;
        let mut splits = Vec::with_capacity(2);
        for m in rows {
            let inputs = Tensor::new(vec![m, d], take(m * d)?)?;
            let labels = (0..n)
                .map(|_| Tensor::new(vec![m, o], take(m * o)?))
                .collect::<Result<_>>()?;
            splits.push(Split { inputs, labels });
        }
        let test = splits.pop().expect("two splits");
        let train = splits.pop().expect("two splits");
        Ok(Self { sigma, train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_suite(seed: u64) -> TaskSuite {
        generate_suite(seed, SuiteConfig::new(3, 6, 4)).unwrap()
    }

    #[test]
    fn default_sigma_is_one_to_n() {
        let suite = generate_suite(0, SuiteConfig::new(10, 5, 3)).unwrap();
        assert_eq!(suite.sigma, (1..=10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(small_suite(4), small_suite(4));
        assert_ne!(small_suite(4).b, small_suite(5).b);
    }

    #[test]
    fn zero_tasks_rejected() {
        assert!(generate_suite(0, SuiteConfig::new(0, 5, 3)).is_err());
    }

    #[test]
    fn b_and_eps_sample_variances_match() {
        let suite = generate_suite(11, SuiteConfig::new(1, 250, 100)).unwrap();
        let n = suite.b.len() as f64;
        let mean = suite.b.sum() / n;
        let var = suite.b.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 10.0 - 1.0).abs() < 0.05, "var {var}");
        let e = &suite.eps[0];
        let evar = e.squared_norm() / n;
        assert!((evar / 3.5 - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_input_gives_zero_labels() {
        let suite = small_suite(1);
        for t in 0..3 {
            let y = suite.labels(t, &Tensor::zeros(&[2, 6])).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn labels_bounded_and_regenerable() {
        let suite = small_suite(2);
        let cfg = DatasetConfig {
            train_size: 50,
            test_size: 10,
            input_std: 0.02,
        };
        let ds = generate_dataset(&suite, &cfg, 9).unwrap();
        for (t, s) in suite.sigma.iter().enumerate() {
            assert!(ds.train.labels[t].data().iter().all(|v| v.abs() < *s));
            assert_eq!(suite.labels(t, &ds.train.inputs).unwrap(), ds.train.labels[t]);
            assert_eq!(suite.labels(t, &ds.test.inputs).unwrap(), ds.test.labels[t]);
        }
    }

    #[test]
    fn labels_match_direct_formula() {
        let suite = small_suite(3);
        let x = Tensor::matrix(1, 6, vec![0.1, -0.2, 0.05, 0.3, 0.0, -0.1]).unwrap();
        let y = suite.labels(2, &x).unwrap();
        for k in 0..4 {
            let mut z = 0.0;
            for c in 0..6 {
                z += (suite.b.data()[k * 6 + c] + suite.eps[2].data()[k * 6 + c]) * x.data()[c];
            }
            assert!((y.data()[k] - 3.0 * z.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_splits_rejected() {
        let suite = small_suite(1);
        let cfg = DatasetConfig {
            train_size: 0,
            ..DatasetConfig::default()
        };
        assert!(generate_dataset(&suite, &cfg, 0).is_err());
    }

    #[test]
    fn normalized_loss_examples() {
        let sigma = [1.0, 2.0, 3.0];
        assert_eq!(normalized_loss(&[1.0, 4.0, 9.0], &sigma), 1.0);
        assert_eq!(normalized_loss(&[2.0, 8.0], &[1.0, 2.0]), 2.0);
    }

    #[test]
    fn loss_weight_error_examples() {
        let sigma = [1.0, 2.0];
        assert!((loss_weight_error(&[1.0, 1.0], &sigma) - 0.36).abs() < 1e-12);
        assert!(loss_weight_error(&[3.0, 0.75], &sigma).abs() < 1e-15);
        let sigma10: Vec<f64> = (1..=10).map(f64::from).collect();
        let ideal: Vec<f64> = sigma10.iter().map(|s| 7.0 / (s * s)).collect();
        assert!(loss_weight_error(&ideal, &sigma10) < 1e-24);
    }

    #[test]
    fn squared_error_matches_value() {
        let p = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::matrix(2, 2, vec![0.0, 2.0, 1.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let (pv, tv) = (tape.constant(p.clone()), tape.constant(t.clone()));
        let l = squared_error(&mut tape, pv, tv).unwrap();
        assert_eq!(tape.scalar(l), 2.5);
        assert_eq!(squared_error_value(&p, &t), 2.5);
    }
}
