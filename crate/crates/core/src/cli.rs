//! Command-line front end.
//!
//! ```text
//! mtl-lab train --method slaw --seeds 1 --out out/
//! mtl-lab compare --seeds 10
//! mtl-lab scale --task-counts 16,32,64,128
//! mtl-lab validate-estimator --samples 120
//! mtl-lab validate-theorem --fn linear --d 3 --delta 0.1
//! ```
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a bad flag or
//! config, 3 when every run of an experiment diverged.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config;
use crate::error::{Error, Result};
use crate::harness::{
    run_experiment_on, scaling_base_config, scaling_benchmark, scaling_ratio, write_metrics_csv, write_summary_json,
    Experiment, ExperimentConfig, RunSummary, ScalingConfig,
};
use crate::validation::{
    estimator_scatter, pearson, theorem_check, write_ball_report, write_scatter_csv, ScatterConfig, TestFunction,
};
use crate::weighting::Method;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mtl-lab", version, about = "Loss weighting experiments for multi-task learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method over several seeds.
    Train(RunArgs),
    /// Train every method and print a results table.
    Compare(RunArgs),
    /// Time training steps as the number of tasks grows.
    Scale {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        task_counts: Vec<usize>,
        /// Timed steps per measurement.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Keep the full output width instead of one output per task.
        #[arg(long)]
        full_heads: bool,
    },
    /// Compare SLAW weights with weights from true gradient norms.
    ValidateEstimator {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 120)]
        samples: usize,
        /// Record every task of a sampled step, not one random task.
        #[arg(long)]
        all_tasks: bool,
    },
    /// Variance of a test function over a small ball.
    ValidateTheorem {
        #[arg(long = "fn", default_value = "linear")]
        function: String,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Norm of the coefficient vector, spread evenly over coordinates.
        #[arg(long, default_value_t = 2.0)]
        scale: f64,
        /// Value of every coordinate of the centre.
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Number of seeds, or a comma separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// SLAW moving-average coefficient.
    #[arg(long)]
    pub beta: Option<f64>,
    /// GradNorm asymmetry.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_tasks: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &Method::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.key()))
    }
}

impl RunArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            config::apply_all(&mut c, &config::parse_pairs(&text)?)?;
        }
        for o in &self.overrides {
            let (k, v) = config::parse_override(o)?;
            config::apply(&mut c, &k, &v)?;
        }
        if let Some(m) = self.method {
            c.method = m;
        }
        if let Some(s) = &self.seeds {
            c.seeds = config::parse_seeds(s)?;
        }
        macro_rules! flag {
            ($($f:ident => $field:ident),*) => {$(if let Some(v) = self.$f { c.$field = v; })*};
        }
        flag!(epochs => epochs, batch_size => batch_size, lr => lr, clip => clip, beta => slaw_beta,
              alpha => gradnorm_alpha, n_tasks => n_tasks, jobs => jobs);
        c.validate()?;
        Ok(c)
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse(_) | Error::UnknownFunction(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(args) => {
            let config = args.resolve(ExperimentConfig::default())?;
            cmd_train(&config, &args.out)
        }
        Command::Compare(args) => {
            let config = args.resolve(ExperimentConfig::default())?;
            cmd_compare(&config, &args.out)
        }
        Command::Scale {
            run,
            task_counts,
            steps,
            full_heads,
        } => {
            let base = if full_heads {
                ExperimentConfig::default()
            } else {
                scaling_base_config()
            };
            let config = run.resolve(base)?;
            cmd_scale(&config, &task_counts, steps, &run.out)
        }
        Command::ValidateEstimator { run, samples, all_tasks } => {
            let config = run.resolve(ExperimentConfig::default())?;
            let scatter = ScatterConfig {
                samples,
                all_tasks,
                ..ScatterConfig::default()
            };
            cmd_estimator(&config, &scatter, &run.out)
        }
        Command::ValidateTheorem {
            function,
            d,
            delta,
            scale,
            x0,
            samples,
            seed,
            out,
        } => {
            if d == 0 {
                return Err(Error::config("--d must be positive"));
            }
            let a = vec![scale / (d as f64).sqrt(); d];
            let f = TestFunction::by_name(&function, a)?;
            let report = theorem_check(&f, &vec![x0; d], delta, samples, seed)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("ball_{}_d{d}.json", report.function));
            write_ball_report(&path, &report)?;
            println!(
                "{}: d={d} delta={delta} samples={samples} Var={:.6e} predicted={:.6e} K1={:.6e} empirical K1={}",
                report.function,
                report.variance,
                report.predicted_variance,
                report.k1,
                report.empirical_k1.map_or("n/a".into(), |k| format!("{k:.6e}")),
            );
            println!("report written to {}", path.display());
            Ok(EXIT_OK)
        }
    }
}

/// Runs one experiment and writes each seed's metrics plus the summary.
pub fn run_and_write(config: &ExperimentConfig, data: &crate::mtregression::MultiTaskDataset, out: &Path) -> Result<Experiment> {
    std::fs::create_dir_all(out)?;
    let exp = run_experiment_on(config, data)?;
    for run in &exp.runs {
        let path = out.join(format!("{}_seed{}.csv", config.method.key(), run.seed));
        write_metrics_csv(&path, &run.records, config.n_tasks)?;
    }
    write_summary_json(&out.join(format!("{}_summary.json", config.method.key())), &exp.summary)?;
    Ok(exp)
}

fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let data = config.dataset()?;
    let exp = run_and_write(config, &data, out)?;
    print!("{}", results_table(std::slice::from_ref(&exp.summary)));
    println!("artifacts written to {}", out.display());
    Ok(if exp.summary.all_diverged { EXIT_DIVERGED } else { EXIT_OK })
}

fn cmd_compare(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let data = config.dataset()?;
    let mut summaries = Vec::new();
    for method in Method::ALL {
        let c = ExperimentConfig { method, ..config.clone() };
        eprintln!("running {method} over {} seeds", c.seeds.len());
        summaries.push(run_and_write(&c, &data, out)?.summary);
    }
    let table = results_table(&summaries);
    print!("{table}");
    std::fs::write(out.join("compare.txt"), &table)?;
    Ok(EXIT_OK)
}

fn cmd_scale(config: &ExperimentConfig, task_counts: &[usize], steps: usize, out: &Path) -> Result<i32> {
    let scaling = ScalingConfig {
        task_counts: task_counts.to_vec(),
        steps,
        seed: config.seeds.first().copied().unwrap_or(0),
        ..ScalingConfig::default()
    };
    let rows = scaling_benchmark(config, &scaling)?;
    std::fs::create_dir_all(out)?;
    let mut csv = String::from("n_tasks,method,step_time_s\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.16e}", r.n_tasks, r.method.key(), r.step_time_s);
    }
    std::fs::write(out.join("scaling.csv"), csv)?;
    let mut text = format!("{:<10}", "n_tasks");
    for m in &scaling.methods {
        let _ = write!(text, "{:>14}", m.display_name());
    }
    text.push('\n');
    for &n in &scaling.task_counts {
        let _ = write!(text, "{n:<10}");
        for m in &scaling.methods {
            let t = rows.iter().find(|r| r.n_tasks == n && r.method == *m).map_or(0.0, |r| r.step_time_s);
            let _ = write!(text, "{:>12.2}ms", t * 1e3);
        }
        text.push('\n');
    }
    let _ = write!(text, "{:<10}", "ratio");
    for m in &scaling.methods {
        let _ = write!(text, "{:>13.2}x", scaling_ratio(&rows, *m).unwrap_or(f64::NAN));
    }
    text.push('\n');
    print!("{text}");
    Ok(EXIT_OK)
}

fn cmd_estimator(config: &ExperimentConfig, scatter: &ScatterConfig, out: &Path) -> Result<i32> {
    let data = config.dataset()?;
    let points = estimator_scatter(config, &data, scatter)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("scatter.csv");
    write_scatter_csv(&path, &points)?;
    let x: Vec<f64> = points.iter().map(|p| p.x).collect();
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    match pearson(&x, &y) {
        Some(r) => println!("{} points, Pearson r = {r:.4}", points.len()),
        None => println!("{} points, correlation undefined", points.len()),
    }
    println!("scatter written to {}", path.display());
    Ok(EXIT_OK)
}

/// Methods whose interval overlaps the best (lowest) mean in a column.
fn flagged(summaries: &[RunSummary], pick: impl Fn(&RunSummary) -> Option<(f64, f64)>) -> Vec<bool> {
    let best = summaries
        .iter()
        .filter_map(&pick)
        .min_by(|a, b| a.0.total_cmp(&b.0));
    summaries
        .iter()
        .map(|s| match (pick(s), best) {
            (Some((m, c)), Some((bm, bc))) => m - c <= bm + bc,
            _ => false,
        })
        .collect()
}

/// Plain-text table with one row per method and train/test NL columns.
pub fn results_table(summaries: &[RunSummary]) -> String {
    let train = flagged(summaries, |s| Some((s.mean?.train, s.ci95?.train)));
    let test = flagged(summaries, |s| Some((s.mean?.test, s.ci95?.test)));
    let mut t = String::new();
    let _ = writeln!(t, "{:<14} {:>20} {:>20} {:>12}", "Method", "Train NL", "Test NL", "Step time");
    for (i, s) in summaries.iter().enumerate() {
        let cell = |v: Option<(f64, f64)>, mark: bool| match v {
            Some((m, c)) => format!("{}{m:.3} ± {c:.3}", if mark { "*" } else { " " }),
            None => "diverged".to_string(),
        };
        let tr = cell(s.mean.zip(s.ci95).map(|(m, c)| (m.train, c.train)), train[i]);
        let te = cell(s.mean.zip(s.ci95).map(|(m, c)| (m.test, c.test)), test[i]);
        let mut name = s.method.display_name().to_string();
        if s.diverged_count > 0 {
            name = format!("{name} ({}/{} div.)", s.diverged_count, s.per_seed.len());
        }
        let _ = writeln!(t, "{name:<14} {tr:>20} {te:>20} {:>10.2}ms", s.mean_step_time_s * 1e3);
    }
    let _ = writeln!(
        t,
        "* best mean in its column, or a 95% interval overlapping the best one. Mean ± 95% half-width over completed seeds."
    );
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_flag_exits_with_usage_code() {
        assert_eq!(parse_and_dispatch(["mtl-lab", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(parse_and_dispatch(["mtl-lab", "train", "--method", "adagrad"]), EXIT_USAGE);
        assert_eq!(parse_and_dispatch(["mtl-lab", "train", "--set", "colour=blue"]), EXIT_USAGE);
        assert_eq!(parse_and_dispatch(["mtl-lab", "train", "--lr", "-1"]), EXIT_USAGE);
        assert_eq!(parse_and_dispatch(["mtl-lab", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.conf");
        std::fs::write(&file, "epochs = 7\nlearning_rate = 0.01\nmethod = dwa\n").unwrap();
        let cli = Cli::try_parse_from([
            "mtl-lab",
            "train",
            "--config",
            file.to_str().unwrap(),
            "--set",
            "epochs=9",
            "--lr",
            "0.02",
            "--seeds",
            "2",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let c = args.resolve(ExperimentConfig::default()).unwrap();
        assert_eq!((c.epochs, c.lr, c.method, c.seeds.clone()), (9, 0.02, Method::Dwa, vec![0, 1]));
    }
}
