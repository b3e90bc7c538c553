//! Trains one seed of one weighting method and writes its metrics.
//!
//! cargo run --release --example train_single -- slaw 0 300

use std::path::PathBuf;

use mtl_lab::harness::{train, write_metrics_csv, ExperimentConfig};
use mtl_lab::weighting::Method;

fn main() -> mtl_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let method: Method = args.next().as_deref().unwrap_or("slaw").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let config = ExperimentConfig {
        epochs,
        ..ExperimentConfig::with_method(method)
    };
    let run = train(&config, seed)?;
    for r in run.records.iter().filter(|r| r.step % (10 * config.steps_per_epoch()) == 0) {
        println!(
            "step {:>5}  batch NL {:>9.4}  LWE {:.4e}  {:.1} ms/step",
            r.step,
            r.normalized_loss,
            r.loss_weight_error,
            r.step_time_s * 1e3
        );
    }
    println!("status: {:?}", run.status);
    if let (Some(tr), Some(te)) = (run.train_nl, run.test_nl) {
        println!("final train NL {tr:.4}  test NL {te:.4}");
    }
    println!("mean step time {:.2} ms", run.mean_step_time_s * 1e3);
    let out = PathBuf::from(std::env::var("OUT").unwrap_or_else(|_| std::env::temp_dir().display().to_string()));
    let path = out.join(format!("{}_seed{seed}.csv", method.key()));
    write_metrics_csv(&path, &run.records, config.n_tasks)?;
    println!("metrics written to {}", path.display());
    Ok(())
}
