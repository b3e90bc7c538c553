//! Samples SLAW weights and true-gradient-norm weights from independent
//! training runs and reports their correlation.
//!
//! cargo run --release --example estimator_scatter -- [samples] [last_step]

use mtl_lab::harness::ExperimentConfig;
use mtl_lab::validation::{estimator_scatter, pearson, ScatterConfig};

fn main() -> mtl_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let last_step = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let config = ExperimentConfig::default();
    let data = config.dataset()?;
    let scatter = ScatterConfig {
        samples,
        last_step,
        all_tasks: true,
        ..ScatterConfig::default()
    };
    let points = estimator_scatter(&config, &data, &scatter)?;
    for p in points.iter().filter(|p| p.task == 0 || p.task == 9) {
        println!("run {} step {:>4} task {}: x {:.4}  y {:.4}", p.run_seed, p.step, p.task, p.x, p.y);
    }
    let x: Vec<f64> = points.iter().map(|p| p.x).collect();
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    println!("{} points, Pearson r = {:.4}", points.len(), pearson(&x, &y).unwrap_or(f64::NAN));
    Ok(())
}
