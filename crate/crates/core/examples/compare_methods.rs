//! Trains every weighting method on the same data and prints a results
//! table. The full comparison uses 300 epochs and 10 seeds; the defaults
//! here are much shorter.
//!
//! cargo run --release --example compare_methods -- [epochs] [seeds]

use mtl_lab::cli::results_table;
use mtl_lab::harness::{run_experiment_on, ExperimentConfig};
use mtl_lab::weighting::Method;

fn main() -> mtl_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let base = ExperimentConfig {
        epochs,
        seeds: (0..seeds).collect(),
        ..ExperimentConfig::default()
    };
    let data = base.dataset()?;
    let mut summaries = Vec::new();
    for method in Method::ALL {
        let config = ExperimentConfig { method, ..base.clone() };
        summaries.push(run_experiment_on(&config, &data)?.summary);
    }
    print!("{}", results_table(&summaries));
    Ok(())
}
