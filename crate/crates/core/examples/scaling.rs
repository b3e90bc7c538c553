//! Step time against the number of tasks for methods with and without
//! per-task gradients.
//!
//! cargo run --release --example scaling -- [steps] [max_tasks]

use mtl_lab::harness::{scaling_base_config, scaling_benchmark, scaling_ratio, ScalingConfig};

fn main() -> mtl_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let max_tasks: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let task_counts: Vec<usize> = [16, 32, 64, 128].into_iter().filter(|&n| n <= max_tasks).collect();
    let scaling = ScalingConfig {
        task_counts,
        steps,
        ..ScalingConfig::default()
    };
    let rows = scaling_benchmark(&scaling_base_config(), &scaling)?;
    for r in &rows {
        println!("n = {:>3}  {:<9} {:>8.2} ms", r.n_tasks, r.method.display_name(), r.step_time_s * 1e3);
    }
    for m in &scaling.methods {
        println!("{:<9} growth {:.2}x", m.display_name(), scaling_ratio(&rows, *m).unwrap_or(f64::NAN));
    }
    Ok(())
}
