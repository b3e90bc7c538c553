//! Builds a small regression suite, shows the ideal weights and writes the
//! data in both export formats.
//!
//! cargo run --release --example generate_dataset -- [out_dir]

use std::path::PathBuf;

use mtl_lab::mtregression::{generate_dataset, generate_suite, DatasetConfig, MultiTaskDataset, SuiteConfig};

fn main() -> mtl_lab::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let suite = generate_suite(0, SuiteConfig::new(4, 20, 5))?;
    let data = generate_dataset(
        &suite,
        &DatasetConfig {
            train_size: 200,
            test_size: 50,
            input_std: 0.02,
        },
        1,
    )?;
    println!("sigma          {:?}", data.sigma);
    println!("ideal weights  {:?}", suite.ideal_weights());
    for (t, y) in data.train.labels.iter().enumerate() {
        let max = y.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("task {t}: largest |label| {max:.4} (bound {})", data.sigma[t]);
    }

    std::fs::create_dir_all(&out)?;
    let csv = out.join("mtregression.csv");
    let bin = out.join("mtregression.bin");
    data.write_csv(&csv)?;
    data.write_binary(&bin)?;
    assert_eq!(MultiTaskDataset::read_binary(&bin)?, data);
    assert_eq!(MultiTaskDataset::read_csv(&csv)?, data);
    println!("wrote {} and {}", csv.display(), bin.display());
    Ok(())
}
