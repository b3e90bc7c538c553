//! Writes the default experiment as a config file, edits it and loads it
//! back, as the command-line tool does with `--config`.

use mtl_lab::config;
use mtl_lab::harness::ExperimentConfig;

fn main() -> mtl_lab::Result<()> {
    let path = std::env::temp_dir().join("mtl_lab_example.conf");
    let text = config::render(&ExperimentConfig::default());
    std::fs::write(&path, format!("# edited copy of the defaults\n{text}method = gradnorm\nasymmetry = 0.5\n"))?;
    let loaded = config::load(&path)?;
    println!("{}", std::fs::read_to_string(&path)?);
    println!("loaded method {} with alpha {}", loaded.method, loaded.gradnorm_alpha);
    println!("steps per epoch {}, total steps {}", loaded.steps_per_epoch(), loaded.total_steps());
    Ok(())
}
