//! Re-identification accuracy as a function of the patch resolution.
//!
//!     cargo run --release --example resolution_sweep

use histo_reid::config::RunConfig;
use histo_reid::evaluation::{format_sweep_table, resolution_sweep};

const CONFIG: &str = include_str!("../../../configs/quick.toml");

fn main() -> histo_reid::Result<()> {
    let out = std::env::temp_dir().join("histo-reid-sweep");
    let cfg = RunConfig::from_toml_str(
        CONFIG,
        &[
            format!("output_dir={:?}", out.display().to_string()),
            "model.kinds=[\"patch\"]".into(),
            "experiment.folds=1".into(),
        ],
    )?;
    let entries = cfg.load_entries()?;
    let rows = resolution_sweep(
        &entries,
        &cfg.experiment.sweep_mpp,
        &cfg.bank_params(),
        &cfg.experiment_config(cfg.experiment.folds),
    )?;
    print!("{}", format_sweep_table(&rows)?);
    Ok(())
}
