//! Monte Carlo re-identification experiment on the quick synthetic config,
//! with the label-permutation control next to it.
//!
//!     cargo run --release --example experiment1

use histo_reid::config::RunConfig;
use histo_reid::evaluation::{format_experiment_table, run_experiment1};
use histo_reid::patches::PatchBank;

const CONFIG: &str = include_str!("../../../configs/quick.toml");

fn main() -> histo_reid::Result<()> {
    let out = std::env::temp_dir().join("histo-reid-exp1");
    let cfg = RunConfig::from_toml_str(CONFIG, &[format!("output_dir={:?}", out.display().to_string())])?;
    let entries = cfg.load_entries()?;
    let bank = PatchBank::build(&entries, &cfg.bank_params(), &cfg.macenko())?;

    let exp = run_experiment1(&entries, &bank, &cfg.experiment_config(cfg.experiment.folds))?;
    print!("{}", format_experiment_table("Experiment 1", "synthetic", &exp.results)?);

    let mut control = cfg.experiment_config(cfg.experiment.folds);
    control.permute_labels = true;
    control.kinds.truncate(1);
    let perm = run_experiment1(&entries, &bank, &control)?;
    print!("{}", format_experiment_table("Permuted labels", "synthetic", &perm.results)?);
    Ok(())
}
