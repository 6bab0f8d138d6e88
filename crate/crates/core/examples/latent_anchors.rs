//! Distances of test slides to their patient's latent anchor, split by
//! whether the slide was re-identified correctly.
//!
//!     cargo run --release --example latent_anchors

use histo_reid::config::RunConfig;
use histo_reid::evaluation::run_experiment1;
use histo_reid::latent::{distance_report, experiment_distances};
use histo_reid::models::ModelKind;
use histo_reid::patches::PatchBank;

const CONFIG: &str = include_str!("../../../configs/quick.toml");

fn main() -> histo_reid::Result<()> {
    let out = std::env::temp_dir().join("histo-reid-latent");
    let cfg = RunConfig::from_toml_str(
        CONFIG,
        &[
            format!("output_dir={:?}", out.display().to_string()),
            "model.kinds=[\"patch\"]".into(),
        ],
    )?;
    let entries = cfg.load_entries()?;
    let bank = PatchBank::build(&entries, &cfg.bank_params(), &cfg.macenko())?;
    let exp = run_experiment1(&entries, &bank, &cfg.experiment_config(cfg.experiment.folds))?;

    let records = experiment_distances(&exp, &bank, ModelKind::Patch, 32, cfg.seed)?;
    for r in &records {
        println!(
            "{:<12} true {:>2} predicted {:>2}  distance {:.4}",
            r.slide_id, r.true_class, r.predicted_class, r.distance_to_own_anchor
        );
    }
    println!();
    print!("{}", distance_report(&records)?.to_text());
    Ok(())
}
