//! Temporal experiment: train on each patient's first resection, test on
//! the later one. Compared against the Monte Carlo protocol on the same
//! cohort.
//!
//!     cargo run --release --example experiment2 -- [drift]

use histo_reid::config::RunConfig;
use histo_reid::evaluation::{run_experiment1, run_experiment2};
use histo_reid::models::ModelKind;
use histo_reid::patches::PatchBank;

const CONFIG: &str = include_str!("../../../configs/quick.toml");

fn main() -> histo_reid::Result<()> {
    let drift = std::env::args().nth(1).unwrap_or_else(|| "1.0".into());
    let out = std::env::temp_dir().join(format!("histo-reid-exp2-{drift}"));
    let cfg = RunConfig::from_toml_str(
        CONFIG,
        &[
            format!("output_dir={:?}", out.display().to_string()),
            format!("dataset.synthetic.drift={drift}"),
            "model.kinds=[\"patch\"]".into(),
        ],
    )?;
    let entries = cfg.load_entries()?;
    let bank = PatchBank::build(&entries, &cfg.bank_params(), &cfg.macenko())?;

    let e1 = run_experiment1(&entries, &bank, &cfg.experiment_config(cfg.experiment.folds))?;
    let e2 = run_experiment2(&entries, &bank, &cfg.experiment_config(cfg.experiment.repeats))?;
    for (name, exp) in [("monte carlo", &e1), ("temporal", &e2)] {
        let r = exp.result(ModelKind::Patch).expect("patch result");
        let s = r.stat("recall@1").expect("recall@1");
        println!(
            "{name:<12} recall@1 {:6.2}% +- {:5.2}%  per fold {:?}",
            100.0 * s.mean,
            100.0 * s.std,
            r.fold_recall_at(1)
        );
    }
    println!("chance level {:.2}%", 100.0 / e1.patient_index.len() as f64);
    Ok(())
}
