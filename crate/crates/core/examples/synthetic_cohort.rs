//! Generates a small synthetic cohort and shows how slides are split.
//!
//!     cargo run --release --example synthetic_cohort -- [out_dir]

use std::path::PathBuf;

use histo_reid::dataset::{
    build_patient_index, generate_synthetic_cohort, load_manifest, monte_carlo_split, temporal_split, ImageCheck,
    SynthConfig,
};

fn main() -> histo_reid::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("histo-reid-cohort"));

    // 6 patients, 4 slides each from 2 resections.
    let config = SynthConfig::new(6, 4, 2, 512, 42);
    let cohort = generate_synthetic_cohort(&config, &out)?;
    println!("manifest: {}", cohort.manifest_path.display());

    let entries = load_manifest(&cohort.manifest_path, ImageCheck::AtLoad)?;
    let index = build_patient_index(&entries)?;
    println!("{} slides, {} patients", entries.len(), index.len());
    for e in entries.iter().take(5) {
        println!(
            "  {:<12} patient {}  resection {}  {:.2} mpp",
            e.slide_id, e.patient_id, e.resection_ordinal, e.native_mpp
        );
    }

    let mc = monte_carlo_split(&entries, (0.6, 0.15, 0.25), 0)?;
    println!("monte carlo: {} train / {} val / {} test", mc.train.len(), mc.val.len(), mc.test.len());
    let t = temporal_split(&entries, 0.2, 0)?;
    println!("temporal:    {} train / {} val / {} test", t.train.len(), t.val.len(), t.test.len());
    println!("test slides come from later resections: {:?}", t.test.iter().take(4).collect::<Vec<_>>());
    Ok(())
}
