//! Trains the patch classifier on one Monte Carlo split and predicts the
//! patient of each held-out slide.
//!
//!     cargo run --release --example patch_classifier

use histo_reid::dataset::{build_patient_index, generate_synthetic_cohort, monte_carlo_split, slide_labels, SynthConfig};
use histo_reid::models::{
    build_encoder, predict_slide_patchwise, train_patch_classifier, Aggregation, EncoderConfig, TrainingConfig,
    TrainingData,
};
use histo_reid::patches::{Augmentation, BankParams, PatchBank, StainScope};
use histo_reid::stain::MacenkoParams;
use histo_reid::tiling::GridParams;

fn main() -> histo_reid::Result<()> {
    let dir = std::env::temp_dir().join("histo-reid-patch");
    let cohort = generate_synthetic_cohort(&SynthConfig::new(6, 4, 1, 768, 5), &dir)?;
    let params = BankParams {
        grid: GridParams {
            size_px: 64,
            target_mpp: 0.88,
            stride_px: 64,
            min_coverage: 0.7,
        },
        downscale_factor: 32,
        max_patches_per_slide: 48,
        stain_scope: StainScope::PerPatch,
        seed: 5,
    };
    let bank = PatchBank::build(&cohort.entries, &params, &MacenkoParams::default())?;
    let index = build_patient_index(&cohort.entries)?;
    let labels = slide_labels(&cohort.entries, &index);
    let split = monte_carlo_split(&cohort.entries, (0.6, 0.15, 0.25), 5)?;
    println!("{} patches; {} train / {} val / {} test slides", bank.total_patches(), split.train.len(), split.val.len(), split.test.len());

    let data = TrainingData {
        bank: &bank,
        labels: &labels,
        n_classes: index.len(),
    };
    let cfg = TrainingConfig {
        learning_rate: 3e-3,
        max_epochs: 15,
        batch_size: 8,
        patches_per_slide_per_epoch: 16,
        seed: 5,
        ..Default::default()
    };
    let encoder = build_encoder(&EncoderConfig::default(), cfg.seed)?;
    let (model, history) = train_patch_classifier(&data, &split, encoder, &cfg, &Augmentation::default())?;
    for e in &history.epochs {
        println!(
            "epoch {:>2}  train {:.3}  val {:.3}  val recall@1 {:.2}",
            e.epoch, e.train_loss, e.val_loss, e.val_recall_at_1
        );
    }
    println!("kept epoch {}", history.best_epoch);

    for id in &split.test {
        let p = predict_slide_patchwise(&model, id, bank.patches(id), Aggregation::Mean)?;
        println!(
            "{id}: true {}  predicted {}  rank of truth {}",
            index.patient(labels[id]).unwrap_or("?"),
            index.patient(p.predicted_class).unwrap_or("?"),
            p.rank_of(labels[id]).unwrap_or(0)
        );
    }
    Ok(())
}
