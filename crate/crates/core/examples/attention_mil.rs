//! Gated-attention MIL: gradient check on a toy bag, then training on top of
//! a patch-trained encoder and a look at the attention weights.
//!
//!     cargo run --release --example attention_mil

use histo_reid::dataset::{build_patient_index, generate_synthetic_cohort, monte_carlo_split, slide_labels, SynthConfig};
use histo_reid::models::{
    build_encoder, embed_patches, gradient_check, predict_slide_mil, train_mil, train_patch_classifier, EncoderConfig,
    MilConfig, MilHead, TrainingConfig, TrainingData,
};
use histo_reid::patches::{Augmentation, BankParams, PatchBank, StainScope};
use histo_reid::seed::rng_from;
use histo_reid::stain::MacenkoParams;
use histo_reid::tiling::GridParams;
use rand::Rng;

fn main() -> histo_reid::Result<()> {
    let mut rng = rng_from(0);
    let head = MilHead::new(4, 3, 2, &mut rng);
    let bag: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    println!("toy bag gradient check: worst relative error {:.2e}", gradient_check(&head, &bag, 1, 1e-5));

    let dir = std::env::temp_dir().join("histo-reid-mil");
    let cohort = generate_synthetic_cohort(&SynthConfig::new(6, 4, 1, 768, 11), &dir)?;
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
        seed: 11,
    };
    let bank = PatchBank::build(&cohort.entries, &params, &MacenkoParams::default())?;
    let index = build_patient_index(&cohort.entries)?;
    let labels = slide_labels(&cohort.entries, &index);
    let split = monte_carlo_split(&cohort.entries, (0.6, 0.15, 0.25), 11)?;
    let data = TrainingData {
        bank: &bank,
        labels: &labels,
        n_classes: index.len(),
    };
    let cfg = TrainingConfig {
        learning_rate: 3e-3,
        max_epochs: 12,
        batch_size: 8,
        patches_per_slide_per_epoch: 16,
        seed: 11,
        ..Default::default()
    };
    let encoder = build_encoder(&EncoderConfig::default(), cfg.seed)?;
    let (patch_model, _) = train_patch_classifier(&data, &split, encoder, &cfg, &Augmentation::default())?;

    let mil = MilConfig {
        bag_size: 16,
        ..Default::default()
    };
    let (model, history) = train_mil(&data, &split, &patch_model.encoder, &cfg, &mil, &Augmentation::default())?;
    println!("MIL kept epoch {} of {}", history.best_epoch, history.epochs.len());

    for id in &split.test {
        let p = predict_slide_mil(&model, id, bank.patches(id), mil.inference_cap, 0)?;
        let emb = embed_patches(&model.encoder, bank.patches(id));
        let (_, weights) = model.head.forward(&emb);
        let top = weights.iter().cloned().fold(0.0, f64::max);
        println!(
            "{id}: true {} predicted {}  ({} instances, largest attention weight {:.3})",
            labels[id],
            p.predicted_class,
            emb.len(),
            top
        );
    }
    Ok(())
}
