//! Macenko stain estimation and the random stain augmentation.
//!
//!     cargo run --release --example stain_augmentation -- [lambda]

use histo_reid::dataset::{generate_synthetic_cohort, SynthConfig};
use histo_reid::seed::rng_from;
use histo_reid::stain::{
    augment_with, deconvolve, estimate_stain_model, reconstruct, MacenkoParams, StainAugmentParams, DEFAULT_EPSILON,
};
use histo_reid::tiling::{build_tissue_mask, enumerate_patches, read_patch, GridParams, Slide};
use image::RgbImage;

fn main() -> histo_reid::Result<()> {
    let lambda: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let dir = std::env::temp_dir().join("histo-reid-stain");
    let cohort = generate_synthetic_cohort(&SynthConfig::new(1, 1, 1, 1024, 9), &dir)?;
    let slide = Slide::open(&cohort.entries[0])?;
    let mask = build_tissue_mask(&slide.image, 32)?;
    let grid = GridParams {
        size_px: 128,
        target_mpp: 0.88,
        stride_px: 128,
        min_coverage: 0.9,
    };
    let specs = enumerate_patches(&slide, &mask, &grid)?;
    let patch = read_patch(&slide, &specs[specs.len() / 2])?;

    let macenko = MacenkoParams::default();
    let model = estimate_stain_model(&patch, &macenko)?;
    println!("hematoxylin {:.3?}", model.stain_matrix[0]);
    println!("eosin       {:.3?}", model.stain_matrix[1]);
    println!("angle between stains {:.1} deg", model.angle_between_stains_deg());

    let conc = deconvolve(&patch, &model, DEFAULT_EPSILON)?;
    let back = reconstruct(&conc, &model);
    let err = patch
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("deconvolve/reconstruct max abs error {err:.2e}");

    let mut rng = rng_from(1);
    let size = patch.size() as u32;
    let mut strip = RgbImage::new(size * 7, size);
    image::imageops::replace(&mut strip, &patch.to_image(), 0, 0);
    for i in 1..7 {
        let p = StainAugmentParams::sample(lambda, &mut rng);
        let aug = augment_with(&patch, &model, &p, DEFAULT_EPSILON)?;
        println!("sample {i}: alpha {:.3?} beta {:.3?}", p.alpha, p.beta);
        image::imageops::replace(&mut strip, &aug.to_image(), (i * size) as i64, 0);
    }
    let out = dir.join("augmentations.png");
    strip.save(&out)?;
    println!("original + 6 augmentations: {}", out.display());
    Ok(())
}
