//! Otsu tissue mask and patch grid for one synthetic slide.
//!
//!     cargo run --release --example tissue_tiling

use histo_reid::dataset::{generate_synthetic_cohort, SynthConfig};
use histo_reid::tiling::{build_tissue_mask, enumerate_patches, read_patch, GridParams, Slide};

fn main() -> histo_reid::Result<()> {
    let dir = std::env::temp_dir().join("histo-reid-tiling");
    let cohort = generate_synthetic_cohort(&SynthConfig::new(1, 1, 1, 1024, 3), &dir)?;
    let slide = Slide::open(&cohort.entries[0])?;
    println!("slide {} is {}x{} px at {} mpp", slide.slide_id, slide.width(), slide.height(), slide.native_mpp);

    let mask = build_tissue_mask(&slide.image, 32)?;
    println!(
        "mask {}x{} cells, otsu threshold {}, tissue fraction {:.3}",
        mask.width,
        mask.height,
        mask.threshold_used,
        mask.tissue_fraction()
    );
    mask.save_png(&dir.join("mask.png"))?;

    for mpp in [0.44, 0.88, 1.76] {
        let grid = GridParams {
            size_px: 64,
            target_mpp: mpp,
            stride_px: 64,
            min_coverage: 0.7,
        };
        let specs = enumerate_patches(&slide, &mask, &grid)?;
        println!("{mpp:>5} mpp: {:>4} patches kept", specs.len());
        if let Some(first) = specs.first() {
            let patch = read_patch(&slide, first)?;
            patch.to_image().save(dir.join(format!("patch_{mpp}.png")))?;
        }
    }
    println!("mask and sample patches in {}", dir.display());
    Ok(())
}
