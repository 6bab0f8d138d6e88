//! In-memory patch sets per slide and the online augmentation pipeline.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SlideManifestEntry;
use crate::error::Result;
use crate::seed::derived_rng;
use crate::stain::{
    augment_stain, augment_stain_with_model, estimate_stain_model_pooled, random_flip, MacenkoParams, StainModel,
    DEFAULT_LAMBDA,
};
use crate::tiling::{build_tissue_mask, enumerate_patches, read_patch, GridParams, RgbPatch, Slide};

/// Where the stain matrix used for augmentation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainScope {
    #[default]
    PerPatch,
    PerSlide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankParams {
    pub grid: GridParams,
    pub downscale_factor: u32,
    /// Slides with more tissue patches keep a seeded uniform sample.
    pub max_patches_per_slide: usize,
    pub stain_scope: StainScope,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SlidePatches {
    pub patches: Vec<RgbPatch>,
    /// Present with [`StainScope::PerSlide`] when estimation succeeded.
    pub stain_model: Option<StainModel>,
}

/// Tissue patches of every slide, keyed by slide id.
#[derive(Debug, Clone, Default)]
pub struct PatchBank {
    slides: BTreeMap<String, SlidePatches>,
}

impl PatchBank {
    /// Tiles every slide (in parallel) and keeps its patches in memory.
    pub fn build(entries: &[SlideManifestEntry], params: &BankParams, macenko: &MacenkoParams) -> Result<Self> {
        let built: Vec<Result<(String, SlidePatches)>> = entries
            .par_iter()
            .map(|e| {
                let slide = Slide::open(e)?;
                let mask = build_tissue_mask(&slide.image, params.downscale_factor)?;
                let mut specs = enumerate_patches(&slide, &mask, &params.grid)?;
                if specs.len() > params.max_patches_per_slide {
                    let mut rng = derived_rng(params.seed, &format!("patch-sample/{}", e.slide_id), 0);
                    let mut keep = sample(&mut rng, specs.len(), params.max_patches_per_slide).into_vec();
                    keep.sort_unstable();
                    specs = keep.into_iter().map(|i| specs[i].clone()).collect();
                }
                if specs.is_empty() {
                    log::warn!("slide {} has no tissue patches", e.slide_id);
                }
                let patches = specs.iter().map(|s| read_patch(&slide, s)).collect::<Result<Vec<_>>>()?;
                let stain_model = match params.stain_scope {
                    StainScope::PerPatch => None,
                    StainScope::PerSlide => match estimate_stain_model_pooled(&patches, macenko) {
                        Ok(m) => Some(m),
                        Err(err) => {
                            log::warn!("slide {}: per-slide stain estimation failed ({err}); using per-patch", e.slide_id);
                            None
                        }
                    },
                };
                Ok((e.slide_id.clone(), SlidePatches { patches, stain_model }))
            })
            .collect();
        let mut slides = BTreeMap::new();
        for r in built {
            let (id, p) = r?;
            slides.insert(id, p);
        }
        Ok(PatchBank { slides })
    }

    pub fn from_patches(slides: BTreeMap<String, Vec<RgbPatch>>) -> Self {
        PatchBank {
            slides: slides
                .into_iter()
                .map(|(k, patches)| {
                    (
                        k,
                        SlidePatches {
                            patches,
                            stain_model: None,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, slide_id: &str) -> Option<&SlidePatches> {
        self.slides.get(slide_id)
    }

    pub fn patches(&self, slide_id: &str) -> &[RgbPatch] {
        self.slides.get(slide_id).map(|s| s.patches.as_slice()).unwrap_or(&[])
    }

    pub fn slide_ids(&self) -> impl Iterator<Item = &str> {
        self.slides.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }

    pub fn total_patches(&self) -> usize {
        self.slides.values().map(|s| s.patches.len()).sum()
    }
}

/// Online augmentation: stain perturbation then random flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub lambda: f64,
    pub flips: bool,
    pub macenko: MacenkoParams,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation {
            lambda: DEFAULT_LAMBDA,
            flips: true,
            macenko: MacenkoParams::default(),
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Augmentation {
            lambda: 0.0,
            flips: false,
            macenko: MacenkoParams::default(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.lambda == 0.0 && !self.flips
    }

    pub fn apply(&self, patch: &RgbPatch, slide_model: Option<&StainModel>, rng: &mut impl Rng) -> RgbPatch {
        let stained = if self.lambda > 0.0 {
            match slide_model {
                Some(m) => augment_stain_with_model(patch, m, self.lambda, rng, self.macenko.epsilon),
                None => augment_stain(patch, self.lambda, rng, &self.macenko),
            }
        } else {
            patch.clone()
        };
        if self.flips {
            random_flip(&stained, rng)
        } else {
            stained
        }
    }
}
