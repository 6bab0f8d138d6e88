//! Deterministic synthetic slide cohort.
//!
//! Every patient gets a persistent morphology signature: nuclear size, density,
//! elongation, intensity and clustering plus a band-limited stromal texture.
//! Each slide renders that signature inside a random tissue outline on white
//! background, with per-slide nuisance (stain strength and hue, rotation,
//! nucleus placement). Slides of later resections move the signature by a
//! configurable drift factor.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use rand::Rng as _;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_manifest, SlideManifestEntry};
use crate::error::{Error, Result};
use crate::seed::{derived_rng, Rng};
use crate::stain::{EOSIN, HEMATOXYLIN};

const N_FEATURES: usize = 7;
const N_WAVES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub slides_per_patient: usize,
    pub resections_per_patient: usize,
    pub image_size_px: u32,
    pub seed: u64,
    #[serde(default = "default_native_mpp")]
    pub native_mpp: f64,
    /// Scale of the signature shift applied to later resections (0 = none).
    #[serde(default = "default_drift")]
    pub drift: f64,
    /// Half-width of the per-slide stain strength envelope.
    #[serde(default = "default_stain_jitter")]
    pub stain_jitter: f64,
}

fn default_native_mpp() -> f64 {
    0.44
}
fn default_drift() -> f64 {
    1.0
}
fn default_stain_jitter() -> f64 {
    0.2
}

impl SynthConfig {
    pub fn new(n_patients: usize, slides_per_patient: usize, resections_per_patient: usize, image_size_px: u32, seed: u64) -> Self {
        SynthConfig {
            n_patients,
            slides_per_patient,
            resections_per_patient,
            image_size_px,
            seed,
            native_mpp: default_native_mpp(),
            drift: default_drift(),
            stain_jitter: default_stain_jitter(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.slides_per_patient == 0 || self.resections_per_patient == 0 {
            return Err(Error::Config("synthetic cohort counts must be at least 1".into()));
        }
        if self.resections_per_patient > self.slides_per_patient {
            return Err(Error::Config("more resections than slides per patient".into()));
        }
        if self.image_size_px < 256 {
            return Err(Error::Config("synthetic image size must be at least 256 px".into()));
        }
        if !(self.native_mpp > 0.0) || self.drift < 0.0 || !(0.0..=0.2).contains(&self.stain_jitter) {
            return Err(Error::Config("invalid synthetic mpp, drift or stain jitter".into()));
        }
        Ok(())
    }
}

/// Normalized morphology features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSignature {
    pub features: [f64; N_FEATURES],
    /// Texture wave directions (radians) relative to the slide rotation.
    pub wave_directions: [f64; N_WAVES],
    /// Relative wave-number jitter per texture wave.
    pub wave_scales: [f64; N_WAVES],
}

impl PatientSignature {
    fn nucleus_radius(&self) -> f64 {
        3.0 + 6.0 * self.features[0]
    }
    fn nuclear_coverage(&self) -> f64 {
        0.05 + 0.25 * self.features[1]
    }
    fn elongation(&self) -> f64 {
        1.0 + 1.5 * self.features[2]
    }
    fn texture_wavelength(&self) -> f64 {
        8.0 + 40.0 * self.features[3]
    }
    fn nuclear_intensity(&self) -> f64 {
        0.5 + 0.8 * self.features[4]
    }
    fn texture_contrast(&self) -> f64 {
        0.2 + 0.7 * self.features[5]
    }
    fn clustering(&self) -> f64 {
        self.features[6]
    }

    fn drifted(&self, rng: &mut Rng, drift: f64) -> PatientSignature {
        let mut out = self.clone();
        for f in out.features.iter_mut() {
            let delta = rng.random_range(-0.25..=0.25);
            *f = (*f + drift * delta).clamp(0.0, 1.0);
        }
        for d in out.wave_directions.iter_mut() {
            *d += drift * rng.random_range(-0.5..=0.5);
        }
        out
    }
}

/// Tissue outline in native pixel coordinates: a rotated ellipse whose radius
/// is modulated by low-order harmonics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueGeometry {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub aspect: f64,
    pub angle: f64,
    /// (amplitude, phase) for harmonics 2, 3, 4.
    pub lobes: Vec<(f64, f64)>,
}

impl TissueGeometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = (-s * dx + c * dy) / self.aspect;
        let r = u.hypot(v);
        let theta = v.atan2(u);
        let boundary = self.radius
            * (1.0
                + self
                    .lobes
                    .iter()
                    .enumerate()
                    .map(|(i, (a, p))| a * ((i as f64 + 2.0) * theta + p).cos())
                    .sum::<f64>());
        r <= boundary
    }

    /// Ground-truth mask sampled at cell centres on a grid of
    /// `ceil(width / cell) × ceil(height / cell)`, row-major.
    pub fn mask(&self, width: u32, height: u32, cell: u32) -> Vec<bool> {
        let gw = width.div_ceil(cell);
        let gh = height.div_ceil(cell);
        let mut out = Vec::with_capacity((gw * gh) as usize);
        for gy in 0..gh {
            for gx in 0..gw {
                let x = ((gx * cell) as f64 + cell as f64 / 2.0).min(width as f64 - 0.5);
                let y = ((gy * cell) as f64 + cell as f64 / 2.0).min(height as f64 - 0.5);
                out.push(self.contains(x, y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideTruth {
    pub slide_id: String,
    pub patient_id: String,
    pub resection_ordinal: u32,
    pub width: u32,
    pub height: u32,
    pub geometry: TissueGeometry,
    /// Signature actually rendered (after drift).
    pub signature: PatientSignature,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    /// Entries with absolute image paths.
    pub entries: Vec<SlideManifestEntry>,
    pub truth: Vec<SlideTruth>,
}

fn patient_signatures(config: &SynthConfig) -> Vec<PatientSignature> {
    let n = config.n_patients;
    let mut rng = derived_rng(config.seed, "synth/signature-strata", 0);
    // Stratify each feature so patients spread over the whole range.
    let perms: Vec<Vec<usize>> = (0..N_FEATURES)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    (0..n)
        .map(|p| {
            let mut rng = derived_rng(config.seed, "synth/patient", p as u64);
            let mut features = [0.0; N_FEATURES];
            for (k, f) in features.iter_mut().enumerate() {
                *f = (perms[k][p] as f64 + rng.random_range(0.2..0.8)) / n as f64;
            }
            let mut wave_directions = [0.0; N_WAVES];
            let mut wave_scales = [0.0; N_WAVES];
            for i in 0..N_WAVES {
                wave_directions[i] = rng.random_range(0.0..PI);
                wave_scales[i] = rng.random_range(0.8..1.2);
            }
            PatientSignature {
                features,
                wave_directions,
                wave_scales,
            }
        })
        .collect()
}

struct SlidePlan {
    entry: SlideManifestEntry,
    file_name: String,
    signature: PatientSignature,
    index: u64,
}

/// Writes the cohort under `dir` (`slides/*.png`, `manifest.csv`,
/// `truth.json`). The output is a pure function of `config`.
pub fn generate_synthetic_cohort(config: &SynthConfig, dir: &Path) -> Result<SyntheticCohort> {
    config.validate()?;
    let slides_dir = dir.join("slides");
    std::fs::create_dir_all(&slides_dir).map_err(|e| Error::io(&slides_dir, e))?;

    let signatures = patient_signatures(config);
    let mut plans = Vec::new();
    for (p, sig) in signatures.iter().enumerate() {
        let patient_id = format!("P{p:03}");
        let mut drift_rng = derived_rng(config.seed, "synth/drift", p as u64);
        let per_resection: Vec<PatientSignature> = (0..config.resections_per_patient)
            .map(|r| if r == 0 { sig.clone() } else { sig.drifted(&mut drift_rng, config.drift) })
            .collect();
        let mut days_rng = derived_rng(config.seed, "synth/days", p as u64);
        let mut days = vec![0u32];
        for _ in 1..config.resections_per_patient {
            let last = *days.last().unwrap();
            days.push(last + days_rng.random_range(90..1500));
        }
        for s in 0..config.slides_per_patient {
            let ordinal = s * config.resections_per_patient / config.slides_per_patient;
            let slide_id = format!("{patient_id}_S{s}");
            let file_name = format!("{slide_id}.png");
            plans.push(SlidePlan {
                entry: SlideManifestEntry {
                    slide_id,
                    patient_id: patient_id.clone(),
                    resection_ordinal: ordinal as u32,
                    days_since_first_resection: Some(days[ordinal]),
                    image_path: PathBuf::from("slides").join(&file_name),
                    native_mpp: config.native_mpp,
                },
                file_name,
                signature: per_resection[ordinal].clone(),
                index: plans.len() as u64,
            });
        }
    }

    let rendered: Vec<Result<SlideTruth>> = plans
        .par_iter()
        .map(|plan| {
            let mut rng = derived_rng(config.seed, "synth/slide", plan.index);
            let (img, geometry) = render_slide(config, &plan.signature, &mut rng);
            let path = slides_dir.join(&plan.file_name);
            img.save(&path)?;
            Ok(SlideTruth {
                slide_id: plan.entry.slide_id.clone(),
                patient_id: plan.entry.patient_id.clone(),
                resection_ordinal: plan.entry.resection_ordinal,
                width: img.width(),
                height: img.height(),
                geometry,
                signature: plan.signature.clone(),
            })
        })
        .collect();
    let truth = rendered.into_iter().collect::<Result<Vec<_>>>()?;

    let manifest_path = dir.join("manifest.csv");
    let relative: Vec<SlideManifestEntry> = plans.iter().map(|p| p.entry.clone()).collect();
    write_manifest(&manifest_path, &relative)?;
    let truth_path = dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?).map_err(|e| Error::io(&truth_path, e))?;

    let entries = relative
        .into_iter()
        .map(|mut e| {
            e.image_path = dir.join(&e.image_path);
            e
        })
        .collect();
    Ok(SyntheticCohort {
        dir: dir.to_path_buf(),
        manifest_path,
        entries,
        truth,
    })
}

struct Nucleus {
    x: f64,
    y: f64,
    a: f64,
    b: f64,
    angle: f64,
}

fn jitter_stain(base: [f64; 3], rng: &mut Rng) -> [f64; 3] {
    let mut v = base.map(|c| (c + rng.random_range(-0.04..0.04)).max(0.0));
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter_mut().for_each(|c| *c /= n);
    v
}

fn render_slide(config: &SynthConfig, sig: &PatientSignature, rng: &mut Rng) -> (RgbImage, TissueGeometry) {
    let size = config.image_size_px;
    let s = size as f64;
    let geometry = TissueGeometry {
        cx: s * rng.random_range(0.45..0.55),
        cy: s * rng.random_range(0.45..0.55),
        radius: s * rng.random_range(0.40..0.45),
        aspect: rng.random_range(0.8..1.0),
        angle: rng.random_range(0.0..PI),
        lobes: (0..3)
            .map(|_| (rng.random_range(0.0..0.07), rng.random_range(0.0..2.0 * PI)))
            .collect(),
    };

    let jitter = config.stain_jitter;
    let h_vec = jitter_stain(HEMATOXYLIN, rng);
    let e_vec = jitter_stain(EOSIN, rng);
    let h_scale = rng.random_range(1.0 - jitter..=1.0 + jitter);
    let e_scale = rng.random_range(1.0 - jitter..=1.0 + jitter);

    let rotation = rng.random_range(0.0..2.0 * PI);
    let k0 = 2.0 * PI / sig.texture_wavelength();
    let waves: Vec<(f64, f64, f64)> = (0..N_WAVES)
        .map(|i| {
            let dir = sig.wave_directions[i] + rotation;
            let k = k0 * sig.wave_scales[i];
            (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..2.0 * PI))
        })
        .collect();

    // Nuclei
    let r = sig.nucleus_radius();
    let elong = sig.elongation();
    let (a, b) = (r * elong.sqrt(), r / elong.sqrt());
    let tissue_area = PI * geometry.radius * geometry.radius * geometry.aspect;
    let count = (sig.nuclear_coverage() * tissue_area / (PI * a * b)).round() as usize;
    let n_clustered = (count as f64 * sig.clustering()).round() as usize;
    let n_clusters = (n_clustered / 12).max(1);
    let sample_in_tissue = |rng: &mut Rng| loop {
        let x = rng.random_range(0.0..s);
        let y = rng.random_range(0.0..s);
        if geometry.contains(x, y) {
            return (x, y);
        }
    };
    let centres: Vec<(f64, f64)> = (0..n_clusters).map(|_| sample_in_tissue(rng)).collect();
    let mut nuclei = Vec::with_capacity(count);
    for i in 0..count {
        let (x, y) = if i < n_clustered {
            let (cx, cy) = centres[i % n_clusters];
            let spread = 4.0 * r;
            (cx + rng.random_range(-spread..spread), cy + rng.random_range(-spread..spread))
        } else {
            sample_in_tissue(rng)
        };
        nuclei.push(Nucleus {
            x,
            y,
            a,
            b,
            angle: rng.random_range(0.0..PI),
        });
    }

    let n = size as usize;
    let mut hem = vec![0.0f64; n * n];
    let intensity = sig.nuclear_intensity();
    for nuc in &nuclei {
        let reach = nuc.a + 1.5;
        let (sn, cs) = nuc.angle.sin_cos();
        let x0 = (nuc.x - reach).floor().max(0.0) as usize;
        let x1 = ((nuc.x + reach).ceil() as usize).min(n - 1);
        let y0 = (nuc.y - reach).floor().max(0.0) as usize;
        let y1 = ((nuc.y + reach).ceil() as usize).min(n - 1);
        if nuc.x + reach < 0.0 || nuc.y + reach < 0.0 || x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 + 0.5 - nuc.x;
                let dy = y as f64 + 0.5 - nuc.y;
                let u = (cs * dx + sn * dy) / nuc.a;
                let v = (-sn * dx + cs * dy) / nuc.b;
                let d = (u * u + v * v).sqrt();
                // soft edge over roughly one pixel
                let w = ((1.0 - d) * nuc.b + 0.5).clamp(0.0, 1.0);
                let val = intensity * w;
                let cell = &mut hem[y * n + x];
                if val > *cell {
                    *cell = val;
                }
            }
        }
    }

    let contrast = sig.texture_contrast();
    let norm = 1.0 / (N_WAVES as f64).sqrt();
    let mut img: RgbImage = ImageBuffer::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let noise = [
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        ];
        let mut od = [0.0f64; 3];
        if geometry.contains(fx, fy) {
            let t: f64 = waves.iter().map(|(kx, ky, ph)| (kx * fx + ky * fy + ph).cos()).sum::<f64>() * norm;
            let eo = (0.35 * (1.0 + contrast * t)).max(0.02) * e_scale;
            let he = (0.08 + hem[y as usize * n + x as usize]) * h_scale;
            for c in 0..3 {
                od[c] = he * h_vec[c] + eo * e_vec[c];
            }
        }
        let mut out = [0u8; 3];
        for c in 0..3 {
            out[c] = (10f64.powf(-od[c]) * 255.0 + noise[c]).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(out);
    }
    (img, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_count_and_ordinals() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::new(3, 4, 2, 256, 3);
        cfg.drift = 0.5;
        let c = generate_synthetic_cohort(&cfg, dir.path()).unwrap();
        assert_eq!(c.entries.len(), 12);
        let ords: Vec<u32> = c.entries.iter().take(4).map(|e| e.resection_ordinal).collect();
        assert_eq!(ords, vec![0, 0, 1, 1]);
        assert_eq!(c.entries[2].days_since_first_resection, c.entries[3].days_since_first_resection);
        assert!(c.entries.iter().all(|e| e.image_path.is_file()));
        let loaded = crate::dataset::load_manifest(&c.manifest_path, crate::dataset::ImageCheck::AtLoad).unwrap();
        assert_eq!(loaded, c.entries);
    }

    #[test]
    fn zero_drift_keeps_signature() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::new(2, 2, 2, 256, 9);
        cfg.drift = 0.0;
        let c = generate_synthetic_cohort(&cfg, dir.path()).unwrap();
        assert_eq!(c.truth[0].signature, c.truth[1].signature);
    }

    #[test]
    fn rejects_small_images_and_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_synthetic_cohort(&SynthConfig::new(1, 1, 1, 128, 0), dir.path()).is_err());
        assert!(generate_synthetic_cohort(&SynthConfig::new(0, 1, 1, 256, 0), dir.path()).is_err());
    }
}
