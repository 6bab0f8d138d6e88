//! Optical-density color math for two-stain (H&E) images.
//!
//! Macenko estimation finds the two stain absorption directions of a patch;
//! deconvolution turns pixels into per-stain concentrations; augmentation
//! rescales and shifts those concentrations (`S' = αS + β`) before
//! reconstructing the image with the same stain matrix.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiling::RgbPatch;

/// Reference hematoxylin absorption direction (not normalized).
pub const HEMATOXYLIN: [f64; 3] = [0.650, 0.704, 0.286];
/// Reference eosin absorption direction (not normalized).
pub const EOSIN: [f64; 3] = [0.072, 0.990, 0.105];

pub const DEFAULT_EPSILON: f64 = 1.0 / 255.0;
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Minimum angle between the two estimated stain vectors.
const MIN_STAIN_ANGLE_DEG: f64 = 2.0;
const MIN_TISSUE_PIXELS: usize = 100;

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    v.map(|c| c / n)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-pixel optical density, row-major HWC, all values `≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    pub size: usize,
    pub data: Vec<f64>,
}

impl OdImage {
    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

pub fn rgb_to_od(patch: &RgbPatch, epsilon: f64) -> OdImage {
    OdImage {
        size: patch.size(),
        data: patch.data().iter().map(|&v| -v.max(epsilon).log10()).collect(),
    }
}

pub fn od_to_rgb(od: &OdImage) -> RgbPatch {
    let data = od.data.iter().map(|&d| 10f64.powf(-d).clamp(0.0, 1.0)).collect();
    RgbPatch::new(od.size, data).expect("od image has patch layout")
}

/// Two unit stain vectors (row 0 hematoxylin-like) and the per-stain
/// reference concentration scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StainModel {
    pub stain_matrix: [[f64; 3]; 2],
    pub reference_max_concentration: [f64; 2],
}

impl StainModel {
    /// The canonical H&E matrix, used as a fallback for degenerate patches.
    pub fn canonical() -> Self {
        StainModel {
            stain_matrix: [normalized(HEMATOXYLIN), normalized(EOSIN)],
            reference_max_concentration: [1.0, 1.0],
        }
    }

    /// Builds a model from two absorption directions (normalized here).
    pub fn from_vectors(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Result<Self> {
        let m = StainModel {
            stain_matrix: [normalized(hematoxylin), normalized(eosin)],
            reference_max_concentration: [1.0, 1.0],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.stain_matrix {
            if (dot(*row, *row).sqrt() - 1.0).abs() > 1e-6 || row.iter().any(|&c| c < 0.0 || !c.is_finite()) {
                return Err(Error::Stain(format!("stain vector {row:?} is not a unit non-negative vector")));
            }
        }
        if self.angle_between_stains_deg() < MIN_STAIN_ANGLE_DEG {
            return Err(Error::Stain("stain vectors are (nearly) collinear".into()));
        }
        Ok(())
    }

    pub fn angle_between_stains_deg(&self) -> f64 {
        let c = dot(self.stain_matrix[0], self.stain_matrix[1]).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    /// `(M Mᵀ)⁻¹ M`, the least-squares solve for concentrations.
    fn pseudo_inverse(&self) -> Result<[[f64; 3]; 2]> {
        let [a, b] = self.stain_matrix;
        let (g00, g01, g11) = (dot(a, a), dot(a, b), dot(b, b));
        let det = g00 * g11 - g01 * g01;
        if det.abs() < 1e-10 {
            return Err(Error::Stain("singular stain matrix".into()));
        }
        let (i00, i01, i11) = (g11 / det, -g01 / det, g00 / det);
        let mut p = [[0.0; 3]; 2];
        for c in 0..3 {
            p[0][c] = i00 * a[c] + i01 * b[c];
            p[1][c] = i01 * a[c] + i11 * b[c];
        }
        Ok(p)
    }
}

/// Per-stain concentration per pixel (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    pub size: usize,
    pub channels: [Vec<f64>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacenkoParams {
    /// Pixels with OD L2 norm at or below this are treated as background.
    pub od_floor: f64,
    /// Percentile (in percent) for the angular extremes.
    pub angle_percentile: f64,
    /// Percentile (in percent) for the reference concentration.
    pub concentration_percentile: f64,
    pub epsilon: f64,
}

impl Default for MacenkoParams {
    fn default() -> Self {
        MacenkoParams {
            od_floor: 0.15,
            angle_percentile: 1.0,
            concentration_percentile: 99.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Linear-interpolated percentile of sorted data (`p` in percent).
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn orient_non_negative(v: [f64; 3]) -> [f64; 3] {
    let v = if v.iter().sum::<f64>() < 0.0 { v.map(|c| -c) } else { v };
    normalized(v.map(|c| c.max(0.0)))
}

/// Estimates a stain model from the OD pixels of one patch or a pool of
/// patches (Macenko: principal plane + angular percentiles).
pub fn estimate_stain_model(patch: &RgbPatch, params: &MacenkoParams) -> Result<StainModel> {
    estimate_from_od(rgb_to_od(patch, params.epsilon).pixels(), params)
}

/// Same as [`estimate_stain_model`] over several patches jointly, e.g. all
/// patches of a slide.
pub fn estimate_stain_model_pooled<'a>(
    patches: impl IntoIterator<Item = &'a RgbPatch>,
    params: &MacenkoParams,
) -> Result<StainModel> {
    let mut od = Vec::new();
    for p in patches {
        od.extend(rgb_to_od(p, params.epsilon).pixels());
    }
    estimate_from_od(od.into_iter(), params)
}

fn estimate_from_od(pixels: impl Iterator<Item = [f64; 3]>, params: &MacenkoParams) -> Result<StainModel> {
    let tissue: Vec<[f64; 3]> = pixels.filter(|p| dot(*p, *p).sqrt() > params.od_floor).collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(Error::Stain(format!(
            "insufficient tissue for stain estimation ({} pixels above OD floor)",
            tissue.len()
        )));
    }
    let n = tissue.len() as f64;
    let mut mean = Vector3::zeros();
    for p in &tissue {
        mean += Vector3::from(*p);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in &tissue {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let col = |i: usize| -> [f64; 3] {
        let c = eig.eigenvectors.column(order[i]);
        [c[0], c[1], c[2]]
    };
    let mut e1 = col(0);
    let e2 = col(1);
    // Point the first axis along the data so angles stay within (-π/2, π/2).
    if dot(e1, mean.into()) < 0.0 {
        e1 = e1.map(|c| -c);
    }

    let mut angles: Vec<f64> = tissue.iter().map(|p| dot(*p, e2).atan2(dot(*p, e1))).collect();
    angles.sort_by(f64::total_cmp);
    let lo = percentile(&angles, params.angle_percentile);
    let hi = percentile(&angles, 100.0 - params.angle_percentile);
    let along = |phi: f64| -> [f64; 3] {
        let (s, c) = phi.sin_cos();
        orient_non_negative([0, 1, 2].map(|k| c * e1[k] + s * e2[k]))
    };
    let (v_lo, v_hi) = (along(lo), along(hi));
    let h_ref = normalized(HEMATOXYLIN);
    let (h, e) = if dot(v_lo, h_ref) >= dot(v_hi, h_ref) {
        (v_lo, v_hi)
    } else {
        (v_hi, v_lo)
    };
    let mut model = StainModel {
        stain_matrix: [h, e],
        reference_max_concentration: [1.0, 1.0],
    };
    model.validate()?;

    let pinv = model.pseudo_inverse()?;
    let mut conc: [Vec<f64>; 2] = [Vec::with_capacity(tissue.len()), Vec::with_capacity(tissue.len())];
    for p in &tissue {
        for s in 0..2 {
            conc[s].push(dot(pinv[s], *p).max(0.0));
        }
    }
    for s in 0..2 {
        conc[s].sort_by(f64::total_cmp);
        model.reference_max_concentration[s] = percentile(&conc[s], params.concentration_percentile).max(1e-6);
    }
    Ok(model)
}

/// Least-squares concentrations for every pixel; negatives clipped to 0.
pub fn deconvolve(patch: &RgbPatch, model: &StainModel, epsilon: f64) -> Result<ConcentrationMap> {
    deconvolve_od(&rgb_to_od(patch, epsilon), model)
}

pub fn deconvolve_od(od: &OdImage, model: &StainModel) -> Result<ConcentrationMap> {
    let pinv = model.pseudo_inverse()?;
    let mut channels = [Vec::with_capacity(od.size * od.size), Vec::with_capacity(od.size * od.size)];
    for p in od.pixels() {
        for s in 0..2 {
            channels[s].push(dot(pinv[s], p).max(0.0));
        }
    }
    Ok(ConcentrationMap { size: od.size, channels })
}

/// Optical density of the forward model `Mᵀ S` (no clipping).
pub fn concentrations_to_od(conc: &ConcentrationMap, model: &StainModel) -> OdImage {
    let [a, b] = model.stain_matrix;
    let mut data = Vec::with_capacity(conc.size * conc.size * 3);
    for (h, e) in conc.channels[0].iter().zip(&conc.channels[1]) {
        for c in 0..3 {
            data.push(h * a[c] + e * b[c]);
        }
    }
    OdImage { size: conc.size, data }
}

/// `I = 10^(−Mᵀ S)`, clipped to `[0, 1]`.
pub fn reconstruct(conc: &ConcentrationMap, model: &StainModel) -> RgbPatch {
    od_to_rgb(&concentrations_to_od(conc, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainAugmentParams {
    pub lambda: f64,
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl StainAugmentParams {
    pub fn identity() -> Self {
        StainAugmentParams {
            lambda: 0.0,
            alpha: [1.0, 1.0],
            beta: [0.0, 0.0],
        }
    }

    /// Draws `α ∈ [1−λ, 1+λ]` and `β ∈ [−λ, λ]` independently per stain.
    pub fn sample(lambda: f64, rng: &mut impl Rng) -> Self {
        let mut alpha = [1.0; 2];
        let mut beta = [0.0; 2];
        for s in 0..2 {
            alpha[s] = rng.random_range(1.0 - lambda..=1.0 + lambda);
            beta[s] = rng.random_range(-lambda..=lambda);
        }
        StainAugmentParams { lambda, alpha, beta }
    }
}

/// Applies fixed augmentation parameters with a given stain model.
pub fn augment_with(patch: &RgbPatch, model: &StainModel, params: &StainAugmentParams, epsilon: f64) -> Result<RgbPatch> {
    let mut conc = deconvolve(patch, model, epsilon)?;
    for s in 0..2 {
        let (a, b) = (params.alpha[s], params.beta[s]);
        conc.channels[s].iter_mut().for_each(|v| *v = (a * *v + b).max(0.0));
    }
    Ok(reconstruct(&conc, model))
}

/// Stain augmentation with a model estimated on the patch itself.
///
/// If estimation fails (too little tissue, degenerate stains) the patch is
/// returned unchanged and a warning is logged. The rng is advanced the same
/// way in both cases.
pub fn augment_stain(patch: &RgbPatch, lambda: f64, rng: &mut impl Rng, macenko: &MacenkoParams) -> RgbPatch {
    let params = StainAugmentParams::sample(lambda, rng);
    match estimate_stain_model(patch, macenko).and_then(|m| augment_with(patch, &m, &params, macenko.epsilon)) {
        Ok(out) => out,
        Err(e) => {
            log::warn!("stain augmentation skipped: {e}");
            patch.clone()
        }
    }
}

/// Stain augmentation with a precomputed (e.g. per-slide) model.
pub fn augment_stain_with_model(
    patch: &RgbPatch,
    model: &StainModel,
    lambda: f64,
    rng: &mut impl Rng,
    epsilon: f64,
) -> RgbPatch {
    let params = StainAugmentParams::sample(lambda, rng);
    augment_with(patch, model, &params, epsilon).unwrap_or_else(|e| {
        log::warn!("stain augmentation skipped: {e}");
        patch.clone()
    })
}

pub fn flip(patch: &RgbPatch, horizontal: bool, vertical: bool) -> RgbPatch {
    let n = patch.size();
    RgbPatch::from_fn(n, |x, y| {
        let sx = if horizontal { n - 1 - x } else { x };
        let sy = if vertical { n - 1 - y } else { y };
        patch.pixel(sx, sy)
    })
}

/// Horizontal and vertical flips, each with probability 1/2.
pub fn random_flip(patch: &RgbPatch, rng: &mut impl Rng) -> RgbPatch {
    let h = rng.random_bool(0.5);
    let v = rng.random_bool(0.5);
    flip(patch, h, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn forward_patch(model: &StainModel, size: usize, conc: impl Fn(usize, usize) -> [f64; 2]) -> RgbPatch {
        let [a, b] = model.stain_matrix;
        RgbPatch::from_fn(size, |x, y| {
            let [h, e] = conc(x, y);
            [0, 1, 2].map(|c| 10f64.powf(-(h * a[c] + e * b[c])))
        })
    }

    fn two_stain(model: &StainModel, seed: u64) -> RgbPatch {
        let mut rng = rng_from(seed);
        let cs: Vec<[f64; 2]> = (0..32 * 32)
            .map(|_| match rng.random_range(0..3) {
                0 => [rng.random_range(0.2..1.0), 0.0],
                1 => [0.0, rng.random_range(0.2..1.0)],
                _ => [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            })
            .collect();
        forward_patch(model, 32, |x, y| cs[y * 32 + x])
    }

    #[test]
    fn od_examples() {
        let white = RgbPatch::constant(2, [1.0; 3]);
        assert!(rgb_to_od(&white, DEFAULT_EPSILON).data.iter().all(|&v| v == 0.0));
        let grey = RgbPatch::constant(2, [0.1; 3]);
        assert!(rgb_to_od(&grey, DEFAULT_EPSILON).data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let black = RgbPatch::constant(2, [0.0; 3]);
        let od = rgb_to_od(&black, 0.01);
        assert!(od.data.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let back = od_to_rgb(&OdImage { size: 1, data: vec![0.0, 400.0, 1e9] });
        assert_eq!(back.pixel(0, 0)[0], 1.0);
        assert!(back.pixel(0, 0)[2] >= 0.0 && back.pixel(0, 0)[2] < 1e-300);
    }

    #[test]
    fn canonical_model_is_valid() {
        StainModel::canonical().validate().unwrap();
    }

    #[test]
    fn recovers_known_matrix() {
        let truth = StainModel::canonical();
        let patch = two_stain(&truth, 5);
        let est = estimate_stain_model(&patch, &MacenkoParams::default()).unwrap();
        for r in 0..2 {
            let angle = dot(est.stain_matrix[r], truth.stain_matrix[r]).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 2.0, "row {r} off by {angle}°");
        }
    }

    #[test]
    fn single_stain_is_degenerate() {
        let truth = StainModel::canonical();
        let mut rng = rng_from(2);
        let hs: Vec<f64> = (0..1024).map(|_| rng.random_range(0.2..1.0)).collect();
        let patch = forward_patch(&truth, 32, |x, y| [hs[y * 32 + x], 0.0]);
        assert!(estimate_stain_model(&patch, &MacenkoParams::default()).is_err());
    }

    #[test]
    fn white_patch_has_insufficient_tissue() {
        let err = estimate_stain_model(&RgbPatch::constant(16, [1.0; 3]), &MacenkoParams::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient tissue"));
    }

    #[test]
    fn deconvolve_recovers_concentrations() {
        let m = StainModel::canonical();
        let patch = forward_patch(&m, 8, |x, y| [x as f64 * 0.1, y as f64 * 0.05]);
        let c = deconvolve(&patch, &m, DEFAULT_EPSILON).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert!((c.channels[0][y * 8 + x] - x as f64 * 0.1).abs() < 1e-3);
                assert!((c.channels[1][y * 8 + x] - y as f64 * 0.05).abs() < 1e-3);
            }
        }
        let white = deconvolve(&RgbPatch::constant(2, [1.0; 3]), &m, DEFAULT_EPSILON).unwrap();
        assert!(white.channels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn deconvolution_is_linear_in_od() {
        let m = StainModel::canonical();
        let od = OdImage { size: 1, data: vec![0.3, 0.5, 0.2] };
        let od2 = OdImage { size: 1, data: vec![0.6, 1.0, 0.4] };
        let a = deconvolve_od(&od, &m).unwrap();
        let b = deconvolve_od(&od2, &m).unwrap();
        for s in 0..2 {
            assert!((2.0 * a.channels[s][0] - b.channels[s][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = StainModel {
            stain_matrix: [normalized(HEMATOXYLIN), normalized(HEMATOXYLIN)],
            reference_max_concentration: [1.0, 1.0],
        };
        assert!(deconvolve(&RgbPatch::constant(2, [0.5; 3]), &m, DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn projection_is_idempotent() {
        let m = StainModel::canonical();
        let mut rng = rng_from(3);
        let patch = RgbPatch::from_fn(8, |_, _| [0; 3].map(|_| rng.random_range(0.3..1.0)));
        let once = reconstruct(&deconvolve(&patch, &m, DEFAULT_EPSILON).unwrap(), &m);
        let twice = reconstruct(&deconvolve(&once, &m, DEFAULT_EPSILON).unwrap(), &m);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let zero = ConcentrationMap { size: 2, channels: [vec![0.0; 4], vec![0.0; 4]] };
        assert!(reconstruct(&zero, &m).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn lambda_zero_is_projection() {
        let m = StainModel::canonical();
        let patch = two_stain(&m, 8);
        let mp = MacenkoParams::default();
        let est = estimate_stain_model(&patch, &mp).unwrap();
        let proj = reconstruct(&deconvolve(&patch, &est, mp.epsilon).unwrap(), &est);
        let aug = augment_stain(&patch, 0.0, &mut rng_from(1), &mp);
        assert_eq!(aug.quantized(), proj.quantized());
    }

    #[test]
    fn sampled_params_respect_bounds() {
        let mut rng = rng_from(4);
        for _ in 0..1000 {
            let p = StainAugmentParams::sample(0.2, &mut rng);
            for s in 0..2 {
                assert!((0.8..=1.2).contains(&p.alpha[s]));
                assert!((-0.2..=0.2).contains(&p.beta[s]));
            }
        }
    }

    #[test]
    fn forced_alpha_scales_single_stain_od() {
        let m = StainModel::canonical();
        let patch = forward_patch(&m, 8, |x, y| [0.1 + 0.05 * (x + y) as f64, 0.0]);
        let params = StainAugmentParams {
            lambda: 0.2,
            alpha: [1.2, 1.0],
            beta: [0.0, 0.0],
        };
        let out = augment_with(&patch, &m, &params, DEFAULT_EPSILON).unwrap();
        let before = rgb_to_od(&patch, DEFAULT_EPSILON);
        let after = rgb_to_od(&out, DEFAULT_EPSILON);
        for (a, b) in before.data.iter().zip(&after.data) {
            assert!((1.2 * a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn failed_estimation_passes_patch_through() {
        let white = RgbPatch::constant(8, [1.0; 3]);
        assert_eq!(augment_stain(&white, 0.2, &mut rng_from(0), &MacenkoParams::default()), white);
    }

    #[test]
    fn flips() {
        let mut rng = rng_from(6);
        let p = RgbPatch::from_fn(5, |_, _| [rng.random(), rng.random(), rng.random()]);
        assert_eq!(flip(&flip(&p, true, false), true, false), p);
        assert_eq!(flip(&flip(&p, true, true), true, true), p);
        let sym = RgbPatch::from_fn(4, |x, y| {
            let d = (x.min(3 - x) + y.min(3 - y)) as f64 / 6.0;
            [d; 3]
        });
        assert_eq!(flip(&sym, true, false), sym);
        assert_eq!(flip(&sym, false, true), sym);
        let a: Vec<_> = (0..20).map(|_| random_flip(&p, &mut rng_from(9))).collect();
        let b: Vec<_> = (0..20).map(|_| random_flip(&p, &mut rng_from(9))).collect();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn concentrations_round_trip(seed in proptest::prelude::any::<u64>()) {
            let mut rng = rng_from(seed);
            let model = StainModel::canonical();
            let conc = ConcentrationMap {
                size: 6,
                channels: [0, 1].map(|_| (0..36).map(|_| rng.random_range(0.0..1.5)).collect()),
            };
            let back = deconvolve_od(&concentrations_to_od(&conc, &model), &model).unwrap();
            for s in 0..2 {
                for (a, b) in conc.channels[s].iter().zip(&back.channels[s]) {
                    proptest::prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn augmented_pixels_stay_in_range(seed in proptest::prelude::any::<u64>(), lambda in 0.0f64..0.5) {
            let model = StainModel::canonical();
            let p = two_stain(&model, seed);
            let params = StainAugmentParams::sample(lambda, &mut rng_from(seed ^ 1));
            let out = augment_with(&p, &model, &params, 1e-6).unwrap();
            proptest::prop_assert_eq!(out.size(), p.size());
            for y in 0..out.size() {
                for x in 0..out.size() {
                    proptest::prop_assert!(out.pixel(x, y).iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }

        #[test]
        fn double_flip_is_identity(seed in proptest::prelude::any::<u64>(), h in proptest::bool::ANY, v in proptest::bool::ANY) {
            let p = two_stain(&StainModel::canonical(), seed);
            proptest::prop_assert_eq!(flip(&flip(&p, h, v), h, v), p);
        }
    }
}
