//! Tissue masking, patch-grid enumeration and resolution-correct patch reads.

use std::io::Write as _;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::SlideManifestEntry;
use crate::error::{Error, Result};

/// Square RGB patch with channel values in `[0, 1]`, stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbPatch {
    size: usize,
    data: Vec<f64>,
}

impl RgbPatch {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size * 3 {
            return Err(Error::Tiling(format!(
                "patch of size {size} needs {} values, got {}",
                size * size * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Tiling(format!("patch value {v} outside [0, 1]")));
        }
        Ok(RgbPatch { size, data })
    }

    /// Builds a patch from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        RgbPatch { size, data }
    }

    pub fn constant(size: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(size, |_, _| rgb)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.size as u32, self.size as u32, self.quantized()).expect("buffer size matches")
    }

    pub fn from_image(img: &RgbImage) -> Result<Self> {
        if img.width() != img.height() {
            return Err(Error::Tiling("patch image must be square".into()));
        }
        Ok(RgbPatch {
            size: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }
}

/// A slide image held in memory at native resolution.
#[derive(Debug, Clone)]
pub struct Slide {
    pub slide_id: String,
    pub native_mpp: f64,
    pub image: RgbImage,
}

impl Slide {
    pub fn open(entry: &SlideManifestEntry) -> Result<Self> {
        let img = image::open(&entry.image_path)
            .map_err(|e| Error::Image(format!("{}: {e}", entry.image_path.display())))?
            .to_rgb8();
        Ok(Slide {
            slide_id: entry.slide_id.clone(),
            native_mpp: entry.native_mpp,
            image: img,
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// Binary tissue map on a grid of `ceil(width / f) × ceil(height / f)` cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub downscale_factor: u32,
    pub threshold_used: u8,
    cells: Vec<bool>,
}

impl TissueMask {
    pub fn is_tissue(&self, gx: u32, gy: u32) -> bool {
        self.cells[(gy * self.width + gx) as usize]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn tissue_fraction(&self) -> f64 {
        self.cells.iter().filter(|c| **c).count() as f64 / self.cells.len().max(1) as f64
    }

    /// Exports the mask as a black/white raster (white = tissue).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.is_tissue(x, y) { 255 } else { 0 }])
        });
        img.save(path)?;
        Ok(())
    }
}

/// Otsu's threshold over a 256-bin histogram.
///
/// The returned `t` maximizes the between-class variance of the split
/// `{≤ t} | {> t}`; the smallest maximizer wins ties. A histogram whose mass
/// sits in one bin returns that bin.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<u8> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::Tiling("otsu threshold of an empty histogram".into()));
    }
    let total_f = total as f64;
    let sum_all: f64 = histogram.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0.0;
    let mut s0 = 0.0;
    let mut best_t = None;
    let mut best_var = f64::NEG_INFINITY;
    for (t, &count) in histogram.iter().enumerate() {
        w0 += count as f64;
        s0 += t as f64 * count as f64;
        let w1 = total_f - w0;
        let var = if w0 == 0.0 || w1 == 0.0 {
            0.0
        } else {
            let m0 = s0 / w0;
            let m1 = (sum_all - s0) / w1;
            w0 * w1 * (m0 - m1) * (m0 - m1)
        };
        if var > best_var {
            best_var = var;
            best_t = Some(t);
        }
    }
    if best_var <= 0.0 {
        // Every split is degenerate: all mass in a single bin.
        let bin = histogram.iter().position(|&c| c > 0).expect("non-empty");
        return Ok(bin as u8);
    }
    Ok(best_t.expect("at least one bin") as u8)
}

fn luminance(rgb: [f64; 3]) -> u8 {
    (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]).round().clamp(0.0, 255.0) as u8
}

/// Box-averages the image by `downscale_factor` (partial edge blocks average
/// what they cover), converts to luminance and thresholds with Otsu. Tissue is
/// the dark side of the threshold.
pub fn build_tissue_mask(image: &RgbImage, downscale_factor: u32) -> Result<TissueMask> {
    if downscale_factor == 0 {
        return Err(Error::Tiling("downscale factor must be at least 1".into()));
    }
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Tiling("cannot mask an empty image".into()));
    }
    let f = downscale_factor;
    let gw = w.div_ceil(f);
    let gh = h.div_ceil(f);
    let mut gray = Vec::with_capacity((gw * gh) as usize);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for y in gy * f..((gy + 1) * f).min(h) {
                for x in gx * f..((gx + 1) * f).min(w) {
                    let p = image.get_pixel(x, y).0;
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                    n += 1.0;
                }
            }
            gray.push(luminance(acc.map(|v| v / n)));
        }
    }
    let mut hist = [0u64; 256];
    for &g in &gray {
        hist[g as usize] += 1;
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    let threshold = otsu_threshold(&hist)?;
    let cells = if occupied <= 1 {
        vec![false; gray.len()]
    } else {
        gray.iter().map(|&g| g <= threshold).collect()
    };
    Ok(TissueMask {
        width: gw,
        height: gh,
        downscale_factor: f,
        threshold_used: threshold,
        cells,
    })
}

/// A patch location at target resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub size_px: u32,
    pub target_mpp: f64,
    pub tissue_coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub size_px: u32,
    pub target_mpp: f64,
    pub stride_px: u32,
    pub min_coverage: f64,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Area-weighted tissue fraction of the mask cells under a native-pixel
/// rectangle.
fn coverage(mask: &TissueMask, slide_w: u32, slide_h: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let f = mask.downscale_factor as f64;
    let gx0 = (x0 / f).floor() as u32;
    let gy0 = (y0 / f).floor() as u32;
    let gx1 = ((x1 / f).ceil() as u32).min(mask.width);
    let gy1 = ((y1 / f).ceil() as u32).min(mask.height);
    let mut tissue = 0.0;
    let mut total = 0.0;
    for gy in gy0..gy1 {
        let cy0 = gy as f64 * f;
        let cy1 = (cy0 + f).min(slide_h as f64);
        let oy = overlap(y0, y1, cy0, cy1);
        for gx in gx0..gx1 {
            let cx0 = gx as f64 * f;
            let cx1 = (cx0 + f).min(slide_w as f64);
            let a = oy * overlap(x0, x1, cx0, cx1);
            total += a;
            if mask.is_tissue(gx, gy) {
                tissue += a;
            }
        }
    }
    if total > 0.0 {
        tissue / total
    } else {
        0.0
    }
}

fn scale_factor(native_mpp: f64, target_mpp: f64) -> Result<f64> {
    if !(target_mpp > 0.0) {
        return Err(Error::Tiling(format!("target mpp {target_mpp} must be positive")));
    }
    if target_mpp < native_mpp * (1.0 - 1e-9) {
        return Err(Error::Tiling(format!(
            "upsampling not supported: target {target_mpp} mpp is finer than native {native_mpp} mpp"
        )));
    }
    Ok((target_mpp / native_mpp).max(1.0))
}

/// Regular patch grid at target resolution, filtered by tissue coverage
/// (`coverage ≥ min_coverage` is kept).
pub fn enumerate_patches(slide: &Slide, mask: &TissueMask, params: &GridParams) -> Result<Vec<PatchSpec>> {
    if !(0.0..=1.0).contains(&params.min_coverage) {
        return Err(Error::Tiling("min_coverage must lie in [0, 1]".into()));
    }
    if params.stride_px == 0 || params.size_px == 0 {
        return Err(Error::Tiling("stride and patch size must be at least 1".into()));
    }
    let s = scale_factor(slide.native_mpp, params.target_mpp)?;
    let (w, h) = (slide.width(), slide.height());
    let tw = (w as f64 / s + 1e-9).floor() as u32;
    let th = (h as f64 / s + 1e-9).floor() as u32;
    if params.size_px > tw || params.size_px > th {
        log::warn!(
            "slide {}: {} px patches do not fit into {}x{} at {} mpp",
            slide.slide_id,
            params.size_px,
            tw,
            th,
            params.target_mpp
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut y = 0;
    while y + params.size_px <= th {
        let mut x = 0;
        while x + params.size_px <= tw {
            let cov = coverage(
                mask,
                w,
                h,
                x as f64 * s,
                y as f64 * s,
                ((x + params.size_px) as f64 * s).min(w as f64),
                ((y + params.size_px) as f64 * s).min(h as f64),
            );
            if cov >= params.min_coverage {
                out.push(PatchSpec {
                    slide_id: slide.slide_id.clone(),
                    x,
                    y,
                    size_px: params.size_px,
                    target_mpp: params.target_mpp,
                    tissue_coverage: cov,
                });
            }
            x += params.stride_px;
        }
        y += params.stride_px;
    }
    Ok(out)
}

/// Per output index: the native pixels it covers and their normalized weights.
fn axis_weights(start: u32, size: u32, scale: f64, limit: u32) -> Vec<Vec<(u32, f64)>> {
    (0..size)
        .map(|j| {
            let a = (start + j) as f64 * scale;
            let b = ((start + j + 1) as f64 * scale).min(limit as f64);
            let mut w = Vec::new();
            let mut i = a.floor() as u32;
            while (i as f64) < b && i < limit {
                let o = overlap(a, b, i as f64, i as f64 + 1.0);
                if o > 1e-12 {
                    w.push((i, o));
                }
                i += 1;
            }
            let total: f64 = w.iter().map(|(_, o)| o).sum();
            w.iter_mut().for_each(|(_, o)| *o /= total);
            w
        })
        .collect()
}

/// Reads a patch by area-averaging the native region under its footprint.
pub fn read_patch(slide: &Slide, spec: &PatchSpec) -> Result<RgbPatch> {
    let s = scale_factor(slide.native_mpp, spec.target_mpp)?;
    let (w, h) = (slide.width(), slide.height());
    let end_x = (spec.x + spec.size_px) as f64 * s;
    let end_y = (spec.y + spec.size_px) as f64 * s;
    if end_x > w as f64 + 1e-6 || end_y > h as f64 + 1e-6 {
        return Err(Error::Tiling(format!(
            "patch at ({}, {}) of size {} exceeds slide {} bounds",
            spec.x, spec.y, spec.size_px, spec.slide_id
        )));
    }
    let wx = axis_weights(spec.x, spec.size_px, s, w);
    let wy = axis_weights(spec.y, spec.size_px, s, h);
    let n = spec.size_px as usize;
    let mut data = vec![0.0; n * n * 3];
    let raw = slide.image.as_raw();
    let stride = w as usize * 3;
    for (oy, ry) in wy.iter().enumerate() {
        for (ox, rx) in wx.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for &(iy, wyv) in ry {
                let row = iy as usize * stride;
                for &(ix, wxv) in rx {
                    let k = row + ix as usize * 3;
                    let wgt = wyv * wxv;
                    acc[0] += wgt * raw[k] as f64;
                    acc[1] += wgt * raw[k + 1] as f64;
                    acc[2] += wgt * raw[k + 2] as f64;
                }
            }
            let o = (oy * n + ox) * 3;
            for c in 0..3 {
                data[o + c] = (acc[c] / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    Ok(RgbPatch { size: n, data })
}

/// Writes a patch list as `slide_id,x,y,size_px,target_mpp,coverage`.
pub fn write_patch_list(path: &Path, specs: &[PatchSpec]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("slide_id,x,y,size_px,target_mpp,coverage\n");
    for s in specs {
        body.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            s.slide_id, s.x, s.y, s.size_px, s.target_mpp, s.tissue_coverage
        ));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Exhaustive oracle with exact integer arithmetic. Compares
    /// `(s0 w1 - s1 w0)^2 / (w0 w1)` across splits by cross-multiplication.
    fn otsu_oracle(hist: &[u64; 256]) -> u8 {
        let mut best: Option<(u128, u128, usize)> = None;
        for t in 0..256 {
            let w0: u128 = hist[..=t].iter().map(|&c| c as u128).sum();
            let w1: u128 = hist[t + 1..].iter().map(|&c| c as u128).sum();
            let s0: u128 = hist[..=t].iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
            let s1: u128 = hist[t + 1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| (i + t + 1) as u128 * c as u128)
                .sum();
            let (num, den) = if w0 == 0 || w1 == 0 {
                (0, 1)
            } else {
                let d = (s0 * w1).abs_diff(s1 * w0);
                (d * d, w0 * w1)
            };
            match best {
                Some((bn, bd, _)) if num * bd <= bn * den => {}
                _ => best = Some((num, den, t)),
            }
        }
        let (num, _, t) = best.unwrap();
        if num == 0 {
            return hist.iter().position(|&c| c > 0).unwrap() as u8;
        }
        t as u8
    }

    #[test]
    fn two_spikes_pick_lower_spike() {
        let mut h = [0u64; 256];
        h[50] = 100;
        h[200] = 300;
        assert_eq!(otsu_threshold(&h).unwrap(), 50);
        assert_eq!(otsu_oracle(&h), 50);
    }

    #[test]
    fn single_bin_returns_bin() {
        let mut h = [0u64; 256];
        h[131] = 5;
        assert_eq!(otsu_threshold(&h).unwrap(), 131);
        assert!(otsu_threshold(&[0; 256]).is_err());
    }

    #[test]
    fn random_histograms_match_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut h = [0u64; 256];
            let occupied = rng.random_range(1..40);
            for _ in 0..occupied {
                h[rng.random_range(0..256)] += rng.random_range(1..1000);
            }
            assert_eq!(otsu_threshold(&h).unwrap(), otsu_oracle(&h), "{h:?}");
        }
    }

    fn slide_from(img: RgbImage, mpp: f64) -> Slide {
        Slide {
            slide_id: "s".into(),
            native_mpp: mpp,
            image: img,
        }
    }

    #[test]
    fn white_image_has_empty_mask() {
        let img = RgbImage::from_pixel(100, 70, Rgb([255, 255, 255]));
        let m = build_tissue_mask(&img, 8).unwrap();
        assert_eq!((m.width, m.height), (13, 9));
        assert!(m.cells().iter().all(|c| !c));
    }

    #[test]
    fn dark_blob_is_tissue() {
        let img = RgbImage::from_fn(64, 64, |x, y| {
            if (16..48).contains(&x) && (16..48).contains(&y) {
                Rgb([120, 60, 140])
            } else {
                Rgb([250, 250, 250])
            }
        });
        let m = build_tissue_mask(&img, 4).unwrap();
        for gy in 0..16 {
            for gx in 0..16 {
                let inside = (4..12).contains(&gx) && (4..12).contains(&gy);
                assert_eq!(m.is_tissue(gx, gy), inside);
            }
        }
        assert!(build_tissue_mask(&RgbImage::new(0, 0), 4).is_err());
    }

    fn half_mask_slide() -> (Slide, TissueMask) {
        // Left 80 columns tissue, 1 px cells.
        let img = RgbImage::from_fn(160, 40, |x, _| if x < 80 { Rgb([90, 40, 120]) } else { Rgb([255, 255, 255]) });
        let mask = build_tissue_mask(&img, 1).unwrap();
        (slide_from(img, 0.5), mask)
    }

    #[test]
    fn coverage_filtering() {
        let (slide, mask) = half_mask_slide();
        let params = GridParams {
            size_px: 40,
            target_mpp: 0.5,
            stride_px: 20,
            min_coverage: 0.7,
        };
        let specs = enumerate_patches(&slide, &mask, &params).unwrap();
        let xs: Vec<u32> = specs.iter().map(|s| s.x).collect();
        // x=0,20,40 fully inside; x=60 is half inside and dropped.
        assert_eq!(xs, vec![0, 20, 40]);
        assert!(specs.iter().all(|s| (s.tissue_coverage - 1.0).abs() < 1e-12));
        let all = enumerate_patches(&slide, &mask, &GridParams { min_coverage: 0.5, ..params }).unwrap();
        assert_eq!(all.iter().find(|s| s.x == 60).unwrap().tissue_coverage, 0.5);
    }

    #[test]
    fn coverage_boundary_is_inclusive() {
        // 10 px wide patch with exactly 7 tissue columns.
        let img = RgbImage::from_fn(10, 10, |x, _| if x < 7 { Rgb([90, 40, 120]) } else { Rgb([255, 255, 255]) });
        let mask = build_tissue_mask(&img, 1).unwrap();
        let params = GridParams {
            size_px: 10,
            target_mpp: 1.0,
            stride_px: 10,
            min_coverage: 0.7,
        };
        let specs = enumerate_patches(&slide_from(img, 1.0), &mask, &params).unwrap();
        assert_eq!(specs.len(), 1);
        assert!((specs[0].tissue_coverage - 0.7).abs() < 1e-12);
    }

    #[test]
    fn oversized_patch_gives_empty_list() {
        let (slide, mask) = half_mask_slide();
        let params = GridParams {
            size_px: 64,
            target_mpp: 0.5,
            stride_px: 64,
            min_coverage: 0.0,
        };
        assert!(enumerate_patches(&slide, &mask, &params).unwrap().is_empty());
    }

    #[test]
    fn native_to_0_88_downsamples_by_four() {
        assert_eq!(scale_factor(0.22, 0.88).unwrap(), 4.0);
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 10) as u8, (y * 10) as u8, 7]));
        let slide = slide_from(img.clone(), 0.22);
        let spec = PatchSpec {
            slide_id: "s".into(),
            x: 1,
            y: 0,
            size_px: 2,
            target_mpp: 0.88,
            tissue_coverage: 1.0,
        };
        let p = read_patch(&slide, &spec).unwrap();
        // Output pixel (0,0) averages native x in 4..8, y in 0..4.
        let mean_x = (4..8).map(|x| x as f64 * 10.0).sum::<f64>() / 4.0;
        let mean_y = (0..4).map(|y| y as f64 * 10.0).sum::<f64>() / 4.0;
        let px = p.pixel(0, 0);
        assert!((px[0] * 255.0 - mean_x).abs() < 1e-9);
        assert!((px[1] * 255.0 - mean_y).abs() < 1e-9);
    }

    #[test]
    fn identity_resample_is_a_crop() {
        let img = RgbImage::from_fn(20, 20, |x, y| Rgb([(x * 7) as u8, (y * 11) as u8, ((x + y) * 3) as u8]));
        let slide = slide_from(img.clone(), 0.5);
        let spec = PatchSpec {
            slide_id: "s".into(),
            x: 3,
            y: 5,
            size_px: 8,
            target_mpp: 0.5,
            tissue_coverage: 1.0,
        };
        let p = read_patch(&slide, &spec).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let q = img.get_pixel(3 + x, 5 + y).0;
                assert_eq!(p.pixel(x as usize, y as usize), q.map(|v| v as f64 / 255.0));
            }
        }
    }

    #[test]
    fn upsampling_is_rejected() {
        let slide = slide_from(RgbImage::new(8, 8), 0.5);
        let spec = PatchSpec {
            slide_id: "s".into(),
            x: 0,
            y: 0,
            size_px: 4,
            target_mpp: 0.25,
            tissue_coverage: 1.0,
        };
        let err = read_patch(&slide, &spec).unwrap_err();
        assert!(err.to_string().contains("upsampling not supported"));
    }

    #[test]
    fn constant_region_stays_constant() {
        let slide = slide_from(RgbImage::from_pixel(30, 30, Rgb([200, 100, 50])), 0.3);
        let spec = PatchSpec {
            slide_id: "s".into(),
            x: 0,
            y: 0,
            size_px: 10,
            target_mpp: 0.7,
            tissue_coverage: 1.0,
        };
        let p = read_patch(&slide, &spec).unwrap();
        for px in p.pixels() {
            assert!((px[0] - 200.0 / 255.0).abs() < 1e-12);
            assert!((px[2] - 50.0 / 255.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn area_average_preserves_mean(seed in any::<u64>(), scale in 1.0f64..3.7) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = RgbImage::from_fn(40, 40, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
            let size = (40.0 / scale).floor() as u32;
            let slide = slide_from(img.clone(), 1.0);
            let spec = PatchSpec { slide_id: "s".into(), x: 0, y: 0, size_px: size, target_mpp: scale, tissue_coverage: 1.0 };
            let p = read_patch(&slide, &spec).unwrap();
            let extent = size as f64 * scale;
            // Mean over the covered native region, fractional pixels weighted.
            let w = axis_weights(0, 1, extent, 40);
            let mut native = 0.0;
            for &(iy, wy) in &w[0] {
                for &(ix, wx) in &w[0] {
                    native += wy * wx * img.get_pixel(ix, iy).0[0] as f64 / 255.0;
                }
            }
            let patch_mean = p.pixels().map(|q| q[0]).sum::<f64>() / (size * size) as f64;
            prop_assert!((patch_mean - native).abs() <= 1.0 / 255.0);
        }

        #[test]
        fn raising_min_coverage_never_adds(seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = RgbImage::from_fn(96, 96, |_, _| if rng.random_bool(0.6) { Rgb([80, 40, 120]) } else { Rgb([255, 255, 255]) });
            let mask = build_tissue_mask(&img, 4).unwrap();
            let slide = slide_from(img, 0.5);
            let base = GridParams { size_px: 12, target_mpp: 1.0, stride_px: 6, min_coverage: lo };
            let all = enumerate_patches(&slide, &mask, &GridParams { min_coverage: 0.0, ..base }).unwrap();
            let a = enumerate_patches(&slide, &mask, &base).unwrap();
            let b = enumerate_patches(&slide, &mask, &GridParams { min_coverage: hi, ..base }).unwrap();
            prop_assert!(b.len() <= a.len());
            prop_assert!(b.iter().all(|s| a.contains(s)));
            prop_assert!(a.iter().all(|s| s.tissue_coverage >= lo));
            for s in all.iter().filter(|s| !a.contains(s)) {
                prop_assert!(s.tissue_coverage < lo);
            }
        }
    }
}
