//! Small residual CNN mapping an RGB patch to an embedding vector.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_backward_inplace, relu_inplace, Conv2d, ConvCache, Params, Tensor3};
use crate::tiling::RgbPatch;

/// Channel layout of the encoder: a stride-2 stem with `width` channels,
/// then four residual blocks with `width`, `2·width`, `embedding_dim` and
/// `embedding_dim` output channels (the middle two downsample by 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub width: usize,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

struct BlockCache {
    c1: ConvCache,
    a1: Tensor3,
    c2: ConvCache,
    sc: Option<ConvCache>,
    out: Tensor3,
}

impl ResBlock {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2d::new(cin, cout, 3, stride, 1, 1.0, rng);
        // Residual branch starts small so deep stacks stay well conditioned
        // without normalization layers.
        let conv2 = Conv2d::new(cout, cout, 3, 1, 1, 0.3, rng);
        let shortcut = (cin != cout || stride != 1).then(|| Conv2d::new(cin, cout, 1, stride, 0, 1.0, rng));
        ResBlock { conv1, conv2, shortcut }
    }

    fn zeros_like(&self) -> Self {
        ResBlock {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            shortcut: self.shortcut.as_ref().map(Conv2d::zeros_like),
        }
    }

    fn forward(&self, x: &Tensor3) -> (Tensor3, BlockCache) {
        let (mut a1, c1) = self.conv1.forward(x);
        relu_inplace(&mut a1.data);
        let (mut out, c2) = self.conv2.forward(&a1);
        let sc = match &self.shortcut {
            Some(conv) => {
                let (s, cache) = conv.forward(x);
                out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
                Some(cache)
            }
            None => {
                out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += v);
                None
            }
        };
        relu_inplace(&mut out.data);
        let cache = BlockCache {
            c1,
            a1,
            c2,
            sc,
            out: out.clone(),
        };
        (out, cache)
    }

    fn backward(&self, mut dout: Tensor3, cache: &BlockCache, grad: &mut ResBlock) -> Tensor3 {
        relu_backward_inplace(&cache.out.data, &mut dout.data);
        let mut da1 = self.conv2.backward(&dout, &cache.c2, &mut grad.conv2, true).expect("input grad");
        relu_backward_inplace(&cache.a1.data, &mut da1.data);
        let mut dx = self.conv1.backward(&da1, &cache.c1, &mut grad.conv1, true).expect("input grad");
        let dskip = match (&self.shortcut, &cache.sc) {
            (Some(conv), Some(sc)) => {
                let g = grad.shortcut.as_mut().expect("matching shortcut");
                conv.backward(&dout, sc, g, true).expect("input grad")
            }
            _ => dout,
        };
        dx.data.iter_mut().zip(&dskip.data).for_each(|(a, b)| *a += b);
        dx
    }
}

impl Params for ResBlock {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        if let Some(s) = &self.shortcut {
            s.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    arch: EncoderArch,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
}

/// Activations kept for the backward pass of one patch.
pub struct EncoderCache {
    stem: ConvCache,
    stem_out: Tensor3,
    blocks: Vec<BlockCache>,
    final_hw: (usize, usize),
}

/// Serialized encoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub arch: EncoderArch,
    pub params: Vec<f64>,
}

fn patch_to_tensor(patch: &RgbPatch) -> Tensor3 {
    let n = patch.size();
    let mut t = Tensor3::zeros(3, n, n);
    for (i, px) in patch.pixels().enumerate() {
        for c in 0..3 {
            t.data[c * n * n + i] = (px[c] - 0.5) * 2.0;
        }
    }
    t
}

impl Encoder {
    pub fn new(arch: EncoderArch, rng: &mut impl Rng) -> Result<Self> {
        if arch.width == 0 || arch.embedding_dim == 0 {
            return Err(Error::Model("encoder width and embedding_dim must be positive".into()));
        }
        let w = arch.width;
        let e = arch.embedding_dim;
        let stem = Conv2d::new(3, w, 3, 2, 1, 1.0, rng);
        let blocks = vec![
            ResBlock::new(w, w, 1, rng),
            ResBlock::new(w, 2 * w, 2, rng),
            ResBlock::new(2 * w, e, 2, rng),
            ResBlock::new(e, e, 1, rng),
        ];
        Ok(Encoder { arch, stem, blocks })
    }

    pub fn arch(&self) -> EncoderArch {
        self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            arch: self.arch,
            stem: self.stem.zeros_like(),
            blocks: self.blocks.iter().map(ResBlock::zeros_like).collect(),
        }
    }

    /// Evaluation-mode embedding.
    pub fn embed(&self, patch: &RgbPatch) -> Vec<f64> {
        self.forward_train(patch).0
    }

    pub fn forward_train(&self, patch: &RgbPatch) -> (Vec<f64>, EncoderCache) {
        let x = patch_to_tensor(patch);
        let (mut h, stem) = self.stem.forward(&x);
        relu_inplace(&mut h.data);
        let stem_out = h.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(&h);
            caches.push(cache);
            h = next;
        }
        let hw = h.h * h.w;
        let emb = h.data.chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect();
        let cache = EncoderCache {
            stem,
            stem_out,
            blocks: caches,
            final_hw: (h.h, h.w),
        };
        (emb, cache)
    }

    /// Accumulates parameter gradients for `dL/d(embedding)` into `grad`.
    pub fn backward(&self, cache: &EncoderCache, d_emb: &[f64], grad: &mut Encoder) {
        let (fh, fw) = cache.final_hw;
        let hw = fh * fw;
        let mut d = Tensor3::zeros(d_emb.len(), fh, fw);
        for (c, &g) in d_emb.iter().enumerate() {
            d.data[c * hw..(c + 1) * hw].fill(g / hw as f64);
        }
        for (i, b) in self.blocks.iter().enumerate().rev() {
            d = b.backward(d, &cache.blocks[i], &mut grad.blocks[i]);
        }
        relu_backward_inplace(&cache.stem_out.data, &mut d.data);
        self.stem.backward(&d, &cache.stem, &mut grad.stem, false);
    }

    pub fn to_weights(&self) -> EncoderWeights {
        EncoderWeights {
            arch: self.arch,
            params: self.flatten(),
        }
    }

    pub fn from_weights(weights: &EncoderWeights) -> Result<Self> {
        let mut enc = Encoder::new(weights.arch, &mut crate::seed::rng_from(0))?;
        enc.load_flat(&weights.params).map_err(Error::Model)?;
        if weights.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("encoder weights contain non-finite values".into()));
        }
        Ok(enc)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(&self.to_weights())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_weights(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let weights: EncoderWeights = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Model(format!("corrupt encoder weights {}: {e}", path.display())))?;
        Self::from_weights(&weights)
    }
}

impl Params for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.stem.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.stem.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn small() -> Encoder {
        Encoder::new(
            EncoderArch {
                width: 2,
                embedding_dim: 4,
            },
            &mut rng_from(5),
        )
        .unwrap()
    }

    fn random_patch(n: usize, seed: u64) -> RgbPatch {
        let mut rng = rng_from(seed);
        RgbPatch::from_fn(n, |_, _| [0; 3].map(|_| rng.random_range(0.2..1.0)))
    }

    #[test]
    fn embedding_shape_and_determinism() {
        let enc = Encoder::new(
            EncoderArch {
                width: 8,
                embedding_dim: 32,
            },
            &mut rng_from(1),
        )
        .unwrap();
        let p = random_patch(64, 2);
        let a = enc.embed(&p);
        assert_eq!(a.len(), 32);
        assert_eq!(a, enc.embed(&p));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut enc = small();
        let p = random_patch(16, 3);
        let probe: Vec<f64> = vec![0.7, -1.3, 0.4, 1.1];
        let loss = |e: &Encoder| e.embed(&p).iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = enc.forward_train(&p);
        let mut grad = enc.zeros_like();
        enc.backward(&cache, &probe, &mut grad);
        let analytic = grad.flatten();
        let base = enc.flatten();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in (0..base.len()).step_by(7) {
            let mut q = base.clone();
            q[i] += h;
            enc.load_flat(&q).unwrap();
            let up = loss(&enc);
            q[i] -= 2.0 * h;
            enc.load_flat(&q).unwrap();
            let down = loss(&enc);
            let num = (up - down) / (2.0 * h);
            worst = worst.max((num - analytic[i]).abs());
        }
        // ReLU kinks make a few coordinates noisy; the bulk must agree tightly.
        assert!(worst < 1e-5, "max abs error {worst}");
    }

    #[test]
    fn weights_round_trip() {
        let enc = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        enc.save_weights(&path).unwrap();
        assert_eq!(Encoder::load_weights(&path).unwrap(), enc);
        std::fs::write(&path, b"{not json").unwrap();
        assert!(Encoder::load_weights(&path).is_err());
    }
}
