//! Gated attention pooling and the MIL classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{cross_entropy, sigmoid, softmax, Linear, Params};

/// `score_i = wᵀ(tanh(V h_i + b_v) ⊙ σ(U h_i + b_u))`, weights are the
/// softmax of the scores and the pooled vector is `Σ weight_i · h_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedAttention {
    pub v: Linear,
    pub u: Linear,
    pub w: Vec<f64>,
}

/// Per-bag activations of [`GatedAttention::forward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    tanh: Vec<Vec<f64>>,
    gate: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl GatedAttention {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = Linear::new(hidden, 1, 1.0, rng).weight;
        GatedAttention {
            v: Linear::new(dim, hidden, 1.0, rng),
            u: Linear::new(dim, hidden, 1.0, rng),
            w,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GatedAttention {
            v: self.v.zeros_like(),
            u: self.u.zeros_like(),
            w: vec![0.0; self.w.len()],
        }
    }

    /// Pools `n ≥ 1` embeddings; returns the pooled vector and the cache
    /// (which holds the attention weights).
    pub fn forward(&self, h: &[Vec<f64>]) -> (Vec<f64>, AttentionCache) {
        assert!(!h.is_empty(), "attention over an empty bag");
        let mut tanh = Vec::with_capacity(h.len());
        let mut gate = Vec::with_capacity(h.len());
        let mut scores = Vec::with_capacity(h.len());
        for hi in h {
            let a: Vec<f64> = self.v.forward(hi).into_iter().map(f64::tanh).collect();
            let g: Vec<f64> = self.u.forward(hi).into_iter().map(sigmoid).collect();
            scores.push(a.iter().zip(&g).zip(&self.w).map(|((a, g), w)| w * a * g).sum());
            tanh.push(a);
            gate.push(g);
        }
        let weights = softmax(&scores);
        let d = h[0].len();
        let mut pooled = vec![0.0; d];
        for (hi, &wi) in h.iter().zip(&weights) {
            for (p, v) in pooled.iter_mut().zip(hi) {
                *p += wi * v;
            }
        }
        (pooled, AttentionCache { tanh, gate, weights })
    }

    /// Accumulates parameter gradients for `dL/d(pooled)`.
    pub fn backward(&self, h: &[Vec<f64>], cache: &AttentionCache, d_pooled: &[f64], grad: &mut GatedAttention) {
        let alpha = &cache.weights;
        let d_alpha: Vec<f64> = h.iter().map(|hi| hi.iter().zip(d_pooled).map(|(a, b)| a * b).sum()).collect();
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        for (i, hi) in h.iter().enumerate() {
            let ds = alpha[i] * (d_alpha[i] - mean);
            let a = &cache.tanh[i];
            let g = &cache.gate[i];
            let mut dv = vec![0.0; a.len()];
            let mut du = vec![0.0; a.len()];
            for k in 0..a.len() {
                grad.w[k] += ds * a[k] * g[k];
                let dq = ds * self.w[k];
                dv[k] = dq * g[k] * (1.0 - a[k] * a[k]);
                du[k] = dq * a[k] * g[k] * (1.0 - g[k]);
            }
            self.v.backward(hi, &dv, &mut grad.v);
            self.u.backward(hi, &du, &mut grad.u);
        }
    }
}

impl Params for GatedAttention {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.v.visit(f);
        self.u.visit(f);
        f(&self.w);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.v.visit_mut(f);
        self.u.visit_mut(f);
        f(&mut self.w);
    }
}

/// Attention pooling followed by a single N-way linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilHead {
    pub attention: GatedAttention,
    pub classifier: Linear,
}

impl MilHead {
    pub fn new(dim: usize, hidden: usize, n_classes: usize, rng: &mut impl Rng) -> Self {
        MilHead {
            attention: GatedAttention::new(dim, hidden, rng),
            classifier: Linear::new(dim, n_classes, 1.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        MilHead {
            attention: self.attention.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// Class logits and attention weights for a bag of embeddings.
    pub fn forward(&self, h: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let (pooled, cache) = self.attention.forward(h);
        (self.classifier.forward(&pooled), cache.weights)
    }

    /// Cross-entropy loss against `target`, accumulating gradients into `grad`.
    pub fn loss_and_grad(&self, h: &[Vec<f64>], target: usize, grad: &mut MilHead) -> f64 {
        let (pooled, cache) = self.attention.forward(h);
        let logits = self.classifier.forward(&pooled);
        let (loss, d_logits) = cross_entropy(&logits, target);
        let d_pooled = self.classifier.backward(&pooled, &d_logits, &mut grad.classifier);
        self.attention.backward(h, &cache, &d_pooled, &mut grad.attention);
        loss
    }

    pub fn loss(&self, h: &[Vec<f64>], target: usize) -> f64 {
        cross_entropy(&self.forward(h).0, target).0
    }
}

impl Params for MilHead {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.attention.visit(f);
        self.classifier.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.attention.visit_mut(f);
        self.classifier.visit_mut(f);
    }
}

/// Worst relative error between analytic and central finite-difference
/// gradients of the bag loss, over all head parameters.
///
/// Coordinates where both gradients are below `1e-8` in magnitude are
/// compared absolutely.
pub fn gradient_check(head: &MilHead, h: &[Vec<f64>], target: usize, step: f64) -> f64 {
    let mut grad = head.zeros_like();
    head.loss_and_grad(h, target, &mut grad);
    let analytic = grad.flatten();
    let base = head.flatten();
    let mut probe = head.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.load_flat(&p).expect("same layout");
        let up = probe.loss(h, target);
        p[i] = base[i] - step;
        probe.load_flat(&p).expect("same layout");
        let down = probe.loss(h, target);
        let num = (up - down) / (2.0 * step);
        let scale = analytic[i].abs().max(num.abs());
        let err = if scale < 1e-8 {
            (analytic[i] - num).abs()
        } else {
            (analytic[i] - num).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn bag(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn single_instance_gets_all_weight() {
        let att = GatedAttention::new(4, 3, &mut rng_from(1));
        let h = bag(1, 4, 2);
        let (pooled, cache) = att.forward(&h);
        assert_eq!(cache.weights, vec![1.0]);
        for (a, b) in pooled.iter().zip(&h[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_instances_share_weight() {
        let att = GatedAttention::new(4, 3, &mut rng_from(1));
        let h = bag(1, 4, 2);
        let (_, cache) = att.forward(&[h[0].clone(), h[0].clone()]);
        assert_eq!(cache.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn permutation_equivariance() {
        let att = GatedAttention::new(6, 5, &mut rng_from(3));
        let h = bag(7, 6, 4);
        let (pooled, cache) = att.forward(&h);
        assert!((cache.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let perm = [3, 0, 6, 2, 5, 1, 4];
        let hp: Vec<_> = perm.iter().map(|&i| h[i].clone()).collect();
        let (pooled_p, cache_p) = att.forward(&hp);
        for (j, &i) in perm.iter().enumerate() {
            assert!((cache_p.weights[j] - cache.weights[i]).abs() < 1e-12);
        }
        for (a, b) in pooled.iter().zip(&pooled_p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from(9);
        let mut head = MilHead::new(6, 4, 3, &mut rng);
        head.attention.v.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        head.attention.u.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let h = bag(5, 6, 10);
        let err = gradient_check(&head, &h, 1, 1e-5);
        assert!(err <= 1e-4, "relative error {err}");
    }
}
