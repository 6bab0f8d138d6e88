//! Minimal dense/convolutional layers with hand-written backward passes.
//!
//! Everything is `f64` and single-sample: batches are formed by running
//! samples independently (possibly on a worker pool) and summing their
//! flattened gradients in a fixed order, which keeps results independent of
//! scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Anything that owns trainable parameters.
///
/// The visit order defines the flattened layout used by the optimizer and by
/// checkpoints; it must be stable for a given architecture.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |p| out.extend_from_slice(p));
        out
    }

    /// Overwrites all parameters from a flat vector of matching length.
    fn load_flat(&mut self, flat: &[f64]) -> Result<(), String> {
        if flat.len() != self.num_params() {
            return Err(format!("expected {} parameters, got {}", self.num_params(), flat.len()));
        }
        let mut off = 0;
        self.visit_mut(&mut |p| {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        });
        Ok(())
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |p| p.fill(0.0));
    }
}

/// Feature map, channel-major (`c × h × w`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>, beta: f64, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, &a, &b, beta, c);
}

fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize, gain: f64) -> Vec<f64> {
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `cout × (cin·k·k)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// What a convolution keeps from its forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    col: Vec<f64>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let fan_in = cin * k * k;
        Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: uniform_init(rng, cout * fan_in, fan_in, gain),
            bias: vec![0.0; cout],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    fn im2col(&self, x: &Tensor3, oh: usize, ow: usize) -> Vec<f64> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let cols = oh * ow;
        let mut col = vec![0.0; self.cin * k * k * cols];
        for ci in 0..self.cin {
            let plane = &x.data[ci * x.hw()..(ci + 1) * x.hw()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * cols;
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &[f64], cache: &ConvCache) -> Tensor3 {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let (oh, ow) = (cache.out_h, cache.out_w);
        let cols = oh * ow;
        let mut dx = Tensor3::zeros(self.cin, cache.in_h, cache.in_w);
        let hw = cache.in_h * cache.in_w;
        for ci in 0..self.cin {
            let plane = &mut dx.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * cols;
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= cache.in_h as isize {
                            continue;
                        }
                        let base = iy as usize * cache.in_w;
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < cache.in_w as isize {
                                plane[base + ix as usize] += dcol[row + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor3) -> (Tensor3, ConvCache) {
        debug_assert_eq!(x.c, self.cin);
        let (oh, ow) = (self.out_dim(x.h), self.out_dim(x.w));
        let col = self.im2col(x, oh, ow);
        let kk = self.cin * self.k * self.k;
        let cols = oh * ow;
        let mut out = Tensor3::zeros(self.cout, oh, ow);
        for (co, chunk) in out.data.chunks_mut(cols).enumerate() {
            chunk.fill(self.bias[co]);
        }
        {
            let w = ArrayView2::from_shape((self.cout, kk), &self.weight).expect("weight shape");
            let c = ArrayView2::from_shape((kk, cols), &col).expect("col shape");
            let mut o = ArrayViewMut2::from_shape((self.cout, cols), &mut out.data).expect("out shape");
            matmul(w, c, 1.0, &mut o);
        }
        let cache = ConvCache {
            col,
            in_h: x.h,
            in_w: x.w,
            out_h: oh,
            out_w: ow,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `need_input` is set.
    pub fn backward(&self, dout: &Tensor3, cache: &ConvCache, grad: &mut Conv2d, need_input: bool) -> Option<Tensor3> {
        let kk = self.cin * self.k * self.k;
        let cols = cache.out_h * cache.out_w;
        let d = ArrayView2::from_shape((self.cout, cols), &dout.data).expect("dout shape");
        {
            let c = ArrayView2::from_shape((kk, cols), &cache.col).expect("col shape");
            let mut gw = ArrayViewMut2::from_shape((self.cout, kk), &mut grad.weight).expect("grad shape");
            matmul(d, c.t(), 1.0, &mut gw);
        }
        for (co, chunk) in dout.data.chunks(cols).enumerate() {
            grad.bias[co] += chunk.iter().sum::<f64>();
        }
        if !need_input {
            return None;
        }
        let mut dcol = vec![0.0; kk * cols];
        {
            let w = ArrayView2::from_shape((self.cout, kk), &self.weight).expect("weight shape");
            let mut dc = ArrayViewMut2::from_shape((kk, cols), &mut dcol).expect("dcol shape");
            matmul(w.t(), d, 0.0, &mut dc);
        }
        Some(self.col2im(&dcol, cache))
    }
}

impl Params for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    /// `dout × din`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(din: usize, dout: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Linear {
            din,
            dout,
            weight: uniform_init(rng, din * dout, din, gain),
            bias: vec![0.0; dout],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            din: self.din,
            dout: self.dout,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.din);
        self.weight
            .chunks_exact(self.din)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates gradients and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.din];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let row = &self.weight[o * self.din..(o + 1) * self.din];
            let grow = &mut grad.weight[o * self.din..(o + 1) * self.din];
            for i in 0..self.din {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

impl Params for Linear {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `grad` wherever the post-activation value was not positive.
pub fn relu_backward_inplace(activated: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `softmax(logits)` against `target`; returns the loss and
/// `dL/dlogits`.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adam over a flattened parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut impl Params, grads: &[f64]) {
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0;
        params.visit_mut(&mut |p| {
            for (i, w) in p.iter_mut().enumerate() {
                let g = grads[off + i];
                let mi = &mut m[off + i];
                let vi = &mut v[off + i];
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
            off += p.len();
        });
    }
}

/// Element-wise sum of equally long vectors, in iteration order.
pub fn sum_in_order<I: IntoIterator<Item = Vec<f64>>>(len: usize, items: I) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for g in items {
        for (a, b) in acc.iter_mut().zip(&g) {
            *a += b;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn conv_loss(conv: &Conv2d, x: &Tensor3, probe: &[f64]) -> f64 {
        let (y, _) = conv.forward(x);
        y.data.iter().zip(probe).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = rng_from(1);
        let conv = Conv2d::new(2, 3, 3, 2, 1, 1.0, &mut rng);
        let x = Tensor3 {
            c: 2,
            h: 5,
            w: 6,
            data: (0..60).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (y, _) = conv.forward(&x);
        assert_eq!((y.h, y.w), (3, 3));
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = conv.bias[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                    acc += conv.weight[co * 18 + ci * 9 + ky * 3 + kx]
                                        * x.data[ci * 30 + iy as usize * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data[co * 9 + oy * 3 + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = rng_from(2);
        let mut conv = Conv2d::new(2, 3, 3, 1, 1, 1.0, &mut rng);
        conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let x = Tensor3 {
            c: 2,
            h: 4,
            w: 4,
            data: (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let probe: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = conv.forward(&x);
        let dout = Tensor3 {
            c: 3,
            h: 4,
            w: 4,
            data: probe.clone(),
        };
        let mut grad = conv.zeros_like();
        let dx = conv.backward(&dout, &cache, &mut grad, true).unwrap();
        let h = 1e-6;
        let analytic = grad.flatten();
        let base = conv.flatten();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            conv.load_flat(&p).unwrap();
            let up = conv_loss(&conv, &x, &probe);
            p[i] -= 2.0 * h;
            conv.load_flat(&p).unwrap();
            let down = conv_loss(&conv, &x, &probe);
            assert!(((up - down) / (2.0 * h) - analytic[i]).abs() < 1e-6);
        }
        conv.load_flat(&base).unwrap();
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let up = conv_loss(&conv, &xp, &probe);
            xp.data[i] -= 2.0 * h;
            let down = conv_loss(&conv, &xp, &probe);
            assert!(((up - down) / (2.0 * h) - dx.data[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [0.3, -1.2, 2.0];
        let (loss, g) = cross_entropy(&logits, 1);
        let p = softmax(&logits);
        assert!((loss + p[1].ln()).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        assert!((g[1] - (p[1] - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut lin = Linear::new(1, 1, 1.0, &mut rng_from(3));
        lin.weight[0] = 3.0;
        let mut opt = Adam::new(0.1, lin.num_params());
        for _ in 0..500 {
            let g = vec![2.0 * lin.weight[0], 2.0 * lin.bias[0]];
            opt.step(&mut lin, &g);
        }
        assert!(lin.weight[0].abs() < 1e-2);
    }
}
