use rand::Rng;

use super::{join, Module, Tensor};
use crate::error::{Error, Result};

/// Probability clamp for binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Mean binary cross-entropy and its gradient with respect to `pred`.
///
/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`; the gradient is zero
/// for entries sitting outside that window.
pub fn bce(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "bce: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(p));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(t));
        }
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        let inside = p > BCE_EPS && p < 1.0 - BCE_EPS;
        grad.push(if inside {
            (-t / pc + (1.0 - t) / (1.0 - pc)) / n
        } else {
            0.0
        });
    }
    Ok((loss / n, grad))
}

/// Affine map `y = x W^T + b` over row-major batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Normal init with std `1/sqrt(in_dim)`, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Linear {
            w: Tensor::randn(&[out_dim, in_dim], 1.0 / (in_dim as f64).sqrt(), rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (i_dim, o_dim) = (self.in_dim(), self.out_dim());
        let n = x.len() / i_dim;
        let mut y = vec![0.0; n * o_dim];
        for (xr, yr) in x.chunks_exact(i_dim).zip(y.chunks_exact_mut(o_dim)) {
            for (o, (y, wr)) in yr.iter_mut().zip(self.w.data.chunks_exact(i_dim)).enumerate() {
                *y = self.b.data[o] + dot(xr, wr);
            }
        }
        y
    }

    /// Returns dL/dx. Parameter gradients are accumulated only when `accumulate`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], accumulate: bool) -> Vec<f64> {
        let (i_dim, o_dim) = (self.in_dim(), self.out_dim());
        let mut dx = vec![0.0; x.len()];
        for ((xr, dyr), dxr) in x
            .chunks_exact(i_dim)
            .zip(dy.chunks_exact(o_dim))
            .zip(dx.chunks_exact_mut(i_dim))
        {
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wr = &self.w.data[o * i_dim..(o + 1) * i_dim];
                axpy(g, wr, dxr);
                if accumulate {
                    axpy(g, xr, &mut self.w.grad[o * i_dim..(o + 1) * i_dim]);
                    self.b.grad[o] += g;
                }
            }
        }
        dx
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.w);
        f(join(prefix, "bias"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.w);
        f(join(prefix, "bias"), &mut self.b);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim();
        let n = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(n);
        for ((xr, yr), hr) in x
            .chunks_exact(d)
            .zip(y.chunks_exact_mut(d))
            .zip(xhat.chunks_exact_mut(d))
        {
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                hr[j] = (xr[j] - mu) * is;
                yr[j] = self.gamma.data[j] * hr[j] + self.beta.data[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &[f64], accumulate: bool) -> Vec<f64> {
        let d = self.dim();
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for (r, ((dyr, hr), dxr)) in dy
            .chunks_exact(d)
            .zip(cache.xhat.chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
            .enumerate()
        {
            for j in 0..d {
                dxhat[j] = dyr[j] * self.gamma.data[j];
                if accumulate {
                    self.gamma.grad[j] += dyr[j] * hr[j];
                    self.beta.grad[j] += dyr[j];
                }
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dh = dot(&dxhat, hr) / d as f64;
            let is = cache.inv_std[r];
            for j in 0..d {
                dxr[j] = is * (dxhat[j] - mean_d - hr[j] * mean_dh);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}
