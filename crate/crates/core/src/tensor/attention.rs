//! Multi-head self-attention and the pre-norm transformer block built on it.
//! Inputs are one sequence at a time, `tokens x dim`, row-major.

use rand::Rng;

use super::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use super::{join, Module, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x T x T softmax weights.
    attn: Vec<f64>,
    o: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim must split evenly into heads"
        );
        MultiHeadAttention {
            heads,
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim must split evenly into heads"
        );
        MultiHeadAttention {
            heads,
            wq: Linear::zeros(dim, dim),
            wk: Linear::zeros(dim, dim),
            wv: Linear::zeros(dim, dim),
            wo: Linear::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.in_dim()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, AttentionCache) {
        let d = self.dim();
        let t = x.len() / d;
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut attn = vec![0.0; self.heads * t * t];
        let mut o = vec![0.0; t * d];
        for h in 0..self.heads {
            let c0 = h * dk;
            let a = &mut attn[h * t * t..(h + 1) * t * t];
            for i in 0..t {
                let qi = &q[i * d + c0..i * d + c0 + dk];
                let row = &mut a[i * t..(i + 1) * t];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + c0..j * d + c0 + dk];
                    *s = super::layers::dot(qi, kj) * scale;
                    max = max.max(*s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let oi = &mut o[i * d + c0..i * d + c0 + dk];
                for (j, &w) in row.iter().enumerate() {
                    super::layers::axpy(w, &v[j * d + c0..j * d + c0 + dk], oi);
                }
            }
        }
        let y = self.wo.forward(&o);
        (
            y,
            AttentionCache {
                x: x.to_vec(),
                q,
                k,
                v,
                attn,
                o,
            },
        )
    }

    pub fn backward(&mut self, c: &AttentionCache, dy: &[f64], accumulate: bool) -> Vec<f64> {
        let d = self.dim();
        let t = c.x.len() / d;
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let d_o = self.wo.backward(&c.o, dy, accumulate);
        let mut dq = vec![0.0; t * d];
        let mut dkm = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut da = vec![0.0; t];
        for h in 0..self.heads {
            let c0 = h * dk;
            let a = &c.attn[h * t * t..(h + 1) * t * t];
            for i in 0..t {
                let doi = &d_o[i * d + c0..i * d + c0 + dk];
                let ai = &a[i * t..(i + 1) * t];
                for j in 0..t {
                    let vj = &c.v[j * d + c0..j * d + c0 + dk];
                    da[j] = super::layers::dot(doi, vj);
                    super::layers::axpy(ai[j], doi, &mut dv[j * d + c0..j * d + c0 + dk]);
                }
                let weighted: f64 = ai.iter().zip(&da).map(|(p, g)| p * g).sum();
                for j in 0..t {
                    let ds = ai[j] * (da[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &c.k[j * d + c0..j * d + c0 + dk];
                    super::layers::axpy(ds, kj, &mut dq[i * d + c0..i * d + c0 + dk]);
                    let qi = &c.q[i * d + c0..i * d + c0 + dk];
                    super::layers::axpy(ds, qi, &mut dkm[j * d + c0..j * d + c0 + dk]);
                }
            }
        }
        let mut dx = self.wq.backward(&c.x, &dq, accumulate);
        for (a, b) in dx.iter_mut().zip(self.wk.backward(&c.x, &dkm, accumulate)) {
            *a += b;
        }
        for (a, b) in dx.iter_mut().zip(self.wv.backward(&c.x, &dv, accumulate)) {
            *a += b;
        }
        dx
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.wq.visit(&join(prefix, "q"), f);
        self.wk.visit(&join(prefix, "k"), f);
        self.wv.visit(&join(prefix, "v"), f);
        self.wo.visit(&join(prefix, "o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.wq.visit_mut(&join(prefix, "q"), f);
        self.wk.visit_mut(&join(prefix, "k"), f);
        self.wv.visit_mut(&join(prefix, "v"), f);
        self.wo.visit_mut(&join(prefix, "o"), f);
    }
}

/// Pre-norm block: `h = x + MHA(LN1(x))`, `y = h + FF(LN2(h))` with a
/// two-layer GELU feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ln2_out: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Self {
        AttentionBlock {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            ff1: Linear::new(dim, ff_dim, rng),
            ff2: Linear::new(ff_dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, BlockCache) {
        let (a, ln1) = self.ln1.forward(x);
        let (m, attn) = self.attn.forward(&a);
        let h: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a + b).collect();
        let (b, ln2) = self.ln2.forward(&h);
        let ff_pre = self.ff1.forward(&b);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&v| gelu(v)).collect();
        let f = self.ff2.forward(&ff_act);
        let y = h.iter().zip(&f).map(|(a, b)| a + b).collect();
        (
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                ln2_out: b,
                ff_pre,
                ff_act,
            },
        )
    }

    pub fn backward(&mut self, c: &BlockCache, dy: &[f64], accumulate: bool) -> Vec<f64> {
        let mut dact = self.ff2.backward(&c.ff_act, dy, accumulate);
        for (g, &p) in dact.iter_mut().zip(&c.ff_pre) {
            *g *= gelu_grad(p);
        }
        let db = self.ff1.backward(&c.ln2_out, &dact, accumulate);
        let mut dh = dy.to_vec();
        for (a, b) in dh.iter_mut().zip(self.ln2.backward(&c.ln2, &db, accumulate)) {
            *a += b;
        }
        let da = self.attn.backward(&c.attn, &dh, accumulate);
        let mut dx = dh;
        for (a, b) in dx.iter_mut().zip(self.ln1.backward(&c.ln1, &da, accumulate)) {
            *a += b;
        }
        dx
    }
}

impl Module for AttentionBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
    }
}
