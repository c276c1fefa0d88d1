use std::str::FromStr;

use rand::Rng;

use super::attention::{AttentionBlock, BlockCache};
use super::layers::{gelu, gelu_grad, sigmoid, LayerNorm, LayerNormCache, Linear};
use super::{join, Module, Tensor};
use crate::error::{Error, Result};

/// Multi-label classifier: affine layers with GELU between them and a sigmoid
/// on each of the `n_out` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl ClassifierModel {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], n_out: usize, rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        ClassifierModel {
            layers: dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], n_out: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        ClassifierModel {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if !x.len().is_multiple_of(self.input_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "classifier input of length {} is not a multiple of {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ClassifierCache> {
        self.check(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(std::mem::take(&mut h));
            if i < last {
                h = z.iter().map(|&v| gelu(v)).collect();
                pre.push(z);
            } else {
                h = z.iter().map(|&v| sigmoid(v)).collect();
            }
        }
        Ok(ClassifierCache { inputs, pre, probs: h })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.probs)
    }

    /// Backpropagates `dprobs` (dL/d probabilities); returns dL/dx.
    pub fn backward(&mut self, cache: &ClassifierCache, dprobs: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = dprobs
            .iter()
            .zip(&cache.probs)
            .map(|(d, p)| d * p * (1.0 - p))
            .collect();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&cache.inputs[i], &g, true);
            if i > 0 {
                for (gi, &z) in g.iter_mut().zip(&cache.pre[i - 1]) {
                    *gi *= gelu_grad(z);
                }
            }
        }
        g
    }
}

impl Module for ClassifierModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorKind {
    Attention,
    /// Concatenated `[y', y_gt]` through one hidden layer; for ablations.
    Mlp,
}

impl FromStr for DiscriminatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(DiscriminatorKind::Attention),
            "mlp" => Ok(DiscriminatorKind::Mlp),
            other => Err(Error::Config(format!("unknown discriminator kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub depth: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub mlp_hidden: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            kind: DiscriminatorKind::Attention,
            depth: 2,
            heads: 2,
            dim: 32,
            ff_dim: 64,
            mlp_hidden: 64,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == DiscriminatorKind::Attention {
            if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
                return Err(Error::Config(format!(
                    "discriminator dim {} must be a positive multiple of heads {}",
                    self.dim, self.heads
                )));
            }
            if self.ff_dim == 0 {
                return Err(Error::Config("discriminator ff_dim must be positive".into()));
            }
        } else if self.mlp_hidden == 0 {
            return Err(Error::Config("discriminator mlp_hidden must be positive".into()));
        }
        Ok(())
    }
}

// One per model, so the size gap between variants is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
enum Body {
    Attention {
        embed: Linear,
        pos: Tensor,
        blocks: Vec<AttentionBlock>,
        norm: LayerNorm,
    },
    Mlp {
        hidden: Linear,
    },
}

/// Scores a label vector paired with ground truth: the probability that the
/// labels are logically consistent.
///
/// In the attention form each attribute is a token `(y'_j, y_gt_j)`, embedded
/// and offset by a learned per-attribute position vector, passed through the
/// blocks and a final layer norm, then mean-pooled into a sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    n_attrs: usize,
    body: Body,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    tokens: Vec<f64>,
    blocks: Vec<BlockCache>,
    norm: Option<LayerNormCache>,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    p: f64,
}

impl DiscCache {
    pub fn p(&self) -> f64 {
        self.p
    }
}

impl DiscriminatorModel {
    pub fn new<R: Rng + ?Sized>(n_attrs: usize, cfg: &DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (body, head) = match cfg.kind {
            DiscriminatorKind::Attention => (
                Body::Attention {
                    embed: Linear::new(2, cfg.dim, rng),
                    pos: Tensor::randn(&[n_attrs, cfg.dim], 0.1, rng),
                    blocks: (0..cfg.depth)
                        .map(|_| AttentionBlock::new(cfg.dim, cfg.heads, cfg.ff_dim, rng))
                        .collect(),
                    norm: LayerNorm::new(cfg.dim),
                },
                Linear::new(cfg.dim, 1, rng),
            ),
            DiscriminatorKind::Mlp => (
                Body::Mlp {
                    hidden: Linear::new(2 * n_attrs, cfg.mlp_hidden, rng),
                },
                Linear::new(cfg.mlp_hidden, 1, rng),
            ),
        };
        Ok(DiscriminatorModel { n_attrs, body, head })
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn kind(&self) -> DiscriminatorKind {
        match self.body {
            Body::Attention { .. } => DiscriminatorKind::Attention,
            Body::Mlp { .. } => DiscriminatorKind::Mlp,
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_parameters(&mut self) {
        self.visit_mut("", &mut |_, t| t.data.iter_mut().for_each(|x| *x = 0.0));
    }

    /// Mutable access to the positional table (`n_attrs x dim`), attention form only.
    pub fn positions_mut(&mut self) -> Option<&mut Tensor> {
        match &mut self.body {
            Body::Attention { pos, .. } => Some(pos),
            Body::Mlp { .. } => None,
        }
    }

    fn check(&self, y_prime: &[f64], y_gt: &[f64]) -> Result<usize> {
        let m = self.n_attrs;
        if y_prime.len() != y_gt.len() || m == 0 || !y_prime.len().is_multiple_of(m) {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects two N x {m} inputs, got {} and {} values",
                y_prime.len(),
                y_gt.len()
            )));
        }
        Ok(y_prime.len() / m)
    }

    fn forward_one(&self, yp: &[f64], gt: &[f64]) -> DiscCache {
        let m = self.n_attrs;
        match &self.body {
            Body::Attention {
                embed,
                pos,
                blocks,
                norm,
            } => {
                let mut tokens = Vec::with_capacity(2 * m);
                for j in 0..m {
                    tokens.push(yp[j]);
                    tokens.push(gt[j]);
                }
                let mut x = embed.forward(&tokens);
                for (xi, pi) in x.iter_mut().zip(&pos.data) {
                    *xi += pi;
                }
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (y, c) = b.forward(&x);
                    caches.push(c);
                    x = y;
                }
                let (z, nc) = norm.forward(&x);
                let d = norm.dim();
                let mut pooled = vec![0.0; d];
                for row in z.chunks_exact(d) {
                    for (p, v) in pooled.iter_mut().zip(row) {
                        *p += v / m as f64;
                    }
                }
                let logit = self.head.forward(&pooled)[0];
                DiscCache {
                    tokens,
                    blocks: caches,
                    norm: Some(nc),
                    pooled,
                    hidden_pre: Vec::new(),
                    p: sigmoid(logit),
                }
            }
            Body::Mlp { hidden } => {
                let mut tokens = Vec::with_capacity(2 * m);
                tokens.extend_from_slice(yp);
                tokens.extend_from_slice(gt);
                let pre = hidden.forward(&tokens);
                let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
                let logit = self.head.forward(&act)[0];
                DiscCache {
                    tokens,
                    blocks: Vec::new(),
                    norm: None,
                    pooled: act,
                    hidden_pre: pre,
                    p: sigmoid(logit),
                }
            }
        }
    }

    /// `P_logic` for each of the N rows of `y_prime` (paired with `y_gt`).
    pub fn forward(&self, y_prime: &[f64], y_gt: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_train(y_prime, y_gt)?.iter().map(|c| c.p).collect())
    }

    pub fn forward_train(&self, y_prime: &[f64], y_gt: &[f64]) -> Result<Vec<DiscCache>> {
        self.check(y_prime, y_gt)?;
        let m = self.n_attrs;
        Ok(y_prime
            .chunks_exact(m)
            .zip(y_gt.chunks_exact(m))
            .map(|(a, b)| self.forward_one(a, b))
            .collect())
    }

    /// Backpropagates dL/dP for each row. Returns dL/dy' (N x M). Parameter
    /// gradients accumulate only when `accumulate`.
    pub fn backward(&mut self, caches: &[DiscCache], dp: &[f64], accumulate: bool) -> Vec<f64> {
        let m = self.n_attrs;
        let mut dy = vec![0.0; caches.len() * m];
        for ((c, &g), out) in caches.iter().zip(dp).zip(dy.chunks_exact_mut(m)) {
            let dlogit = g * c.p * (1.0 - c.p);
            let dpooled = self.head.backward(&c.pooled, &[dlogit], accumulate);
            match &mut self.body {
                Body::Attention {
                    embed,
                    pos,
                    blocks,
                    norm,
                } => {
                    let d = norm.dim();
                    let mut dz = vec![0.0; m * d];
                    for row in dz.chunks_exact_mut(d) {
                        for (r, v) in row.iter_mut().zip(&dpooled) {
                            *r = v / m as f64;
                        }
                    }
                    let mut dx = norm.backward(c.norm.as_ref().expect("attention cache"), &dz, accumulate);
                    for (b, bc) in blocks.iter_mut().zip(&c.blocks).rev() {
                        dx = b.backward(bc, &dx, accumulate);
                    }
                    if accumulate {
                        for (pg, g) in pos.grad.iter_mut().zip(&dx) {
                            *pg += g;
                        }
                    }
                    let dtok = embed.backward(&c.tokens, &dx, accumulate);
                    for j in 0..m {
                        out[j] = dtok[2 * j];
                    }
                }
                Body::Mlp { hidden } => {
                    let dpre: Vec<f64> = dpooled
                        .iter()
                        .zip(&c.hidden_pre)
                        .map(|(g, &z)| g * gelu_grad(z))
                        .collect();
                    let dtok = hidden.backward(&c.tokens, &dpre, accumulate);
                    out.copy_from_slice(&dtok[..m]);
                }
            }
        }
        dy
    }
}

impl Module for DiscriminatorModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        match &self.body {
            Body::Attention {
                embed,
                pos,
                blocks,
                norm,
            } => {
                embed.visit(&join(prefix, "embed"), f);
                f(join(prefix, "pos"), pos);
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&join(prefix, &format!("block{i}")), f);
                }
                norm.visit(&join(prefix, "norm"), f);
            }
            Body::Mlp { hidden } => hidden.visit(&join(prefix, "hidden"), f),
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match &mut self.body {
            Body::Attention {
                embed,
                pos,
                blocks,
                norm,
            } => {
                embed.visit_mut(&join(prefix, "embed"), f);
                f(join(prefix, "pos"), pos);
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("block{i}")), f);
                }
                norm.visit_mut(&join(prefix, "norm"), f);
            }
            Body::Mlp { hidden } => hidden.visit_mut(&join(prefix, "hidden"), f),
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_classifier_outputs_half() {
        let c = ClassifierModel::zeros(4, &[3], 5);
        let p = c.predict(&[0.3, -1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p, vec![0.5; 10]);
    }

    #[test]
    fn single_layer_classifier_is_logistic() {
        let mut c = ClassifierModel::zeros(2, &[], 1);
        c.layers[0].w.data = vec![1.0, -2.0];
        c.layers[0].b.data = vec![0.5];
        let p = c.predict(&[1.0, 1.0]).unwrap();
        assert!((p[0] - sigmoid(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn classifier_shape_error() {
        let c = ClassifierModel::zeros(4, &[3], 5);
        assert!(matches!(c.predict(&[1.0; 5]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_discriminator_outputs_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [DiscriminatorKind::Attention, DiscriminatorKind::Mlp] {
            let cfg = DiscriminatorConfig {
                kind,
                ..Default::default()
            };
            let mut d = DiscriminatorModel::new(5, &cfg, &mut rng).unwrap();
            d.zero_parameters();
            let p = d
                .forward(&[1.0, 0.0, 1.0, 0.0, 1.0], &[0.0, 1.0, 1.0, 0.0, 0.0])
                .unwrap();
            assert_eq!(p, vec![0.5]);
        }
    }

    #[test]
    fn discriminator_output_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = DiscriminatorModel::new(4, &DiscriminatorConfig::default(), &mut rng).unwrap();
        let p = d
            .forward(
                &[1.0, 0.0, 0.0, 1.0, 0.2, 0.9, 0.1, 0.4],
                &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
            )
            .unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(d.forward(&[1.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn attention_requires_divisible_heads() {
        let cfg = DiscriminatorConfig {
            dim: 10,
            heads: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(DiscriminatorModel::new(4, &cfg, &mut rng).is_err());
    }

    /// Hand-unrolled forward pass for one block, one head, three attributes.
    fn reference_p(params: &std::collections::HashMap<String, Tensor>, yp: [f64; 3], gt: [f64; 3]) -> f64 {
        let t = |k: &str| &params[k];
        let lin = |name: &str, x: &[f64]| -> Vec<f64> {
            let w = t(&format!("{name}.weight"));
            let b = t(&format!("{name}.bias"));
            let (o, i) = (w.shape[0], w.shape[1]);
            (0..o)
                .map(|r| b.data[r] + (0..i).map(|c| w.data[r * i + c] * x[c]).sum::<f64>())
                .collect()
        };
        let ln = |name: &str, x: &[f64]| -> Vec<f64> {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let g = t(&format!("{name}.gamma"));
            let b = t(&format!("{name}.beta"));
            x.iter()
                .enumerate()
                .map(|(k, v)| g.data[k] * (v - mean) / (var + 1e-5).sqrt() + b.data[k])
                .collect()
        };
        let gelu_ref =
            |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };

        let pos = t("pos");
        let d = pos.shape[1];
        let x: Vec<Vec<f64>> = (0..3)
            .map(|j| add(&lin("embed", &[yp[j], gt[j]]), &pos.data[j * d..(j + 1) * d]))
            .collect();
        let a: Vec<Vec<f64>> = x.iter().map(|r| ln("block0.ln1", r)).collect();
        let q: Vec<Vec<f64>> = a.iter().map(|r| lin("block0.attn.q", r)).collect();
        let k: Vec<Vec<f64>> = a.iter().map(|r| lin("block0.attn.k", r)).collect();
        let v: Vec<Vec<f64>> = a.iter().map(|r| lin("block0.attn.v", r)).collect();
        let mut h = Vec::new();
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let mut o = vec![0.0; d];
            for j in 0..3 {
                for c in 0..d {
                    o[c] += scores[j].exp() / z * v[j][c];
                }
            }
            h.push(add(&x[i], &lin("block0.attn.o", &o)));
        }
        let mut pooled = vec![0.0; d];
        for hi in &h {
            let b = ln("block0.ln2", hi);
            let f: Vec<f64> = lin("block0.ff1", &b).into_iter().map(gelu_ref).collect();
            let y = add(hi, &lin("block0.ff2", &f));
            for (p, z) in pooled.iter_mut().zip(ln("norm", &y)) {
                *p += z / 3.0;
            }
        }
        1.0 / (1.0 + (-lin("head", &pooled)[0]).exp())
    }

    #[test]
    fn discriminator_matches_straight_line_reference() {
        let cfg = DiscriminatorConfig {
            depth: 1,
            heads: 1,
            dim: 4,
            ff_dim: 6,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut d = DiscriminatorModel::new(3, &cfg, &mut rng).unwrap();
        // Non-trivial norm parameters so they take part in the comparison.
        d.visit_mut("", &mut |name, t| {
            if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with("bias") {
                for (i, v) in t.data.iter_mut().enumerate() {
                    *v += 0.1 * (i as f64 + 1.0) * if name.ends_with("beta") { -1.0 } else { 1.0 };
                }
            }
        });
        let mut params = std::collections::HashMap::new();
        d.visit("", &mut |name, t| {
            params.insert(name, t.clone());
        });
        let cases = [
            ([1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
            ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
            ([0.3, 0.8, 0.5], [0.0, 1.0, 0.0]),
        ];
        for (yp, gt) in cases {
            let got = d.forward(&yp, &gt).unwrap()[0];
            let want = reference_p(&params, yp, gt);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
