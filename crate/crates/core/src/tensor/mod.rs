//! Small dense f64 layers with hand-written backward passes.
//!
//! Only what the trainer needs: affine layers, layer norm, GELU, sigmoid,
//! binary cross-entropy, multi-head self-attention blocks, and the two models
//! built from them. Every backward pass is covered by a central
//! finite-difference check (see [`gradcheck`]).

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod models;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use attention::{AttentionBlock, MultiHeadAttention};
pub use gradcheck::{grad_check, run_suite, GradCheckReport, Objective};
pub use layers::{bce, gelu, gelu_grad, sigmoid, LayerNorm, Linear, BCE_EPS};
pub use models::{ClassifierModel, DiscriminatorConfig, DiscriminatorKind, DiscriminatorModel};

/// Dense tensor with a same-shape gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            t.data.iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        t
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length");
        let n = data.len();
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().chain(&self.grad).all(|x| x.is_finite())
    }
}

/// Anything owning named parameter tensors.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }

    /// Plain SGD: `p -= lr * grad`.
    fn sgd_step(&mut self, lr: f64) {
        self.visit_mut("", &mut |_, t| {
            for (p, g) in t.data.iter_mut().zip(&t.grad) {
                *p -= lr * g;
            }
        });
    }

    /// All parameter values, flattened in visiting order.
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.extend_from_slice(&t.data));
        out
    }

    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.extend_from_slice(&t.grad));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) {
        let mut pos = 0;
        self.visit_mut("", &mut |_, t| {
            let n = t.len();
            t.data.copy_from_slice(&values[pos..pos + n]);
            pos += n;
        });
        assert_eq!(pos, values.len(), "parameter count");
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
