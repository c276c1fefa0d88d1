//! Central finite-difference checks for hand-written backward passes.

use super::Module;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// A scalar loss over a module's parameters.
///
/// `evaluate` returns the loss at the current parameters; when `backward` is
/// set it must also accumulate dLoss/dparam into the parameter gradients
/// (which the checker zeroes beforehand).
pub trait Objective<M: Module + ?Sized> {
    fn evaluate(&mut self, model: &mut M, backward: bool) -> f64;
}

impl<M: Module + ?Sized, F: FnMut(&mut M, bool) -> f64> Objective<M> for F {
    fn evaluate(&mut self, model: &mut M, backward: bool) -> f64 {
        self(model, backward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic parameter gradients against central differences with
/// step [`FD_STEP`] for every parameter of `model`.
pub fn grad_check<M: Module + ?Sized, O: Objective<M>>(
    model: &mut M,
    objective: &mut O,
    tolerance: f64,
) -> GradCheckReport {
    model.zero_grad();
    objective.evaluate(model, true);
    let analytic = model.flat_grads();
    let mut names = Vec::new();
    model.visit("", &mut |n, t| names.extend((0..t.len()).map(|i| (n.clone(), i))));
    let base = model.flat_params();
    let mut params = base.clone();
    let mut report = GradCheckReport {
        n_checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
    };
    for k in 0..base.len() {
        params[k] = base[k] + FD_STEP;
        model.set_flat_params(&params);
        let up = objective.evaluate(model, false);
        params[k] = base[k] - FD_STEP;
        model.set_flat_params(&params);
        let down = objective.evaluate(model, false);
        params[k] = base[k];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[k], numeric);
        report.n_checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(names[k].clone());
        }
    }
    model.set_flat_params(&base);
    model.zero_grad();
    report
}

/// Same check for the gradient with respect to an input vector.
/// `f(x)` returns the loss and its analytic gradient in `x`.
pub fn input_grad_check<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(x: &[f64], mut f: F, tolerance: f64) -> GradCheckReport {
    let (_, analytic) = f(x);
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        n_checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
    };
    for k in 0..x.len() {
        probe[k] = x[k] + FD_STEP;
        let up = f(&probe).0;
        probe[k] = x[k] - FD_STEP;
        let down = f(&probe).0;
        probe[k] = x[k];
        let err = relative_error(analytic[k], (up - down) / (2.0 * FD_STEP));
        report.n_checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(("input".into(), k));
        }
    }
    report
}

/// Runs the standard probes over every layer type with random parameters
/// drawn from `seed`. Returns one report per probe.
pub fn run_suite(seed: u64, tolerance: f64) -> Vec<(&'static str, GradCheckReport)> {
    use super::attention::AttentionBlock;
    use super::layers::{bce, sigmoid, LayerNorm, Linear};
    use super::models::{ClassifierModel, DiscriminatorConfig, DiscriminatorKind, DiscriminatorModel};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let uniform = |n: usize, lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let mut out = Vec::new();

    let mut lin = Linear::new(5, 4, &mut rng);
    let x = uniform(15, -1.0, 1.0, &mut rng);
    let w = uniform(12, -1.0, 1.0, &mut rng);
    let weighted = |y: &[f64], w: &[f64]| -> f64 { y.iter().zip(w).map(|(a, b)| a * b).sum() };
    out.push((
        "linear",
        grad_check(
            &mut lin,
            &mut |m: &mut Linear, back: bool| {
                let y = m.forward(&x);
                if back {
                    m.backward(&x, &w, true);
                }
                weighted(&y, &w)
            },
            tolerance,
        ),
    ));

    let z = uniform(8, -4.0, 4.0, &mut rng);
    let zw = uniform(8, -1.0, 1.0, &mut rng);
    out.push((
        "sigmoid",
        input_grad_check(
            &z,
            |z| {
                let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                let g = p.iter().zip(&zw).map(|(p, w)| w * p * (1.0 - p)).collect();
                (weighted(&p, &zw), g)
            },
            tolerance,
        ),
    ));

    let p = uniform(8, 0.02, 0.98, &mut rng);
    let t: Vec<f64> = (0..8).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
    out.push((
        "bce",
        input_grad_check(&p, |p| bce(p, &t).expect("valid probabilities"), tolerance),
    ));

    let mut ln = LayerNorm::new(6);
    ln.gamma.data = uniform(6, 0.5, 1.5, &mut rng);
    ln.beta.data = uniform(6, -0.5, 0.5, &mut rng);
    let lx = uniform(18, -2.0, 2.0, &mut rng);
    let lw = uniform(18, -1.0, 1.0, &mut rng);
    out.push((
        "layer_norm",
        grad_check(
            &mut ln,
            &mut |m: &mut LayerNorm, back: bool| {
                let (y, c) = m.forward(&lx);
                if back {
                    m.backward(&c, &lw, true);
                }
                weighted(&y, &lw)
            },
            tolerance,
        ),
    ));

    let mut blk = AttentionBlock::new(8, 2, 16, &mut rng);
    let bx = uniform(40, -1.0, 1.0, &mut rng);
    let bw = uniform(40, -1.0, 1.0, &mut rng);
    out.push((
        "attention_block",
        grad_check(
            &mut blk,
            &mut |m: &mut AttentionBlock, back: bool| {
                let (y, c) = m.forward(&bx);
                if back {
                    m.backward(&c, &bw, true);
                }
                weighted(&y, &bw)
            },
            tolerance,
        ),
    ));

    for (name, kind) in [
        ("discriminator_attention", DiscriminatorKind::Attention),
        ("discriminator_mlp", DiscriminatorKind::Mlp),
    ] {
        let cfg = DiscriminatorConfig {
            kind,
            depth: 2,
            heads: 2,
            dim: 8,
            ff_dim: 8,
            mlp_hidden: 8,
        };
        let mut d = DiscriminatorModel::new(5, &cfg, &mut rng).expect("valid config");
        let yp = uniform(15, 0.05, 0.95, &mut rng);
        let gt: Vec<f64> = (0..15).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        let target = [1.0, 0.0, 1.0];
        let mut obj = |m: &mut DiscriminatorModel, back: bool| {
            let caches = m.forward_train(&yp, &gt).expect("shapes match");
            let p: Vec<f64> = caches.iter().map(|c| c.p()).collect();
            let (l, g) = bce(&p, &target).expect("valid probabilities");
            m.backward(&caches, &g, back);
            l
        };
        let params = grad_check(&mut d, &mut obj, tolerance);
        let mut d2 = d.clone();
        let inputs = input_grad_check(
            &yp,
            |yp| {
                let caches = d.forward_train(yp, &gt).expect("shapes match");
                let p: Vec<f64> = caches.iter().map(|c| c.p()).collect();
                let (l, g) = bce(&p, &target).expect("valid probabilities");
                (l, d2.backward(&caches, &g, false))
            },
            tolerance,
        );
        out.push((name, merge(params, inputs)));
    }

    let mut clf = ClassifierModel::new(6, &[7], 4, &mut rng);
    let cx = uniform(18, -1.0, 1.0, &mut rng);
    let ct: Vec<f64> = (0..12).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
    out.push((
        "classifier",
        grad_check(
            &mut clf,
            &mut |m: &mut ClassifierModel, back: bool| {
                let cache = m.forward(&cx).expect("shapes match");
                let (l, g) = bce(&cache.probs, &ct).expect("valid probabilities");
                if back {
                    m.backward(&cache, &g);
                }
                l
            },
            tolerance,
        ),
    ));
    out
}

fn merge(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    let worst = if b.max_rel_error > a.max_rel_error {
        b.worst
    } else {
        a.worst
    };
    GradCheckReport {
        n_checked: a.n_checked + b.n_checked,
        max_rel_error: a.max_rel_error.max(b.max_rel_error),
        worst,
        tolerance: a.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::attention::AttentionBlock;
    use crate::tensor::layers::{bce, sigmoid, LayerNorm, Linear};
    use crate::tensor::models::{ClassifierModel, DiscriminatorConfig, DiscriminatorKind, DiscriminatorModel};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Weighted sum of outputs: a loss whose gradient is the fixed weights.
    fn probe_loss(y: &[f64], w: &[f64]) -> f64 {
        y.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn linear_params_and_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut lin = Linear::new(4, 3, &mut rng);
        let x = rand_vec(8, &mut rng);
        let w = rand_vec(6, &mut rng);
        let rep = grad_check(
            &mut lin,
            &mut |m: &mut Linear, back: bool| {
                let y = m.forward(&x);
                if back {
                    m.backward(&x, &w, true);
                }
                probe_loss(&y, &w)
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.n_checked, 15);
        let mut lin2 = lin.clone();
        let rep = input_grad_check(
            &x,
            |x| (probe_loss(&lin.forward(x), &w), lin2.backward(x, &w, false)),
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn sigmoid_bce_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = rand_vec(6, &mut rng).iter().map(|v| v * 3.0).collect::<Vec<_>>();
        let t: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        let rep = input_grad_check(
            &z,
            |z| {
                let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                let (l, g) = bce(&p, &t).unwrap();
                (l, g.iter().zip(&p).map(|(g, p)| g * p * (1.0 - p)).collect())
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn bce_against_probabilities() {
        let p = [0.1, 0.35, 0.6, 0.95];
        let t = [0.0, 1.0, 1.0, 0.0];
        let rep = input_grad_check(&p, |p| bce(p, &t).unwrap(), TOL);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ln = LayerNorm::new(5);
        ln.gamma = Tensor::from_data(&[5], rand_vec(5, &mut rng));
        ln.beta = Tensor::from_data(&[5], rand_vec(5, &mut rng));
        let x = rand_vec(10, &mut rng);
        let w = rand_vec(10, &mut rng);
        let rep = grad_check(
            &mut ln,
            &mut |m: &mut LayerNorm, back: bool| {
                let (y, c) = m.forward(&x);
                if back {
                    m.backward(&c, &w, true);
                }
                probe_loss(&y, &w)
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
        let mut ln2 = ln.clone();
        let rep = input_grad_check(
            &x,
            |x| {
                let (y, c) = ln.forward(x);
                (probe_loss(&y, &w), ln2.backward(&c, &w, false))
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn attention_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut blk = AttentionBlock::new(8, 2, 12, &mut rng);
        let x = rand_vec(5 * 8, &mut rng);
        let w = rand_vec(5 * 8, &mut rng);
        let rep = grad_check(
            &mut blk,
            &mut |m: &mut AttentionBlock, back: bool| {
                let (y, c) = m.forward(&x);
                if back {
                    m.backward(&c, &w, true);
                }
                probe_loss(&y, &w)
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
        let mut b2 = blk.clone();
        let rep = input_grad_check(
            &x,
            |x| {
                let (y, c) = blk.forward(x);
                (probe_loss(&y, &w), b2.backward(&c, &w, false))
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
    }

    fn disc_bce(d: &mut DiscriminatorModel, yp: &[f64], gt: &[f64], target: &[f64], back: bool) -> (f64, Vec<f64>) {
        let caches = d.forward_train(yp, gt).unwrap();
        let p: Vec<f64> = caches.iter().map(|c| c.p()).collect();
        let (l, g) = bce(&p, target).unwrap();
        (l, d.backward(&caches, &g, back))
    }

    #[test]
    fn discriminator_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for kind in [DiscriminatorKind::Attention, DiscriminatorKind::Mlp] {
            let cfg = DiscriminatorConfig {
                kind,
                depth: 2,
                heads: 2,
                dim: 8,
                ff_dim: 8,
                mlp_hidden: 8,
            };
            let mut d = DiscriminatorModel::new(4, &cfg, &mut rng).unwrap();
            let yp: Vec<f64> = (0..12).map(|_| rng.gen_range(0.05..0.95)).collect();
            let gt: Vec<f64> = (0..12).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
            let target = [1.0, 0.0, 1.0];
            let rep = grad_check(
                &mut d,
                &mut |m: &mut DiscriminatorModel, back: bool| disc_bce(m, &yp, &gt, &target, back).0,
                TOL,
            );
            assert!(rep.passed(), "{kind:?} {rep:?}");
            let mut d2 = d.clone();
            let rep = input_grad_check(&yp, |yp| disc_bce(&mut d2, yp, &gt, &target, false), TOL);
            assert!(rep.passed(), "{kind:?} input {rep:?}");
        }
    }

    #[test]
    fn classifier_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut c = ClassifierModel::new(5, &[7], 3, &mut rng);
        let x = rand_vec(4 * 5, &mut rng);
        let t: Vec<f64> = (0..12).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let rep = grad_check(
            &mut c,
            &mut |m: &mut ClassifierModel, back: bool| {
                let cache = m.forward(&x).unwrap();
                let (l, g) = bce(&cache.probs, &t).unwrap();
                if back {
                    m.backward(&cache, &g);
                }
                l
            },
            TOL,
        );
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn suite_passes() {
        for (name, rep) in run_suite(7, TOL) {
            assert!(rep.passed(), "{name}: {rep:?}");
            assert!(rep.n_checked > 0);
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut lin = Linear::zeros(2, 1);
        lin.w.data = vec![0.5, -0.25];
        let x = [1.0, 2.0];
        let rep = grad_check(
            &mut lin,
            &mut |m: &mut Linear, back: bool| {
                let y = m.forward(&x);
                if back {
                    m.backward(&x, &[2.0], true); // twice the true gradient
                }
                y[0]
            },
            TOL,
        );
        assert!(!rep.passed());
    }
}
