//! Alternating adversarial training of a multi-label classifier against a
//! logic discriminator.
//!
//! Each batch runs one discriminator step and then one classifier step. The
//! discriminator sees label vectors paired with ground truth and learns to
//! tell consistent from inconsistent vectors; in its step the vectors are
//! either Bag-of-Labels variants of the ground truth (targets from the
//! poisoner) or binarized classifier predictions (target 0), chosen by a
//! uniform draw against `mix_threshold`. The classifier minimizes
//! `(1 - lambda) * BCE(F(x), y) + lambda * -log D(F(x), y)` with the
//! discriminator frozen.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{LabelBatch, LabelKind};
use crate::compensation::{compensate, CompensationReport};
use crate::consistency::{compile, failed_ratio, CompiledChecker, FailedRatioReport};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_predictions, AccuracyReport, EvalMode, Penalty};
use crate::poisoning::{bag_of_labels, BolMode};
use crate::rules::RuleSet;
use crate::tensor::checkpoint;
use crate::tensor::{bce, ClassifierModel, DiscriminatorConfig, DiscriminatorModel, Module};

/// Which vectors the discriminator step trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Mix of BoL variants and predictions, split by the uniform draw.
    Combined,
    /// Always BoL variants.
    BolOnly,
    /// Always predictions with target 0.
    PredsOnly,
    /// No discriminator at all: plain BCE training.
    Plain,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Combined => "combined",
            TrainMode::BolOnly => "bol_only",
            TrainMode::PredsOnly => "preds_only",
            TrainMode::Plain => "plain",
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(TrainMode::Combined),
            "bol_only" => Ok(TrainMode::BolOnly),
            "preds_only" => Ok(TrainMode::PredsOnly),
            "plain" => Ok(TrainMode::Plain),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub mix_threshold: f64,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_discriminator: f64,
    pub epochs: usize,
    pub seed: u64,
    pub bol_mode: BolMode,
    pub mode: TrainMode,
    pub hidden: Vec<usize>,
    pub discriminator: DiscriminatorConfig,
    /// Feed the ground-truth labels to the discriminator alongside `y'`.
    /// When off, the ground-truth channel is all zeros.
    pub condition_on_gt: bool,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.15,
            mix_threshold: 0.5,
            batch_size: 64,
            lr_classifier: 0.5,
            lr_discriminator: 0.05,
            epochs: 20,
            seed: 0,
            bol_mode: BolMode::Grouped,
            mode: TrainMode::Combined,
            hidden: vec![64],
            discriminator: DiscriminatorConfig::default(),
            condition_on_gt: true,
            checkpoint: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} must lie in [0, 1)", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.mix_threshold) {
            return Err(Error::Config(format!(
                "mix_threshold {} must lie in [0, 1]",
                self.mix_threshold
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (k, lr) in [
            ("lr_classifier", self.lr_classifier),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{k} {lr} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.discriminator.validate()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.discriminator;
        match key {
            "lambda" => self.lambda = parse_num(key, value)?,
            "mix_threshold" => self.mix_threshold = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr_classifier" => self.lr_classifier = parse_num(key, value)?,
            "lr_discriminator" => self.lr_discriminator = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "bol_mode" => self.bol_mode = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "hidden" => {
                self.hidden = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| parse_num(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "disc_kind" => d.kind = value.parse()?,
            "disc_depth" => d.depth = parse_num(key, value)?,
            "disc_heads" => d.heads = parse_num(key, value)?,
            "disc_dim" => d.dim = parse_num(key, value)?,
            "disc_ff_dim" => d.ff_dim = parse_num(key, value)?,
            "disc_mlp_hidden" => d.mlp_hidden = parse_num(key, value)?,
            "disc_condition" => {
                self.condition_on_gt = match value {
                    "gt" => true,
                    "none" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "`disc_condition`: expected gt or none, got `{other}`"
                        )))
                    }
                }
            }
            "checkpoint" => {
                self.checkpoint = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a flat `key=value` file over the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected key=value".into(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let d = &self.discriminator;
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let mut s = format!(
            "lambda={}\nmix_threshold={}\nbatch_size={}\nlr_classifier={}\nlr_discriminator={}\nepochs={}\nseed={}\n",
            self.lambda,
            self.mix_threshold,
            self.batch_size,
            self.lr_classifier,
            self.lr_discriminator,
            self.epochs,
            self.seed
        );
        s += &format!(
            "bol_mode={}\nmode={}\nhidden={}\n",
            match self.bol_mode {
                BolMode::Grouped => "grouped",
                BolMode::Flat => "flat",
            },
            self.mode.as_str(),
            if hidden.is_empty() {
                "none".into()
            } else {
                hidden.join(",")
            }
        );
        s += &format!(
            "disc_kind={}\ndisc_depth={}\ndisc_heads={}\ndisc_dim={}\ndisc_ff_dim={}\ndisc_mlp_hidden={}\n",
            match d.kind {
                crate::tensor::DiscriminatorKind::Attention => "attention",
                crate::tensor::DiscriminatorKind::Mlp => "mlp",
            },
            d.depth,
            d.heads,
            d.dim,
            d.ff_dim,
            d.mlp_hidden
        );
        s += &format!("disc_condition={}\n", if self.condition_on_gt { "gt" } else { "none" });
        if let Some(p) = &self.checkpoint {
            s += &format!("checkpoint={}\n", p.display());
        }
        s
    }

    fn adversarial(&self) -> bool {
        self.mode != TrainMode::Plain && self.lambda > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Bol,
    Preds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStep {
    pub loss: f64,
    pub branch: Branch,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierStep {
    pub loss: f64,
    pub bce: f64,
    /// `-log D(F(x), y)` averaged over the batch; 0 when the term is off.
    pub adversarial: f64,
}

/// Per-epoch metrics, one per completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub classifier_loss: f64,
    pub bce_loss: f64,
    pub adversarial_loss: f64,
    pub discriminator_loss: f64,
    pub bol_fraction: f64,
    pub failed_ratio: f64,
    pub acc_avg_ignore: f64,
    pub acc_avg_enforce: f64,
}

impl EpochRecord {
    pub fn record(&self) -> String {
        format!(
            "epoch={} classifier_loss={:.6} bce_loss={:.6} adversarial_loss={:.6} discriminator_loss={:.6} \
             bol_fraction={:.4} failed_ratio={:.6} acc_avg_ignore={:.4} acc_avg_enforce={:.4}",
            self.epoch,
            self.classifier_loss,
            self.bce_loss,
            self.adversarial_loss,
            self.discriminator_loss,
            self.bol_fraction,
            self.failed_ratio,
            self.acc_avg_ignore,
            self.acc_avg_enforce
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ignore_logic: AccuracyReport,
    pub enforce_logic: AccuracyReport,
    pub failed: FailedRatioReport,
    pub compensated: Option<CompensatedEval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedEval {
    pub ignore_logic: AccuracyReport,
    pub enforce_logic: AccuracyReport,
    pub failed: FailedRatioReport,
    pub report: CompensationReport,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}",
            crate::metrics::render_table(&[&self.ignore_logic, &self.enforce_logic])
        )?;
        write!(f, "{}", self.failed)?;
        if let Some(c) = &self.compensated {
            writeln!(f, "\n\nwith label compensation")?;
            writeln!(
                f,
                "{}",
                crate::metrics::render_table(&[&c.ignore_logic, &c.enforce_logic])
            )?;
            write!(f, "{}", c.failed)?;
        }
        Ok(())
    }
}

/// Evaluates confidence predictions in both metric modes, optionally also
/// after label compensation.
pub fn evaluate_batch(
    preds: &LabelBatch,
    gt: &LabelBatch,
    rules: &RuleSet,
    checker: &CompiledChecker,
    with_compensation: bool,
) -> Result<EvalReport> {
    let ignore_logic = evaluate_predictions(preds, gt, checker, EvalMode::IgnoreLogic, Penalty::WholeRow)?;
    let enforce_logic = evaluate_predictions(preds, gt, checker, EvalMode::EnforceLogic, Penalty::WholeRow)?;
    let failed = failed_ratio(checker, preds)?;
    let compensated = if with_compensation {
        let (fixed, report) = compensate(preds, rules, checker)?;
        Some(CompensatedEval {
            ignore_logic: evaluate_predictions(&fixed, gt, checker, EvalMode::IgnoreLogic, Penalty::WholeRow)?,
            enforce_logic: evaluate_predictions(&fixed, gt, checker, EvalMode::EnforceLogic, Penalty::WholeRow)?,
            failed: failed_ratio(checker, &fixed)?,
            report,
        })
    } else {
        None
    };
    Ok(EvalReport {
        ignore_logic,
        enforce_logic,
        failed,
        compensated,
    })
}

fn seeded_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Models, rng streams and history of one training run.
///
/// Classifier init, discriminator init, shuffling and the discriminator step
/// each draw from their own stream of the seed, so turning the discriminator
/// off leaves the classifier's trajectory untouched.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub rules: RuleSet,
    pub checker: CompiledChecker,
    pub classifier: ClassifierModel,
    pub discriminator: DiscriminatorModel,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub n_bol_steps: usize,
    pub n_pred_steps: usize,
    shuffle_rng: ChaCha8Rng,
    disc_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: TrainConfig, rules: &RuleSet, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let m = rules.schema().len();
        if m == 0 || feature_dim == 0 {
            return Err(Error::Config("need at least one attribute and one feature".into()));
        }
        let classifier = ClassifierModel::new(feature_dim, &config.hidden, m, &mut seeded_stream(config.seed, 0));
        let discriminator = DiscriminatorModel::new(m, &config.discriminator, &mut seeded_stream(config.seed, 1))?;
        Ok(TrainState {
            shuffle_rng: seeded_stream(config.seed, 2),
            disc_rng: seeded_stream(config.seed, 3),
            rules: rules.clone(),
            checker: compile(rules),
            classifier,
            discriminator,
            epoch: 0,
            history: Vec::new(),
            n_bol_steps: 0,
            n_pred_steps: 0,
            config,
        })
    }

    fn check_batch(&self, x: &[f64], y_gt: &LabelBatch) -> Result<()> {
        let m = self.rules.schema().len();
        if y_gt.n_cols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: y_gt.n_cols(),
            });
        }
        if x.len() != y_gt.n_rows() * self.classifier.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of dimension {}",
                x.len(),
                y_gt.n_rows(),
                self.classifier.input_dim()
            )));
        }
        if y_gt.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(())
    }

    fn disc_condition<'a>(&self, y_gt: &'a LabelBatch) -> std::borrow::Cow<'a, [f64]> {
        if self.config.condition_on_gt {
            std::borrow::Cow::Borrowed(y_gt.values())
        } else {
            std::borrow::Cow::Owned(vec![0.0; y_gt.values().len()])
        }
    }

    /// One SGD step on the discriminator; the classifier is only read.
    pub fn discriminator_step(&mut self, x: &[f64], y_gt: &LabelBatch) -> Result<DiscStep> {
        self.check_batch(x, y_gt)?;
        let u: f64 = self.disc_rng.gen();
        let branch = match self.config.mode {
            TrainMode::BolOnly => Branch::Bol,
            TrainMode::PredsOnly => Branch::Preds,
            _ if u > self.config.mix_threshold => Branch::Bol,
            _ => Branch::Preds,
        };
        let (y_prime, targets) = match branch {
            Branch::Bol => {
                let out = bag_of_labels(y_gt, &self.rules, self.config.bol_mode, &mut self.disc_rng)?;
                let t: Vec<f64> = out.y_logic.iter().map(|&l| l as f64).collect();
                (out.y_bol.values().to_vec(), t)
            }
            Branch::Preds => {
                let probs = self.classifier.predict(x)?;
                let bin = probs.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect();
                (bin, vec![0.0; y_gt.n_rows()])
            }
        };
        match branch {
            Branch::Bol => self.n_bol_steps += 1,
            Branch::Preds => self.n_pred_steps += 1,
        }
        let cond = self.disc_condition(y_gt).into_owned();
        let loss = fit_discriminator(
            &mut self.discriminator,
            &y_prime,
            &cond,
            &targets,
            self.config.lr_discriminator,
        )?;
        Ok(DiscStep { loss, branch, u })
    }

    /// One SGD step on the classifier with the discriminator frozen.
    pub fn classifier_step(&mut self, x: &[f64], y_gt: &LabelBatch) -> Result<ClassifierStep> {
        self.check_batch(x, y_gt)?;
        let cache = self.classifier.forward(x)?;
        let (l_bce, mut grad) = bce(&cache.probs, y_gt.values())?;
        let mut step = ClassifierStep {
            loss: l_bce,
            bce: l_bce,
            adversarial: 0.0,
        };
        if self.config.adversarial() {
            let lambda = self.config.lambda;
            let cond = self.disc_condition(y_gt);
            let dc = self.discriminator.forward_train(&cache.probs, &cond)?;
            let p: Vec<f64> = dc.iter().map(|c| c.p()).collect();
            let (adv, g_adv) = bce(&p, &vec![1.0; p.len()])?;
            let g_probs = self.discriminator.backward(&dc, &g_adv, false);
            for (g, ga) in grad.iter_mut().zip(&g_probs) {
                *g = (1.0 - lambda) * *g + lambda * ga;
            }
            step.adversarial = adv;
            step.loss = (1.0 - lambda) * l_bce + lambda * adv;
        }
        self.classifier.zero_grad();
        self.classifier.backward(&cache, &grad);
        self.classifier.sgd_step(self.config.lr_classifier);
        Ok(step)
    }

    /// Confidence predictions for every row of `data`.
    pub fn predict(&self, data: &Dataset) -> Result<LabelBatch> {
        let probs = self.classifier.predict(&data.features)?;
        LabelBatch::new(data.labels.schema().clone(), probs, LabelKind::Confidence)
    }

    pub fn evaluate(&self, data: &Dataset, with_compensation: bool) -> Result<EvalReport> {
        let preds = self.predict(data)?;
        evaluate_batch(&preds, &data.labels, &self.rules, &self.checker, with_compensation)
    }

    /// One pass over `train` in shuffled mini-batches, then evaluation on
    /// `test`. Appends to the history and writes the checkpoint if configured.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<&EpochRecord> {
        let n = train.n_rows();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (mut c_loss, mut b_loss, mut a_loss, mut d_loss) = (0.0, 0.0, 0.0, 0.0);
        let (mut n_batches, mut n_disc, mut n_bol) = (0usize, 0usize, 0usize);
        for idx in order.chunks(self.config.batch_size) {
            let batch = train.select(idx);
            if self.config.mode != TrainMode::Plain {
                let d = self.discriminator_step(&batch.features, &batch.labels)?;
                d_loss += d.loss;
                n_disc += 1;
                n_bol += (d.branch == Branch::Bol) as usize;
            }
            let c = self.classifier_step(&batch.features, &batch.labels)?;
            c_loss += c.loss;
            b_loss += c.bce;
            a_loss += c.adversarial;
            n_batches += 1;
        }
        let eval = self.evaluate(test, false)?;
        self.epoch += 1;
        let nb = n_batches as f64;
        let nd = n_disc.max(1) as f64;
        self.history.push(EpochRecord {
            epoch: self.epoch,
            classifier_loss: c_loss / nb,
            bce_loss: b_loss / nb,
            adversarial_loss: a_loss / nb,
            discriminator_loss: d_loss / nd,
            bol_fraction: n_bol as f64 / nd,
            failed_ratio: eval.failed.ratio,
            acc_avg_ignore: eval.ignore_logic.acc_avg,
            acc_avg_enforce: eval.enforce_logic.acc_avg,
        });
        if let Some(path) = &self.config.checkpoint {
            self.save_checkpoint(path)?;
        }
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(
            path,
            &[("classifier", &self.classifier), ("discriminator", &self.discriminator)],
        )
    }

    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        checkpoint::load(
            path,
            &mut [
                ("classifier", &mut self.classifier),
                ("discriminator", &mut self.discriminator),
            ],
        )
    }

    pub fn history_records(&self) -> Vec<String> {
        self.history.iter().map(EpochRecord::record).collect()
    }
}

/// One SGD step of BCE(targets, D(y', y_gt)) on the discriminator.
pub fn fit_discriminator(
    disc: &mut DiscriminatorModel,
    y_prime: &[f64],
    y_gt: &[f64],
    targets: &[f64],
    lr: f64,
) -> Result<f64> {
    let caches = disc.forward_train(y_prime, y_gt)?;
    let p: Vec<f64> = caches.iter().map(|c| c.p()).collect();
    let (loss, g) = bce(&p, targets)?;
    disc.zero_grad();
    disc.backward(&caches, &g, true);
    disc.sgd_step(lr);
    Ok(loss)
}

/// Trains for `config.epochs` epochs and evaluates on `test` (with the
/// compensated variant). Zero epochs yields the initial-state report.
pub fn train(
    config: TrainConfig,
    rules: &RuleSet,
    train: &Dataset,
    test: &Dataset,
) -> Result<(TrainState, EvalReport)> {
    if train.labels.schema() != rules.schema() || test.labels.schema() != rules.schema() {
        return Err(Error::HeaderMismatch(
            "dataset attributes differ from the rule schema".into(),
        ));
    }
    if train.feature_dim != test.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "train features have dimension {}, test {}",
            train.feature_dim, test.feature_dim
        )));
    }
    let mut state = TrainState::new(config, rules, train.feature_dim)?;
    for _ in 0..state.config.epochs {
        state.run_epoch(train, test)?;
    }
    let report = state.evaluate(test, true)?;
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, SyntheticSpec};
    use crate::rules::builtin_rules;

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 2,
            seed,
            hidden: vec![8],
            discriminator: DiscriminatorConfig {
                depth: 1,
                dim: 8,
                heads: 2,
                ff_dim: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn data(n: usize, seed: u64) -> (RuleSet, Dataset, Dataset) {
        let (_, rules) = builtin_rules("fh-mini").unwrap();
        let spec = SyntheticSpec {
            n_samples: n,
            feature_dim: 6,
            noise_std: 0.3,
            label_noise_rate: 0.1,
            seed,
        };
        let d = synth_generate(&spec, &rules).unwrap().dataset();
        let (a, b) = d.split_at(n * 3 / 4);
        (rules, a, b)
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let mut c = TrainConfig::default();
        c.set("lambda", "0.2").unwrap();
        c.set("hidden", "16,8").unwrap();
        c.set("mode", "preds_only").unwrap();
        c.set("disc_kind", "mlp").unwrap();
        c.set("disc_condition", "none").unwrap();
        let back = TrainConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig::from_kv("lambda=1").is_err());
        assert!(TrainConfig::from_kv("lambda=-0.1").is_err());
        assert!(TrainConfig::from_kv("batch_size=0").is_err());
        assert!(TrainConfig::from_kv("colour=blue").is_err());
        assert!(matches!(
            TrainConfig::from_kv("lambda"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert_eq!(TrainConfig::from_kv("# c\n\nepochs=3").unwrap().epochs, 3);
    }

    #[test]
    fn alternation_isolation() {
        let (rules, tr, _) = data(64, 1);
        let mut s = TrainState::new(small_config(1), &rules, 6).unwrap();
        let batch = tr.select(&(0..16).collect::<Vec<_>>());
        for _ in 0..4 {
            let phi = s.classifier.flat_params();
            let theta = s.discriminator.flat_params();
            s.discriminator_step(&batch.features, &batch.labels).unwrap();
            assert_eq!(s.classifier.flat_params(), phi);
            assert_ne!(s.discriminator.flat_params(), theta);

            let phi = s.classifier.flat_params();
            let theta = s.discriminator.flat_params();
            let step = s.classifier_step(&batch.features, &batch.labels).unwrap();
            assert!(step.adversarial > 0.0);
            assert_eq!(s.discriminator.flat_params(), theta);
            assert_ne!(s.classifier.flat_params(), phi);
        }
    }

    #[test]
    fn lambda_zero_matches_plain_training() {
        let (rules, tr, te) = data(80, 2);
        let mut a = small_config(5);
        a.lambda = 0.0;
        let mut b = a.clone();
        b.mode = TrainMode::Plain;
        let (sa, _) = train(a, &rules, &tr, &te).unwrap();
        let (sb, _) = train(b, &rules, &tr, &te).unwrap();
        assert_eq!(sa.classifier, sb.classifier);
        assert!(sa.n_bol_steps + sa.n_pred_steps > 0);
        assert_eq!(sb.n_bol_steps + sb.n_pred_steps, 0);
        for (x, y) in sa.history.iter().zip(&sb.history) {
            assert_eq!(x.classifier_loss, y.classifier_loss);
            assert_eq!(x.bce_loss, x.classifier_loss);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (rules, tr, te) = data(80, 3);
        let dir = tempfile::tempdir().unwrap();
        let mut ckpts = Vec::new();
        let mut hist = Vec::new();
        for k in 0..2 {
            let mut c = small_config(9);
            c.epochs = 3;
            let p = dir.path().join(format!("run{k}.ckpt"));
            c.checkpoint = Some(p.clone());
            let (s, _) = train(c, &rules, &tr, &te).unwrap();
            assert_eq!(s.history.len(), 3);
            hist.push(s.history_records());
            ckpts.push(std::fs::read(p).unwrap());
        }
        assert_eq!(hist[0], hist[1]);
        assert_eq!(ckpts[0], ckpts[1]);
    }

    #[test]
    fn checkpoint_restores_state() {
        let (rules, tr, te) = data(48, 4);
        let (s, _) = train(small_config(2), &rules, &tr, &te).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ckpt");
        s.save_checkpoint(&p).unwrap();
        let mut fresh = TrainState::new(small_config(77), &rules, 6).unwrap();
        fresh.load_checkpoint(&p).unwrap();
        assert_eq!(fresh.classifier.flat_params(), s.classifier.flat_params());
        assert_eq!(fresh.discriminator.flat_params(), s.discriminator.flat_params());
    }

    #[test]
    fn zero_epochs_gives_initial_report() {
        let (rules, tr, te) = data(40, 5);
        let mut c = small_config(1);
        c.epochs = 0;
        let (s, rep) = train(c, &rules, &tr, &te).unwrap();
        assert!(s.history.is_empty());
        assert_eq!(rep.failed.n_total, te.n_rows());
        assert_eq!(rep.compensated.unwrap().failed.n_incomplete, 0);
    }

    #[test]
    fn branch_frequency_is_half() {
        let (rules, tr, _) = data(16, 6);
        let mut s = TrainState::new(small_config(11), &rules, 6).unwrap();
        let n = 2000;
        for _ in 0..n {
            s.discriminator_step(&tr.features[..6 * 4], &tr.labels.select_rows(&[0, 1, 2, 3]))
                .unwrap();
        }
        let k = s.n_bol_steps as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((k - n as f64 * 0.5).abs() <= 3.0 * sd, "bol steps {k}");
    }

    #[test]
    fn fixed_modes_pick_fixed_branch() {
        let (rules, tr, _) = data(16, 7);
        for (mode, want) in [(TrainMode::BolOnly, Branch::Bol), (TrainMode::PredsOnly, Branch::Preds)] {
            let mut c = small_config(3);
            c.mode = mode;
            let mut s = TrainState::new(c, &rules, 6).unwrap();
            for _ in 0..20 {
                let d = s.discriminator_step(&tr.features, &tr.labels).unwrap();
                assert_eq!(d.branch, want);
            }
        }
    }

    #[test]
    fn discriminator_fits_separable_targets() {
        let (_, rules) = builtin_rules("fh-mini").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = DiscriminatorConfig {
            depth: 1,
            dim: 8,
            heads: 2,
            ff_dim: 16,
            ..Default::default()
        };
        let mut d = DiscriminatorModel::new(8, &cfg, &mut rng).unwrap();
        let checker = compile(&rules);
        // consistent rows -> 1, rows with BeardArea emptied -> 0
        let good = [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        ];
        let mut yp = Vec::new();
        let mut gt = Vec::new();
        let mut t = Vec::new();
        for g in &good {
            yp.extend_from_slice(g);
            gt.extend_from_slice(g);
            t.push(1.0);
            let mut bad = *g;
            bad[..4].iter_mut().for_each(|v| *v = 0.0);
            assert!(!checker.check(&bad.map(|v| v > 0.5)).unwrap().consistent());
            yp.extend_from_slice(&bad);
            gt.extend_from_slice(g);
            t.push(0.0);
        }
        // SGD on this net is not monotone step by step, so compare the mean
        // loss of consecutive 200-step windows.
        let mut prev = f64::INFINITY;
        let mut last = 0.0;
        for w in 0..10 {
            let mut sum = 0.0;
            for _ in 0..200 {
                last = fit_discriminator(&mut d, &yp, &gt, &t, 0.01).unwrap();
                sum += last;
            }
            let mean = sum / 200.0;
            assert!(mean < prev, "window {w}: mean loss {mean} after {prev}");
            prev = mean;
        }
        assert!(last < 0.05, "final loss {last}");
    }

    #[test]
    fn evaluate_constant_predictors() {
        let (_, rules) = builtin_rules("fh-mini").unwrap();
        let checker = compile(&rules);
        let s = rules.schema().clone();
        let row = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let gt = LabelBatch::new(s.clone(), row.repeat(5), LabelKind::Binary).unwrap();
        let perfect = LabelBatch::new(s.clone(), row.repeat(5), LabelKind::Confidence).unwrap();
        let r = evaluate_batch(&perfect, &gt, &rules, &checker, true).unwrap();
        assert_eq!(r.ignore_logic.acc_traditional, r.enforce_logic.acc_traditional);
        assert_eq!(r.ignore_logic.acc_pos, r.enforce_logic.acc_pos);
        assert_eq!(r.failed.ratio, 0.0);

        let bad_row = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let bad = LabelBatch::new(s, bad_row.repeat(5), LabelKind::Confidence).unwrap();
        let r = evaluate_batch(&bad, &gt, &rules, &checker, false).unwrap();
        assert_eq!(r.enforce_logic.acc_traditional, 0.0);
        assert_eq!(r.failed.ratio, 1.0);
    }

    #[test]
    fn shape_errors() {
        let (rules, tr, _) = data(16, 8);
        let mut s = TrainState::new(small_config(1), &rules, 6).unwrap();
        assert!(s.classifier_step(&tr.features[..5], &tr.labels).is_err());
        assert!(s.discriminator_step(&tr.features[..5], &tr.labels).is_err());
    }
}
