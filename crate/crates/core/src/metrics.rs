//! Per-attribute accuracy under two evaluation conditions: predictions taken
//! at face value, or every logically inconsistent row counted as wrong.
//!
//! All percentages are kept at full precision; only the rendered tables round.

use std::fmt::Write as _;

use crate::batch::LabelBatch;
use crate::consistency::CompiledChecker;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub names: Vec<String>,
    pub tp: Vec<u64>,
    pub tn: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    /// Rows counted.
    pub n: u64,
}

impl ConfusionCounts {
    fn zeros(names: Vec<String>) -> Self {
        let m = names.len();
        ConfusionCounts {
            names,
            tp: vec![0; m],
            tn: vec![0; m],
            fp: vec![0; m],
            fn_: vec![0; m],
            n: 0,
        }
    }

    pub fn n_attrs(&self) -> usize {
        self.names.len()
    }

    pub fn positives(&self, j: usize) -> u64 {
        self.tp[j] + self.fn_[j]
    }

    pub fn negatives(&self, j: usize) -> u64 {
        self.tn[j] + self.fp[j]
    }
}

/// How an inconsistent row is penalized under [`EvalMode::EnforceLogic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Penalty {
    /// Every attribute of the row counts as incorrect.
    #[default]
    WholeRow,
    /// Only attributes named by a violated rule count as incorrect.
    ViolatedAttributes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    IgnoreLogic,
    EnforceLogic,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::IgnoreLogic => "ignore_logic",
            EvalMode::EnforceLogic => "enforce_logic",
        }
    }
}

/// Predictions with the rows that fail the checker marked.
#[derive(Debug, Clone)]
pub struct MarkedPredictions {
    pub preds: LabelBatch,
    /// Per row: `None` when consistent, otherwise the attributes of every violated rule.
    pub flagged: Vec<Option<Vec<usize>>>,
}

impl MarkedPredictions {
    pub fn n_flagged(&self) -> usize {
        self.flagged.iter().filter(|f| f.is_some()).count()
    }
}

pub fn enforce_logic(preds: &LabelBatch, checker: &CompiledChecker) -> Result<MarkedPredictions> {
    let verdicts = checker.check_batch(preds)?;
    let flagged = verdicts
        .into_iter()
        .map(|v| {
            if v.consistent() {
                None
            } else {
                let mut attrs: Vec<usize> = v
                    .violated()
                    .into_iter()
                    .flat_map(|id| checker.rule_attributes(id).iter().copied())
                    .collect();
                attrs.sort_unstable();
                attrs.dedup();
                Some(attrs)
            }
        })
        .collect();
    Ok(MarkedPredictions {
        preds: preds.clone(),
        flagged,
    })
}

fn count_into(
    counts: &mut ConfusionCounts,
    preds: &LabelBatch,
    gt: &LabelBatch,
    penalized: impl Fn(usize, usize) -> bool,
) {
    let m = preds.n_cols();
    for i in 0..preds.n_rows() {
        for j in 0..m {
            let truth = gt.bit(i, j);
            let correct = preds.bit(i, j) == truth && !penalized(i, j);
            match (truth, correct) {
                (true, true) => counts.tp[j] += 1,
                (true, false) => counts.fn_[j] += 1,
                (false, true) => counts.tn[j] += 1,
                (false, false) => counts.fp[j] += 1,
            }
        }
    }
    counts.n += preds.n_rows() as u64;
}

fn ensure_pair(preds: &LabelBatch, gt: &LabelBatch) -> Result<()> {
    preds.ensure_same_shape(gt)?;
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

pub fn confusion(preds: &LabelBatch, gt: &LabelBatch) -> Result<ConfusionCounts> {
    ensure_pair(preds, gt)?;
    let mut c = ConfusionCounts::zeros(preds.schema().names().to_vec());
    count_into(&mut c, preds, gt, |_, _| false);
    Ok(c)
}

/// Confusion counts where flagged rows' predictions are forced incorrect.
pub fn confusion_marked(marked: &MarkedPredictions, gt: &LabelBatch, penalty: Penalty) -> Result<ConfusionCounts> {
    ensure_pair(&marked.preds, gt)?;
    let mut c = ConfusionCounts::zeros(marked.preds.schema().names().to_vec());
    count_into(&mut c, &marked.preds, gt, |i, j| match (&marked.flagged[i], penalty) {
        (None, _) => false,
        (Some(_), Penalty::WholeRow) => true,
        (Some(attrs), Penalty::ViolatedAttributes) => attrs.binary_search(&j).is_ok(),
    });
    Ok(c)
}

/// Mean over attributes of (tp + tn) / n, in percent.
pub fn acc_traditional(counts: &ConfusionCounts) -> Result<f64> {
    if counts.n == 0 || counts.n_attrs() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = counts.n as f64;
    let sum: f64 = (0..counts.n_attrs())
        .map(|j| (counts.tp[j] + counts.tn[j]) as f64 / n * 100.0)
        .sum();
    Ok(sum / counts.n_attrs() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Balanced {
    pub acc_pos: f64,
    pub acc_neg: f64,
    pub acc_avg: f64,
}

fn rate(hit: u64, miss: u64) -> Option<f64> {
    let total = hit + miss;
    (total > 0).then(|| hit as f64 / total as f64 * 100.0)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    (k > 0).then(|| sum / k as f64)
}

/// Balanced accuracy: mean positive-class and negative-class accuracy and
/// their average. Attributes lacking positive (negative) ground truth are
/// left out of the positive (negative) mean.
pub fn acc_balanced(counts: &ConfusionCounts) -> Result<Balanced> {
    if counts.n == 0 || counts.n_attrs() == 0 {
        return Err(Error::EmptyBatch);
    }
    let m = counts.n_attrs();
    let acc_pos = mean((0..m).filter_map(|j| rate(counts.tp[j], counts.fn_[j])));
    let acc_neg = mean((0..m).filter_map(|j| rate(counts.tn[j], counts.fp[j])));
    match (acc_pos, acc_neg) {
        (Some(acc_pos), Some(acc_neg)) => Ok(Balanced {
            acc_pos,
            acc_neg,
            acc_avg: (acc_pos + acc_neg) / 2.0,
        }),
        _ => Err(Error::NoSupport),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeAccuracy {
    pub name: String,
    pub acc_pos: Option<f64>,
    pub acc_neg: Option<f64>,
    pub acc_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub mode: EvalMode,
    pub acc_traditional: f64,
    pub acc_pos: f64,
    pub acc_neg: f64,
    pub acc_avg: f64,
    pub per_attribute: Vec<AttributeAccuracy>,
}

impl AccuracyReport {
    pub fn from_counts(counts: &ConfusionCounts, mode: EvalMode) -> Result<Self> {
        let b = acc_balanced(counts)?;
        let per_attribute = (0..counts.n_attrs())
            .map(|j| {
                let acc_pos = rate(counts.tp[j], counts.fn_[j]);
                let acc_neg = rate(counts.tn[j], counts.fp[j]);
                AttributeAccuracy {
                    name: counts.names[j].clone(),
                    acc_pos,
                    acc_neg,
                    acc_avg: acc_pos.zip(acc_neg).map(|(p, n)| (p + n) / 2.0),
                }
            })
            .collect();
        Ok(AccuracyReport {
            mode,
            acc_traditional: acc_traditional(counts)?,
            acc_pos: b.acc_pos,
            acc_neg: b.acc_neg,
            acc_avg: b.acc_avg,
            per_attribute,
        })
    }

    /// Stable `key=value` records: one summary line, then one per attribute.
    pub fn records(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x:.4}"));
        let mut out = vec![format!(
            "mode={} acc_traditional={:.4} acc_pos={:.4} acc_neg={:.4} acc_avg={:.4}",
            self.mode.as_str(),
            self.acc_traditional,
            self.acc_pos,
            self.acc_neg,
            self.acc_avg
        )];
        for a in &self.per_attribute {
            out.push(format!(
                "mode={} attribute={} acc_pos={} acc_neg={} acc_avg={}",
                self.mode.as_str(),
                a.name,
                opt(a.acc_pos),
                opt(a.acc_neg),
                opt(a.acc_avg)
            ));
        }
        out
    }
}

/// Accuracy report for `preds` against `gt` under `mode`.
pub fn evaluate_predictions(
    preds: &LabelBatch,
    gt: &LabelBatch,
    checker: &CompiledChecker,
    mode: EvalMode,
    penalty: Penalty,
) -> Result<AccuracyReport> {
    let counts = match mode {
        EvalMode::IgnoreLogic => confusion(preds, gt)?,
        EvalMode::EnforceLogic => confusion_marked(&enforce_logic(preds, checker)?, gt, penalty)?,
    };
    AccuracyReport::from_counts(&counts, mode)
}

/// Side-by-side table of several reports (columns in the order given).
pub fn render_table(reports: &[&AccuracyReport]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<20}", "");
    for r in reports {
        let _ = write!(s, "| {:^26} ", r.mode.as_str());
    }
    s.push('\n');
    let _ = write!(s, "{:<20}", "attribute");
    for _ in reports {
        let _ = write!(s, "| {:>8}{:>8}{:>8}  ", "Acc", "Acc_n", "Acc_p");
    }
    s.push('\n');
    let _ = writeln!(s, "{}", "-".repeat(20 + reports.len() * 29));
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    if let Some(first) = reports.first() {
        for (j, a) in first.per_attribute.iter().enumerate() {
            let _ = write!(s, "{:<20}", a.name);
            for r in reports {
                let p = &r.per_attribute[j];
                let _ = write!(s, "| {:>8}{:>8}{:>8}  ", fmt(p.acc_avg), fmt(p.acc_neg), fmt(p.acc_pos));
            }
            s.push('\n');
        }
    }
    let _ = writeln!(s, "{}", "-".repeat(20 + reports.len() * 29));
    let _ = write!(s, "{:<20}", "average");
    for r in reports {
        let _ = write!(s, "| {:>8.2}{:>8.2}{:>8.2}  ", r.acc_avg, r.acc_neg, r.acc_pos);
    }
    s.push('\n');
    let _ = write!(s, "{:<20}", "traditional");
    for r in reports {
        let _ = write!(s, "| {:>8.2}{:>18}", r.acc_traditional, "");
    }
    s.push('\n');
    s
}
