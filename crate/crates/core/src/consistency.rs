//! Consistency checking of label vectors against a [`RuleSet`].
//!
//! [`CompiledChecker`] lowers every rule to sparse word masks over the packed
//! bit form of a row, so checking a row is a handful of AND/popcount ops per
//! rule. [`check_naive`] interprets the rule set directly and serves as the
//! reference the compiled form is tested against.

use std::fmt;

use crate::batch::{pack_bools, LabelBatch};
use crate::error::{Error, Result};
use crate::rules::{Literal, Rule, RuleId, RuleSet};

/// Outcome of checking one label vector.
///
/// `impossible_rules` holds violated mutexes, implications and exclusive
/// groups; `incomplete_groups` holds exhaustive groups with no positive member.
/// Both lists are in rule declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConsistencyVerdict {
    pub impossible_rules: Vec<RuleId>,
    pub incomplete_groups: Vec<RuleId>,
}

impl ConsistencyVerdict {
    pub fn consistent(&self) -> bool {
        self.impossible_rules.is_empty() && self.incomplete_groups.is_empty()
    }

    pub fn is_impossible(&self) -> bool {
        !self.impossible_rules.is_empty()
    }

    pub fn is_incomplete(&self) -> bool {
        !self.incomplete_groups.is_empty()
    }

    pub fn label(&self) -> &'static str {
        match (self.is_impossible(), self.is_incomplete()) {
            (false, false) => "consistent",
            (true, false) => "impossible",
            (false, true) => "incomplete",
            (true, true) => "impossible+incomplete",
        }
    }

    /// All rule ids named by the verdict, sorted and deduplicated.
    pub fn violated(&self) -> Vec<RuleId> {
        let mut ids: Vec<RuleId> = self
            .impossible_rules
            .iter()
            .chain(&self.incomplete_groups)
            .copied()
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Sparse bitmask: (word index, bits) for every non-zero word.
#[derive(Debug, Clone, Default)]
struct Mask(Vec<(u32, u64)>);

impl Mask {
    fn from_attrs(attrs: impl IntoIterator<Item = usize>) -> Self {
        let mut words: Vec<(u32, u64)> = Vec::new();
        for a in attrs {
            let w = (a / 64) as u32;
            let bit = 1u64 << (a % 64);
            match words.iter_mut().find(|(wi, _)| *wi == w) {
                Some((_, bits)) => *bits |= bit,
                None => words.push((w, bit)),
            }
        }
        words.sort_by_key(|(w, _)| *w);
        Mask(words)
    }

    #[inline]
    fn count(&self, row: &[u64]) -> u32 {
        self.0
            .iter()
            .map(|&(w, bits)| (row[w as usize] & bits).count_ones())
            .sum()
    }

    #[inline]
    fn all_set(&self, row: &[u64]) -> bool {
        self.0.iter().all(|&(w, bits)| row[w as usize] & bits == bits)
    }

    #[inline]
    fn none_set(&self, row: &[u64]) -> bool {
        self.0.iter().all(|&(w, bits)| row[w as usize] & bits == 0)
    }
}

#[derive(Debug, Clone)]
struct Conj {
    pos: Mask,
    neg: Mask,
}

impl Conj {
    fn new(lits: &[Literal]) -> Self {
        Conj {
            pos: Mask::from_attrs(lits.iter().filter(|l| l.positive).map(|l| l.attr)),
            neg: Mask::from_attrs(lits.iter().filter(|l| !l.positive).map(|l| l.attr)),
        }
    }

    #[inline]
    fn holds(&self, row: &[u64]) -> bool {
        self.pos.all_set(row) && self.neg.none_set(row)
    }
}

#[derive(Debug, Clone)]
enum CompiledRule {
    AtMostOne(Mask),
    Group {
        members: Mask,
        exclusive: bool,
        exhaustive: bool,
    },
    Implies {
        antecedent: Conj,
        consequent: Conj,
    },
}

/// Cheap per-row classification used for batch counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RowStatus {
    pub impossible: bool,
    pub incomplete: bool,
}

impl RowStatus {
    pub fn failed(&self) -> bool {
        self.impossible || self.incomplete
    }
}

/// Immutable evaluator compiled from a rule set. `Send + Sync`.
#[derive(Debug, Clone)]
pub struct CompiledChecker {
    n_attrs: usize,
    rules: Vec<CompiledRule>,
    rule_attrs: Vec<Vec<usize>>,
    rendered: Vec<String>,
    n_groups: usize,
    n_mutexes: usize,
    n_implications: usize,
}

pub fn compile(rules: &RuleSet) -> CompiledChecker {
    let mut compiled = Vec::with_capacity(rules.rules().len());
    let (mut n_groups, mut n_mutexes, mut n_implications) = (0, 0, 0);
    for rule in rules.rules() {
        compiled.push(match rule {
            Rule::Group(g) => {
                n_groups += 1;
                CompiledRule::Group {
                    members: Mask::from_attrs(g.members.iter().copied()),
                    exclusive: g.exclusive,
                    exhaustive: g.exhaustive,
                }
            }
            Rule::Mutex(m) => {
                n_mutexes += 1;
                CompiledRule::AtMostOne(Mask::from_attrs(m.iter().copied()))
            }
            Rule::Implies(imp) => {
                n_implications += 1;
                CompiledRule::Implies {
                    antecedent: Conj::new(&imp.antecedent),
                    consequent: Conj::new(&imp.consequent),
                }
            }
        });
    }
    CompiledChecker {
        n_attrs: rules.schema().len(),
        rules: compiled,
        rule_attrs: rules.rules().iter().map(Rule::attributes).collect(),
        rendered: rules.rules().iter().map(|r| r.render(rules.schema())).collect(),
        n_groups,
        n_mutexes,
        n_implications,
    }
}

impl CompiledChecker {
    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_mutexes(&self) -> usize {
        self.n_mutexes
    }

    pub fn n_implications(&self) -> usize {
        self.n_implications
    }

    /// Attributes mentioned by rule `id`.
    pub fn rule_attributes(&self, id: RuleId) -> &[usize] {
        &self.rule_attrs[id.0]
    }

    /// Source form of rule `id`, for reports.
    pub fn describe(&self, id: RuleId) -> &str {
        &self.rendered[id.0]
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.n_attrs {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n_attrs,
                got,
            })
        }
    }

    pub fn check(&self, row: &[bool]) -> Result<ConsistencyVerdict> {
        self.check_dim(row.len())?;
        Ok(self.check_packed(&pack_bools(row)))
    }

    /// Full verdict for a packed row. The caller guarantees the word count.
    pub fn check_packed(&self, row: &[u64]) -> ConsistencyVerdict {
        let mut v = ConsistencyVerdict::default();
        for (i, rule) in self.rules.iter().enumerate() {
            match rule {
                CompiledRule::AtMostOne(mask) => {
                    if mask.count(row) >= 2 {
                        v.impossible_rules.push(RuleId(i));
                    }
                }
                CompiledRule::Group {
                    members,
                    exclusive,
                    exhaustive,
                } => {
                    let c = members.count(row);
                    if *exclusive && c >= 2 {
                        v.impossible_rules.push(RuleId(i));
                    }
                    if *exhaustive && c == 0 {
                        v.incomplete_groups.push(RuleId(i));
                    }
                }
                CompiledRule::Implies { antecedent, consequent } => {
                    if antecedent.holds(row) && !consequent.holds(row) {
                        v.impossible_rules.push(RuleId(i));
                    }
                }
            }
        }
        v
    }

    /// Impossible/incomplete flags without building a verdict.
    #[inline]
    pub fn status_packed(&self, row: &[u64]) -> RowStatus {
        let mut s = RowStatus::default();
        for rule in &self.rules {
            match rule {
                CompiledRule::AtMostOne(mask) => {
                    s.impossible |= mask.count(row) >= 2;
                }
                CompiledRule::Group {
                    members,
                    exclusive,
                    exhaustive,
                } => {
                    let c = members.count(row);
                    s.impossible |= *exclusive && c >= 2;
                    s.incomplete |= *exhaustive && c == 0;
                }
                CompiledRule::Implies { antecedent, consequent } => {
                    s.impossible |= antecedent.holds(row) && !consequent.holds(row);
                }
            }
        }
        s
    }

    pub fn check_batch(&self, batch: &LabelBatch) -> Result<Vec<ConsistencyVerdict>> {
        self.check_dim(batch.n_cols())?;
        let packed = batch.pack();
        Ok((0..packed.n_rows()).map(|i| self.check_packed(packed.row(i))).collect())
    }

    pub fn statuses(&self, batch: &LabelBatch) -> Result<Vec<RowStatus>> {
        self.check_dim(batch.n_cols())?;
        let packed = batch.pack();
        Ok((0..packed.n_rows())
            .map(|i| self.status_packed(packed.row(i)))
            .collect())
    }
}

/// Direct interpretation of `rules` on one row.
pub fn check_naive(rules: &RuleSet, row: &[bool]) -> Result<ConsistencyVerdict> {
    let m = rules.schema().len();
    if row.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: row.len(),
        });
    }
    let positives = |attrs: &[usize]| attrs.iter().filter(|&&a| row[a]).count();
    let mut v = ConsistencyVerdict::default();
    for (i, rule) in rules.rules().iter().enumerate() {
        let id = RuleId(i);
        match rule {
            Rule::Mutex(members) => {
                if positives(members) >= 2 {
                    v.impossible_rules.push(id);
                }
            }
            Rule::Group(g) => {
                let c = positives(&g.members);
                if g.exclusive && c >= 2 {
                    v.impossible_rules.push(id);
                }
                if g.exhaustive && c == 0 {
                    v.incomplete_groups.push(id);
                }
            }
            Rule::Implies(imp) => {
                let ante = imp.antecedent.iter().all(|l| l.holds(row));
                let cons = imp.consequent.iter().all(|l| l.holds(row));
                if ante && !cons {
                    v.impossible_rules.push(id);
                }
            }
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailedRatioReport {
    pub n_total: usize,
    pub n_impossible: usize,
    pub n_incomplete: usize,
    pub n_failed: usize,
    pub ratio: f64,
}

impl FailedRatioReport {
    pub fn from_statuses(statuses: &[RowStatus]) -> Result<Self> {
        if statuses.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut r = FailedRatioReport {
            n_total: statuses.len(),
            n_impossible: 0,
            n_incomplete: 0,
            n_failed: 0,
            ratio: 0.0,
        };
        for s in statuses {
            r.n_impossible += s.impossible as usize;
            r.n_incomplete += s.incomplete as usize;
            r.n_failed += s.failed() as usize;
        }
        r.ratio = r.n_failed as f64 / r.n_total as f64;
        Ok(r)
    }
}

impl fmt::Display for FailedRatioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>12}", "rows", self.n_total)?;
        writeln!(f, "{:<14}{:>12}", "impossible", self.n_impossible)?;
        writeln!(f, "{:<14}{:>12}", "incomplete", self.n_incomplete)?;
        writeln!(f, "{:<14}{:>12}", "failed", self.n_failed)?;
        write!(f, "{:<14}{:>11.2}%", "failed ratio", self.ratio * 100.0)
    }
}

/// Counts failing rows in `batch`. A row that is both impossible and
/// incomplete increments both of those counters but `n_failed` only once.
pub fn failed_ratio(checker: &CompiledChecker, batch: &LabelBatch) -> Result<FailedRatioReport> {
    checker.check_dim(batch.n_cols())?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let m = batch.n_cols();
    let t = batch.threshold();
    let wpr = crate::batch::words_for(m);
    let mut buf = vec![0u64; wpr];
    let mut r = FailedRatioReport {
        n_total: batch.n_rows(),
        n_impossible: 0,
        n_incomplete: 0,
        n_failed: 0,
        ratio: 0.0,
    };
    for row in batch.values().chunks_exact(m.max(1)) {
        buf.iter_mut().for_each(|w| *w = 0);
        for (j, &v) in row.iter().enumerate() {
            if v >= t {
                buf[j / 64] |= 1 << (j % 64);
            }
        }
        let s = checker.status_packed(&buf);
        r.n_impossible += s.impossible as usize;
        r.n_incomplete += s.incomplete as usize;
        r.n_failed += s.failed() as usize;
    }
    r.ratio = r.n_failed as f64 / r.n_total as f64;
    Ok(r)
}

/// One line-delimited audit record: `row_id=<id> verdict=<label> violated=<ids>`.
pub fn audit_record(row_id: &str, verdict: &ConsistencyVerdict) -> String {
    let ids: Vec<String> = verdict.violated().iter().map(|id| id.0.to_string()).collect();
    format!(
        "row_id={} verdict={} violated={}",
        row_id,
        verdict.label(),
        ids.join(",")
    )
}

pub fn summary_record(r: &FailedRatioReport) -> String {
    format!(
        "summary n_total={} n_impossible={} n_incomplete={} n_failed={} ratio={:.6}",
        r.n_total, r.n_impossible, r.n_incomplete, r.n_failed, r.ratio
    )
}
