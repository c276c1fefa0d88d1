//! Bag-of-Labels poisoning: turns ground-truth label rows into logically
//! inconsistent variants and records, per row, whether it was poisoned.
//!
//! Every row draws from its own ChaCha stream keyed by one value taken from
//! the caller's rng, so results do not depend on the order rows are visited.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::LabelBatch;
use crate::error::{Error, Result};
use crate::rules::{derive_condition_groups, ConditionPair, RelationKind, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    InterImp,
    IntraImp,
    IntraIncomp,
    Untouched,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::InterImp => "inter_imp",
            Provenance::IntraImp => "intra_imp",
            Provenance::IntraIncomp => "intra_incomp",
            Provenance::Untouched => "untouched",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonOutcome {
    pub y_bol: LabelBatch,
    /// 1 = row left as is, 0 = row poisoned by this call.
    pub y_logic: Vec<u8>,
    pub provenance: Vec<Provenance>,
}

impl PoisonOutcome {
    pub fn n_poisoned(&self) -> usize {
        self.y_logic.iter().filter(|&&l| l == 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BolMode {
    /// Three-way split over inter-impossible, intra-impossible and
    /// intra-incomplete poisoning. Needs exclusive and exhaustive groups.
    Grouped,
    /// One part per condition pair, each poisoned through its own pair.
    Flat,
}

impl std::str::FromStr for BolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grouped" => Ok(BolMode::Grouped),
            "flat" => Ok(BolMode::Flat),
            other => Err(Error::Config(format!("unknown poisoning mode `{other}`"))),
        }
    }
}

struct RowStreams([u8; 32]);

impl RowStreams {
    fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut key = [0u8; 32];
        rng.fill(&mut key);
        RowStreams(key)
    }

    fn row(&self, i: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.0);
        r.set_stream(i as u64);
        r
    }
}

fn set(row: &mut [f64], j: usize, on: bool) {
    row[j] = if on { 1.0 } else { 0.0 };
}

/// Flips one attribute of `pair` to its violating polarity when the pair's
/// condition holds. Returns whether the row changed.
fn poison_inter(row: &mut [f64], t: f64, pair: &ConditionPair, rng: &mut ChaCha8Rng) -> bool {
    let on = |row: &[f64], j: usize| row[j] >= t;
    match pair.kind {
        RelationKind::Mutex => {
            let members: Vec<usize> = pair.cause.iter().chain(&pair.effect).map(|l| l.attr).collect();
            if !members.iter().any(|&j| on(row, j)) {
                return false;
            }
            let off: Vec<usize> = members.into_iter().filter(|&j| !on(row, j)).collect();
            match off.choose(rng) {
                Some(&j) => {
                    set(row, j, true);
                    true
                }
                None => false,
            }
        }
        RelationKind::Implication => {
            if !pair.cause.iter().all(|l| on(row, l.attr) == l.positive) {
                return false;
            }
            let candidates: Vec<_> = pair
                .effect
                .iter()
                .filter(|l| on(row, l.attr) == l.positive)
                .filter(|l| !pair.cause.iter().any(|c| c.attr == l.attr))
                .collect();
            match candidates.choose(rng) {
                Some(l) => {
                    set(row, l.attr, !l.positive);
                    true
                }
                None => false,
            }
        }
    }
}

fn poison_intra_imp(row: &mut [f64], t: f64, group: &[usize], rng: &mut ChaCha8Rng) -> bool {
    let positives: Vec<usize> = group.iter().copied().filter(|&j| row[j] >= t).collect();
    if positives.len() != 1 {
        return false;
    }
    let others: Vec<usize> = group.iter().copied().filter(|&j| j != positives[0]).collect();
    match others.choose(rng) {
        Some(&j) => {
            set(row, j, true);
            true
        }
        None => false,
    }
}

fn poison_intra_incomp(row: &mut [f64], t: f64, group: &[usize]) -> bool {
    if !group.iter().any(|&j| row[j] >= t) {
        return false;
    }
    for &j in group {
        set(row, j, false);
    }
    true
}

#[derive(Clone, Copy)]
enum Attack<'a> {
    Inter(&'a [ConditionPair]),
    IntraImp(&'a [Vec<usize>]),
    IntraIncomp(&'a [Vec<usize>]),
}

impl Attack<'_> {
    fn provenance(&self) -> Provenance {
        match self {
            Attack::Inter(_) => Provenance::InterImp,
            Attack::IntraImp(_) => Provenance::IntraImp,
            Attack::IntraIncomp(_) => Provenance::IntraIncomp,
        }
    }

    fn apply(&self, row: &mut [f64], t: f64, rng: &mut ChaCha8Rng) -> bool {
        match *self {
            Attack::Inter(pairs) => {
                let pair = pairs.choose(rng).expect("non-empty pairs");
                poison_inter(row, t, pair, rng)
            }
            Attack::IntraImp(groups) => {
                let g = groups.choose(rng).expect("non-empty groups");
                poison_intra_imp(row, t, g, rng)
            }
            Attack::IntraIncomp(groups) => {
                let g = groups.choose(rng).expect("non-empty groups");
                poison_intra_incomp(row, t, g)
            }
        }
    }
}

/// Applies `attack_for(i)` to every row `i` with that row's stream.
fn run<'a>(batch: &LabelBatch, streams: &RowStreams, attack_for: impl Fn(usize) -> Attack<'a>) -> PoisonOutcome {
    let n = batch.n_rows();
    let t = batch.threshold();
    let mut y_bol = batch.clone();
    let mut y_logic = vec![1u8; n];
    let mut provenance = vec![Provenance::Untouched; n];
    for i in 0..n {
        let attack = attack_for(i);
        let mut rng = streams.row(i);
        if attack.apply(y_bol.row_mut(i), t, &mut rng) {
            y_logic[i] = 0;
            provenance[i] = attack.provenance();
        }
    }
    PoisonOutcome {
        y_bol,
        y_logic,
        provenance,
    }
}

fn check_dim(batch: &LabelBatch, rules: &RuleSet) -> Result<()> {
    if batch.n_cols() != rules.schema().len() {
        return Err(Error::DimensionMismatch {
            expected: rules.schema().len(),
            got: batch.n_cols(),
        });
    }
    Ok(())
}

fn exclusive_members(rules: &RuleSet) -> Vec<Vec<usize>> {
    rules
        .exclusive_groups()
        .map(|(_, g)| g.members.clone())
        .filter(|m| m.len() >= 2)
        .collect()
}

fn exhaustive_members(rules: &RuleSet) -> Vec<Vec<usize>> {
    rules.exhaustive_groups().map(|(_, g)| g.members.clone()).collect()
}

/// Inter-class impossible poisoning through a single condition pair.
pub fn inter_imp_poison<R: Rng + ?Sized>(
    batch: &LabelBatch,
    pair: &ConditionPair,
    rng: &mut R,
) -> Result<PoisonOutcome> {
    let max_attr = pair.cause.iter().chain(&pair.effect).map(|l| l.attr).max().unwrap_or(0);
    if max_attr >= batch.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: max_attr + 1,
            got: batch.n_cols(),
        });
    }
    let streams = RowStreams::new(rng);
    let pairs = std::slice::from_ref(pair);
    Ok(run(batch, &streams, |_| Attack::Inter(pairs)))
}

/// Intra-class impossible poisoning: a second positive inside one exclusive group.
pub fn intra_imp_poison<R: Rng + ?Sized>(batch: &LabelBatch, rules: &RuleSet, rng: &mut R) -> Result<PoisonOutcome> {
    check_dim(batch, rules)?;
    let groups = exclusive_members(rules);
    if groups.is_empty() {
        return Err(Error::NoExclusiveGroups);
    }
    let streams = RowStreams::new(rng);
    Ok(run(batch, &streams, |_| Attack::IntraImp(&groups)))
}

/// Intra-class incomplete poisoning: clears every member of one exhaustive group.
pub fn intra_incomp_poison<R: Rng + ?Sized>(batch: &LabelBatch, rules: &RuleSet, rng: &mut R) -> Result<PoisonOutcome> {
    check_dim(batch, rules)?;
    let groups = exhaustive_members(rules);
    if groups.is_empty() {
        return Err(Error::NoExhaustiveGroups);
    }
    let streams = RowStreams::new(rng);
    Ok(run(batch, &streams, |_| Attack::IntraIncomp(&groups)))
}

/// Sizes of a `k`-way split of `n` rows; earlier parts take the remainder.
pub fn split_sizes(n: usize, k: usize) -> Vec<usize> {
    let (base, rem) = (n / k, n % k);
    (0..k).map(|p| base + usize::from(p < rem)).collect()
}

/// Part index of every row under a uniformly random `k`-way split.
fn random_parts<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut part = vec![0; n];
    let mut pos = 0;
    for (p, size) in split_sizes(n, k).into_iter().enumerate() {
        for &row in &order[pos..pos + size] {
            part[row] = p;
        }
        pos += size;
    }
    part
}

/// Bag of Labels over a whole batch. Output rows stay in input order.
pub fn bag_of_labels<R: Rng + ?Sized>(
    y_gt: &LabelBatch,
    rules: &RuleSet,
    mode: BolMode,
    rng: &mut R,
) -> Result<PoisonOutcome> {
    check_dim(y_gt, rules)?;
    if y_gt.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pairs = derive_condition_groups(rules).pairs;
    if pairs.is_empty() {
        return Err(Error::NoConditionGroups);
    }
    let n = y_gt.n_rows();
    match mode {
        BolMode::Grouped => {
            let exclusive = exclusive_members(rules);
            if exclusive.is_empty() {
                return Err(Error::NoExclusiveGroups);
            }
            let exhaustive = exhaustive_members(rules);
            if exhaustive.is_empty() {
                return Err(Error::NoExhaustiveGroups);
            }
            let parts = random_parts(n, 3, rng);
            let streams = RowStreams::new(rng);
            Ok(run(y_gt, &streams, |i| match parts[i] {
                0 => Attack::Inter(&pairs),
                1 => Attack::IntraImp(&exclusive),
                _ => Attack::IntraIncomp(&exhaustive),
            }))
        }
        BolMode::Flat => {
            let parts = random_parts(n, pairs.len(), rng);
            let streams = RowStreams::new(rng);
            Ok(run(y_gt, &streams, |i| {
                Attack::Inter(std::slice::from_ref(&pairs[parts[i]]))
            }))
        }
    }
}
