//! Label compensation: fills every empty exhaustive group with its most
//! confident member.
//!
//! Candidates are tried in order of decreasing confidence (ties go to the
//! lower attribute index). The first one whose activation adds no new
//! impossible violation wins. When every candidate would add one, the most
//! confident member is activated anyway and the row is recorded as a fallback.

use std::collections::BTreeSet;

use crate::batch::{LabelBatch, LabelKind};
use crate::consistency::CompiledChecker;
use crate::error::{Error, Result};
use crate::rules::{RuleId, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CompensationReport {
    pub n_rows_modified: usize,
    /// (group name, number of rows where the group was filled), in declaration order.
    pub group_fills: Vec<(String, usize)>,
    /// Rows that had to take an activation introducing an impossible violation.
    pub fallback_rows: usize,
    /// Rows still impossible after compensation, for any reason.
    pub residual_impossible: usize,
}

/// Returns a copy of `preds` where each filled member's confidence is raised
/// to 1.0. Everything else is left as is, so the output still carries scores
/// and compensating it again changes nothing.
pub fn compensate(
    preds: &LabelBatch,
    rules: &RuleSet,
    checker: &CompiledChecker,
) -> Result<(LabelBatch, CompensationReport)> {
    if preds.kind() != LabelKind::Confidence {
        return Err(Error::MissingConfidences);
    }
    let m = rules.schema().len();
    if preds.n_cols() != m || checker.n_attrs() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: preds.n_cols(),
        });
    }
    let groups: Vec<(&str, &[usize])> = rules
        .exhaustive_groups()
        .map(|(_, g)| (g.name.as_str(), g.members.as_slice()))
        .collect();
    let mut out = preds.clone();
    let mut report = CompensationReport {
        group_fills: groups.iter().map(|(n, _)| (n.to_string(), 0)).collect(),
        ..Default::default()
    };

    let impossible =
        |bits: &[bool]| -> Result<BTreeSet<RuleId>> { Ok(checker.check(bits)?.impossible_rules.into_iter().collect()) };

    for i in 0..out.n_rows() {
        let mut bits = out.bool_row(i);
        let mut modified = false;
        let mut fallback = false;
        for (g, (_, members)) in groups.iter().enumerate() {
            if members.iter().any(|&j| bits[j]) {
                continue;
            }
            let row = out.row(i);
            let mut candidates: Vec<usize> = members.to_vec();
            candidates.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let before = impossible(&bits)?;
            let mut chosen = None;
            for &c in &candidates {
                bits[c] = true;
                let after = impossible(&bits)?;
                bits[c] = false;
                if after.is_subset(&before) {
                    chosen = Some(c);
                    break;
                }
            }
            let c = chosen.unwrap_or_else(|| {
                fallback = true;
                candidates[0]
            });
            bits[c] = true;
            out.row_mut(i)[c] = 1.0;
            report.group_fills[g].1 += 1;
            modified = true;
        }
        report.n_rows_modified += modified as usize;
        report.fallback_rows += fallback as usize;
        if checker.check(&bits)?.is_impossible() {
            report.residual_impossible += 1;
        }
    }
    Ok((out, report))
}
