use crate::error::{Error, Result};
use crate::rules::AttributeSchema;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Whether a batch holds hard 0/1 labels or classifier confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Binary,
    Confidence,
}

/// An N x M matrix of labels or confidences bound to an attribute schema.
///
/// Values are stored row-major. The binarized view is `value >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatch {
    schema: AttributeSchema,
    values: Vec<f64>,
    n_rows: usize,
    threshold: f64,
    kind: LabelKind,
    row_ids: Option<Vec<String>>,
}

impl LabelBatch {
    pub fn new(schema: AttributeSchema, values: Vec<f64>, kind: LabelKind) -> Result<Self> {
        let m = schema.len();
        if m == 0 {
            if !values.is_empty() {
                return Err(Error::DimensionMismatch {
                    expected: 0,
                    got: values.len(),
                });
            }
        } else if !values.len().is_multiple_of(m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: values.len() % m,
            });
        }
        for (k, &v) in values.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::ValueOutOfRange {
                    row: k / m,
                    col: k % m,
                    value: v,
                });
            }
        }
        let n_rows = values.len().checked_div(m).unwrap_or(0);
        Ok(LabelBatch {
            schema,
            values,
            n_rows,
            threshold: DEFAULT_THRESHOLD,
            kind,
            row_ids: None,
        })
    }

    pub fn from_bool_rows(schema: AttributeSchema, rows: &[Vec<bool>]) -> Result<Self> {
        let m = schema.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            values.extend(row.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
        LabelBatch::new(schema, values, LabelKind::Binary)
    }

    pub fn empty(schema: AttributeSchema, kind: LabelKind) -> Self {
        LabelBatch {
            schema,
            values: Vec::new(),
            n_rows: 0,
            threshold: DEFAULT_THRESHOLD,
            kind,
            row_ids: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidThreshold(threshold));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                got: ids.len(),
            });
        }
        self.row_ids = Some(ids);
        Ok(self)
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_cols();
        &self.values[i * m..(i + 1) * m]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let m = self.n_cols();
        &mut self.values[i * m..(i + 1) * m]
    }

    pub fn row_ids(&self) -> Option<&[String]> {
        self.row_ids.as_deref()
    }

    /// Identifier of row `i`: the stored id, or its 0-based position.
    pub fn row_id(&self, i: usize) -> String {
        match &self.row_ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        self.get(i, j) >= self.threshold
    }

    pub fn bool_row(&self, i: usize) -> Vec<bool> {
        self.row(i).iter().map(|&v| v >= self.threshold).collect()
    }

    /// The binarized view as a new binary batch.
    pub fn binarized(&self) -> LabelBatch {
        LabelBatch {
            schema: self.schema.clone(),
            values: self
                .values
                .iter()
                .map(|&v| if v >= self.threshold { 1.0 } else { 0.0 })
                .collect(),
            n_rows: self.n_rows,
            threshold: DEFAULT_THRESHOLD,
            kind: LabelKind::Binary,
            row_ids: self.row_ids.clone(),
        }
    }

    /// Rows `idx` in the given order, as a new batch.
    pub fn select_rows(&self, idx: &[usize]) -> LabelBatch {
        let m = self.n_cols();
        let mut values = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        LabelBatch {
            schema: self.schema.clone(),
            values,
            n_rows: idx.len(),
            threshold: self.threshold,
            kind: self.kind,
            row_ids: self
                .row_ids
                .as_ref()
                .map(|ids| idx.iter().map(|&i| ids[i].clone()).collect()),
        }
    }

    pub fn pack(&self) -> PackedRows {
        PackedRows::from_batch(self)
    }

    pub(crate) fn ensure_same_shape(&self, other: &LabelBatch) -> Result<()> {
        if self.schema != *other.schema() {
            return Err(Error::HeaderMismatch(format!(
                "[{}] vs [{}]",
                self.schema.names().join(", "),
                other.schema().names().join(", ")
            )));
        }
        if self.n_rows != other.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                got: other.n_rows,
            });
        }
        Ok(())
    }
}

/// Binarized rows packed 64 attributes per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedRows {
    words_per_row: usize,
    n_rows: usize,
    words: Vec<u64>,
}

pub fn words_for(m: usize) -> usize {
    m.div_ceil(64).max(1)
}

impl PackedRows {
    pub fn from_batch(batch: &LabelBatch) -> Self {
        let m = batch.n_cols();
        let wpr = words_for(m);
        let t = batch.threshold();
        let mut words = vec![0u64; wpr * batch.n_rows()];
        for (i, row) in batch.values().chunks_exact(m.max(1)).enumerate() {
            let dst = &mut words[i * wpr..(i + 1) * wpr];
            for (j, &v) in row.iter().enumerate() {
                if v >= t {
                    dst[j / 64] |= 1 << (j % 64);
                }
            }
        }
        PackedRows {
            words_per_row: wpr,
            n_rows: batch.n_rows(),
            words,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }
}

pub fn pack_bools(row: &[bool]) -> Vec<u64> {
    let mut words = vec![0u64; words_for(row.len())];
    for (j, &b) in row.iter().enumerate() {
        if b {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(m: usize) -> AttributeSchema {
        let names: Vec<String> = (0..m).map(|j| format!("a{j}")).collect();
        AttributeSchema::new(&names).unwrap()
    }

    #[test]
    fn rejects_out_of_range() {
        let err = LabelBatch::new(schema(2), vec![0.0, 1.5], LabelKind::Confidence).unwrap_err();
        assert!(matches!(err, Error::ValueOutOfRange { row: 0, col: 1, .. }));
        assert!(LabelBatch::new(schema(2), vec![0.0, f64::NAN], LabelKind::Confidence).is_err());
        assert!(LabelBatch::new(schema(2), vec![0.0, 1.0, 1.0], LabelKind::Binary).is_err());
    }

    #[test]
    fn threshold_binarizes_inclusively() {
        let b = LabelBatch::new(schema(3), vec![0.5, 0.49, 0.7], LabelKind::Confidence).unwrap();
        assert_eq!(b.bool_row(0), vec![true, false, true]);
        let b = b.with_threshold(0.6).unwrap();
        assert_eq!(b.bool_row(0), vec![false, false, true]);
    }

    #[test]
    fn invalid_threshold() {
        let b = LabelBatch::empty(schema(1), LabelKind::Binary);
        assert!(b.clone().with_threshold(0.0).is_err());
        assert!(b.with_threshold(1.0).is_err());
    }

    #[test]
    fn packs_past_one_word() {
        let m = 70;
        let mut row = vec![false; m];
        row[0] = true;
        row[65] = true;
        let b = LabelBatch::from_bool_rows(schema(m), &[row.clone()]).unwrap();
        let p = b.pack();
        assert_eq!(p.row(0), &[1u64, 2u64]);
        assert_eq!(pack_bools(&row), vec![1u64, 2u64]);
    }
}
