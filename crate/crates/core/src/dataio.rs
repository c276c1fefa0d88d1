//! File formats and the synthetic rule-planted dataset generator.
//!
//! Label and feature files are comma-separated with a mandatory header whose
//! first column is `id`. Labels are written as `0`/`1`, confidences with six
//! decimals, features at float32 precision.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::batch::{LabelBatch, LabelKind};
use crate::consistency::{compile, CompiledChecker};
use crate::error::{Error, Result};
use crate::rules::{AttributeSchema, RuleSet};

/// Largest attribute count for which consistent assignments are enumerated.
pub const ENUMERATION_LIMIT: usize = 20;
const REJECTION_ATTEMPTS: usize = 1_000_000;

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(None)
        .from_reader(File::open(path)?))
}

fn header_names(rdr: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let header = rdr.headers()?.clone();
    match header.get(0) {
        Some("id") => Ok(header.iter().skip(1).map(str::to_string).collect()),
        Some(other) => Err(Error::HeaderMismatch(format!(
            "first column must be `id`, found `{other}`"
        ))),
        None => Err(Error::Parse {
            line: 1,
            msg: "missing header row".into(),
        }),
    }
}

fn is_index_ids(ids: &[String]) -> bool {
    ids.iter().enumerate().all(|(i, s)| s.parse::<usize>() == Ok(i))
}

/// Reads a labels or confidences file.
///
/// With `schema`, the header must list exactly its attributes in order;
/// otherwise the schema is taken from the header. A file whose values contain
/// a decimal point loads as confidences, otherwise as binary labels. Ids equal
/// to the row index are not stored.
pub fn load_labels(path: &Path, schema: Option<&AttributeSchema>) -> Result<LabelBatch> {
    let mut rdr = csv_reader(path)?;
    let names = header_names(&mut rdr)?;
    let schema = match schema {
        Some(s) => {
            if s.names() != names.as_slice() {
                return Err(Error::HeaderMismatch(format!(
                    "file has [{}], schema has [{}]",
                    names.join(", "),
                    s.names().join(", ")
                )));
            }
            s.clone()
        }
        None => AttributeSchema::new(&names).map_err(|e| Error::HeaderMismatch(e.to_string()))?,
    };
    let m = schema.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut decimal = false;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(r + 2);
        if rec.len() != m + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", m + 1, rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{field}` is not a number"),
            })?;
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::ValueOutOfRange {
                    row: r,
                    col: c,
                    value: v,
                });
            }
            decimal |= field.contains(['.', 'e', 'E']);
            values.push(v);
        }
    }
    let kind = if decimal {
        LabelKind::Confidence
    } else {
        LabelKind::Binary
    };
    let batch = LabelBatch::new(schema, values, kind)?;
    if is_index_ids(&ids) {
        Ok(batch)
    } else {
        batch.with_row_ids(ids)
    }
}

/// Writes `batch` in the canonical format; `load_labels` reads it back equal.
pub fn save_labels(batch: &LabelBatch, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_labels(batch, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_labels<W: Write>(batch: &LabelBatch, w: &mut W) -> Result<()> {
    write!(w, "id")?;
    for n in batch.schema().names() {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    let mut line = String::new();
    for i in 0..batch.n_rows() {
        line.clear();
        line.push_str(&batch.row_id(i));
        for &v in batch.row(i) {
            line.push(',');
            match batch.kind() {
                LabelKind::Binary => line.push(if v >= batch.threshold() { '1' } else { '0' }),
                LabelKind::Confidence => line.push_str(&format!("{v:.6}")),
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Feature rows keyed by id, parallel to a labels file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub dim: usize,
    pub values: Vec<f64>,
}

pub fn save_features(table: &FeatureTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "id")?;
    for k in 0..table.dim {
        write!(w, ",f{k}")?;
    }
    writeln!(w)?;
    for (id, row) in table.ids.iter().zip(table.values.chunks_exact(table.dim.max(1))) {
        write!(w, "{id}")?;
        for &v in row {
            write!(w, ",{}", v as f32)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureTable> {
    let mut rdr = csv_reader(path)?;
    let dim = header_names(&mut rdr)?.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(r + 2);
        if rec.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", dim + 1, rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature `{field}`"),
                });
            }
            values.push(v);
        }
    }
    Ok(FeatureTable { ids, dim, values })
}

/// Features paired with labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub labels: LabelBatch,
}

impl Dataset {
    pub fn new(features: Vec<f64>, feature_dim: usize, labels: LabelBatch) -> Result<Self> {
        if feature_dim == 0 || features.len() != feature_dim * labels.n_rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of dimension {feature_dim}",
                features.len(),
                labels.n_rows()
            )));
        }
        Ok(Dataset {
            features,
            feature_dim,
            labels,
        })
    }

    /// Joins a feature table and a labels batch, matching rows by id.
    pub fn join(features: &FeatureTable, labels: LabelBatch) -> Result<Self> {
        let n = labels.n_rows();
        if features.ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: features.ids.len(),
            });
        }
        for (i, id) in features.ids.iter().enumerate() {
            if *id != labels.row_id(i) {
                return Err(Error::HeaderMismatch(format!(
                    "row {i}: feature id `{id}` vs label id `{}`",
                    labels.row_id(i)
                )));
            }
        }
        Dataset::new(features.values.clone(), features.dim, labels)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.n_rows()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.feature_dim);
        for &i in idx {
            features.extend_from_slice(self.feature_row(i));
        }
        Dataset {
            features,
            feature_dim: self.feature_dim,
            labels: self.labels.select_rows(idx),
        }
    }

    /// First `n_train` rows and the rest.
    pub fn split_at(&self, n_train: usize) -> (Dataset, Dataset) {
        let n = self.n_rows();
        let k = n_train.min(n);
        let head: Vec<usize> = (0..k).collect();
        let tail: Vec<usize> = (k..n).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Seeded random split with `n_test` held-out rows.
    pub fn shuffle_split<R: Rng + ?Sized>(&self, n_test: usize, rng: &mut R) -> (Dataset, Dataset) {
        let n = self.n_rows();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
        let n_test = n_test.min(n);
        let (test, train) = perm.split_at(n_test);
        (self.select(train), self.select(test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    /// Fraction of rows that get exactly one bit flipped after features are drawn.
    pub label_noise_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.label_noise_rate) {
            return Err(Error::Config(format!(
                "label_noise_rate {} must lie in [0, 1]",
                self.label_noise_rate
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub features: Vec<f64>,
    pub feature_dim: usize,
    /// Labels the features were generated from; all consistent.
    pub clean: LabelBatch,
    /// `clean` with label noise applied.
    pub labels: LabelBatch,
    /// Rows whose label was flipped, ascending.
    pub flipped_rows: Vec<usize>,
}

impl SyntheticData {
    pub fn dataset(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            feature_dim: self.feature_dim,
            labels: self.labels.clone(),
        }
    }

    pub fn clean_dataset(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            feature_dim: self.feature_dim,
            labels: self.clean.clone(),
        }
    }

    pub fn feature_table(&self) -> FeatureTable {
        FeatureTable {
            ids: (0..self.labels.n_rows()).map(|i| i.to_string()).collect(),
            dim: self.feature_dim,
            values: self.features.clone(),
        }
    }
}

/// Reads attribute annotations in the original CelebA layout: a row count,
/// a line of attribute names, then `image v1 v2 ...` with values in {-1, 1}.
///
/// With `partition` (the `image split` list), only images whose split equals
/// `split` are kept (0 train, 1 validation, 2 test). Row ids are image names.
pub fn load_celeba_annotations(attr_path: &Path, partition: Option<(&Path, u8)>) -> Result<LabelBatch> {
    let text = std::fs::read_to_string(attr_path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
    let (n0, count) = lines.next().ok_or_else(|| bad(0, "empty annotation file".into()))?;
    let count: usize = count
        .trim()
        .parse()
        .map_err(|_| bad(n0, format!("expected a row count, found `{}`", count.trim())))?;
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing attribute names".into()))?;
    let names: Vec<&str> = header.split_whitespace().collect();
    let schema = AttributeSchema::new(&names).map_err(|e| Error::HeaderMismatch(e.to_string()))?;
    let keep: Option<std::collections::HashSet<String>> = match partition {
        Some((path, split)) => {
            let text = std::fs::read_to_string(path)?;
            let mut set = std::collections::HashSet::new();
            for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let mut it = l.split_whitespace();
                let (Some(img), Some(s), None) = (it.next(), it.next(), it.next()) else {
                    return Err(bad(i, "expected `image split`".into()));
                };
                let s: u8 = s.parse().map_err(|_| bad(i, format!("bad split `{s}`")))?;
                if s == split {
                    set.insert(img.to_string());
                }
            }
            Some(set)
        }
        None => None,
    };
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = 0usize;
    for (i, l) in lines {
        seen += 1;
        let mut it = l.split_whitespace();
        let img = it.next().expect("non-empty line");
        let row: Vec<&str> = it.collect();
        if row.len() != names.len() {
            return Err(bad(i, format!("expected {} values, found {}", names.len(), row.len())));
        }
        if keep.as_ref().is_some_and(|k| !k.contains(img)) {
            continue;
        }
        for v in row {
            values.push(match v {
                "1" => 1.0,
                "-1" | "0" => 0.0,
                other => return Err(bad(i, format!("expected -1 or 1, found `{other}`"))),
            });
        }
        ids.push(img.to_string());
    }
    if seen != count {
        return Err(bad(n0, format!("header announces {count} rows, file has {seen}")));
    }
    LabelBatch::new(schema, values, LabelKind::Binary)?.with_row_ids(ids)
}

/// All consistent assignments of a rule set with at most
/// [`ENUMERATION_LIMIT`] attributes.
pub fn consistent_assignments(checker: &CompiledChecker) -> Result<Vec<Vec<bool>>> {
    let m = checker.n_attrs();
    if m > ENUMERATION_LIMIT {
        return Err(Error::Config(format!("{m} attributes exceed the enumeration limit")));
    }
    let mut out = Vec::new();
    for code in 0u64..(1u64 << m) {
        if checker.status_packed(&[code]).failed() {
            continue;
        }
        out.push((0..m).map(|j| code >> j & 1 == 1).collect());
    }
    Ok(out)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws consistent labels uniformly, then features `x = A y + eps` with
/// `A ~ N(0, 1/M)` fixed by the seed and `eps ~ N(0, noise_std^2)`, then flips
/// one uniformly chosen bit in `round(rate * n)` distinct random rows.
pub fn synth_generate(spec: &SyntheticSpec, rules: &RuleSet) -> Result<SyntheticData> {
    spec.validate()?;
    let schema = rules.schema().clone();
    let m = schema.len();
    if m == 0 {
        return Err(Error::Config("rule set declares no attributes".into()));
    }
    let checker = compile(rules);
    let n = spec.n_samples;

    let mut label_rng = stream(spec.seed, 1);
    let mut rows: Vec<Vec<bool>> = Vec::with_capacity(n);
    if m <= ENUMERATION_LIMIT {
        let pool = consistent_assignments(&checker)?;
        if pool.is_empty() {
            return Err(Error::UnsatisfiableRules);
        }
        for _ in 0..n {
            rows.push(pool[label_rng.gen_range(0..pool.len())].clone());
        }
    } else {
        for _ in 0..n {
            let mut found = None;
            for _ in 0..REJECTION_ATTEMPTS {
                let cand: Vec<bool> = (0..m).map(|_| label_rng.gen_bool(0.5)).collect();
                if checker.check(&cand)?.consistent() {
                    found = Some(cand);
                    break;
                }
            }
            rows.push(found.ok_or(Error::UnsatisfiableRules)?);
        }
    }
    let clean = LabelBatch::from_bool_rows(schema, &rows)?;

    let mut mix_rng = stream(spec.seed, 2);
    let a_dist = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("finite std");
    let a: Vec<f64> = (0..spec.feature_dim * m).map(|_| a_dist.sample(&mut mix_rng)).collect();
    let mut eps_rng = stream(spec.seed, 3);
    let eps = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let d = spec.feature_dim;
    let mut features = vec![0.0; n * d];
    for (i, x) in features.chunks_exact_mut(d).enumerate() {
        let y = clean.row(i);
        for (k, xk) in x.iter_mut().enumerate() {
            let ak = &a[k * m..(k + 1) * m];
            let signal: f64 = ak.iter().zip(y).map(|(w, v)| w * v).sum();
            let noise = if spec.noise_std > 0.0 {
                eps.sample(&mut eps_rng)
            } else {
                0.0
            };
            *xk = signal + noise;
        }
    }

    let mut flip_rng = stream(spec.seed, 4);
    let n_flip = ((spec.label_noise_rate * n as f64).round() as usize).min(n);
    let mut flipped_rows = sample(&mut flip_rng, n, n_flip).into_vec();
    flipped_rows.sort_unstable();
    let mut noisy = rows;
    for &r in &flipped_rows {
        let j = flip_rng.gen_range(0..m);
        noisy[r][j] = !noisy[r][j];
    }
    let labels = LabelBatch::from_bool_rows(clean.schema().clone(), &noisy)?;
    Ok(SyntheticData {
        features,
        feature_dim: d,
        clean,
        labels,
        flipped_rows,
    })
}
