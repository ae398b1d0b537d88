//! Column schemas, CSV ingestion, min-max scaling, train/test splitting and
//! the built-in benchmark dataset.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::{hex_digest, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default)]
    pub is_label: bool,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            min: None,
            max: None,
            is_label: false,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Binary,
            min: None,
            max: None,
            is_label: false,
        }
    }

    pub fn label(name: impl Into<String>) -> Self {
        Self {
            is_label: true,
            ..Self::binary(name)
        }
    }
}

/// Ordered column descriptors. Every record matrix follows this column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        let mut labels = 0;
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            if col.is_label {
                labels += 1;
                if col.kind != ColumnKind::Binary {
                    return Err(Error::Schema(format!(
                        "label column `{}` must be binary",
                        col.name
                    )));
                }
            }
            if let (Some(lo), Some(hi)) = (col.min, col.max) {
                if !(lo < hi) {
                    return Err(Error::Schema(format!(
                        "column `{}` has min {lo} not below max {hi}",
                        col.name
                    )));
                }
            }
        }
        if labels > 1 {
            return Err(Error::Schema(format!(
                "{labels} label columns declared, at most one allowed"
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Continuous)
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Binary)
    }

    fn indices_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn label_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.is_label)
    }

    pub fn has_stats(&self) -> bool {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Continuous)
            .all(|c| c.min.is_some() && c.max.is_some())
    }

    /// Hash of the column layout (names, kinds, label flag); ignores scaling stats.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.name.as_bytes());
            h.update([0u8]);
            h.update([match c.kind {
                ColumnKind::Continuous => b'c',
                ColumnKind::Binary => b'b',
            }]);
            h.update([c.is_label as u8]);
        }
        hex_digest(h)
    }

    fn stats(&self, col: usize) -> Result<(f64, f64)> {
        let c = &self.columns[col];
        match (c.min, c.max) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err(Error::Schema(format!(
                "column `{}` has no normalization stats; fit the normalizer first",
                c.name
            ))),
        }
    }
}

/// Records laid out one row per record, one column per schema column.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMatrix {
    pub schema: FeatureSchema,
    pub values: Tensor2,
    pub normalized: bool,
}

impl RecordMatrix {
    pub fn new(schema: FeatureSchema, values: Tensor2, normalized: bool) -> Result<Self> {
        if values.cols() != schema.width() && !(values.rows() == 0 && values.cols() == 0) {
            return Err(Error::shape(
                "record matrix",
                format!(
                    "{} columns for a {}-column schema",
                    values.cols(),
                    schema.width()
                ),
            ));
        }
        let values = if values.cols() == 0 {
            Tensor2::zeros(0, schema.width())
        } else {
            values
        };
        let m = Self {
            schema,
            values,
            normalized,
        };
        m.check_domain()?;
        Ok(m)
    }

    fn check_domain(&self) -> Result<()> {
        for r in 0..self.values.rows() {
            for (c, col) in self.schema.columns.iter().enumerate() {
                let v = self.values.get(r, c);
                let ok = match col.kind {
                    ColumnKind::Binary => v == 0.0 || v == 1.0,
                    ColumnKind::Continuous if self.normalized => (0.0..=1.0).contains(&v),
                    ColumnKind::Continuous => v.is_finite(),
                };
                if !ok {
                    return Err(Error::Data(format!(
                        "row {r}, column `{}`: value {v} outside the column domain",
                        col.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            values: self.values.select_rows(idx),
            normalized: self.normalized,
        }
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.col_values(c)
    }

    /// Concatenates rows of two matrices over the same layout.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.schema.fingerprint() != other.schema.fingerprint() {
            return Err(Error::Schema("cannot stack matrices with different schemas".into()));
        }
        if self.normalized != other.normalized {
            return Err(Error::Data("cannot stack raw and normalized matrices".into()));
        }
        Ok(Self {
            schema: self.schema.clone(),
            values: self.values.vstack(&other.values)?,
            normalized: self.normalized,
        })
    }

    /// Writes a header row plus one line per record; binaries print as `0`/`1`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.names())?;
        let mut fields = Vec::with_capacity(self.width());
        for r in 0..self.rows() {
            fields.clear();
            for (c, col) in self.schema.columns.iter().enumerate() {
                let v = self.values.get(r, c);
                fields.push(match col.kind {
                    ColumnKind::Binary => format!("{}", v as i64),
                    ColumnKind::Continuous => format!("{v}"),
                });
            }
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train/test partition of one source matrix.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: RecordMatrix,
    pub test: RecordMatrix,
    pub seed: u64,
    pub fraction: f64,
}

pub fn load_csv(path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<RecordMatrix> {
    let schema = FeatureSchema::load(schema_path)?;
    load_csv_with_schema(path, &schema)
}

/// Reads a CSV whose header names exactly the schema's columns (any order).
pub fn load_csv_with_schema(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<RecordMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<RecordMatrix> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut source_col = Vec::with_capacity(schema.width());
    for col in &schema.columns {
        let pos = header.iter().position(|h| h == &col.name).ok_or_else(|| {
            Error::Schema(format!("schema column `{}` missing from CSV header", col.name))
        })?;
        source_col.push(pos);
    }
    if let Some(extra) = header
        .iter()
        .find(|h| !schema.columns.iter().any(|c| &c.name == *h))
    {
        return Err(Error::Schema(format!(
            "CSV column `{extra}` is not declared in the schema"
        )));
    }
    if header.len() != schema.width() {
        return Err(Error::Schema("CSV header repeats a column name".into()));
    }

    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (col, &src) in schema.columns.iter().zip(&source_col) {
            let cell = rec.get(src).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Data(format!(
                    "row {r}, column `{}`: missing value",
                    col.name
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "row {r}, column `{}`: `{cell}` is not a number",
                    col.name
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {r}, column `{}`: non-finite value",
                    col.name
                )));
            }
            if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!(
                    "row {r}, column `{}`: binary value {v} is not 0 or 1",
                    col.name
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    RecordMatrix::new(
        schema.clone(),
        Tensor2::from_vec(rows, schema.width(), data)?,
        false,
    )
}

/// Computes per-continuous-column min/max from `train` and returns the schema with stats filled.
pub fn fit_normalizer(train: &RecordMatrix) -> Result<FeatureSchema> {
    if train.normalized {
        return Err(Error::Data("normalizer must be fit on raw data".into()));
    }
    if train.rows() == 0 {
        return Err(Error::Data("cannot fit normalizer on an empty matrix".into()));
    }
    let mut schema = train.schema.clone();
    for (c, col) in schema.columns.iter_mut().enumerate() {
        if col.kind != ColumnKind::Continuous {
            col.min = None;
            col.max = None;
            continue;
        }
        let vals = train.values.col_values(c);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi) {
            return Err(Error::Data(format!(
                "continuous column `{}` is constant ({lo}); zero range cannot be normalized",
                col.name
            )));
        }
        col.min = Some(lo);
        col.max = Some(hi);
    }
    Ok(schema)
}

/// Scales continuous columns to [0, 1] with the schema's stats, saturating out-of-range values.
pub fn normalize(m: &RecordMatrix, schema: &FeatureSchema) -> Result<RecordMatrix> {
    if m.normalized {
        return Err(Error::Data("matrix is already normalized".into()));
    }
    check_layout(m, schema)?;
    let mut values = m.values.clone();
    for c in schema.continuous_indices() {
        let (lo, hi) = schema.stats(c)?;
        let range = hi - lo;
        for r in 0..values.rows() {
            let v = (values.get(r, c) - lo) / range;
            values.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    RecordMatrix::new(schema.clone(), values, true)
}

/// Maps normalized records back to original units.
pub fn denormalize(m: &RecordMatrix, schema: &FeatureSchema) -> Result<RecordMatrix> {
    if !m.normalized {
        return Err(Error::Data("matrix is not normalized".into()));
    }
    check_layout(m, schema)?;
    let mut values = m.values.clone();
    for c in schema.continuous_indices() {
        let (lo, hi) = schema.stats(c)?;
        for r in 0..values.rows() {
            values.set(r, c, lo + values.get(r, c) * (hi - lo));
        }
    }
    for c in schema.binary_indices() {
        for r in 0..values.rows() {
            values.set(r, c, values.get(r, c).round());
        }
    }
    RecordMatrix::new(schema.clone(), values, false)
}

fn check_layout(m: &RecordMatrix, schema: &FeatureSchema) -> Result<()> {
    if m.schema.fingerprint() != schema.fingerprint() {
        return Err(Error::Schema(
            "matrix layout does not match the normalization schema".into(),
        ));
    }
    Ok(())
}

/// Seeded shuffle, then the first `floor(fraction * n)` rows go to train.
pub fn split(m: &RecordMatrix, fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = m.rows();
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {n} rows leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(SplitPair {
        train: m.select_rows(&idx[..n_train]),
        test: m.select_rows(&idx[n_train..]),
        seed,
        fraction,
    })
}

/// Probability that a benchmark record belongs to component 1 (label = 1).
pub const BENCHMARK_MIXTURE_WEIGHT: f64 = 0.4;

const BENCH_CONT: [(&str, f64, f64); 8] = [
    ("sbp", 120.0, 15.0),
    ("dbp", 80.0, 10.0),
    ("heart_rate", 70.0, 12.0),
    ("hba1c", 5.5, 1.0),
    ("bmi", 27.0, 5.0),
    ("creatinine", 1.0, 0.2),
    ("cholesterol", 200.0, 40.0),
    ("age", 55.0, 12.0),
];
/// Component-1 mean shift per continuous column, in units of that column's scale.
const BENCH_SHIFT: [f64; 8] = [1.0, 0.5, -0.8, 1.2, 0.6, 0.0, -0.4, 0.3];
const BENCH_BIN: [(&str, f64, f64); 7] = [
    ("cond_a", 0.10, 0.35),
    ("cond_b", 0.30, 0.20),
    ("cond_c", 0.50, 0.55),
    ("cond_d", 0.20, 0.50),
    ("cond_e", 0.60, 0.30),
    ("cond_f", 0.15, 0.15),
    ("cond_g", 0.40, 0.65),
];

/// Benchmark schema: 8 continuous columns, 7 binary conditions and a binary `label`.
pub fn benchmark_schema() -> FeatureSchema {
    let mut cols: Vec<ColumnSpec> = BENCH_CONT
        .iter()
        .map(|(n, _, _)| ColumnSpec::continuous(*n))
        .collect();
    cols.extend(BENCH_BIN.iter().map(|(n, _, _)| ColumnSpec::binary(*n)));
    cols.push(ColumnSpec::label("label"));
    FeatureSchema { columns: cols }
}

fn lower_cholesky(corr: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut l = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (corr[i][i] - s).sqrt();
            } else {
                l[i][j] = (corr[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Two-component Gaussian mixture with component-dependent binary conditions.
///
/// Per record, drawn in this order from a ChaCha8 stream seeded with `seed`:
/// 1. component `c ~ Bernoulli(0.4)`; the `label` column is `c`;
/// 2. eight standard normals `e`, mapped to `mean_c + scale * (L_c e)` where
///    `L_c` is the Cholesky factor of the component correlation: AR(1) with
///    coefficient 0.5 for component 0, equicorrelation 0.3 for component 1.
///    Component 1 means are shifted by `BENCH_SHIFT` scale units;
/// 3. seven binary conditions with component-specific rates (`BENCH_BIN`).
pub fn make_benchmark_dataset(n: usize, seed: u64) -> Result<(RecordMatrix, FeatureSchema)> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "benchmark dataset needs at least 100 rows, got {n}"
        )));
    }
    let mut ar1 = [[0.0; 8]; 8];
    let mut equi = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            ar1[i][j] = 0.5f64.powi((i as i32 - j as i32).abs());
            equi[i][j] = if i == j { 1.0 } else { 0.3 };
        }
    }
    let chol = [lower_cholesky(&ar1), lower_cholesky(&equi)];

    let schema = benchmark_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * schema.width());
    for _ in 0..n {
        let comp = usize::from(rng.random::<f64>() < BENCHMARK_MIXTURE_WEIGHT);
        let e: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        for (i, (_, mean, scale)) in BENCH_CONT.iter().enumerate() {
            let corr: f64 = (0..=i).map(|k| chol[comp][i][k] * e[k]).sum();
            let shift = if comp == 1 { BENCH_SHIFT[i] } else { 0.0 };
            data.push(mean + scale * (shift + corr));
        }
        for (_, p0, p1) in BENCH_BIN {
            let p = if comp == 1 { p1 } else { p0 };
            data.push(f64::from(u8::from(rng.random::<f64>() < p)));
        }
        data.push(comp as f64);
    }
    let m = RecordMatrix::new(
        schema.clone(),
        Tensor2::from_vec(n, schema.width(), data)?,
        false,
    )?;
    for c in schema.continuous_indices() {
        let vals = m.column(c);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi) {
            return Err(Error::Data(format!(
                "benchmark column `{}` came out constant",
                schema.columns[c].name
            )));
        }
    }
    Ok((m, schema))
}
