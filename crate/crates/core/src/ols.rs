//! Ordinary least squares on precomputed spot features (cell composition,
//! nuclear morphology), evaluated under the same cross-validation protocol
//! as the stain-learning model.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::dataset::SpotDataset;
use crate::evaluation::cv::FoldPredictor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlsError {
    #[error("need at least {needed} rows for {features} features, got {rows}")]
    TooFewRows {
        rows: usize,
        features: usize,
        needed: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0} targets for {1} rows")]
    TargetMismatch(usize, usize),
    #[error("feature columns do not match the model: {0}")]
    ColumnMismatch(String),
    #[error("feature table: {0}")]
    Table(String),
    #[error("spot {0:?} has no feature row")]
    MissingSpot(String),
}

/// Spot × feature matrix read from `spot_id,<feature names…>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub spot_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(
        spot_ids: Vec<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, OlsError> {
        if spot_ids.len() != rows.len() {
            return Err(OlsError::Table(format!(
                "{} spot ids for {} rows",
                spot_ids.len(),
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = spot_ids.iter().find(|s| !seen.insert(*s)) {
            return Err(OlsError::Table(format!("duplicate spot id {dup:?}")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = feature_names.iter().find(|s| !seen.insert(*s)) {
            return Err(OlsError::Table(format!("duplicate feature {dup:?}")));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != feature_names.len()) {
            return Err(OlsError::Table(format!(
                "row {} has {} values, expected {}",
                i + 1,
                rows[i].len(),
                feature_names.len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OlsError::NonFinite("features"));
        }
        Ok(Self {
            spot_ids,
            feature_names,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self, OlsError> {
        let err = |m: String| OlsError::Table(format!("{}: {m}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| err(e.to_string()))?;
        let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        if header.get(0) != Some("spot_id") {
            return Err(err("first column must be spot_id".into()));
        }
        let feature_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut spot_ids = Vec::new();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| err(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(err(format!(
                    "line {line} has {} fields, expected {}",
                    record.len(),
                    header.len()
                )));
            }
            spot_ids.push(record[0].to_string());
            rows.push(
                record
                    .iter()
                    .skip(1)
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| err(format!("line {line}: bad number {v:?}")))
                    })
                    .collect::<Result<Vec<f64>, _>>()?,
            );
        }
        Self::new(spot_ids, feature_names, rows)
    }

    /// Row index of every dataset spot.
    pub fn align(&self, dataset: &SpotDataset) -> Result<Vec<usize>, OlsError> {
        let index: HashMap<&str, usize> = self
            .spot_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        dataset
            .spots
            .iter()
            .map(|s| {
                index
                    .get(s.spot_id.as_str())
                    .copied()
                    .ok_or_else(|| OlsError::MissingSpot(s.spot_id.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    pub gene: String,
    pub feature_names: Vec<String>,
    /// Intercept first, then one slope per feature.
    pub weights: Vec<f64>,
    /// Set when the design was rank-deficient and a ridge jitter was added.
    pub rank_deficient: bool,
}

impl OlsModel {
    pub fn intercept(&self) -> f64 {
        self.weights[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.weights[1..]
    }
}

/// Relative threshold on `|R_kk|` below which the design counts as rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;
/// Diagonal jitter, as a multiple of `trace(XᵀX)/F`.
const JITTER_SCALE: f64 = 1e-10;

/// Least squares fit with an intercept column, by Householder QR.
pub fn ols_fit(features: &FeatureTable, targets: &[f64], gene: &str) -> Result<OlsModel, OlsError> {
    let rows: Vec<&[f64]> = features.rows.iter().map(Vec::as_slice).collect();
    ols_fit_rows(&features.feature_names, &rows, targets, gene)
}

pub fn ols_fit_rows(
    feature_names: &[String],
    rows: &[&[f64]],
    targets: &[f64],
    gene: &str,
) -> Result<OlsModel, OlsError> {
    let f = feature_names.len();
    let p = f + 1;
    let n = rows.len();
    if targets.len() != n {
        return Err(OlsError::TargetMismatch(targets.len(), n));
    }
    if n < p {
        return Err(OlsError::TooFewRows {
            rows: n,
            features: f,
            needed: p,
        });
    }
    if rows.iter().any(|r| r.len() != f) {
        return Err(OlsError::ColumnMismatch("ragged feature rows".into()));
    }
    if rows.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite("features"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite("targets"));
    }

    // Column-major augmented design [1 | X].
    let mut design = vec![0.0; n * p];
    for (i, row) in rows.iter().enumerate() {
        design[i] = 1.0;
        for (k, v) in row.iter().enumerate() {
            design[(k + 1) * n + i] = *v;
        }
    }

    let (weights, full_rank) = match householder_solve(&design, n, p, targets) {
        Some(w) => (w, true),
        None => {
            let trace: f64 = design.iter().map(|v| v * v).sum();
            let lambda = JITTER_SCALE * trace / f.max(1) as f64;
            let root = lambda.sqrt();
            // [A; √λ I] with [b; 0] solves (AᵀA + λI) w = Aᵀb.
            let m = n + p;
            let mut stacked = vec![0.0; m * p];
            for k in 0..p {
                stacked[k * m..k * m + n].copy_from_slice(&design[k * n..(k + 1) * n]);
                stacked[k * m + n + k] = root;
            }
            let mut rhs = targets.to_vec();
            rhs.resize(m, 0.0);
            let w = householder_solve_unchecked(&mut stacked, m, p, &mut rhs);
            (w, false)
        }
    };
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite("weights"));
    }
    Ok(OlsModel {
        gene: gene.to_string(),
        feature_names: feature_names.to_vec(),
        weights,
        rank_deficient: !full_rank,
    })
}

/// Solves `min ‖A w − b‖` for column-major `A` (m×p). `None` if `R` has a
/// negligible diagonal entry.
fn householder_solve(a: &[f64], m: usize, p: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    householder_reduce(&mut a, m, p, &mut b);
    let scale = (0..p).map(|k| a[k * m + k].abs()).fold(0.0, f64::max);
    if (0..p).any(|k| !(a[k * m + k].abs() > RANK_TOLERANCE * scale)) {
        return None;
    }
    Some(back_substitute(&a, m, p, &b))
}

fn householder_solve_unchecked(a: &mut [f64], m: usize, p: usize, b: &mut [f64]) -> Vec<f64> {
    householder_reduce(a, m, p, b);
    back_substitute(a, m, p, b)
}

/// In place: `A ← R` (upper triangle) and `b ← Qᵀb`.
fn householder_reduce(a: &mut [f64], m: usize, p: usize, b: &mut [f64]) {
    for k in 0..p {
        let col = k * m;
        let norm = a[col + k..col + m]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[col + k] > 0.0 { -norm } else { norm };
        // v = x − αe₁, stored over the column
        a[col + k] -= alpha;
        let vnorm2: f64 = a[col + k..col + m].iter().map(|v| v * v).sum();
        if vnorm2 == 0.0 {
            a[col + k] = alpha;
            continue;
        }
        for j in k + 1..p {
            let cj = j * m;
            let dot: f64 = (k..m).map(|i| a[col + i] * a[cj + i]).sum();
            let s = 2.0 * dot / vnorm2;
            for i in k..m {
                a[cj + i] -= s * a[col + i];
            }
        }
        let dot: f64 = (k..m).map(|i| a[col + i] * b[i]).sum();
        let s = 2.0 * dot / vnorm2;
        for i in k..m {
            b[i] -= s * a[col + i];
        }
        a[col + k] = alpha;
    }
}

fn back_substitute(r: &[f64], m: usize, p: usize, qtb: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = qtb[k];
        for j in k + 1..p {
            s -= r[j * m + k] * w[j];
        }
        w[k] = s / r[k * m + k];
    }
    w
}

/// `intercept + features · slopes`, matching columns by name.
pub fn ols_predict(model: &OlsModel, features: &FeatureTable) -> Result<Vec<f64>, OlsError> {
    if features.feature_names.len() != model.feature_names.len() {
        return Err(OlsError::ColumnMismatch(format!(
            "model has {} features, table has {}",
            model.feature_names.len(),
            features.feature_names.len()
        )));
    }
    let order = model
        .feature_names
        .iter()
        .map(|name| {
            features
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| OlsError::ColumnMismatch(format!("missing feature {name:?}")))
        })
        .collect::<Result<Vec<usize>, _>>()?;
    Ok(features
        .rows
        .iter()
        .map(|row| predict_row(model, row, &order))
        .collect())
}

fn predict_row(model: &OlsModel, row: &[f64], order: &[usize]) -> f64 {
    model.intercept()
        + model
            .slopes()
            .iter()
            .zip(order)
            .map(|(w, &c)| w * row[c])
            .sum::<f64>()
}

/// Least-squares baseline refit on every fold.
pub struct OlsPredictor<'a> {
    pub dataset: &'a SpotDataset,
    pub table: &'a FeatureTable,
    /// Feature row of each dataset spot.
    pub rows: Vec<usize>,
}

impl<'a> OlsPredictor<'a> {
    pub fn new(dataset: &'a SpotDataset, table: &'a FeatureTable) -> Result<Self, OlsError> {
        Ok(Self {
            dataset,
            table,
            rows: table.align(dataset)?,
        })
    }
}

impl FoldPredictor for OlsPredictor<'_> {
    fn predict(&self, train: &[usize], test: &[usize], gene: &str) -> Result<Vec<f64>, String> {
        let gi = self
            .dataset
            .gene_index(gene)
            .ok_or_else(|| format!("unknown gene {gene}"))?;
        let rows: Vec<&[f64]> = train
            .iter()
            .map(|&i| self.table.rows[self.rows[i]].as_slice())
            .collect();
        let targets: Vec<f64> = train
            .iter()
            .map(|&i| self.dataset.spots[i].expression[gi])
            .collect();
        let model = ols_fit_rows(&self.table.feature_names, &rows, &targets, gene)
            .map_err(|e| e.to_string())?;
        let order: Vec<usize> = (0..self.table.feature_names.len()).collect();
        Ok(test
            .iter()
            .map(|&i| predict_row(&model, &self.table.rows[self.rows[i]], &order))
            .collect())
    }
}
