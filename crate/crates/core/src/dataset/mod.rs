//! Spot manifests, expression matrices, gene filtering and patch ingestion.

mod raster;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evaluation::stats::median;
use crate::stain::{ColorHistogram, StainError};

pub use raster::{extract_patch, write_patch_png16, Raster};
pub use synth::{synth_generate, SynthConfig, SyntheticData, DEFAULT_JITTER, HED_STAIN_VECTORS};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: duplicate spot id {spot_id:?} at line {line}")]
    DuplicateSpotId {
        path: PathBuf,
        spot_id: String,
        line: u64,
    },
    #[error("{path}: line {line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}: line {line} has {got} fields, header has {expected}")]
    RaggedRow {
        path: PathBuf,
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("{path}: no spot ids match the manifest")]
    NoOverlap { path: PathBuf },
    #[error("{path}: duplicate gene {gene:?}")]
    DuplicateGene { path: PathBuf, gene: String },
    #[error("negative expression value {0}")]
    NegativeExpression(f64),
    #[error("spot {spot_id:?}, gene {gene}: {reason}")]
    InvalidValue {
        spot_id: String,
        gene: String,
        reason: String,
    },
    #[error("pseudo-count must be positive, got {0}")]
    InvalidPseudoCount(f64),
    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("spot {spot_id:?}: no patch path and no raster for slide {slide_id:?}")]
    NoImageSource { spot_id: String, slide_id: String },
    #[error("unknown gene {0:?}")]
    UnknownGene(String),
    #[error("invalid synthetic configuration: {0}")]
    InvalidSynth(String),
    #[error(transparent)]
    Stain(#[from] StainError),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> Self {
        Self::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }
}

/// One spatial transcriptomics spot.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotRecord {
    pub patient_id: String,
    pub slide_id: String,
    pub spot_id: String,
    /// Spot center in source-image pixel coordinates.
    pub x: f64,
    pub y: f64,
    /// Pre-cropped patch file, relative to the manifest directory.
    pub patch_path: Option<String>,
    /// Color histogram of the spot's patch, once loaded.
    pub histogram: Option<ColorHistogram>,
    pub padded_fraction: f64,
    /// One value per entry of [`SpotDataset::gene_names`].
    pub expression: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpotDataset {
    pub spots: Vec<SpotRecord>,
    pub gene_names: Vec<String>,
    /// Distinct patient ids in order of first appearance.
    pub patients: Vec<String>,
}

impl SpotDataset {
    pub fn from_spots(spots: Vec<SpotRecord>, gene_names: Vec<String>) -> Self {
        let mut seen = HashSet::new();
        let patients = spots
            .iter()
            .filter(|s| seen.insert(s.patient_id.clone()))
            .map(|s| s.patient_id.clone())
            .collect();
        Self {
            spots,
            gene_names,
            patients,
        }
    }

    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.gene_names.iter().position(|g| g == gene)
    }

    /// Expression of one gene across all spots.
    pub fn gene_column(&self, gene_index: usize) -> Vec<f64> {
        self.spots
            .iter()
            .map(|s| s.expression[gene_index])
            .collect()
    }

    /// Keeps only `genes`, in the given order.
    pub fn select_genes(&self, genes: &[String]) -> Result<Self, DatasetError> {
        let idx = genes
            .iter()
            .map(|g| {
                self.gene_index(g)
                    .ok_or_else(|| DatasetError::UnknownGene(g.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = self.clone();
        for spot in &mut out.spots {
            spot.expression = idx.iter().map(|&i| spot.expression[i]).collect();
        }
        out.gene_names = genes.to_vec();
        Ok(out)
    }

    /// Applies [`log_transform`] to every expression value.
    pub fn log_transformed(&self, pseudo_count: f64) -> Result<Self, DatasetError> {
        let mut out = self.clone();
        for spot in &mut out.spots {
            for (v, gene) in spot.expression.iter_mut().zip(&self.gene_names) {
                *v = log_transform(*v, pseudo_count).map_err(|e| match e {
                    DatasetError::NegativeExpression(_) => DatasetError::InvalidValue {
                        spot_id: spot.spot_id.clone(),
                        gene: gene.clone(),
                        reason: e.to_string(),
                    },
                    other => other,
                })?;
            }
        }
        Ok(out)
    }

    /// Loads every spot's patch, either from its pre-cropped file (relative
    /// to `base_dir`) or by cropping a `side`×`side` window from the slide
    /// raster registered for its slide.
    pub fn attach_patches(
        &mut self,
        base_dir: &Path,
        slides: &HashMap<String, PathBuf>,
        side: usize,
    ) -> Result<(), DatasetError> {
        let mut rasters: HashMap<String, Raster> = HashMap::new();
        for spot in &mut self.spots {
            let patch = match &spot.patch_path {
                Some(rel) => Raster::open(&base_dir.join(rel))?.into_patch()?,
                None => {
                    let path =
                        slides
                            .get(&spot.slide_id)
                            .ok_or_else(|| DatasetError::NoImageSource {
                                spot_id: spot.spot_id.clone(),
                                slide_id: spot.slide_id.clone(),
                            })?;
                    if !rasters.contains_key(&spot.slide_id) {
                        rasters.insert(spot.slide_id.clone(), Raster::open(path)?);
                    }
                    extract_patch(&rasters[&spot.slide_id], (spot.x, spot.y), side)?
                }
            };
            spot.padded_fraction = patch.padded_fraction();
            spot.histogram = Some(ColorHistogram::from_patch(&patch));
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<File, DatasetError> {
    File::open(path).map_err(|e| DatasetError::io(path, e))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(path: &Path, e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::io(path, io),
        other => DatasetError::malformed(path, line, format!("{other:?}")),
    }
}

const MANIFEST_COLUMNS: [&str; 5] = ["patient_id", "slide_id", "spot_id", "x", "y"];

/// Reads a spot manifest with header
/// `patient_id,slide_id,spot_id,x,y,patch_path`. Expression and patches are
/// attached later.
pub fn load_manifest(path: &Path) -> Result<SpotDataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| header.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = column(name).ok_or_else(|| DatasetError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
    }
    let patch_col = column("patch_path");

    let mut spots = Vec::new();
    let mut ids = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = line_of(&record);
        if record.len() != header.len() {
            return Err(DatasetError::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: header.len(),
                got: record.len(),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let coord = |i: usize, name: &str| -> Result<f64, DatasetError> {
            let v: f64 = field(i).parse().map_err(|_| {
                DatasetError::malformed(
                    path,
                    line,
                    format!("{name}={:?} is not a number", field(i)),
                )
            })?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(DatasetError::malformed(
                    path,
                    line,
                    format!("{name}={v} must be a non-negative number"),
                ));
            }
            Ok(v)
        };
        let spot_id = field(idx[2]).to_string();
        if spot_id.is_empty() || field(idx[0]).is_empty() {
            return Err(DatasetError::malformed(
                path,
                line,
                "empty spot or patient id",
            ));
        }
        if !ids.insert(spot_id.clone()) {
            return Err(DatasetError::DuplicateSpotId {
                path: path.to_path_buf(),
                spot_id,
                line,
            });
        }
        spots.push(SpotRecord {
            patient_id: field(idx[0]).to_string(),
            slide_id: field(idx[1]).to_string(),
            spot_id,
            x: coord(idx[3], "x")?,
            y: coord(idx[4], "y")?,
            patch_path: patch_col
                .map(field)
                .filter(|p| !p.is_empty())
                .map(str::to_string),
            histogram: None,
            padded_fraction: 0.0,
            expression: Vec::new(),
        });
    }
    Ok(SpotDataset::from_spots(spots, Vec::new()))
}

/// What [`load_expression`] had to drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExpressionSummary {
    /// Manifest spots without a matrix row.
    pub dropped_spots: usize,
    /// Matrix rows without a manifest spot.
    pub unmatched_rows: usize,
}

fn sniff_delimiter(path: &Path) -> Result<u8, DatasetError> {
    let mut first = String::new();
    BufReader::new(open(path)?)
        .read_line(&mut first)
        .map_err(|e| DatasetError::io(path, e))?;
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

/// Attaches expression vectors from a spot × gene matrix (tab- or
/// comma-separated, first column `spot_id`). Manifest spots missing from the
/// matrix are dropped.
pub fn load_expression(
    path: &Path,
    dataset: &SpotDataset,
) -> Result<(SpotDataset, ExpressionSummary), DatasetError> {
    let delimiter = sniff_delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("spot_id") {
        return Err(DatasetError::MissingColumn {
            path: path.to_path_buf(),
            column: "spot_id".into(),
        });
    }
    let gene_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut genes_seen = HashSet::new();
    for g in &gene_names {
        if !genes_seen.insert(g) {
            return Err(DatasetError::DuplicateGene {
                path: path.to_path_buf(),
                gene: g.clone(),
            });
        }
    }

    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = line_of(&record);
        if record.len() != header.len() {
            return Err(DatasetError::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: header.len(),
                got: record.len(),
            });
        }
        let spot_id = record.get(0).unwrap_or_default().to_string();
        let values = record
            .iter()
            .skip(1)
            .zip(&gene_names)
            .map(|(v, gene)| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(DatasetError::malformed(
                    path,
                    line,
                    format!("gene {gene}: {v:?} is not a finite number"),
                )),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if rows.insert(spot_id.clone(), values).is_some() {
            return Err(DatasetError::DuplicateSpotId {
                path: path.to_path_buf(),
                spot_id,
                line,
            });
        }
    }

    let total_rows = rows.len();
    let mut spots = Vec::with_capacity(dataset.spots.len());
    for spot in &dataset.spots {
        if let Some(values) = rows.remove(&spot.spot_id) {
            let mut s = spot.clone();
            s.expression = values;
            spots.push(s);
        }
    }
    if spots.is_empty() {
        return Err(DatasetError::NoOverlap {
            path: path.to_path_buf(),
        });
    }
    let summary = ExpressionSummary {
        dropped_spots: dataset.spots.len() - spots.len(),
        unmatched_rows: total_rows - spots.len(),
    };
    Ok((SpotDataset::from_spots(spots, gene_names), summary))
}

/// Genes ranked by median expression across all spots (descending, ties by
/// ascending name); the first `min(n, G)` are returned.
pub fn select_top_genes(dataset: &SpotDataset, n: usize) -> Vec<String> {
    let mut ranked: Vec<(f64, &String)> = dataset
        .gene_names
        .iter()
        .enumerate()
        .map(|(i, g)| {
            (
                median(&dataset.gene_column(i)).unwrap_or(f64::NEG_INFINITY),
                g,
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ranked.into_iter().take(n).map(|(_, g)| g.clone()).collect()
}

/// `ln(value + pseudo_count)`.
pub fn log_transform(value: f64, pseudo_count: f64) -> Result<f64, DatasetError> {
    if !(pseudo_count > 0.0) {
        return Err(DatasetError::InvalidPseudoCount(pseudo_count));
    }
    if !(value >= 0.0) {
        return Err(DatasetError::NegativeExpression(value));
    }
    Ok((value + pseudo_count).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    const HEADER: &str = "patient_id,slide_id,spot_id,x,y,patch_path\n";

    #[test]
    fn manifest_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.csv",
            &format!("{HEADER}A,A1,s1,10,20,p/s1.png\nB,B1,s2,30.5,0,\n"),
        );
        let d = load_manifest(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.patients, vec!["A", "B"]);
        assert_eq!(d.spots[0].patch_path.as_deref(), Some("p/s1.png"));
        assert_eq!(d.spots[1].patch_path, None);
        assert_eq!((d.spots[1].x, d.spots[1].y), (30.5, 0.0));
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(
            dir.path(),
            "d.csv",
            &format!("{HEADER}A,A1,s1,1,1,\nA,A1,s1,2,2,\n"),
        );
        assert!(matches!(
            load_manifest(&dup),
            Err(DatasetError::DuplicateSpotId { line: 3, .. })
        ));
        let missing = write(
            dir.path(),
            "m.csv",
            "slide_id,spot_id,x,y,patch_path\nA1,s1,1,1,\n",
        );
        match load_manifest(&missing) {
            Err(DatasetError::MissingColumn { column, .. }) => assert_eq!(column, "patient_id"),
            other => panic!("{other:?}"),
        }
        let bad = write(
            dir.path(),
            "b.csv",
            &format!("{HEADER}A,A1,s1,1,1,\nA,A1,s2,x,1,\n"),
        );
        assert!(matches!(
            load_manifest(&bad),
            Err(DatasetError::MalformedRow { line: 3, .. })
        ));
        let neg = write(dir.path(), "n.csv", &format!("{HEADER}A,A1,s1,-1,1,\n"));
        assert!(matches!(
            load_manifest(&neg),
            Err(DatasetError::MalformedRow { line: 2, .. })
        ));
        let short = write(dir.path(), "r.csv", &format!("{HEADER}A,A1,s1,1\n"));
        assert!(matches!(
            load_manifest(&short),
            Err(DatasetError::RaggedRow { .. })
        ));
    }

    fn manifest3(dir: &Path) -> SpotDataset {
        load_manifest(&write(
            dir,
            "m.csv",
            &format!("{HEADER}A,A1,s1,1,1,\nA,A1,s2,2,2,\nB,B1,s3,3,3,\n"),
        ))
        .unwrap()
    }

    #[test]
    fn expression_attach() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest3(dir.path());
        let e = write(
            dir.path(),
            "e.tsv",
            "spot_id\tGNAS\tFASN\ns3\t5\t6\ns1\t1\t2\ns2\t3\t4\nzz\t0\t0\n",
        );
        let (d, summary) = load_expression(&e, &m).unwrap();
        assert_eq!(d.gene_names, vec!["GNAS", "FASN"]);
        assert_eq!(d.spots[0].expression, vec![1.0, 2.0]);
        assert_eq!(d.spots[1].expression, vec![3.0, 4.0]);
        assert_eq!(d.spots[2].expression, vec![5.0, 6.0]);
        assert_eq!(
            summary,
            ExpressionSummary {
                dropped_spots: 0,
                unmatched_rows: 1
            }
        );
        let (again, _) = load_expression(&e, &m).unwrap();
        assert_eq!(again, d);

        let partial = write(dir.path(), "p.csv", "spot_id,GNAS\ns2,1.5\n");
        let (d, summary) = load_expression(&partial, &m).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.patients, vec!["A"]);
        assert_eq!(summary.dropped_spots, 2);
    }

    #[test]
    fn expression_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest3(dir.path());
        let none = write(dir.path(), "n.csv", "spot_id,GNAS\nq1,1\n");
        assert!(matches!(
            load_expression(&none, &m),
            Err(DatasetError::NoOverlap { .. })
        ));
        let ragged = write(dir.path(), "r.csv", "spot_id,GNAS,FASN\ns1,1\n");
        assert!(matches!(
            load_expression(&ragged, &m),
            Err(DatasetError::RaggedRow {
                line: 2,
                expected: 3,
                got: 2,
                ..
            })
        ));
        let nan = write(dir.path(), "x.csv", "spot_id,GNAS\ns1,abc\n");
        assert!(matches!(
            load_expression(&nan, &m),
            Err(DatasetError::MalformedRow { .. })
        ));
    }

    fn dataset_with(genes: &[&str], columns: &[&[f64]]) -> SpotDataset {
        let n = columns[0].len();
        let spots = (0..n)
            .map(|i| SpotRecord {
                patient_id: "P".into(),
                slide_id: "S".into(),
                spot_id: format!("s{i}"),
                x: 0.0,
                y: 0.0,
                patch_path: None,
                histogram: None,
                padded_fraction: 0.0,
                expression: columns.iter().map(|c| c[i]).collect(),
            })
            .collect();
        SpotDataset::from_spots(spots, genes.iter().map(|g| g.to_string()).collect())
    }

    #[test]
    fn top_genes_by_median() {
        // medians: g1 = 1, g2 = 5, g3 = 2
        let d = dataset_with(
            &["g1", "g2", "g3"],
            &[&[0.0, 1.0, 9.0], &[5.0, 4.0, 6.0], &[2.0, 2.0, 3.0]],
        );
        assert_eq!(select_top_genes(&d, 2), vec!["g2", "g3"]);
        assert_eq!(select_top_genes(&d, 10), vec!["g2", "g3", "g1"]);

        let tie = dataset_with(
            &["zeta", "alpha", "mid"],
            &[&[1.0, 2.0], &[2.0, 1.0], &[0.0, 0.5]],
        );
        assert_eq!(select_top_genes(&tie, 3), vec!["alpha", "zeta", "mid"]);
    }

    #[test]
    fn log_transform_examples() {
        assert_eq!(log_transform(0.0, 1.0).unwrap(), 0.0);
        assert!((log_transform(std::f64::consts::E - 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(log_transform(1.0, 1.0).unwrap() < log_transform(1.5, 1.0).unwrap());
        assert!(matches!(
            log_transform(-0.1, 1.0),
            Err(DatasetError::NegativeExpression(_))
        ));
        assert!(log_transform(1.0, 0.0).is_err());
    }

    #[test]
    fn gene_selection_and_transform() {
        let d = dataset_with(&["a", "b"], &[&[0.0, 3.0], &[1.0, 2.0]]);
        let s = d.select_genes(&["b".to_string()]).unwrap();
        assert_eq!(s.spots[1].expression, vec![2.0]);
        assert!(d.select_genes(&["nope".to_string()]).is_err());
        let t = d.log_transformed(1.0).unwrap();
        assert!((t.spots[1].expression[0] - 4f64.ln()).abs() < 1e-15);
    }
}
