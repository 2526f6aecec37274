//! Leave-one-patient-out cross-validation.

use rayon::prelude::*;
use thiserror::Error;

use super::stats::{combine_correlations, combine_pvalues, pearson, pearson_pvalue, StatsError};
use crate::dataset::SpotDataset;
use crate::model::Prepared;
use crate::training::{train_gene, with_workers, EncodedDataset, TrainConfig, TrainError};

/// Genes whose median correlation exceeds this are counted as well predicted.
pub const R_THRESHOLD: f64 = 0.5;
/// Combined p-values below this are counted as significant.
pub const P_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvError {
    #[error("leave-one-patient-out needs at least 2 patients, found {0}")]
    SinglePatient(usize),
    #[error("gene list is empty")]
    EmptyGeneList,
    #[error("unknown gene {gene:?}; known genes: {known}")]
    UnknownGene { gene: String, known: String },
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub held_out_patient: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per patient, in order of first appearance.
pub fn lopo_split(dataset: &SpotDataset) -> Result<Vec<Fold>, CvError> {
    if dataset.patients.len() < 2 {
        return Err(CvError::SinglePatient(dataset.patients.len()));
    }
    Ok(dataset
        .patients
        .iter()
        .map(|patient| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..dataset.len()).partition(|&i| &dataset.spots[i].patient_id == patient);
            Fold {
                held_out_patient: patient.clone(),
                train,
                test,
            }
        })
        .collect())
}

/// Outcome of one gene on one held-out patient.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneFoldResult {
    pub gene: String,
    /// `(r, p)` when the fold could be evaluated.
    pub stats: Option<(f64, f64)>,
    pub n: usize,
    pub skipped_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub held_out_patient: String,
    /// Ordered like the evaluated gene list.
    pub per_gene: Vec<GeneFoldResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneSummary {
    pub gene: String,
    /// `None` when no fold was valid.
    pub median_r: Option<f64>,
    pub combined_p: Option<f64>,
    pub n_folds: usize,
    pub n_skipped: usize,
}

impl GeneSummary {
    pub fn is_evaluable(&self) -> bool {
        self.median_r.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub genes: Vec<GeneSummary>,
    pub count_r_gt_half: usize,
    pub count_p_significant: usize,
    pub folds: Vec<FoldResult>,
}

impl EvalReport {
    /// Aggregates per-fold results gene by gene.
    pub fn from_folds(gene_list: &[String], folds: Vec<FoldResult>) -> Self {
        let genes: Vec<GeneSummary> = gene_list
            .iter()
            .enumerate()
            .map(|(g, gene)| {
                let valid: Vec<(f64, f64)> =
                    folds.iter().filter_map(|f| f.per_gene[g].stats).collect();
                let rs: Vec<f64> = valid.iter().map(|s| s.0).collect();
                let ps: Vec<f64> = valid.iter().map(|s| s.1).collect();
                GeneSummary {
                    gene: gene.clone(),
                    median_r: combine_correlations(&rs).ok(),
                    combined_p: combine_pvalues(&ps).ok(),
                    n_folds: valid.len(),
                    n_skipped: folds.len() - valid.len(),
                }
            })
            .collect();
        let count_r_gt_half = genes
            .iter()
            .filter(|g| g.median_r.is_some_and(|r| r > R_THRESHOLD))
            .count();
        let count_p_significant = genes
            .iter()
            .filter(|g| g.combined_p.is_some_and(|p| p < P_THRESHOLD))
            .count();
        Self {
            genes,
            count_r_gt_half,
            count_p_significant,
            folds,
        }
    }

    pub fn unevaluable(&self) -> Vec<&str> {
        self.genes
            .iter()
            .filter(|g| !g.is_evaluable())
            .map(|g| g.gene.as_str())
            .collect()
    }
}

/// Anything that can fit on training spots and predict held-out spots.
pub trait FoldPredictor: Sync {
    fn predict(&self, train: &[usize], test: &[usize], gene: &str) -> Result<Vec<f64>, String>;
}

/// Held-out predictions for every evaluated gene, indexed by spot
/// (`NaN` where a fold failed).
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: EvalReport,
    pub predictions: Vec<Vec<f64>>,
}

fn check_genes(dataset: &SpotDataset, gene_list: &[String]) -> Result<(), CvError> {
    if gene_list.is_empty() {
        return Err(CvError::EmptyGeneList);
    }
    for gene in gene_list {
        if dataset.gene_index(gene).is_none() {
            return Err(CvError::UnknownGene {
                gene: gene.clone(),
                known: dataset.gene_names.join(", "),
            });
        }
    }
    Ok(())
}

fn score(gene: &str, predicted: &[f64], truth: &[f64]) -> GeneFoldResult {
    let n = truth.len();
    let stats = pearson(predicted, truth).and_then(|r| Ok((r, pearson_pvalue(r, n)?)));
    match stats {
        Ok(s) => GeneFoldResult {
            gene: gene.to_string(),
            stats: Some(s),
            n,
            skipped_reason: None,
        },
        Err(e) => GeneFoldResult {
            gene: gene.to_string(),
            stats: None,
            n,
            skipped_reason: Some(match e {
                StatsError::ZeroVariance => "zero variance".to_string(),
                StatsError::TooFew(k) => format!("too few spots ({k})"),
                other => other.to_string(),
            }),
        },
    }
}

/// Runs every (fold, gene) pair through `predictor` on `workers` threads and
/// scores the held-out predictions. Results do not depend on `workers`.
pub fn cross_validate(
    dataset: &SpotDataset,
    gene_list: &[String],
    predictor: &impl FoldPredictor,
    workers: usize,
) -> Result<CvOutcome, CvError> {
    check_genes(dataset, gene_list)?;
    let folds = lopo_split(dataset)?;
    let jobs: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..gene_list.len()).map(move |g| (f, g)))
        .collect();

    let results: Vec<(GeneFoldResult, Option<Vec<f64>>)> = with_workers(workers, || {
        jobs.par_iter()
            .map(|&(f, g)| {
                let fold = &folds[f];
                let gene = &gene_list[g];
                let gi = dataset.gene_index(gene).expect("checked");
                let truth: Vec<f64> = fold
                    .test
                    .iter()
                    .map(|&i| dataset.spots[i].expression[gi])
                    .collect();
                match predictor.predict(&fold.train, &fold.test, gene) {
                    Ok(pred) => (score(gene, &pred, &truth), Some(pred)),
                    Err(e) => (
                        GeneFoldResult {
                            gene: gene.clone(),
                            stats: None,
                            n: truth.len(),
                            skipped_reason: Some(format!("fit failed: {e}")),
                        },
                        None,
                    ),
                }
            })
            .collect()
    });

    let mut predictions = vec![vec![f64::NAN; dataset.len()]; gene_list.len()];
    let mut per_fold: Vec<Vec<GeneFoldResult>> = vec![Vec::new(); folds.len()];
    for (&(f, g), (result, pred)) in jobs.iter().zip(results) {
        if let Some(pred) = pred {
            for (&spot, v) in folds[f].test.iter().zip(pred) {
                predictions[g][spot] = v;
            }
        }
        per_fold[f].push(result);
    }
    let fold_results = folds
        .iter()
        .zip(per_fold)
        .map(|(fold, per_gene)| FoldResult {
            held_out_patient: fold.held_out_patient.clone(),
            per_gene,
        })
        .collect();
    Ok(CvOutcome {
        report: EvalReport::from_folds(gene_list, fold_results),
        predictions,
    })
}

/// Stain-learning model trained from scratch on each fold.
pub struct NslPredictor<'a> {
    pub encoded: EncodedDataset<'a>,
    pub config: TrainConfig,
}

impl FoldPredictor for NslPredictor<'_> {
    fn predict(&self, train: &[usize], test: &[usize], gene: &str) -> Result<Vec<f64>, String> {
        let gi = self
            .encoded
            .dataset
            .gene_index(gene)
            .ok_or_else(|| format!("unknown gene {gene}"))?;
        let model = train_gene(&self.encoded.samples(train, gi), gene, gi, &self.config)
            .map_err(|e| e.to_string())?;
        let prepared = Prepared::new(&model.params).map_err(|e| e.to_string())?;
        Ok(test
            .iter()
            .map(|&i| prepared.predict(&self.encoded.patches[i]))
            .collect())
    }
}

/// Full protocol for the stain-learning model.
pub fn run_cv(
    dataset: &SpotDataset,
    gene_list: &[String],
    config: &TrainConfig,
    workers: usize,
) -> Result<CvOutcome, CvError> {
    config.validate()?;
    check_genes(dataset, gene_list)?;
    lopo_split(dataset)?;
    let encoded = with_workers(workers, || EncodedDataset::new(dataset, config.epsilon))?;
    let predictor = NslPredictor {
        encoded,
        config: *config,
    };
    cross_validate(dataset, gene_list, &predictor, workers)
}
