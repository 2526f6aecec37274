//! Adam, the minibatch loop and the per-gene training driver.
//!
//! Every gene gets its own independent 11-parameter model and its own RNG
//! stream (`seed ^ gene_index`), so the result for a gene never depends on
//! which other genes are trained alongside it or on the worker count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::SpotDataset;
use crate::model::{encoded_gradients, EncodedPatch, Gradients};
use crate::stain::{
    Mat3, NslParams, StainError, StainMatrix, DEFAULT_EPSILON, LEARNABLE_SCALARS, RAW_SCALARS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("need at least 2 training spots, got {0}")]
    EmptyDataset(usize),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown gene {0:?}")]
    UnknownGene(String),
    #[error("spot {0:?} has no image patch")]
    MissingPatch(String),
    #[error("gene list is empty")]
    EmptyGeneList,
    #[error(transparent)]
    Stain(#[from] StainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Optical-density floor ε.
    pub epsilon: f64,
    pub seed: u64,
    /// Head weight and bias start in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            epochs: 250,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            init_range: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad(format!("beta1 must lie in (0, 1), got {}", self.beta1));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("beta2 must lie in (0, 1), got {}", self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!(
                "adam epsilon must be positive, got {}",
                self.adam_eps
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return bad(format!(
                "init range must be non-negative, got {}",
                self.init_range
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: [f64; RAW_SCALARS],
    pub v: [f64; RAW_SCALARS],
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            step: 0,
            m: [0.0; RAW_SCALARS],
            v: [0.0; RAW_SCALARS],
        }
    }
}

/// One bias-corrected Adam update over all 14 stored scalars, followed by
/// row normalization of the stored matrix.
pub fn adam_step(
    params: &NslParams,
    grads: &Gradients,
    state: &AdamState,
    config: &TrainConfig,
) -> Result<(NslParams, AdamState), TrainError> {
    let step = state.step + 1;
    let t = step as i32;
    let correct1 = 1.0 - config.beta1.powi(t);
    let correct2 = 1.0 - config.beta2.powi(t);

    let g = grads.to_flat();
    let mut p = params.to_flat();
    let mut next = AdamState { step, ..*state };
    for i in 0..RAW_SCALARS {
        next.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g[i];
        next.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g[i] * g[i];
        let m_hat = next.m[i] / correct1;
        let v_hat = next.v[i] / correct2;
        p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    let updated = NslParams::from_flat(&p)?.with_normalized_stain()?;
    Ok((updated, next))
}

/// Random starting point: raw matrix entries in `[0.1, 1)`, zero stain
/// biases, head weight and bias in `[-init_range, init_range]`.
pub fn initial_params(rng: &mut impl Rng, config: &TrainConfig) -> Result<NslParams, TrainError> {
    let mut raw: Mat3 = [[0.0; 3]; 3];
    for v in raw.iter_mut().flatten() {
        *v = rng.random_range(0.1..1.0);
    }
    let r = config.init_range;
    let (w, b) = if r > 0.0 {
        (rng.random_range(-r..=r), rng.random_range(-r..=r))
    } else {
        (0.0, 0.0)
    };
    Ok(NslParams::new(StainMatrix::new(raw)?, [0.0; 3], w, b)?)
}

/// RNG stream owned by one gene.
pub fn gene_rng(seed: u64, gene_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ gene_index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGeneModel {
    pub gene_name: String,
    pub params: NslParams,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    pub config_digest: String,
}

/// Trains one gene on `(patch, target)` pairs for `config.epochs` epochs of
/// shuffled minibatches; the last partial batch of each epoch is kept.
pub fn train_gene(
    samples: &[(&EncodedPatch, f64)],
    gene_name: &str,
    gene_index: usize,
    config: &TrainConfig,
) -> Result<TrainedGeneModel, TrainError> {
    config.validate()?;
    let n = samples.len();
    if n < 2 {
        return Err(TrainError::EmptyDataset(n));
    }
    let mut rng = gene_rng(config.seed, gene_index);
    let mut params = initial_params(&mut rng, config)?.with_normalized_stain()?;
    let mut state = AdamState::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch: Vec<(&EncodedPatch, f64)> = Vec::with_capacity(config.batch_size);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (loss, grads) = encoded_gradients(&batch, &params)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: state.step,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            (params, state) = adam_step(&params, &grads, &state, config)?;
        }
        loss_trace.push(epoch_loss / n as f64);
    }

    Ok(TrainedGeneModel {
        gene_name: gene_name.to_string(),
        params,
        loss_trace,
        config_digest: config.digest(),
    })
}

/// Spot patches of a dataset encoded once for a fixed ε.
#[derive(Debug)]
pub struct EncodedDataset<'a> {
    pub dataset: &'a SpotDataset,
    pub patches: Vec<EncodedPatch>,
}

impl<'a> EncodedDataset<'a> {
    pub fn new(dataset: &'a SpotDataset, eps: f64) -> Result<Self, TrainError> {
        let patches = dataset
            .spots
            .par_iter()
            .map(|spot| {
                let hist = spot
                    .histogram
                    .as_ref()
                    .ok_or_else(|| TrainError::MissingPatch(spot.spot_id.clone()))?;
                Ok(EncodedPatch::from_histogram(hist, eps)?)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Self { dataset, patches })
    }

    /// `(patch, target)` pairs for one gene over a subset of spots.
    pub fn samples(&self, spots: &[usize], gene_index: usize) -> Vec<(&EncodedPatch, f64)> {
        spots
            .iter()
            .map(|&i| {
                (
                    &self.patches[i],
                    self.dataset.spots[i].expression[gene_index],
                )
            })
            .collect()
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Trains every gene of `gene_list` on the given spots. Unknown genes and
/// failed fits are recorded, not fatal.
pub fn train_genes(
    encoded: &EncodedDataset,
    spots: &[usize],
    gene_list: &[String],
    config: &TrainConfig,
    workers: usize,
) -> Result<ModelBundle, TrainError> {
    if gene_list.is_empty() {
        return Err(TrainError::EmptyGeneList);
    }
    config.validate()?;
    let outcomes: Vec<Result<TrainedGeneModel, TrainError>> = with_workers(workers, || {
        gene_list
            .par_iter()
            .map(|gene| {
                let gene_index = encoded
                    .dataset
                    .gene_index(gene)
                    .ok_or_else(|| TrainError::UnknownGene(gene.clone()))?;
                train_gene(
                    &encoded.samples(spots, gene_index),
                    gene,
                    gene_index,
                    config,
                )
            })
            .collect()
    });
    Ok(ModelBundle::from_outcomes(config, gene_list, outcomes))
}

/// Trains every gene of `gene_list` on the whole dataset.
pub fn train_all(
    dataset: &SpotDataset,
    gene_list: &[String],
    config: &TrainConfig,
    workers: usize,
) -> Result<ModelBundle, TrainError> {
    config.validate()?;
    let encoded = with_workers(workers, || EncodedDataset::new(dataset, config.epsilon))?;
    let all: Vec<usize> = (0..dataset.spots.len()).collect();
    train_genes(&encoded, &all, gene_list, config, workers)
}

pub const BUNDLE_FORMAT: &str = "nsl-model-bundle";
pub const BUNDLE_VERSION: u32 = 1;

/// Serialized per-gene model: the row-normalized matrix, stain biases, head
/// weight and bias, and the training loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneRecord {
    pub gene: String,
    pub stain_matrix: Mat3,
    pub stain_bias: [f64; 3],
    pub head_weight: f64,
    pub head_bias: f64,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CensusError {
    #[error("gene {gene}: stain row {row} has norm {norm}, expected 1")]
    UnnormalizedRow { gene: String, row: usize, norm: f64 },
    #[error("gene {0}: non-finite parameter")]
    NonFinite(String),
}

impl GeneRecord {
    pub fn from_model(model: &TrainedGeneModel) -> Result<Self, StainError> {
        Ok(Self {
            gene: model.gene_name.clone(),
            stain_matrix: model.params.stain.normalized()?,
            stain_bias: model.params.stain_bias,
            head_weight: model.params.head_weight,
            head_bias: model.params.head_bias,
            loss_trace: model.loss_trace.clone(),
        })
    }

    pub fn params(&self) -> Result<NslParams, StainError> {
        NslParams::new(
            StainMatrix::new(self.stain_matrix)?,
            self.stain_bias,
            self.head_weight,
            self.head_bias,
        )
    }

    /// Stored scalars in canonical order.
    pub fn stored_scalars(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.stain_matrix.iter().flatten().copied().collect();
        out.extend_from_slice(&self.stain_bias);
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }

    /// Independent learnable scalars: stored scalars minus one unit-norm
    /// constraint per matrix row. Fails if a row is not normalized.
    pub fn learnable_scalars(&self) -> Result<usize, CensusError> {
        let stored = self.stored_scalars();
        if stored.iter().any(|v| !v.is_finite()) {
            return Err(CensusError::NonFinite(self.gene.clone()));
        }
        for (row, r) in self.stain_matrix.iter().enumerate() {
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(CensusError::UnnormalizedRow {
                    gene: self.gene.clone(),
                    row,
                    norm,
                });
            }
        }
        let count = stored.len() - self.stain_matrix.len();
        debug_assert_eq!(count, LEARNABLE_SCALARS);
        Ok(count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneFailure {
    pub gene: String,
    pub error: String,
}

/// All per-gene models of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub config_digest: String,
    pub models: Vec<GeneRecord>,
    pub failures: Vec<GeneFailure>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("malformed model bundle: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported bundle {format:?} version {version}")]
    Unsupported { format: String, version: u32 },
    #[error(transparent)]
    Census(#[from] CensusError),
}

impl ModelBundle {
    fn from_outcomes(
        config: &TrainConfig,
        gene_list: &[String],
        outcomes: Vec<Result<TrainedGeneModel, TrainError>>,
    ) -> Self {
        let mut models = Vec::new();
        let mut failures = Vec::new();
        for (gene, outcome) in gene_list.iter().zip(outcomes) {
            match outcome.and_then(|m| GeneRecord::from_model(&m).map_err(TrainError::from)) {
                Ok(record) => models.push(record),
                Err(e) => failures.push(GeneFailure {
                    gene: gene.clone(),
                    error: e.to_string(),
                }),
            }
        }
        Self {
            format: BUNDLE_FORMAT.to_string(),
            version: BUNDLE_VERSION,
            config: *config,
            config_digest: config.digest(),
            models,
            failures,
        }
    }

    pub fn model(&self, gene: &str) -> Option<&GeneRecord> {
        self.models.iter().find(|m| m.gene == gene)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let bundle: Self = serde_json::from_str(text)?;
        if bundle.format != BUNDLE_FORMAT || bundle.version != BUNDLE_VERSION {
            return Err(BundleError::Unsupported {
                format: bundle.format,
                version: bundle.version,
            });
        }
        for m in &bundle.models {
            m.learnable_scalars()?;
        }
        Ok(bundle)
    }
}
