//! Flag groups shared by several subcommands and their value checks.

use std::path::PathBuf;

use clap::Args;
use nsl_core::stain::DEFAULT_EPSILON;
use nsl_core::TrainConfig;
use serde::Serialize;

pub fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

pub fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

pub fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

pub fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1), got {s:?}")),
    }
}

pub fn named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Args, Serialize)]
pub struct SpotInputs {
    /// Spot manifest (`patient_id,slide_id,spot_id,x,y,patch_path`).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Expression matrix, tab or comma separated, first column `spot_id`.
    #[arg(long)]
    pub expression: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ImageInputs {
    /// Slide raster for spots without a patch file, as SLIDE_ID=PATH.
    #[arg(long = "slide", value_parser = named_path)]
    pub slides: Vec<(String, PathBuf)>,
    /// Side of patches cropped from slide rasters.
    #[arg(long, default_value_t = 256, value_parser = positive_usize)]
    pub patch_side: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GeneSelection {
    /// Explicit comma-separated gene list; overrides --top-genes.
    #[arg(long, value_delimiter = ',')]
    pub genes: Vec<String>,
    /// Number of genes with the highest median expression.
    #[arg(long, default_value_t = 250, value_parser = positive_usize)]
    pub top_genes: usize,
    /// Added before the natural log of every expression value.
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub pseudo_count: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct Hyper {
    #[arg(long, default_value_t = 0.001, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 128, value_parser = positive_usize)]
    pub batch: usize,
    #[arg(long, default_value_t = 250, value_parser = positive_usize)]
    pub epochs: usize,
    /// Intensity floor of the optical density transform.
    #[arg(long, default_value_t = DEFAULT_EPSILON, value_parser = unit_interval)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Hyper {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            epsilon: self.epsilon,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}
