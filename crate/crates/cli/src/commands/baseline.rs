use std::path::PathBuf;

use clap::Args;
use nsl_core::evaluation::cross_validate;
use nsl_core::ols::{FeatureTable, OlsPredictor};
use serde::Serialize;

use crate::args::{default_workers, positive_usize, GeneSelection, SpotInputs};
use crate::commands::eval::{finish_report, write_outcome};
use crate::error::Result;
use crate::pipeline::{create_dir, load_spots, training_targets};
use crate::run_manifest::Recorder;

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    /// Feature table, header `spot_id,<feature names>`.
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub inputs: SpotInputs,
    #[command(flatten)]
    pub genes: GeneSelection,
    #[arg(long, default_value_t = default_workers(), value_parser = positive_usize)]
    pub workers: usize,
    #[arg(long)]
    pub allow_skips: bool,
    /// Directory for `report.csv`, `skips.csv` and `predictions.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: &BaselineArgs) -> Result<()> {
    let mut recorder = Recorder::start();
    recorder.input(&args.features)?;
    let table = FeatureTable::load(&args.features)?;
    let dataset = load_spots(&args.inputs, &mut recorder)?;
    let (dataset, genes) = training_targets(&dataset, &args.genes)?;
    let predictor = OlsPredictor::new(&dataset, &table)?;
    let outcome = cross_validate(&dataset, &genes, &predictor, args.workers)?;
    create_dir(&args.out_dir)?;
    write_outcome(&args.out_dir, &dataset, &genes, &outcome, &mut recorder)?;
    recorder.finish(args, &args.out_dir.join("run_manifest.json"))?;
    finish_report(&outcome, args.allow_skips)
}
