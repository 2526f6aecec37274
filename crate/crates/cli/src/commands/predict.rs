use std::path::PathBuf;

use clap::Args;
use nsl_core::dataset::load_manifest;
use nsl_core::forward_histogram;
use nsl_core::training::ModelBundle;
use serde::Serialize;

use crate::args::ImageInputs;
use crate::error::{CliError, Result};
use crate::pipeline::{attach_images, fmt_value, write_csv};
use crate::run_manifest::{sidecar, Recorder};

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Model bundle written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Spot manifest of the spots to predict.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub images: ImageInputs,
    /// Restrict to these genes (default: every gene in the bundle).
    #[arg(long, value_delimiter = ',')]
    pub genes: Vec<String>,
    /// Predictions to write: `spot_id` then one log-scale column per gene.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let mut recorder = Recorder::start();
    recorder.input(&args.model)?;
    let text = std::fs::read_to_string(&args.model).map_err(|e| CliError::io(&args.model, e))?;
    let bundle = ModelBundle::from_json(&text)?;
    let records: Vec<_> = if args.genes.is_empty() {
        bundle.models.iter().collect()
    } else {
        args.genes
            .iter()
            .map(|g| {
                bundle.model(g).ok_or_else(|| {
                    let known: Vec<&str> = bundle.models.iter().map(|m| m.gene.as_str()).collect();
                    CliError::validation(format!(
                        "gene {g:?} is not in the bundle; known genes: {}",
                        known.join(", ")
                    ))
                })
            })
            .collect::<Result<_>>()?
    };
    let params = records
        .iter()
        .map(|r| r.params())
        .collect::<std::result::Result<Vec<_>, _>>()?;

    recorder.input(&args.manifest)?;
    let mut dataset = load_manifest(&args.manifest)?;
    attach_images(&mut dataset, &args.manifest, &args.images, &mut recorder)?;

    let eps = bundle.config.epsilon;
    let mut rows = Vec::with_capacity(dataset.len());
    for spot in &dataset.spots {
        let hist = spot.histogram.as_ref().expect("patches attached");
        let mut row = vec![spot.spot_id.clone()];
        for p in &params {
            row.push(fmt_value(forward_histogram(hist, p, eps)?));
        }
        rows.push(row);
    }
    let header: Vec<String> = std::iter::once("spot_id".to_string())
        .chain(records.iter().map(|r| r.gene.clone()))
        .collect();
    write_csv(&args.out, &header, &rows)?;
    recorder.output(&args.out)?;
    recorder.finish(args, &sidecar(&args.out))?;
    println!(
        "predicted {} genes for {} spots",
        records.len(),
        dataset.len()
    );
    Ok(())
}
