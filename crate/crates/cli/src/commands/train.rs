use std::path::PathBuf;

use clap::Args;
use nsl_core::train_all;
use serde::Serialize;

use crate::args::{default_workers, positive_usize, GeneSelection, Hyper, ImageInputs, SpotInputs};
use crate::error::{CliError, Result};
use crate::pipeline::{attach_images, load_spots, training_targets, write_text};
use crate::run_manifest::{sidecar, Recorder};

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: SpotInputs,
    #[command(flatten)]
    pub images: ImageInputs,
    #[command(flatten)]
    pub genes: GeneSelection,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value_t = default_workers(), value_parser = positive_usize)]
    pub workers: usize,
    /// Model bundle to write (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut recorder = Recorder::start();
    let config = args.hyper.config();
    config.validate()?;
    let mut dataset = load_spots(&args.inputs, &mut recorder)?;
    let (targets, genes) = training_targets(&dataset, &args.genes)?;
    dataset = targets;
    attach_images(
        &mut dataset,
        &args.inputs.manifest,
        &args.images,
        &mut recorder,
    )?;

    let bundle = train_all(&dataset, &genes, &config, args.workers)?;
    write_text(&args.out, &bundle.to_json())?;
    recorder.output(&args.out)?;
    recorder.finish(args, &sidecar(&args.out))?;
    println!(
        "trained {} of {} genes on {} spots -> {}",
        bundle.models.len(),
        genes.len(),
        dataset.len(),
        args.out.display()
    );
    if bundle.failures.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = bundle
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.gene, f.error))
            .collect();
        Err(CliError::numeric(format!(
            "training failed for {}",
            list.join("; ")
        )))
    }
}
