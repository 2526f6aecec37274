use std::path::{Path, PathBuf};

use clap::Args;
use nsl_core::dataset::SpotDataset;
use nsl_core::evaluation::{
    overlay_file_name, render_report, render_skips, run_cv, spot_overlay, ColorRamp, CvOutcome,
};
use serde::Serialize;

use crate::args::{default_workers, positive_usize, GeneSelection, Hyper, ImageInputs, SpotInputs};
use crate::error::{CliError, Result};
use crate::pipeline::{
    attach_images, create_dir, fmt_value, load_spots, training_targets, write_csv, write_text,
};
use crate::run_manifest::Recorder;

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
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
    /// Draw held-out predictions of these genes on every slide.
    #[arg(long, value_delimiter = ',')]
    pub overlay_genes: Vec<String>,
    /// Exit 0 even when some genes have no valid fold.
    #[arg(long)]
    pub allow_skips: bool,
    /// Directory for `report.csv`, `skips.csv`, `predictions.csv` and overlays.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let mut recorder = Recorder::start();
    let config = args.hyper.config();
    config.validate()?;
    let dataset = load_spots(&args.inputs, &mut recorder)?;
    let (mut dataset, genes) = training_targets(&dataset, &args.genes)?;
    check_overlay_genes(&args.overlay_genes, &genes)?;
    attach_images(
        &mut dataset,
        &args.inputs.manifest,
        &args.images,
        &mut recorder,
    )?;

    let outcome = run_cv(&dataset, &genes, &config, args.workers)?;
    create_dir(&args.out_dir)?;
    write_outcome(&args.out_dir, &dataset, &genes, &outcome, &mut recorder)?;
    let overlays = write_overlays(
        &args.out_dir,
        &dataset,
        &genes,
        &outcome,
        &args.overlay_genes,
    )?;
    recorder.output_group("overlays", &overlays)?;
    recorder.finish(args, &args.out_dir.join("run_manifest.json"))?;
    finish_report(&outcome, args.allow_skips)
}

pub fn check_overlay_genes(requested: &[String], genes: &[String]) -> Result<()> {
    match requested.iter().find(|g| !genes.contains(g)) {
        Some(g) => Err(CliError::validation(format!(
            "overlay gene {g:?} is not evaluated; evaluated genes: {}",
            genes.join(", ")
        ))),
        None => Ok(()),
    }
}

/// Writes `report.csv`, `skips.csv` and the held-out `predictions.csv`.
pub fn write_outcome(
    dir: &Path,
    dataset: &SpotDataset,
    genes: &[String],
    outcome: &CvOutcome,
    recorder: &mut Recorder,
) -> Result<()> {
    let report = dir.join("report.csv");
    write_text(&report, &render_report(&outcome.report))?;
    let skips = dir.join("skips.csv");
    write_text(&skips, &render_skips(&outcome.report))?;
    let predictions = dir.join("predictions.csv");
    let header: Vec<String> = ["spot_id", "patient_id"]
        .iter()
        .map(|s| s.to_string())
        .chain(genes.iter().cloned())
        .collect();
    let rows: Vec<Vec<String>> = dataset
        .spots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            [s.spot_id.clone(), s.patient_id.clone()]
                .into_iter()
                .chain(outcome.predictions.iter().map(|g| fmt_value(g[i])))
                .collect()
        })
        .collect();
    write_csv(&predictions, &header, &rows)?;
    for p in [&report, &skips, &predictions] {
        recorder.output(p)?;
    }
    Ok(())
}

/// One SVG per (slide, gene) with the held-out predictions of its spots.
fn write_overlays(
    dir: &Path,
    dataset: &SpotDataset,
    genes: &[String],
    outcome: &CvOutcome,
    overlay_genes: &[String],
) -> Result<Vec<PathBuf>> {
    let mut slides: Vec<&str> = Vec::new();
    for s in &dataset.spots {
        if !slides.contains(&s.slide_id.as_str()) {
            slides.push(&s.slide_id);
        }
    }
    let mut written = Vec::new();
    for gene in overlay_genes {
        let g = genes.iter().position(|x| x == gene).expect("checked");
        for slide in &slides {
            let (points, values): (Vec<(f64, f64)>, Vec<f64>) = dataset
                .spots
                .iter()
                .enumerate()
                .filter(|(i, s)| s.slide_id == *slide && outcome.predictions[g][*i].is_finite())
                .map(|(i, s)| ((s.x, s.y), outcome.predictions[g][i]))
                .unzip();
            if points.is_empty() {
                eprintln!("warning: no held-out predictions of {gene} on slide {slide}");
                continue;
            }
            let svg = spot_overlay(
                &points,
                &values,
                &ColorRamp::default(),
                &format!("{gene} on {slide}"),
            )?;
            let path = dir.join(overlay_file_name(slide, gene));
            write_text(&path, &svg)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Prints the summary and turns unevaluable genes into a failure unless allowed.
pub fn finish_report(outcome: &CvOutcome, allow_skips: bool) -> Result<()> {
    let report = &outcome.report;
    println!(
        "{} genes: {} with median r > 0.5, {} with combined p < 1e-5",
        report.genes.len(),
        report.count_r_gt_half,
        report.count_p_significant
    );
    let missing = report.unevaluable();
    if missing.is_empty() || allow_skips {
        if !missing.is_empty() {
            eprintln!("warning: no valid fold for {}", missing.join(", "));
        }
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "no valid fold for {} (see skips.csv; --allow-skips to accept)",
            missing.join(", ")
        )))
    }
}
