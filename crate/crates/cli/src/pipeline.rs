//! Loading steps shared by the training and evaluation commands.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nsl_core::dataset::{load_expression, load_manifest, select_top_genes, SpotDataset};

use crate::args::{GeneSelection, ImageInputs, SpotInputs};
use crate::error::{CliError, Result};
use crate::run_manifest::Recorder;

pub fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Manifest joined with the expression matrix.
pub fn load_spots(inputs: &SpotInputs, recorder: &mut Recorder) -> Result<SpotDataset> {
    recorder.input(&inputs.manifest)?;
    recorder.input(&inputs.expression)?;
    let manifest = load_manifest(&inputs.manifest)?;
    let (dataset, summary) = load_expression(&inputs.expression, &manifest)?;
    if summary.dropped_spots > 0 || summary.unmatched_rows > 0 {
        eprintln!(
            "warning: {} manifest spots without expression, {} expression rows without a spot",
            summary.dropped_spots, summary.unmatched_rows
        );
    }
    Ok(dataset)
}

/// Decodes every spot's patch into its color histogram.
pub fn attach_images(
    dataset: &mut SpotDataset,
    manifest: &Path,
    images: &ImageInputs,
    recorder: &mut Recorder,
) -> Result<()> {
    let base = manifest_dir(manifest);
    let slides: HashMap<String, PathBuf> = images.slides.iter().cloned().collect();
    for path in slides.values() {
        recorder.input(path)?;
    }
    let patch_files: Vec<PathBuf> = dataset
        .spots
        .iter()
        .filter_map(|s| s.patch_path.as_ref().map(|p| base.join(p)))
        .collect();
    recorder.input_group("patches", &patch_files)?;
    dataset.attach_patches(&base, &slides, images.patch_side)?;
    let padded = dataset
        .spots
        .iter()
        .filter(|s| s.padded_fraction > 0.0)
        .count();
    if padded > 0 {
        eprintln!("warning: {padded} patches extend past their slide and were padded white");
    }
    Ok(())
}

/// Explicit genes (validated) or the top genes by median expression.
pub fn choose_genes(dataset: &SpotDataset, selection: &GeneSelection) -> Result<Vec<String>> {
    if selection.genes.is_empty() {
        return Ok(select_top_genes(dataset, selection.top_genes));
    }
    let unknown: Vec<&str> = selection
        .genes
        .iter()
        .filter(|g| dataset.gene_index(g).is_none())
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::validation(format!(
            "unknown gene(s) {}; known genes: {}",
            unknown.join(", "),
            dataset.gene_names.join(", ")
        )));
    }
    Ok(selection.genes.clone())
}

/// Selected genes with log-transformed targets.
pub fn training_targets(
    dataset: &SpotDataset,
    selection: &GeneSelection,
) -> Result<(SpotDataset, Vec<String>)> {
    let genes = choose_genes(dataset, selection)?;
    let out = dataset
        .select_genes(&genes)?
        .log_transformed(selection.pseudo_count)?;
    Ok((out, genes))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `rows` under `header` as comma-separated values.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let err = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same value; `NA` for NaN.
pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}
