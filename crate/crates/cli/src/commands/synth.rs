use std::path::PathBuf;

use clap::Args;
use nsl_core::dataset::{synth_generate, write_patch_png16, Raster, SynthConfig};
use nsl_core::forward;
use serde::Serialize;

use crate::args::{non_negative_f64, positive_usize};
use crate::error::Result;
use crate::pipeline::{create_dir, fmt_value, write_csv, write_text};
use crate::run_manifest::Recorder;

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6, value_parser = positive_usize)]
    pub patients: usize,
    /// Spots per patient.
    #[arg(long, default_value_t = 200, value_parser = positive_usize)]
    pub spots: usize,
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub genes: usize,
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub patch_side: usize,
    /// Standard deviation of the Gaussian noise added to log-scale targets.
    #[arg(long, default_value_t = 0.05, value_parser = non_negative_f64, allow_negative_numbers = true)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TrueGene {
    gene: String,
    stain_matrix: [[f64; 3]; 3],
    stain_bias: [f64; 3],
    head_weight: f64,
    head_bias: f64,
}

#[derive(Serialize)]
struct Truth {
    seed: u64,
    noise_sigma: f64,
    epsilon: f64,
    /// Added to every log-scale target before export; `ln(1 + value)` in
    /// `expression.csv` equals the model output plus noise plus this shift.
    shift: f64,
    mixing: [[f64; 3]; 3],
    genes: Vec<TrueGene>,
}

/// Writes `manifest.csv`, `expression.csv`, 16-bit `patches/*.png` and
/// `truth.json`. Targets are recomputed on the quantized patches so that the
/// files are exactly realizable by the generating models.
pub fn run(args: &SynthArgs) -> Result<()> {
    let mut recorder = Recorder::start();
    let config = SynthConfig::new(
        args.patients,
        args.spots,
        args.genes,
        args.patch_side,
        args.noise,
        args.seed,
    );
    let data = synth_generate(&config)?;
    let patch_dir = args.out.join("patches");
    create_dir(&patch_dir)?;

    let mut manifest_rows = Vec::new();
    let mut targets = Vec::new();
    let mut patch_files = Vec::new();
    for (i, (spot, patch)) in data.dataset.spots.iter().zip(&data.patches).enumerate() {
        let rel = format!("patches/{}.png", spot.spot_id);
        let path = args.out.join(&rel);
        write_patch_png16(patch, &path)?;
        let stored = Raster::open(&path)?.into_patch()?;
        let mut row = Vec::with_capacity(config.true_params.len());
        for (g, params) in config.true_params.iter().enumerate() {
            let noise = spot.expression[g] - data.clean_targets[i][g];
            row.push(forward(&stored, params, config.epsilon)? + noise);
        }
        targets.push(row);
        manifest_rows.push(vec![
            spot.patient_id.clone(),
            spot.slide_id.clone(),
            spot.spot_id.clone(),
            fmt_value(spot.x),
            fmt_value(spot.y),
            rel,
        ]);
        patch_files.push(path);
    }

    let lowest = targets
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let shift = (-lowest).max(0.0).ceil();
    let expression_rows: Vec<Vec<String>> = data
        .dataset
        .spots
        .iter()
        .zip(&targets)
        .map(|(spot, row)| {
            std::iter::once(spot.spot_id.clone())
                .chain(row.iter().map(|t| fmt_value((t + shift).exp_m1())))
                .collect()
        })
        .collect();

    let manifest = args.out.join("manifest.csv");
    let header: Vec<String> = ["patient_id", "slide_id", "spot_id", "x", "y", "patch_path"]
        .map(String::from)
        .to_vec();
    write_csv(&manifest, &header, &manifest_rows)?;
    let expression = args.out.join("expression.csv");
    let header: Vec<String> = std::iter::once("spot_id".to_string())
        .chain(config.gene_names.iter().cloned())
        .collect();
    write_csv(&expression, &header, &expression_rows)?;

    let truth = Truth {
        seed: args.seed,
        noise_sigma: args.noise,
        epsilon: config.epsilon,
        shift,
        mixing: config.mixing,
        genes: config
            .gene_names
            .iter()
            .zip(&config.true_params)
            .map(|(gene, p)| {
                Ok(TrueGene {
                    gene: gene.clone(),
                    stain_matrix: p.stain.normalized()?,
                    stain_bias: p.stain_bias,
                    head_weight: p.head_weight,
                    head_bias: p.head_bias,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let truth_path = args.out.join("truth.json");
    let mut text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    text.push('\n');
    write_text(&truth_path, &text)?;

    recorder.output(&manifest)?;
    recorder.output(&expression)?;
    recorder.output(&truth_path)?;
    recorder.output_group("patches", &patch_files)?;
    recorder.finish(args, &args.out.join("run_manifest.json"))?;
    println!(
        "wrote {} spots x {} genes to {}",
        data.dataset.len(),
        config.gene_names.len(),
        args.out.display()
    );
    Ok(())
}
