//! Synthetic spots generated by a known stain-learning model, used to check
//! that training recovers a realizable signal.
//!
//! Each spot draws stain concentrations `q ~ U(0,1)³`; pixel optical density
//! is `mixing · q` plus a per-channel jitter of `-jitter`, `0` or `+jitter`,
//! clamped to `[0, 1]`, and the pixel color is `ε^od` so that the optical
//! density transform recovers `od` exactly. Targets are the true model's
//! prediction plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetError, SpotDataset, SpotRecord};
use crate::model::forward;
use crate::stain::{ColorHistogram, Mat3, NslParams, Patch, StainMatrix, DEFAULT_EPSILON};

/// Hematoxylin, eosin and DAB optical-density vectors (rows, RGB order).
pub const HED_STAIN_VECTORS: Mat3 = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]];

pub const DEFAULT_JITTER: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub gene_names: Vec<String>,
    /// Generating model of each gene.
    pub true_params: Vec<NslParams>,
    /// Channel × stain matrix: `od = mixing · q`.
    pub mixing: Mat3,
    pub patients: usize,
    pub spots_per_patient: usize,
    pub patch_side: usize,
    pub noise_sigma: f64,
    pub jitter: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// A configuration with `genes` randomly drawn generating models
    /// (deterministic in `seed`) and H&E/DAB-like mixing.
    pub fn new(
        patients: usize,
        spots_per_patient: usize,
        genes: usize,
        patch_side: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x005e_ed0f_7a11));
        let mixing = default_mixing();
        let true_params = (0..genes)
            .map(|_| random_truth(&mut rng, &mixing))
            .collect();
        Self {
            gene_names: (1..=genes).map(|g| format!("SYN{g}")).collect(),
            true_params,
            mixing,
            patients,
            spots_per_patient,
            patch_side,
            noise_sigma,
            jitter: DEFAULT_JITTER,
            epsilon: DEFAULT_EPSILON,
            seed,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSynth(m.to_string()));
        if self.patients == 0 || self.spots_per_patient == 0 {
            return bad("need at least one patient and one spot per patient");
        }
        if self.patch_side == 0 {
            return bad("patch side must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be a non-negative number");
        }
        if !(self.jitter >= 0.0 && self.jitter <= 1.0) {
            return bad("jitter must lie in [0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.gene_names.len() != self.true_params.len() || self.gene_names.is_empty() {
            return bad("need one name per generating model and at least one gene");
        }
        Ok(())
    }
}

/// Stain vectors as columns, scaled so that a full dose of all three stains
/// stays near the optical-density ceiling.
fn default_mixing() -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (stain, vector) in HED_STAIN_VECTORS.iter().enumerate() {
        for channel in 0..3 {
            m[channel][stain] = 0.45 * vector[channel];
        }
    }
    m
}

/// Minimum spread of noise-free targets across spots for a drawn model.
const MIN_SIGNAL_SD: f64 = 0.25;
const SIGNAL_PROBES: usize = 64;

/// Draws generating models until one whose targets vary by at least
/// [`MIN_SIGNAL_SD`] over uniform stain doses.
fn random_truth(rng: &mut impl Rng, mixing: &Mat3) -> NslParams {
    loop {
        let params = random_params(rng);
        let probes: Vec<f64> = (0..SIGNAL_PROBES)
            .map(|_| {
                let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
                let pixel = std::array::from_fn(|ch| {
                    let od: f64 = (0..3).map(|k| mixing[ch][k] * q[k]).sum();
                    DEFAULT_EPSILON.powf(od.clamp(0.0, 1.0))
                });
                let patch = Patch::new(1, 1, vec![pixel]).expect("one pixel");
                forward(&patch, &params, DEFAULT_EPSILON).expect("valid model")
            })
            .collect();
        let mean = probes.iter().sum::<f64>() / SIGNAL_PROBES as f64;
        let var = probes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / SIGNAL_PROBES as f64;
        if var.sqrt() >= MIN_SIGNAL_SD {
            return params;
        }
    }
}

fn random_params(rng: &mut impl Rng) -> NslParams {
    let mut raw = [[0.0; 3]; 3];
    for row in raw.iter_mut() {
        loop {
            *row = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if row.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.3 {
                break;
            }
        }
    }
    let c = [
        rng.random_range(-0.25..0.25),
        rng.random_range(-0.25..0.25),
        rng.random_range(-0.25..0.25),
    ];
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let w = sign * rng.random_range(2.0..4.0);
    let b = rng.random_range(-0.5..0.5);
    NslParams::new(
        StainMatrix::new(raw).expect("rows bounded away from zero"),
        c,
        w,
        b,
    )
    .expect("finite")
}

/// Generated dataset plus the full-resolution patches behind its histograms.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: SpotDataset,
    pub patches: Vec<Patch>,
    /// Noise-free targets, spot-major.
    pub clean_targets: Vec<Vec<f64>>,
}

pub fn synth_generate(config: &SynthConfig) -> Result<SyntheticData, DatasetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| DatasetError::InvalidSynth(e.to_string()))?;
    let side = config.patch_side;
    let spacing = side as f64;
    let columns = (config.spots_per_patient as f64).sqrt().ceil() as usize;

    let mut spots = Vec::new();
    let mut patches = Vec::new();
    let mut clean_targets = Vec::new();
    for p in 0..config.patients {
        let patient = format!("P{}", p + 1);
        for s in 0..config.spots_per_patient {
            let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let base: [f64; 3] =
                std::array::from_fn(|ch| (0..3).map(|k| config.mixing[ch][k] * q[k]).sum::<f64>());
            let pixels = (0..side * side)
                .map(|_| {
                    std::array::from_fn(|ch| {
                        let step = rng.random_range(-1i32..=1) as f64;
                        let od = (base[ch] + config.jitter * step).clamp(0.0, 1.0);
                        config.epsilon.powf(od)
                    })
                })
                .collect();
            let patch = Patch::new(side, side, pixels)?;
            let clean = config
                .true_params
                .iter()
                .map(|params| forward(&patch, params, config.epsilon))
                .collect::<Result<Vec<f64>, _>>()?;
            let expression = clean
                .iter()
                .map(|t| {
                    if config.noise_sigma > 0.0 {
                        t + noise.sample(&mut rng)
                    } else {
                        *t
                    }
                })
                .collect();
            let (row, col) = (s / columns, s % columns);
            spots.push(SpotRecord {
                patient_id: patient.clone(),
                slide_id: format!("S{}", p + 1),
                spot_id: format!("{patient}_{:04}", s + 1),
                x: (col as f64 + 0.5) * spacing,
                y: (row as f64 + 0.5) * spacing,
                patch_path: None,
                histogram: Some(ColorHistogram::from_patch(&patch)),
                padded_fraction: 0.0,
                expression,
            });
            patches.push(patch);
            clean_targets.push(clean);
        }
    }
    Ok(SyntheticData {
        dataset: SpotDataset::from_spots(spots, config.gene_names.clone()),
        patches,
        clean_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stain::optical_density;

    #[test]
    fn sizes_and_patients() {
        let cfg = SynthConfig::new(6, 200, 2, 4, 0.05, 1);
        let data = synth_generate(&cfg).unwrap();
        assert_eq!(data.dataset.len(), 1200);
        assert_eq!(data.dataset.patients.len(), 6);
        assert!(data.dataset.patients.iter().all(|p| data
            .dataset
            .spots
            .iter()
            .filter(|s| &s.patient_id == p)
            .count()
            == 200));
    }

    #[test]
    fn noise_free_targets_are_reproduced() {
        let mut cfg = SynthConfig::new(2, 10, 3, 6, 0.0, 5);
        cfg.noise_sigma = 0.0;
        let data = synth_generate(&cfg).unwrap();
        for (spot, patch) in data.dataset.spots.iter().zip(&data.patches) {
            for (g, params) in cfg.true_params.iter().enumerate() {
                let y = forward(patch, params, cfg.epsilon).unwrap();
                assert!((y - spot.expression[g]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::new(2, 5, 2, 3, 0.1, 9);
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.patches, b.patches);
        let c = synth_generate(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn pixel_densities_stay_on_the_jitter_lattice() {
        let cfg = SynthConfig::new(1, 3, 1, 8, 0.0, 3);
        let data = synth_generate(&cfg).unwrap();
        for patch in &data.patches {
            let hist = ColorHistogram::from_patch(patch);
            assert!(hist.distinct() <= 27);
            for px in patch.pixels() {
                let u = optical_density(*px, cfg.epsilon).unwrap();
                assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SynthConfig::new(1, 1, 1, 1, 0.0, 0);
        cfg.noise_sigma = -1.0;
        assert!(synth_generate(&cfg).is_err());
        let cfg = SynthConfig::new(1, 1, 1, 0, 0.0, 0);
        assert!(synth_generate(&cfg).is_err());
    }
}
