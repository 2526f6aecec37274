//! Stain-space primitives: the learnable deconvolution matrix, the optical
//! density transform, the bipolar sigmoid and the image containers the model
//! consumes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-major 3×3 matrix. Row `j` is the deconvolution vector of stain `j`.
pub type Mat3 = [[f64; 3]; 3];

/// Rows shorter than this cannot be normalized.
pub const MIN_ROW_NORM: f64 = 1e-9;

/// Optical-density floor used when none is configured.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StainError {
    #[error("stain matrix row {row} has norm {norm:e}, below {MIN_ROW_NORM:e}")]
    SingularRow { row: usize, norm: f64 },
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite parameter value")]
    NonFiniteParameter,
}

/// Divides every row by its L2 norm.
pub fn row_normalize(raw: &Mat3) -> Result<Mat3, StainError> {
    let mut out = [[0.0; 3]; 3];
    for (j, row) in raw.iter().enumerate() {
        let norm = row_norm(row);
        if !(norm >= MIN_ROW_NORM) {
            return Err(StainError::SingularRow { row: j, norm });
        }
        for i in 0..3 {
            out[j][i] = row[i] / norm;
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn row_norm(row: &[f64; 3]) -> f64 {
    (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt()
}

pub(crate) fn check_epsilon(eps: f64) -> Result<(), StainError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(StainError::InvalidEpsilon(eps))
    }
}

/// Normalized Beer–Lambert optical density: `ln(max(x, ε)) / ln(ε)` per
/// channel. White maps to 0, anything at or below ε maps to 1.
pub fn optical_density(pixel: [f64; 3], eps: f64) -> Result<[f64; 3], StainError> {
    check_epsilon(eps)?;
    Ok(density_with_scale(pixel, eps, 1.0 / eps.ln()))
}

#[inline]
pub(crate) fn density_with_scale(pixel: [f64; 3], eps: f64, inv_log_eps: f64) -> [f64; 3] {
    let mut u = [0.0; 3];
    for j in 0..3 {
        // min(.., 1) keeps slightly-over-white inputs at exactly zero density
        let x = pixel[j].max(eps).min(1.0);
        u[j] = x.ln() * inv_log_eps;
    }
    u
}

/// `(1 - e^-z) / (1 + e^-z)`, evaluated as `tanh(z / 2)`.
#[inline]
pub fn bipolar_sigmoid(z: f64) -> f64 {
    (0.5 * z).tanh()
}

/// Derivative of [`bipolar_sigmoid`] expressed through its value.
#[inline]
pub fn bipolar_sigmoid_derivative_from_value(psi: f64) -> f64 {
    0.5 * (1.0 - psi * psi)
}

/// The learnable deconvolution matrix `D`. The model always uses its
/// row-normalized form, so any positive rescaling of a row is invisible to
/// predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainMatrix {
    raw: Mat3,
}

impl StainMatrix {
    pub fn new(raw: Mat3) -> Result<Self, StainError> {
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StainError::NonFiniteParameter);
        }
        for (j, row) in raw.iter().enumerate() {
            let norm = row_norm(row);
            if !(norm >= MIN_ROW_NORM) {
                return Err(StainError::SingularRow { row: j, norm });
            }
        }
        Ok(Self { raw })
    }

    pub fn identity() -> Self {
        Self {
            raw: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn raw(&self) -> &Mat3 {
        &self.raw
    }

    pub fn normalized(&self) -> Result<Mat3, StainError> {
        row_normalize(&self.raw)
    }
}

/// Number of learnable scalars in one per-gene model: the row-normalized
/// matrix has 9 entries constrained by 3 unit-norm rows, plus 3 stain
/// biases, the head weight and the head bias.
pub const LEARNABLE_SCALARS: usize = 9 - 3 + 3 + 1 + 1;

/// Number of stored scalars (raw matrix entries included).
pub const RAW_SCALARS: usize = 14;

/// Per-gene parameter bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NslParams {
    pub stain: StainMatrix,
    pub stain_bias: [f64; 3],
    pub head_weight: f64,
    pub head_bias: f64,
}

impl NslParams {
    pub fn new(
        stain: StainMatrix,
        stain_bias: [f64; 3],
        head_weight: f64,
        head_bias: f64,
    ) -> Result<Self, StainError> {
        let params = Self {
            stain,
            stain_bias,
            head_weight,
            head_bias,
        };
        if params.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(StainError::NonFiniteParameter);
        }
        Ok(params)
    }

    /// Flattened as 9 raw matrix entries (row-major), 3 stain biases, head
    /// weight, head bias.
    pub fn to_flat(&self) -> [f64; RAW_SCALARS] {
        let mut out = [0.0; RAW_SCALARS];
        for (j, row) in self.stain.raw.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(row);
        }
        out[9..12].copy_from_slice(&self.stain_bias);
        out[12] = self.head_weight;
        out[13] = self.head_bias;
        out
    }

    pub fn from_flat(flat: &[f64; RAW_SCALARS]) -> Result<Self, StainError> {
        let mut raw = [[0.0; 3]; 3];
        for (j, row) in raw.iter_mut().enumerate() {
            row.copy_from_slice(&flat[3 * j..3 * j + 3]);
        }
        Self::new(
            StainMatrix::new(raw)?,
            [flat[9], flat[10], flat[11]],
            flat[12],
            flat[13],
        )
    }

    /// Replaces the raw matrix by its row-normalized form.
    pub fn with_normalized_stain(&self) -> Result<Self, StainError> {
        Ok(Self {
            stain: StainMatrix {
                raw: self.stain.normalized()?,
            },
            ..*self
        })
    }
}

/// An RGB image patch with channels in `[0, 1]`. Values are floored at ε
/// when the optical density is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
    padded_fraction: f64,
}

impl Patch {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self, StainError> {
        Self::with_padding(width, height, pixels, 0.0)
    }

    pub fn with_padding(
        width: usize,
        height: usize,
        pixels: Vec<[f64; 3]>,
        padded_fraction: f64,
    ) -> Result<Self, StainError> {
        if width == 0 || height == 0 {
            return Err(StainError::InvalidPatch(format!(
                "empty patch {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(StainError::InvalidPatch(format!(
                "{} pixels for a {width}x{height} patch",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .flatten()
            .find(|v| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(StainError::InvalidPatch(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            padded_fraction,
        })
    }

    /// Builds a patch from interleaved 8-bit RGB samples (`v / 255`).
    pub fn from_rgb8(width: usize, height: usize, samples: &[u8]) -> Result<Self, StainError> {
        if samples.len() != 3 * width * height {
            return Err(StainError::InvalidPatch(format!(
                "{} samples for a {width}x{height} RGB patch",
                samples.len()
            )));
        }
        let pixels = samples
            .chunks_exact(3)
            .map(|p| {
                [
                    f64::from(p[0]) / 255.0,
                    f64::from(p[1]) / 255.0,
                    f64::from(p[2]) / 255.0,
                ]
            })
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    /// Fraction of pixels that were synthesized as white padding because the
    /// crop window left the source image.
    pub fn padded_fraction(&self) -> f64 {
        self.padded_fraction
    }
}

/// Unique colors of a patch with their multiplicities, in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    entries: Vec<([f64; 3], u64)>,
    total: u64,
}

impl ColorHistogram {
    pub fn from_patch(patch: &Patch) -> Self {
        Self::from_pixels(patch.pixels())
    }

    pub fn from_pixels(pixels: &[[f64; 3]]) -> Self {
        let mut index: HashMap<[u64; 3], usize> = HashMap::new();
        let mut entries: Vec<([f64; 3], u64)> = Vec::new();
        for p in pixels {
            // +0.0 folds -0.0 into 0.0 so both share a key
            let key = [
                (p[0] + 0.0).to_bits(),
                (p[1] + 0.0).to_bits(),
                (p[2] + 0.0).to_bits(),
            ];
            match index.get(&key) {
                Some(&i) => entries[i].1 += 1,
                None => {
                    index.insert(key, entries.len());
                    entries.push((*p, 1));
                }
            }
        }
        Self {
            total: pixels.len() as u64,
            entries,
        }
    }

    pub fn from_entries(entries: Vec<([f64; 3], u64)>) -> Result<Self, StainError> {
        let mut seen = std::collections::HashSet::new();
        let mut total = 0u64;
        for (rgb, count) in &entries {
            if *count == 0 {
                return Err(StainError::InvalidPatch("zero histogram count".into()));
            }
            if rgb.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
                return Err(StainError::InvalidPatch(format!(
                    "histogram color {rgb:?} outside [0, 1]"
                )));
            }
            if !seen.insert(rgb.map(|v| (v + 0.0).to_bits())) {
                return Err(StainError::InvalidPatch(format!(
                    "duplicate histogram color {rgb:?}"
                )));
            }
            total += count;
        }
        if total == 0 {
            return Err(StainError::InvalidPatch("empty histogram".into()));
        }
        Ok(Self { entries, total })
    }

    pub fn entries(&self) -> &[([f64; 3], u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }
}
