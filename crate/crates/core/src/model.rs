//! Forward pass and exact gradients of the stain-learning predictor
//!
//! ```text
//! y = w · (1/K) Σ_k 1ᵀ ψ(D̂ u_k + c) + b,    u_k = ln(x_k) / ln(ε)
//! ```
//!
//! Every evaluation goes through [`EncodedPatch`], a list of optical-density
//! vectors with aggregation weights. A raw patch encodes every pixel with
//! weight `1/K`; a color histogram encodes each unique color with weight
//! `count/K`, which is what makes training on real patches affordable.

use crate::stain::{
    bipolar_sigmoid, bipolar_sigmoid_derivative_from_value, check_epsilon, density_with_scale,
    row_norm, ColorHistogram, Mat3, NslParams, Patch, StainError,
};

/// Optical densities and their aggregation weights (weights sum to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPatch {
    densities: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl EncodedPatch {
    /// One entry per pixel.
    pub fn from_patch(patch: &Patch, eps: f64) -> Result<Self, StainError> {
        check_epsilon(eps)?;
        let scale = 1.0 / eps.ln();
        let k = patch.pixel_count() as f64;
        Ok(Self {
            densities: patch
                .pixels()
                .iter()
                .map(|p| density_with_scale(*p, eps, scale))
                .collect(),
            weights: vec![1.0 / k; patch.pixel_count()],
        })
    }

    /// One entry per distinct color.
    pub fn from_histogram(hist: &ColorHistogram, eps: f64) -> Result<Self, StainError> {
        check_epsilon(eps)?;
        let scale = 1.0 / eps.ln();
        let total = hist.total() as f64;
        let (densities, weights) = hist
            .entries()
            .iter()
            .map(|(rgb, count)| (density_with_scale(*rgb, eps, scale), *count as f64 / total))
            .unzip();
        Ok(Self { densities, weights })
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn densities(&self) -> &[[f64; 3]] {
        &self.densities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Parameters with the deconvolution matrix already normalized.
#[derive(Debug, Clone, Copy)]
pub struct Prepared {
    pub d_hat: Mat3,
    pub stain_bias: [f64; 3],
    pub head_weight: f64,
    pub head_bias: f64,
}

impl Prepared {
    pub fn new(params: &NslParams) -> Result<Self, StainError> {
        Ok(Self {
            d_hat: params.stain.normalized()?,
            stain_bias: params.stain_bias,
            head_weight: params.head_weight,
            head_bias: params.head_bias,
        })
    }

    #[inline]
    fn activations(&self, u: &[f64; 3]) -> [f64; 3] {
        let d = &self.d_hat;
        let c = &self.stain_bias;
        [
            bipolar_sigmoid(d[0][0] * u[0] + d[0][1] * u[1] + d[0][2] * u[2] + c[0]),
            bipolar_sigmoid(d[1][0] * u[0] + d[1][1] * u[1] + d[1][2] * u[2] + c[1]),
            bipolar_sigmoid(d[2][0] * u[0] + d[2][1] * u[1] + d[2][2] * u[2] + c[2]),
        ]
    }

    /// Aggregated stain response `(1/K) Σ_k 1ᵀ ψ(D̂ u_k + c)`.
    pub fn aggregate(&self, encoded: &EncodedPatch) -> f64 {
        encoded
            .densities
            .iter()
            .zip(&encoded.weights)
            .map(|(u, w)| {
                let a = self.activations(u);
                w * (a[0] + a[1] + a[2])
            })
            .sum()
    }

    pub fn predict(&self, encoded: &EncodedPatch) -> f64 {
        self.head_weight * self.aggregate(encoded) + self.head_bias
    }
}

/// Predicted expression for one patch, evaluated pixel by pixel.
pub fn forward(patch: &Patch, params: &NslParams, eps: f64) -> Result<f64, StainError> {
    let encoded = EncodedPatch::from_patch(patch, eps)?;
    Ok(Prepared::new(params)?.predict(&encoded))
}

/// Same value as [`forward`] on the summarized patch, evaluated once per
/// distinct color.
pub fn forward_histogram(
    hist: &ColorHistogram,
    params: &NslParams,
    eps: f64,
) -> Result<f64, StainError> {
    let encoded = EncodedPatch::from_histogram(hist, eps)?;
    Ok(Prepared::new(params)?.predict(&encoded))
}

/// Loss gradient with the same layout as [`NslParams`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gradients {
    pub d_raw: Mat3,
    pub d_stain_bias: [f64; 3],
    pub d_head_weight: f64,
    pub d_head_bias: f64,
}

impl Gradients {
    pub fn to_flat(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        for (j, row) in self.d_raw.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(row);
        }
        out[9..12].copy_from_slice(&self.d_stain_bias);
        out[12] = self.d_head_weight;
        out[13] = self.d_head_bias;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Mean squared error over `batch` and its exact gradient with respect to
/// the raw parameters.
pub fn gradients(
    batch: &[(&Patch, f64)],
    params: &NslParams,
    eps: f64,
) -> Result<(f64, Gradients), StainError> {
    let encoded = batch
        .iter()
        .map(|(patch, t)| Ok((EncodedPatch::from_patch(patch, eps)?, *t)))
        .collect::<Result<Vec<_>, StainError>>()?;
    let refs: Vec<(&EncodedPatch, f64)> = encoded.iter().map(|(e, t)| (e, *t)).collect();
    encoded_gradients(&refs, params)
}

/// [`gradients`] on pre-encoded patches.
pub fn encoded_gradients(
    batch: &[(&EncodedPatch, f64)],
    params: &NslParams,
) -> Result<(f64, Gradients), StainError> {
    if batch.is_empty() {
        return Err(StainError::EmptyBatch);
    }
    let prepared = Prepared::new(params)?;
    let d = &prepared.d_hat;
    let w = prepared.head_weight;
    let inv_n = 1.0 / batch.len() as f64;

    let mut loss = 0.0;
    let mut g_dhat = [[0.0; 3]; 3];
    let mut g_c = [0.0; 3];
    let mut g_w = 0.0;
    let mut g_b = 0.0;

    for (encoded, target) in batch {
        // Aggregate, per-channel Σ ω ψ' and Σ ω ψ' u in one pass.
        let mut agg = 0.0;
        let mut slope = [0.0; 3];
        let mut slope_u = [[0.0; 3]; 3];
        for (u, &omega) in encoded.densities.iter().zip(&encoded.weights) {
            let psi = prepared.activations(u);
            agg += omega * (psi[0] + psi[1] + psi[2]);
            for j in 0..3 {
                let s = omega * bipolar_sigmoid_derivative_from_value(psi[j]);
                slope[j] += s;
                slope_u[j][0] += s * u[0];
                slope_u[j][1] += s * u[1];
                slope_u[j][2] += s * u[2];
            }
        }
        let residual = w * agg + prepared.head_bias - target;
        loss += residual * residual * inv_n;

        let e = 2.0 * residual * inv_n;
        g_b += e;
        g_w += e * agg;
        let ew = e * w;
        for j in 0..3 {
            g_c[j] += ew * slope[j];
            for i in 0..3 {
                g_dhat[j][i] += ew * slope_u[j][i];
            }
        }
    }

    // Back through d̂ = d/‖d‖: ∂L/∂d = (I − d̂d̂ᵀ) ∂L/∂d̂ / ‖d‖.
    let raw = params.stain.raw();
    let mut g_raw = [[0.0; 3]; 3];
    for j in 0..3 {
        let norm = row_norm(&raw[j]);
        let along = d[j][0] * g_dhat[j][0] + d[j][1] * g_dhat[j][1] + d[j][2] * g_dhat[j][2];
        for i in 0..3 {
            g_raw[j][i] = (g_dhat[j][i] - d[j][i] * along) / norm;
        }
    }

    Ok((
        loss,
        Gradients {
            d_raw: g_raw,
            d_stain_bias: g_c,
            d_head_weight: g_w,
            d_head_bias: g_b,
        },
    ))
}

/// Mean squared error only.
pub fn encoded_loss(batch: &[(&EncodedPatch, f64)], params: &NslParams) -> Result<f64, StainError> {
    if batch.is_empty() {
        return Err(StainError::EmptyBatch);
    }
    let prepared = Prepared::new(params)?;
    let n = batch.len() as f64;
    Ok(batch
        .iter()
        .map(|(e, t)| {
            let r = prepared.predict(e) - t;
            r * r
        })
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stain::StainMatrix;

    fn params(raw: Mat3, c: [f64; 3], w: f64, b: f64) -> NslParams {
        NslParams::new(StainMatrix::new(raw).unwrap(), c, w, b).unwrap()
    }

    const RAW: Mat3 = [[0.3, -0.8, 0.5], [0.9, 0.1, 0.2], [-0.4, 0.6, 0.7]];

    #[test]
    fn white_patch_predicts_bias() {
        let patch = Patch::new(3, 2, vec![[1.0; 3]; 6]).unwrap();
        let p = params(RAW, [0.0; 3], 2.5, -0.75);
        assert_eq!(forward(&patch, &p, 1e-6).unwrap(), -0.75);
        let hist = ColorHistogram::from_patch(&patch);
        assert_eq!(forward_histogram(&hist, &p, 1e-6).unwrap(), -0.75);
    }

    #[test]
    fn single_pixel_identity_matrix() {
        let patch = Patch::new(1, 1, vec![[0.01; 3]]).unwrap();
        let p = params(*StainMatrix::identity().raw(), [0.0; 3], 1.0, 0.0);
        let y = forward(&patch, &p, 1e-4).unwrap();
        // u = 0.5 per channel, ψ(0.5) = tanh(0.25)
        let expected = 3.0 * 0.25f64.tanh();
        assert!((y - expected).abs() < 1e-15);
        assert!((y - 0.734756).abs() < 1e-6);
        let hist = ColorHistogram::from_patch(&patch);
        assert_eq!(forward_histogram(&hist, &p, 1e-4).unwrap(), y);
    }

    #[test]
    fn zero_head_weight() {
        let patch = Patch::new(2, 1, vec![[0.2, 0.4, 0.9], [0.05, 0.7, 0.3]]).unwrap();
        let p = params(RAW, [0.1, -0.2, 0.3], 0.0, 1.25);
        assert_eq!(forward(&patch, &p, 1e-6).unwrap(), 1.25);
    }

    #[test]
    fn singular_row_is_rejected() {
        let mut flat = params(RAW, [0.0; 3], 1.0, 0.0).to_flat();
        flat[3..6].copy_from_slice(&[0.0; 3]);
        assert!(matches!(
            NslParams::from_flat(&flat),
            Err(StainError::SingularRow { row: 1, .. })
        ));
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let p = params(RAW, [0.1, 0.0, -0.1], 1.5, 0.2);
        let a = Patch::new(2, 1, vec![[0.2, 0.4, 0.9], [0.05, 0.7, 0.3]]).unwrap();
        let b = Patch::new(1, 1, vec![[0.6, 0.6, 0.1]]).unwrap();
        let ta = forward(&a, &p, 1e-6).unwrap();
        let tb = forward(&b, &p, 1e-6).unwrap();
        let (loss, g) = gradients(&[(&a, ta), (&b, tb)], &p, 1e-6).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_batch() {
        let p = params(RAW, [0.0; 3], 1.0, 0.0);
        assert_eq!(gradients(&[], &p, 1e-6), Err(StainError::EmptyBatch));
    }

    #[test]
    fn row_scaling_leaves_head_gradients() {
        let p = params(RAW, [0.1, 0.0, -0.1], 1.5, 0.2);
        let mut scaled_raw = RAW;
        for v in scaled_raw[1].iter_mut() {
            *v *= 2.0;
        }
        let q = params(scaled_raw, [0.1, 0.0, -0.1], 1.5, 0.2);
        let a = Patch::new(2, 1, vec![[0.2, 0.4, 0.9], [0.05, 0.7, 0.3]]).unwrap();
        let (la, ga) = gradients(&[(&a, 0.7)], &p, 1e-6).unwrap();
        let (lb, gb) = gradients(&[(&a, 0.7)], &q, 1e-6).unwrap();
        assert!((la - lb).abs() < 1e-14);
        for j in 0..3 {
            assert!((ga.d_stain_bias[j] - gb.d_stain_bias[j]).abs() < 1e-14);
        }
        assert!((ga.d_head_weight - gb.d_head_weight).abs() < 1e-14);
        assert!((ga.d_head_bias - gb.d_head_bias).abs() < 1e-14);
        // the scaled row's gradient shrinks by the scale factor
        for i in 0..3 {
            assert!((ga.d_raw[1][i] - 2.0 * gb.d_raw[1][i]).abs() < 1e-14);
        }
    }

    #[test]
    fn raw_gradient_is_orthogonal_to_its_row() {
        let p = params(RAW, [0.3, 0.0, -0.1], -0.8, 0.2);
        let a = Patch::new(2, 1, vec![[0.2, 0.4, 0.9], [0.05, 0.7, 0.3]]).unwrap();
        let (_, g) = gradients(&[(&a, 2.0)], &p, 1e-6).unwrap();
        for (grow, row) in g.d_raw.iter().zip(RAW) {
            let dot: f64 = (0..3).map(|i| grow[i] * row[i]).sum();
            assert!(dot.abs() < 1e-14);
        }
    }
}
