//! Pearson correlation, its two-sided t-test p-value and median-based fold
//! aggregation.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("empty input")]
    Empty,
    #[error("p-value {0} outside (0, 1]")]
    OutOfRange(f64),
    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(f64),
}

/// Median; even counts average the two middle values. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew(n));
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::ZeroVariance);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under the null of zero correlation, from the
/// Student t distribution with `n - 2` degrees of freedom.
///
/// With `t = r·√(df/(1−r²))` the tail mass `2·(1 − F_t(|t|))` equals
/// `I_x(df/2, 1/2)` at `x = df/(df + t²) = 1 − r²`, so the incomplete beta
/// is evaluated at `1 − r²` directly.
pub fn pearson_pvalue(r: f64, n: usize) -> Result<f64, StatsError> {
    if n < 3 {
        return Err(StatsError::TooFew(n));
    }
    if !(r.abs() <= 1.0) {
        return Err(StatsError::InvalidCorrelation(r));
    }
    let df = (n - 2) as f64;
    let a = r.abs();
    let x = (1.0 - a) * (1.0 + a);
    let p = regularized_incomplete_beta(x, 0.5 * df, 0.5);
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0))
}

/// `median(r)` across folds.
pub fn combine_correlations(per_fold_r: &[f64]) -> Result<f64, StatsError> {
    median(per_fold_r).ok_or(StatsError::Empty)
}

/// Conservative combined significance `min(1, 2·median(p))`.
pub fn combine_pvalues(per_fold_p: &[f64]) -> Result<f64, StatsError> {
    if let Some(bad) = per_fold_p.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(StatsError::OutOfRange(*bad));
    }
    let m = median(per_fold_p).ok_or(StatsError::Empty)?;
    Ok((2.0 * m).min(1.0))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(z)` for `z > 0` (Lanczos, g = 7).
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // reflection: Γ(z)Γ(1−z) = π / sin(πz)
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

const CF_TOLERANCE: f64 = 1e-12;
const CF_MAX_ITER: usize = 10_000;

/// Regularized incomplete beta `I_x(a, b)` by continued fraction, using
/// `I_x(a,b) = 1 − I_{1−x}(b,a)` on the slowly converging side.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[0.1; 3]),
            Err(StatsError::ZeroVariance)
        );
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 3.0]),
            Err(StatsError::TooFew(2))
        );
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0]),
            Err(StatsError::LengthMismatch(3, 2))
        );
    }

    #[test]
    fn pvalue_examples() {
        for n in [3, 10, 200] {
            assert_eq!(pearson_pvalue(0.0, n).unwrap(), 1.0);
        }
        assert!(pearson_pvalue(0.999_999, 10).unwrap() < 1e-10);
        assert!(pearson_pvalue(1.0, 10).unwrap() > 0.0);
        assert!(pearson_pvalue(-1.0, 10).unwrap() < 1e-300);
        assert!((pearson_pvalue(0.5, 20).unwrap() - 0.0248).abs() < 5e-5);
        assert_eq!(pearson_pvalue(0.5, 2), Err(StatsError::TooFew(2)));
        assert!(pearson_pvalue(1.5, 10).is_err());
        // df = 1: t is Cauchy, p = 1 − 2·asin(r)/π
        let r: f64 = 0.3;
        let want = 1.0 - 2.0 * r.asin() / std::f64::consts::PI;
        assert!((pearson_pvalue(r, 3).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        // ln(49!) = Σ ln k
        let ln_fact: f64 = (1..50).map(|k| (k as f64).ln()).sum();
        assert!((ln_gamma(50.0) - ln_fact).abs() < 1e-11);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a
        for x in [0.1, 0.5, 0.93] {
            assert!((regularized_incomplete_beta(x, 1.0, 1.0) - x).abs() < 1e-13);
            assert!((regularized_incomplete_beta(x, 3.5, 1.0) - x.powf(3.5)).abs() < 1e-13);
        }
        assert_eq!(regularized_incomplete_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 2.0, 3.0), 1.0);
    }

    #[test]
    fn combining() {
        assert_eq!(combine_correlations(&[0.2, 0.5, 0.9]).unwrap(), 0.5);
        assert!((combine_correlations(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(combine_correlations(&[0.7]).unwrap(), 0.7);
        assert_eq!(combine_correlations(&[]), Err(StatsError::Empty));

        assert!((combine_pvalues(&[0.01, 0.02, 0.03]).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(combine_pvalues(&[0.6, 0.7, 0.8]).unwrap(), 1.0);
        assert_eq!(combine_pvalues(&[0.3]).unwrap(), 0.6);
        assert_eq!(combine_pvalues(&[]), Err(StatsError::Empty));
        assert_eq!(combine_pvalues(&[0.0]), Err(StatsError::OutOfRange(0.0)));
        assert_eq!(combine_pvalues(&[1.5]), Err(StatsError::OutOfRange(1.5)));
    }
}
