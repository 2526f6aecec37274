use std::f64::consts::FRAC_PI_2;

use nsl_core::evaluation::stats::{pearson, pearson_pvalue};
use proptest::prelude::*;

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, 1e-15, 50)
}

/// Two-sided t-test p-value by quadrature. Substituting `t = √ν·tan θ` turns
/// the Student density into `cos^(ν−1) θ` on `(−π/2, π/2)`, and `|t| ≥ t₀`
/// becomes `sin θ ≥ |r|`.
fn quadrature_pvalue(r: f64, df: usize) -> f64 {
    let power = df as i32 - 1;
    let density = |theta: f64| theta.cos().powi(power);
    integrate(density, r.abs().asin(), FRAC_PI_2) / integrate(density, 0.0, FRAC_PI_2)
}

#[test]
fn pvalue_matches_quadrature() {
    for df in 3..=100 {
        for r in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let ours = pearson_pvalue(r, df + 2).unwrap();
            let oracle = quadrature_pvalue(r, df);
            assert!(
                (ours - oracle).abs() < 1e-9,
                "df {df} r {r}: {ours} vs {oracle}"
            );
        }
    }
}

#[test]
fn moderate_correlation_in_twenty_spots() {
    let p = pearson_pvalue(0.5, 20).unwrap();
    assert!((p - quadrature_pvalue(0.5, 18)).abs() < 1e-12);
    assert!((p - 0.0248).abs() < 5e-5);
}

fn series(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-100.0..100.0f64, len),
        prop::collection::vec(-100.0..100.0f64, len),
    )
}

proptest! {
    #[test]
    fn pearson_is_affine_invariant(
        (x, y) in series(12),
        a in 0.1..10.0f64,
        b in -50.0..50.0f64,
        flip in any::<bool>(),
    ) {
        let r = pearson(&x, &y).unwrap();
        let sign = if flip { -1.0 } else { 1.0 };
        let y2: Vec<f64> = y.iter().map(|v| sign * a * v + b).collect();
        let r2 = pearson(&x, &y2).unwrap();
        prop_assert!((r2 - sign * r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn pvalue_shrinks_with_strength_and_size(r1 in 0.0..0.99f64, dr in 0.001..0.01f64, n in 3usize..500) {
        let r2 = r1 + dr;
        prop_assert!(pearson_pvalue(r2, n).unwrap() <= pearson_pvalue(r1, n).unwrap());
        prop_assert!(pearson_pvalue(r1, n + 1).unwrap() <= pearson_pvalue(r1, n).unwrap());
        prop_assert_eq!(pearson_pvalue(r1, n).unwrap(), pearson_pvalue(-r1, n).unwrap());
    }
}
