use nsl_core::{forward, forward_histogram, ColorHistogram, NslParams, Patch, StainMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

fn random_params(rng: &mut ChaCha8Rng) -> NslParams {
    let raw = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.1..1.0)));
    NslParams::new(
        StainMatrix::new(raw).unwrap(),
        std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.0..1.0),
    )
    .unwrap()
}

/// A `side`×`side` patch drawing from a palette of `colors` random colors.
fn palette_patch(rng: &mut ChaCha8Rng, side: usize, colors: usize) -> Patch {
    let palette: Vec<[f64; 3]> = (0..colors)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
        .collect();
    let pixels = (0..side * side)
        .map(|_| palette[rng.random_range(0..colors)])
        .collect();
    Patch::new(side, side, pixels).unwrap()
}

#[test]
fn histogram_forward_matches_pixel_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let params = random_params(&mut rng);
        let side = rng.random_range(1..24);
        let colors = rng.random_range(1..64);
        let patch = palette_patch(&mut rng, side, colors);
        let a = forward(&patch, &params, EPS).unwrap();
        let b = forward_histogram(&ColorHistogram::from_patch(&patch), &params, EPS).unwrap();
        assert!((a - b).abs() < 1e-10, "patch {i}: {a} vs {b}");
    }
}

#[test]
fn prediction_ignores_pixel_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = random_params(&mut rng);
    let patch = palette_patch(&mut rng, 16, 300);
    let mut shuffled = patch.pixels().to_vec();
    shuffled.shuffle(&mut rng);
    let other = Patch::new(16, 16, shuffled).unwrap();
    let a = forward(&patch, &params, EPS).unwrap();
    let b = forward(&other, &params, EPS).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn rescaling_a_stain_row_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let params = random_params(&mut rng);
        let patch = palette_patch(&mut rng, 8, 20);
        let mut raw = *params.stain.raw();
        let row = rng.random_range(0..3);
        let scale = rng.random_range(0.01..100.0);
        raw[row].iter_mut().for_each(|v| *v *= scale);
        let scaled = NslParams::new(
            StainMatrix::new(raw).unwrap(),
            params.stain_bias,
            params.head_weight,
            params.head_bias,
        )
        .unwrap();
        let a = forward(&patch, &params, EPS).unwrap();
        let b = forward(&patch, &scaled, EPS).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
