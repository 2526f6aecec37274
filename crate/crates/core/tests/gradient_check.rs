use std::time::{Duration, Instant};

use nsl_core::{gradients, NslParams, Patch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const H: f64 = 1e-6;
const DRAWS: usize = 1000;
/// Guards the 0/0 case of components whose true value is zero.
const FLOOR: f64 = 1e-8;

fn random_case(rng: &mut ChaCha8Rng) -> (NslParams, Patch, f64) {
    let mut flat = [0.0; 14];
    for row in 0..3 {
        loop {
            let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.3 {
                flat[3 * row..3 * row + 3].copy_from_slice(&r);
                break;
            }
        }
    }
    for v in &mut flat[9..12] {
        *v = rng.random_range(-1.0..1.0);
    }
    flat[12] = rng.random_range(-3.0..3.0);
    flat[13] = rng.random_range(-1.0..1.0);
    let pixels = (0..16)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.01..1.0)))
        .collect();
    (
        NslParams::from_flat(&flat).unwrap(),
        Patch::new(4, 4, pixels).unwrap(),
        rng.random_range(-2.0..2.0),
    )
}

fn loss(flat: &[f64; 14], patch: &Patch, target: f64) -> f64 {
    let params = NslParams::from_flat(flat).unwrap();
    gradients(&[(patch, target)], &params, EPS).unwrap().0
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for draw in 0..DRAWS {
        let (params, patch, target) = random_case(&mut rng);
        let analytic = gradients(&[(&patch, target)], &params, EPS)
            .unwrap()
            .1
            .to_flat();
        let base = params.to_flat();
        for k in 0..14 {
            let (mut up, mut down) = (base, base);
            up[k] += H;
            down[k] -= H;
            let numeric = (loss(&up, &patch, target) - loss(&down, &patch, target)) / (2.0 * H);
            let rel =
                (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            assert!(
                rel < 1e-5,
                "draw {draw} component {k}: {} vs {numeric}",
                analytic[k]
            );
        }
    }
    println!("worst relative error {worst:.3e}");
    assert!(start.elapsed() < Duration::from_secs(30));
}
