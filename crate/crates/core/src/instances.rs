//! Built-in problem instances for the demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::measures::Marginal;

/// `l` equispaced points on `[0, 1]`.
pub fn unit_grid(l: usize) -> Vec<f64> {
    if l == 1 {
        return vec![0.5];
    }
    (0..l).map(|i| i as f64 / (l - 1) as f64).collect()
}

/// Two-bump density on `[0, 1]` with a small floor, so every grid point
/// carries mass.
pub fn bimodal_density(x: f64) -> f64 {
    let bump = |m: f64, s: f64| (-(x - m) * (x - m) / (2.0 * s * s)).exp();
    bump(0.2, 0.06) + 0.6 * bump(0.62, 0.1) + 0.05
}

/// The two-marginal line instance: a bimodal measure on `l` grid points and
/// its mirror image `x ↦ 1 − x`.
pub fn reflected_pair(l: usize) -> (Marginal, Marginal) {
    let xs = unit_grid(l);
    let w: Vec<f64> = xs.iter().map(|&x| bimodal_density(x)).collect();
    let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let mu1 = Marginal::from_weights(pts.clone(), w.clone())
        .expect("positive weights")
        .with_label("bimodal");
    let mirrored: Vec<f64> = mu1.masses().iter().rev().copied().collect();
    let mu2 = Marginal::new(pts, mirrored)
        .expect("mirror of a normalized measure")
        .with_label("reflected");
    (mu1, mu2)
}

/// Discretized normal density on the given 1-D points; points whose weight
/// underflows are dropped.
pub fn gaussian_on_grid(xs: &[f64], mean: f64, sd: f64) -> Marginal {
    let (pts, w): (Vec<Vec<f64>>, Vec<f64>) = xs
        .iter()
        .map(|&x| (vec![x], (-(x - mean) * (x - mean) / (2.0 * sd * sd)).exp()))
        .filter(|(_, w)| *w > 0.0)
        .unzip();
    Marginal::from_weights(pts, w).expect("some weight survives")
}

/// Six Gaussians on 101 grid points at equidistant times, with means that
/// move back and forth.
pub fn gaussian_spline_series() -> (Vec<Marginal>, Vec<f64>) {
    let xs = unit_grid(101);
    let means = [0.2, 0.45, 0.7, 0.55, 0.35, 0.6];
    let sds = [0.05, 0.06, 0.05, 0.07, 0.05, 0.06];
    let ms = means
        .iter()
        .zip(sds)
        .enumerate()
        .map(|(i, (&m, s))| gaussian_on_grid(&xs, m, s).with_label(format!("gaussian {i}")))
        .collect();
    let times = (0..6).map(|i| i as f64 / 5.0).collect();
    (ms, times)
}

/// 28×28 grayscale rings that resemble handwritten zeros, with random
/// position, shape, slant and stroke width.
pub fn synthetic_digits(count: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let cx = 13.5 + rng.gen_range(-2.0..2.0);
            let cy = 13.5 + rng.gen_range(-2.0..2.0);
            let a = rng.gen_range(4.5..7.5);
            let b = rng.gen_range(7.0..10.0);
            let slant = rng.gen_range(-0.35..0.35);
            let width = rng.gen_range(1.2..2.2);
            let mut img = vec![0u8; 28 * 28];
            for i in 0..28 {
                for j in 0..28 {
                    let y = i as f64 - cy;
                    let x = j as f64 - cx + slant * y;
                    let r = ((x / a).powi(2) + (y / b).powi(2)).sqrt();
                    let d = (r - 1.0).abs() * a.min(b);
                    let v = (1.0 - d / width).clamp(0.0, 1.0);
                    img[i * 28 + j] = (255.0 * v).round() as u8;
                }
            }
            img
        })
        .collect()
}
