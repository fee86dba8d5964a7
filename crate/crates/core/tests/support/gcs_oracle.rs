//! Independent 1-D reference for the covariate-shift estimator: Scott-rule KDEs
//! and midpoint quadrature of the non-overlap integral.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn gaussian(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| vec![d.sample(&mut rng)]).collect()
}

/// Scott-rule 1-D Gaussian KDE written out directly, independent of the library.
pub fn kde_1d(points: &[Vec<f64>]) -> impl Fn(f64) -> f64 + '_ {
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let sd = (points.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = sd * n.powf(-1.0 / 5.0);
    move |z| {
        points
            .iter()
            .map(|p| (-0.5 * ((z - p[0]) / h).powi(2)).exp())
            .sum::<f64>()
            / (n * h * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// ½∫_S |p_a − p_b| by midpoint quadrature, S = {p_a < ε or p_b < ε}.
pub fn quadrature_gcs(a: &[Vec<f64>], b: &[Vec<f64>], rel_eps: f64) -> f64 {
    let (pa, pb) = (kde_1d(a), kde_1d(b));
    let peak = a.iter().map(|p| pa(p[0])).chain(b.iter().map(|p| pb(p[0]))).fold(0.0, f64::max);
    let eps = rel_eps * peak;
    let (lo, hi, steps) = (-12.0, 13.0, 25_000);
    let dx = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        let z = lo + (i as f64 + 0.5) * dx;
        let (x, y) = (pa(z), pb(z));
        if x < eps || y < eps {
            total += (x - y).abs() * dx;
        }
    }
    0.5 * total
}
