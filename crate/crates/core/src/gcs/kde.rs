use rand::Rng;
use rand_distr::StandardNormal;

use super::GcsError;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Product-Gaussian kernel density estimate with one bandwidth per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    points: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    log_norm: f64,
}

impl Kde {
    /// Scott's rule: `h_d = σ_d · n^(−1/(d_f + 4))`, σ the sample standard deviation.
    pub fn fit(points: Vec<Vec<f64>>) -> Result<Self, GcsError> {
        let (n, dim) = shape(&points)?;
        let factor = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
        let bandwidth = (0..dim)
            .map(|d| {
                let mean = points.iter().map(|p| p[d]).sum::<f64>() / n as f64;
                let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                var.sqrt() * factor
            })
            .collect();
        Self::with_bandwidth(points, bandwidth)
    }

    pub fn with_bandwidth(points: Vec<Vec<f64>>, bandwidth: Vec<f64>) -> Result<Self, GcsError> {
        let (n, dim) = shape(&points)?;
        if bandwidth.len() != dim {
            return Err(GcsError::Argument(format!(
                "{} bandwidths for {dim}-dimensional points",
                bandwidth.len()
            )));
        }
        if let Some(d) = bandwidth.iter().position(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(GcsError::Argument(format!(
                "dimension {d} has no spread; bandwidth {}",
                bandwidth[d]
            )));
        }
        let log_norm = -(n as f64).ln() - dim as f64 * LN_SQRT_2PI - bandwidth.iter().map(|h| h.ln()).sum::<f64>();
        Ok(Kde {
            points,
            bandwidth,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Log density, evaluated with log-sum-exp so far tails stay finite.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim());
        let mut exps = Vec::with_capacity(self.points.len());
        let mut max = f64::NEG_INFINITY;
        for p in &self.points {
            let e = -0.5
                * p.iter()
                    .zip(z)
                    .zip(&self.bandwidth)
                    .map(|((x, z), h)| ((z - x) / h).powi(2))
                    .sum::<f64>();
            max = max.max(e);
            exps.push(e);
        }
        let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        self.log_norm + max + sum.ln()
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.log_density(z).exp()
    }

    /// One draw from the fitted mixture: a uniform support point plus bandwidth-scaled noise.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let centre = &self.points[rng.gen_range(0..self.points.len())];
        centre
            .iter()
            .zip(&self.bandwidth)
            .map(|(x, h)| x + h * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn shape(points: &[Vec<f64>]) -> Result<(usize, usize), GcsError> {
    if points.len() < 2 {
        return Err(GcsError::Argument(format!(
            "a density estimate needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(GcsError::Argument("points must share one nonzero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GcsError::Argument("points must be finite".into()));
    }
    Ok((points.len(), dim))
}
