//! Gaussian kernel estimates of the residual density, its derivative, and
//! the score vectors used by the martingale transform.

use serde::{Deserialize, Serialize};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Bandwidth `h = c n^{-1/10}` with the standard normal kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub c: f64,
    /// Density floor relative to the largest density at a sample point.
    pub floor_rel: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { c: 1.0, floor_rel: 1e-4 }
    }
}

impl KernelConfig {
    pub fn with_c(c: f64) -> Self {
        KernelConfig { c, ..Default::default() }
    }

    pub fn bandwidth(&self, n: usize) -> f64 {
        self.c * (n as f64).powf(-0.1)
    }
}

fn phi(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// `(nh)^{-1} sum_i K((t - e_i)/h)`.
pub fn kde(sample: &[f64], h: f64, t: f64) -> f64 {
    let n = sample.len() as f64;
    sample.iter().map(|&e| phi((t - e) / h)).sum::<f64>() / (n * h)
}

/// `(nh^2)^{-1} sum_i K'((t - e_i)/h)` with `K'(u) = -u K(u)`.
pub fn kde_deriv(sample: &[f64], h: f64, t: f64) -> f64 {
    let n = sample.len() as f64;
    sample
        .iter()
        .map(|&e| {
            let u = (t - e) / h;
            -u * phi(u)
        })
        .sum::<f64>()
        / (n * h * h)
}

fn kde_pair(sample: &[f64], h: f64, t: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut d = 0.0;
    for &e in sample {
        let u = (t - e) / h;
        let k = phi(u);
        f += k;
        d -= u * k;
    }
    let n = sample.len() as f64;
    (f / (n * h), d / (n * h * h))
}

/// Which test the score feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `h(t) = (1, f'/f)`.
    Mean,
    /// `h(t) = (1, f'/f, 1 + t f'/f)`.
    Variance,
}

impl ScoreKind {
    pub fn dim(self) -> usize {
        match self {
            ScoreKind::Mean => 2,
            ScoreKind::Variance => 3,
        }
    }
}

/// Score vectors at every sorted residual.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    pub kind: ScoreKind,
    pub bandwidth: f64,
    pub points: Vec<f64>,
    /// Density after flooring.
    pub f_hat: Vec<f64>,
    pub fdot_hat: Vec<f64>,
    /// Row-major `n x dim`.
    pub h: Vec<f64>,
    pub floored: usize,
}

impl ScoreTable {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.h[k * d..(k + 1) * d]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Score table over `sorted_points` (normally the sorted residuals) using
/// the residual sample itself for the kernel estimates.
pub fn score_table(sorted_points: &[f64], cfg: &KernelConfig, kind: ScoreKind) -> ScoreTable {
    let n = sorted_points.len();
    let bw = cfg.bandwidth(n);
    let mut f_hat = Vec::with_capacity(n);
    let mut fdot_hat = Vec::with_capacity(n);
    for &t in sorted_points {
        let (f, d) = kde_pair(sorted_points, bw, t);
        f_hat.push(f);
        fdot_hat.push(d);
    }
    let fmax = f_hat.iter().cloned().fold(0.0, f64::max);
    let floor = cfg.floor_rel * fmax;
    let mut floored = 0;
    for f in &mut f_hat {
        if *f < floor {
            *f = floor;
            floored += 1;
        }
    }
    let dim = kind.dim();
    let mut h = Vec::with_capacity(n * dim);
    for k in 0..n {
        let ratio = if f_hat[k] > 0.0 { fdot_hat[k] / f_hat[k] } else { 0.0 };
        h.push(1.0);
        h.push(ratio);
        if kind == ScoreKind::Variance {
            h.push(1.0 + sorted_points[k] * ratio);
        }
    }
    ScoreTable { kind, bandwidth: bw, points: sorted_points.to_vec(), f_hat, fdot_hat, h, floored }
}
