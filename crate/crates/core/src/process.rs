//! Weighted residual empirical processes as right-continuous step functions.

use std::io::Write;

use crate::error::{Error, Result};
use crate::weights::WeightVector;

/// Step function with a jump at every sorted residual.
///
/// `values[k]` is the process evaluated at `jump_points[k]`. Ties share the
/// value at the last tied index, matching the `<=` indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProcess {
    pub jump_points: Vec<f64>,
    /// Increment attached to each sorted point, in sorted order.
    pub increments: Vec<f64>,
    pub values: Vec<f64>,
    /// Original observation index of each sorted point.
    pub order: Vec<usize>,
}

/// Indices sorting `v` ascending; equal values keep their original order.
pub fn stable_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

/// Replace each run of equal jump points by the value at its last index.
pub(crate) fn tie_adjust(points: &[f64], values: &mut [f64]) {
    let n = points.len();
    let mut k = n;
    while k > 0 {
        let end = k - 1;
        let mut start = end;
        while start > 0 && points[start - 1] == points[end] {
            start -= 1;
        }
        let v = values[end];
        for slot in &mut values[start..end] {
            *slot = v;
        }
        k = start;
    }
}

impl StepProcess {
    /// Build from sorted points and per-point increments.
    pub fn from_sorted(jump_points: Vec<f64>, increments: Vec<f64>, order: Vec<usize>) -> Self {
        let mut acc = 0.0;
        let mut values: Vec<f64> = increments
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        tie_adjust(&jump_points, &mut values);
        StepProcess { jump_points, increments, values, order }
    }

    pub fn len(&self) -> usize {
        self.jump_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_points.is_empty()
    }

    /// Right-continuous evaluation: the value at the last jump `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jump_points.partition_point(|&z| z <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Scale every increment and value by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        StepProcess {
            jump_points: self.jump_points.clone(),
            increments: self.increments.iter().map(|v| a * v).collect(),
            values: self.values.iter().map(|v| a * v).collect(),
            order: self.order.clone(),
        }
    }

    /// Write `t,value` rows for plotting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.jump_points.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// `U_n(t) = n^{-1/2} sum_i g0_i 1(e_i <= t)`.
pub fn build_process(residuals: &[f64], w: &WeightVector) -> Result<StepProcess> {
    build_process_from_centered(residuals, &w.g0)
}

pub fn build_process_from_centered(residuals: &[f64], g0: &[f64]) -> Result<StepProcess> {
    if residuals.len() != g0.len() {
        return Err(Error::Dimension(format!("{} residuals vs {} weights", residuals.len(), g0.len())));
    }
    let n = residuals.len();
    let scale = 1.0 / (n as f64).sqrt();
    let order = stable_order(residuals);
    let points: Vec<f64> = order.iter().map(|&i| residuals[i]).collect();
    let inc: Vec<f64> = order.iter().map(|&i| scale * g0[i]).collect();
    Ok(StepProcess::from_sorted(points, inc, order))
}

/// Empirical distribution function of a sample.
#[derive(Clone, Debug)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    /// `#{x_i <= t} / n`.
    pub fn eval(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&z| z <= t) as f64 / self.sorted.len() as f64
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Smallest sample point `t` with `F(t) >= level`.
    pub fn quantile(&self, level: f64) -> f64 {
        let n = self.sorted.len();
        let k = ((level * n as f64).ceil() as usize).clamp(1, n);
        self.sorted[k - 1]
    }
}

pub fn ecdf(sample: &[f64]) -> Result<Ecdf> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("empirical distribution of an empty sample".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Ecdf { sorted })
}
