//! Empirical martingale transformation of residual processes.
//!
//! For sorted residuals `e_(1) <= ... <= e_(n)` with score rows `h_k`,
//!
//! ```text
//! Gamma_k = n^{-1} sum_{j >= k} h_j h_j'
//! A_k     = sum_{j >= k} h_j dU_j
//! TU(t)   = U(t) - sum_{e_(j) <= t} n^{-1} h_j' Gamma_j^- A_j
//! ```
//!
//! where `dU_j` is the jump of the process at `e_(j)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::process::StepProcess;
use crate::smoothing::ScoreTable;

/// Relative eigenvalue cutoff for the generalized inverse.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Moore–Penrose inverse of a symmetric matrix by eigendecomposition.
/// Eigenvalues at or below `rel_tol * max |lambda|` are treated as zero.
/// Returns the inverse and the numerical rank.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let d = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let mut out = DMatrix::zeros(d, d);
    let mut rank = 0;
    if lmax == 0.0 || !lmax.is_finite() {
        return (out, 0);
    }
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > rel_tol * lmax {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    (out, rank)
}

/// `Gamma_k` and its generalized inverse at every sorted residual.
#[derive(Clone, Debug)]
pub struct TransformMachinery {
    pub score: ScoreTable,
    /// Row-major `dim x dim` blocks, one per point.
    pub gamma: Vec<f64>,
    pub gamma_pinv: Vec<f64>,
    /// `A_k` for the process the machinery was built from, `dim` per point.
    pub suffix_integrals: Vec<f64>,
    /// Numerical rank of each `Gamma_k`.
    pub ranks: Vec<usize>,
    pub rel_tol: f64,
}

impl TransformMachinery {
    pub fn dim(&self) -> usize {
        self.score.dim()
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn gamma_at(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.gamma[k * d * d..(k + 1) * d * d])
    }

    pub fn gamma_pinv_at(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.gamma_pinv[k * d * d..(k + 1) * d * d])
    }

    /// `A_k = sum_{j >= k} h_j dU_j`, flattened.
    pub fn suffix_for(&self, proc: &StepProcess) -> Vec<f64> {
        let d = self.dim();
        let n = self.len();
        let mut out = vec![0.0; n * d];
        let mut acc = vec![0.0; d];
        for k in (0..n).rev() {
            let h = self.score.row(k);
            for c in 0..d {
                acc[c] += h[c] * proc.increments[k];
            }
            out[k * d..(k + 1) * d].copy_from_slice(&acc);
        }
        out
    }
}

pub fn build_machinery(proc: &StepProcess, score: &ScoreTable) -> Result<TransformMachinery> {
    build_machinery_with(proc, score, DEFAULT_REL_TOL)
}

pub fn build_machinery_with(proc: &StepProcess, score: &ScoreTable, rel_tol: f64) -> Result<TransformMachinery> {
    let n = score.len();
    if proc.len() != n {
        return Err(Error::Dimension(format!("process has {} points, score table {}", proc.len(), n)));
    }
    if proc.jump_points != score.points {
        return Err(Error::InvalidInput("process and score table use different residuals".into()));
    }
    let d = score.dim();
    let nf = n as f64;
    let mut gamma = vec![0.0; n * d * d];
    let mut acc = vec![0.0; d * d];
    for k in (0..n).rev() {
        let h = score.row(k);
        for r in 0..d {
            for c in 0..d {
                acc[r * d + c] += h[r] * h[c] / nf;
            }
        }
        gamma[k * d * d..(k + 1) * d * d].copy_from_slice(&acc);
    }
    let mut gamma_pinv = vec![0.0; n * d * d];
    let mut ranks = vec![0; n];
    for k in 0..n {
        let g = DMatrix::from_row_slice(d, d, &gamma[k * d * d..(k + 1) * d * d]);
        let (p, rank) = pseudo_inverse(&g, rel_tol);
        ranks[k] = rank;
        for r in 0..d {
            for c in 0..d {
                gamma_pinv[k * d * d + r * d + c] = p[(r, c)];
            }
        }
    }
    let mut mach = TransformMachinery {
        score: score.clone(),
        gamma,
        gamma_pinv,
        suffix_integrals: Vec::new(),
        ranks,
        rel_tol,
    };
    mach.suffix_integrals = mach.suffix_for(proc);
    Ok(mach)
}

/// Apply the empirical transform to a process on the machinery's points.
pub fn transform_process(proc: &StepProcess, mach: &TransformMachinery) -> Result<StepProcess> {
    let n = mach.len();
    if proc.len() != n || proc.jump_points != mach.score.points {
        return Err(Error::InvalidInput("process does not share the machinery's jump points".into()));
    }
    let d = mach.dim();
    let nf = n as f64;
    let a = mach.suffix_for(proc);
    let mut inc = Vec::with_capacity(n);
    let mut tmp = vec![0.0; d];
    for k in 0..n {
        let p = &mach.gamma_pinv[k * d * d..(k + 1) * d * d];
        let ak = &a[k * d..(k + 1) * d];
        for r in 0..d {
            tmp[r] = (0..d).map(|c| p[r * d + c] * ak[c]).sum();
        }
        let h = mach.score.row(k);
        let comp: f64 = (0..d).map(|r| h[r] * tmp[r]).sum::<f64>() / nf;
        inc.push(proc.increments[k] - comp);
    }
    Ok(StepProcess::from_sorted(proc.jump_points.clone(), inc, proc.order.clone()))
}

/// Population-level transform for standard normal errors with score
/// `h(z) = (1, -z)`, used to check the operator numerically.
pub mod population {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).expect("unit normal")
    }

    pub fn phi(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    /// Upper tail `1 - Phi(z)` without cancellation.
    pub fn upper_tail(z: f64) -> f64 {
        std_normal().sf(z)
    }

    pub fn cdf(z: f64) -> f64 {
        std_normal().cdf(z)
    }

    /// `Gamma(z) = int_z^inf h h' dF` in closed form.
    pub fn gamma(z: f64) -> [[f64; 2]; 2] {
        let q = upper_tail(z);
        let p = phi(z);
        [[q, -p], [-p, z * p + q]]
    }

    /// Function transformed by the checker.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Target {
        /// `W = F`, so `dW = h_1 dF`.
        Cdf,
        /// `W = f`, so `dW = h_2 dF`.
        Density,
    }

    impl Target {
        fn value(self, z: f64) -> f64 {
            match self {
                Target::Cdf => cdf(z),
                Target::Density => phi(z),
            }
        }

        /// `int_z^inf h dW`.
        fn tail(self, z: f64) -> [f64; 2] {
            let g = gamma(z);
            match self {
                Target::Cdf => [g[0][0], g[1][0]],
                Target::Density => [g[0][1], g[1][1]],
            }
        }
    }

    fn solve2(g: [[f64; 2]; 2], a: [f64; 2]) -> [f64; 2] {
        let m = DMatrix::from_row_slice(2, 2, &[g[0][0], g[0][1], g[1][0], g[1][1]]);
        let (p, _) = pseudo_inverse(&m, DEFAULT_REL_TOL);
        [p[(0, 0)] * a[0] + p[(0, 1)] * a[1], p[(1, 0)] * a[0] + p[(1, 1)] * a[1]]
    }

    /// `(t_k, (TW)(t_k))` on a uniform grid of `cells` cells over `[lo, hi]`.
    ///
    /// `dW` uses exact increments of `W`; `dF` inside `Gamma` and in the outer
    /// integral uses the midpoint rule; beyond `hi` the tails are closed
    /// form, and below `lo` the compensator starts from its population value.
    pub fn transform_on_grid(target: Target, lo: f64, hi: f64, cells: usize) -> Vec<(f64, f64)> {
        let delta = (hi - lo) / cells as f64;
        let z: Vec<f64> = (0..=cells).map(|k| lo + delta * k as f64).collect();
        let mid: Vec<f64> = (0..cells).map(|k| 0.5 * (z[k] + z[k + 1])).collect();
        let w: Vec<f64> = mid.iter().map(|&m| phi(m) * delta).collect();
        let dw: Vec<f64> = (0..cells).map(|k| target.value(z[k + 1]) - target.value(z[k])).collect();

        let tail_g = gamma(hi);
        let tail_a = target.tail(hi);
        let mut g = tail_g;
        let mut a = tail_a;
        let mut integrand = vec![0.0; cells];
        for k in (0..cells).rev() {
            let h = [1.0, -mid[k]];
            for r in 0..2 {
                for c in 0..2 {
                    g[r][c] += h[r] * h[c] * w[k];
                }
                a[r] += h[r] * dw[k];
            }
            let x = solve2(g, a);
            integrand[k] = h[0] * x[0] + h[1] * x[1];
        }
        let mut comp = target.value(lo);
        let mut out = Vec::with_capacity(cells + 1);
        out.push((lo, target.value(lo) - comp));
        for k in 0..cells {
            comp += integrand[k] * w[k];
            out.push((z[k + 1], target.value(z[k + 1]) - comp));
        }
        out
    }

    /// `(sup |TF|, sup |Tf|)` over the grid on `[-4, 4]`.
    pub fn annihilation_sup(cells: usize) -> (f64, f64) {
        let sup = |t| {
            transform_on_grid(t, -4.0, 4.0, cells).iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()))
        };
        (sup(Target::Cdf), sup(Target::Density))
    }

    /// Tabulated `Q(u) = int_{-inf}^u Gamma(z)^{-1} h(z) dF(z)`, so that for a
    /// process `U(t) = n^{-1/2} sum g_i 1(eps_i <= t)` the compensator is
    /// `n^{-1/2} sum g_i Q(min(t, eps_i))' h(eps_i)`.
    #[derive(Clone, Debug)]
    pub struct CompensatorTable {
        lo: f64,
        step: f64,
        q: Vec<[f64; 2]>,
    }

    impl CompensatorTable {
        /// Grid on `[lo, hi]`; `Q(lo)` is approximated by zero.
        pub fn new(lo: f64, hi: f64, cells: usize) -> Self {
            let step = (hi - lo) / cells as f64;
            let mut q = Vec::with_capacity(cells + 1);
            let mut acc = [0.0, 0.0];
            q.push(acc);
            for k in 0..cells {
                let m = lo + step * (k as f64 + 0.5);
                let x = solve2(gamma(m), [1.0, -m]);
                let wgt = phi(m) * step;
                acc[0] += x[0] * wgt;
                acc[1] += x[1] * wgt;
                q.push(acc);
            }
            CompensatorTable { lo, step, q }
        }

        pub fn eval(&self, u: f64) -> [f64; 2] {
            if u <= self.lo {
                return [0.0, 0.0];
            }
            let pos = (u - self.lo) / self.step;
            let k = pos.floor() as usize;
            if k + 1 >= self.q.len() {
                return *self.q.last().expect("non-empty table");
            }
            let f = pos - k as f64;
            let (a, b) = (self.q[k], self.q[k + 1]);
            [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
        }

        /// `(U(t), TU(t))` for the process built from `(eps, g0)`.
        pub fn raw_and_transformed(&self, eps: &[f64], g0: &[f64], t: f64) -> (f64, f64) {
            let scale = 1.0 / (eps.len() as f64).sqrt();
            let mut u = 0.0;
            let mut comp = 0.0;
            for (&e, &g) in eps.iter().zip(g0) {
                if e <= t {
                    u += g;
                }
                let q = self.eval(e.min(t));
                comp += g * (q[0] - e * q[1]);
            }
            (u * scale, (u - comp) * scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::population::*;
    use super::*;
    use crate::process::build_process_from_centered;
    use crate::smoothing::{score_table, KernelConfig, ScoreKind};
    use proptest::prelude::*;

    fn toy_score(points: Vec<f64>, rows: &[[f64; 2]]) -> ScoreTable {
        let n = points.len();
        let mut t = score_table(&points, &KernelConfig::default(), ScoreKind::Mean);
        t.h = rows.iter().flat_map(|r| r.iter().cloned()).collect();
        assert_eq!(t.h.len(), 2 * n);
        t
    }

    fn naive_transform(points: &[f64], inc: &[f64], h: &[[f64; 2]], t: f64) -> f64 {
        let n = points.len();
        let nf = n as f64;
        let mut out = 0.0;
        for j in 0..n {
            if points[j] > t {
                continue;
            }
            out += inc[j];
            let mut g = DMatrix::<f64>::zeros(2, 2);
            let mut a = DMatrix::<f64>::zeros(2, 1);
            for i in j..n {
                for r in 0..2 {
                    for c in 0..2 {
                        g[(r, c)] += h[i][r] * h[i][c] / nf;
                    }
                    a[(r, 0)] += h[i][r] * inc[i];
                }
            }
            let (p, _) = pseudo_inverse(&g, DEFAULT_REL_TOL);
            let x = p * a;
            out -= (h[j][0] * x[(0, 0)] + h[j][1] * x[(1, 0)]) / nf;
        }
        out
    }

    #[test]
    fn pinv_examples() {
        let (p, r) = pseudo_inverse(&DMatrix::identity(3, 3), DEFAULT_REL_TOL);
        assert_eq!(r, 3);
        assert!((p - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-15);
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (p, r) = pseudo_inverse(&d, DEFAULT_REL_TOL);
        assert_eq!(r, 1);
        assert!((p - &d).abs().max() < 1e-15);
        let (z, r) = pseudo_inverse(&DMatrix::zeros(2, 2), DEFAULT_REL_TOL);
        assert_eq!(r, 0);
        assert_eq!(z, DMatrix::zeros(2, 2));
    }

    proptest! {
        #[test]
        fn pinv_first_penrose(entries in prop::collection::vec(-3.0f64..3.0, 6), rank in 1usize..=3) {
            let b = DMatrix::from_row_slice(3, 2, &entries);
            let full = DMatrix::from_fn(3, 3, |r, c| entries[(r + c) % 6] * entries[(2 * r + c) % 6] + if r == c { 0.1 } else { 0.0 });
            let m = match rank {
                1 => { let v = b.column(0); v * v.transpose() }
                2 => &b * b.transpose(),
                _ => full.transpose() * &full,
            };
            let (p, _) = pseudo_inverse(&m, DEFAULT_REL_TOL);
            let back = &m * &p * &m;
            prop_assert!((back - &m).abs().max() <= 1e-8 * (1.0 + m.abs().max()));
        }

        #[test]
        fn transform_is_linear(
            pairs in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0, -2.0f64..2.0), 12..40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let res: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let center = |v: Vec<f64>| { let m = v.iter().sum::<f64>() / v.len() as f64; v.into_iter().map(|x| x - m).collect::<Vec<_>>() };
            let g1 = center(pairs.iter().map(|p| p.1).collect());
            let g2 = center(pairs.iter().map(|p| p.2).collect());
            let gc: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
            let p1 = build_process_from_centered(&res, &g1).unwrap();
            let p2 = build_process_from_centered(&res, &g2).unwrap();
            let pc = build_process_from_centered(&res, &gc).unwrap();
            let score = score_table(&p1.jump_points, &KernelConfig::default(), ScoreKind::Mean);
            let mach = build_machinery(&p1, &score).unwrap();
            let t1 = transform_process(&p1, &mach).unwrap();
            let t2 = transform_process(&p2, &mach).unwrap();
            let tc = transform_process(&pc, &mach).unwrap();
            let big = tc.values.iter().chain(&t1.values).chain(&t2.values).fold(1.0f64, |m, v| m.max(v.abs()));
            // near the top the suffix Gamma rests on a few points and its
            // inverse amplifies rounding
            for k in 0..res.len() {
                let err = (a * t1.values[k] + b * t2.values[k] - tc.values[k]).abs();
                prop_assert!(err <= 1e-8 * big, "k {} err {} big {}", k, err, big);
            }
        }

        #[test]
        fn gamma_suffix_monotone(raw in prop::collection::vec(-4.0f64..4.0, 12..50)) {
            // residuals from a continuous law have no ties
            let sample: Vec<f64> = raw.iter().enumerate().map(|(i, v)| v + 1e-3 * i as f64).collect();
            let g0: Vec<f64> = vec![0.0; sample.len()];
            let p = build_process_from_centered(&sample, &g0).unwrap();
            let score = score_table(&p.jump_points, &KernelConfig::default(), ScoreKind::Variance);
            let mach = build_machinery(&p, &score).unwrap();
            for k in 0..sample.len() {
                let gk = mach.gamma_at(k);
                prop_assert!((&gk - gk.transpose()).abs().max() == 0.0);
                let back = &gk * mach.gamma_pinv_at(k) * &gk;
                // forming M P M in floating point costs about eps * cond(M)
                let ev = SymmetricEigen::new(gk.clone()).eigenvalues;
                let kept = ev.iter().filter(|l| l.abs() > DEFAULT_REL_TOL * ev.amax()).fold(f64::INFINITY, |m, l| m.min(l.abs()));
                let cond = ev.amax() / kept;
                let tol = (1e-8 + 16.0 * f64::EPSILON * cond) * (1.0 + gk.abs().max());
                prop_assert!((&back - &gk).abs().max() <= tol, "k={} gk={} back={}", k, gk, back);
                if k + 1 < sample.len() {
                    let diff = &gk - mach.gamma_at(k + 1);
                    let min = SymmetricEigen::new(diff).eigenvalues.min();
                    prop_assert!(min >= -1e-10);
                }
            }
        }
    }

    #[test]
    fn machinery_boundaries() {
        let pts = vec![-1.0, -0.2, 0.3, 0.9];
        let rows = [[1.0, 0.5], [1.0, -0.3], [1.0, 2.0], [1.0, -1.0]];
        let p = build_process_from_centered(&pts, &[1.0, -2.0, 0.5, 0.5]).unwrap();
        let mach = build_machinery(&p, &toy_score(pts, &rows)).unwrap();
        assert!((mach.gamma_at(0)[(0, 0)] - 1.0).abs() < 1e-15);
        // the last suffix holds a single term
        let last = mach.gamma_at(3);
        assert!((last[(1, 1)] - 0.25).abs() < 1e-15);
        assert_eq!(mach.ranks[3], 1);
    }

    #[test]
    fn toy_matches_naive_triple_loop() {
        let pts = vec![-1.3, -0.4, 0.1, 0.7, 1.6];
        let rows = [[1.0, 1.2], [1.0, 0.4], [1.0, -0.1], [1.0, -0.8], [1.0, -1.5]];
        let g0 = [0.7, -1.1, 0.3, 0.9, -0.8];
        let p = build_process_from_centered(&pts, &g0).unwrap();
        let mach = build_machinery(&p, &toy_score(pts.clone(), &rows)).unwrap();
        let tp = transform_process(&p, &mach).unwrap();
        for (k, &t) in pts.iter().enumerate() {
            let naive = naive_transform(&pts, &p.increments, &rows, t);
            assert!((tp.values[k] - naive).abs() < 1e-12, "{k}: {} vs {naive}", tp.values[k]);
        }
    }

    #[test]
    fn zero_process_stays_zero() {
        let pts: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) / 4.0).collect();
        let p = build_process_from_centered(&pts, &[0.0; 20]).unwrap();
        let score = score_table(&pts, &KernelConfig::default(), ScoreKind::Mean);
        let t = transform_process(&p, &build_machinery(&p, &score).unwrap()).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_points_rejected() {
        let p = build_process_from_centered(&[0.0, 1.0, 2.0], &[1.0, 0.0, -1.0]).unwrap();
        let score = score_table(&[0.0, 1.0, 3.0], &KernelConfig::default(), ScoreKind::Mean);
        assert!(build_machinery(&p, &score).is_err());
    }

    #[test]
    fn population_gamma_matches_quadrature() {
        let z = -0.7;
        let g = gamma(z);
        let m = 200_000;
        let step = (12.0 - z) / m as f64;
        let mut q = [[0.0; 2]; 2];
        for k in 0..m {
            let u = z + step * (k as f64 + 0.5);
            let h = [1.0, -u];
            for r in 0..2 {
                for c in 0..2 {
                    q[r][c] += h[r] * h[c] * phi(u) * step;
                }
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                assert!((g[r][c] - q[r][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn population_annihilation_converges() {
        let (f1, d1) = annihilation_sup(2000);
        let (f2, d2) = annihilation_sup(4000);
        assert!(f2 <= 1e-2 && d2 <= 1e-2, "{f2} {d2}");
        assert!(f1 >= 2.0 * f2 && d1 >= 2.0 * d2, "{f1}/{f2} {d1}/{d2}");
    }

    #[test]
    fn compensator_table_of_constant_weight() {
        // g = 1 on every observation: TU(t) = U(t) - comp equals the
        // transform of n^{1/2} F_n, which is small for a large normal sample
        let tab = CompensatorTable::new(-8.0, 1.0, 20_000);
        let mut r = crate::rng::stream(3, &[]);
        use rand::Rng;
        let eps: Vec<f64> = (0..20_000).map(|_| r.sample(rand_distr::StandardNormal)).collect();
        let ones = vec![1.0; eps.len()];
        let (u, tu) = tab.raw_and_transformed(&eps, &ones, 0.0);
        assert!(u > 50.0);
        assert!(tu.abs() < 5.0, "{tu}");
    }
}
