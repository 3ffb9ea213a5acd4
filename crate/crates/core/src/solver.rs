//! Penalized synthetic-control weights.
//!
//! For one treated series `y` (length T0) and donor block `X` (T0 × J) the
//! weights minimize
//!
//! ```text
//! Σ_t (y_t − Σ_j w_j X_tj)² + γ Σ_j w_j Σ_t (y_t − X_tj)²
//! ```
//!
//! over the unit simplex. The objective is the quadratic `w'Qw + h'w + c`
//! with `Q = X'X`, `h = −2X'y + γ·d` and `d_j = ‖y − X_j‖²`, so the solver
//! works on that form and can be fed either from raw series or from a
//! precomputed cross-product (Gram) matrix.
//!
//! The method is fully-corrective Frank-Wolfe: the linear minimization oracle
//! adds the vertex with the smallest partial derivative, then the objective is
//! minimized exactly over the convex hull of the active vertices by a
//! reduced-space Newton step with a ratio test. Singular reduced Hessians
//! (collinear or duplicated donors, T0 < J) are handled through a pivoted
//! Cholesky factorization: directions of zero curvature along which the
//! objective decreases are followed to the boundary of the face.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::panel::PanelData;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("penalty must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("no donor units")]
    NoDonors,
    #[error("no pre-treatment periods")]
    NoPeriods,
    #[error("non-finite input")]
    NonFinite,
    #[error("no convergence after {iterations} iterations (gap {gap:e}, objective {objective})")]
    IterationLimit {
        iterations: usize,
        gap: f64,
        objective: f64,
        best_weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions<T> {
    /// Stop once the duality gap is at most `gap_tol · (1 + |objective|)`.
    pub gap_tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            gap_tol: T::default_gap_tol(),
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution<T> {
    pub weights: Array1<T>,
    pub objective: T,
    /// Frank-Wolfe duality gap at `weights`, an upper bound on suboptimality.
    pub gap: T,
    pub iterations: usize,
}

/// Simplex weights for every treated unit of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T> {
    /// n_treated × n_donors, rows on the simplex.
    pub weights: Array2<T>,
    pub gamma: T,
}

/// `min w'Qw + h'w + c` over the unit simplex.
#[derive(Debug, Clone)]
pub struct SimplexQp<T> {
    quad: Array2<T>,
    lin: Array1<T>,
    constant: T,
}

/// Penalized objective evaluated straight from the series.
pub fn penalized_objective<T: Scalar>(
    w: ArrayView1<'_, T>,
    treated_pre: ArrayView1<'_, T>,
    donors_pre: ArrayView2<'_, T>,
    gamma: T,
) -> Result<T, SolverError> {
    check_inputs(treated_pre, donors_pre, gamma)?;
    if w.len() != donors_pre.ncols() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} weights for {} donors",
            w.len(),
            donors_pre.ncols()
        )));
    }
    let mut fit = T::zero();
    let mut penalty = T::zero();
    for (t, row) in donors_pre.axis_iter(Axis(0)).enumerate() {
        let y = treated_pre[t];
        let synth = row.dot(&w);
        fit += (y - synth) * (y - synth);
        for (x, &wj) in row.iter().zip(w.iter()) {
            penalty += wj * (y - *x) * (y - *x);
        }
    }
    Ok(fit + gamma * penalty)
}

fn check_inputs<T: Scalar>(
    treated_pre: ArrayView1<'_, T>,
    donors_pre: ArrayView2<'_, T>,
    gamma: T,
) -> Result<(), SolverError> {
    if !(gamma >= T::zero()) {
        return Err(SolverError::NegativeGamma(gamma.to_f64_lossy()));
    }
    if donors_pre.nrows() != treated_pre.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "treated series has {} periods, donor block has {}",
            treated_pre.len(),
            donors_pre.nrows()
        )));
    }
    if donors_pre.ncols() == 0 {
        return Err(SolverError::NoDonors);
    }
    if treated_pre.is_empty() {
        return Err(SolverError::NoPeriods);
    }
    if !gamma.is_finite()
        || treated_pre.iter().any(|v| !v.is_finite())
        || donors_pre.iter().any(|v| !v.is_finite())
    {
        return Err(SolverError::NonFinite);
    }
    Ok(())
}

/// Solves for one treated unit given its pre-period series and the
/// T0 × n_donors donor block.
pub fn solve_weights<T: Scalar>(
    treated_pre: ArrayView1<'_, T>,
    donors_pre: ArrayView2<'_, T>,
    gamma: T,
    options: &SolverOptions<T>,
) -> Result<WeightSolution<T>, SolverError> {
    check_inputs(treated_pre, donors_pre, gamma)?;
    let qp = SimplexQp::penalized(treated_pre, donors_pre, gamma);
    let mut sol = qp.solve(options)?;
    sol.objective = penalized_objective(sol.weights.view(), treated_pre, donors_pre, gamma)?;
    Ok(sol)
}

/// Fits weights for every treated unit of `panel` on all pre periods.
pub fn fit_weight_matrix<T: Scalar>(
    panel: &PanelData<T>,
    gamma: T,
    options: &SolverOptions<T>,
) -> Result<WeightMatrix<T>, SolverError> {
    let donors = panel.donors_pre();
    let mut weights = Array2::zeros((panel.n_treated, panel.n_donors()));
    for i in 0..panel.n_treated {
        let y = panel.outcomes.row(i);
        let sol = solve_weights(y.slice(ndarray::s![..panel.n_pre]), donors, gamma, options)?;
        weights.row_mut(i).assign(&sol.weights);
    }
    Ok(WeightMatrix { weights, gamma })
}

/// Cross products `G = Y Y'` between unit series over a set of periods.
#[derive(Debug, Clone)]
pub struct Gram<T> {
    g: Array2<T>,
}

impl<T: Scalar> Gram<T> {
    /// `series` is units × periods.
    pub fn new(series: ArrayView2<'_, T>) -> Self {
        Gram {
            g: series.dot(&series.t()),
        }
    }

    /// Gram matrix with one period (a column of unit values) removed.
    pub fn without_period(&self, column: ArrayView1<'_, T>) -> Self {
        let n = column.len();
        let mut g = self.g.clone();
        for a in 0..n {
            for b in 0..n {
                g[[a, b]] -= column[a] * column[b];
            }
        }
        Gram { g }
    }

    pub fn matrix(&self) -> ArrayView2<'_, T> {
        self.g.view()
    }

    /// Penalized problem for unit `target` against donor units `donors`.
    pub fn problem(&self, target: usize, donors: &[usize], gamma: T) -> SimplexQp<T> {
        let g = &self.g;
        let m = donors.len();
        let gii = g[[target, target]];
        let quad = Array2::from_shape_fn((m, m), |(a, b)| g[[donors[a], donors[b]]]);
        let two = T::lit(2.0);
        let lin = Array1::from_shape_fn(m, |a| {
            let j = donors[a];
            let cross = g[[target, j]];
            let dist = gii - two * cross + g[[j, j]];
            gamma * dist - two * cross
        });
        SimplexQp {
            quad,
            lin,
            constant: gii,
        }
    }
}

impl<T: Scalar> SimplexQp<T> {
    pub fn new(quad: Array2<T>, lin: Array1<T>, constant: T) -> Self {
        assert_eq!(quad.nrows(), quad.ncols());
        assert_eq!(quad.nrows(), lin.len());
        SimplexQp {
            quad,
            lin,
            constant,
        }
    }

    pub fn penalized(
        treated_pre: ArrayView1<'_, T>,
        donors_pre: ArrayView2<'_, T>,
        gamma: T,
    ) -> Self {
        let two = T::lit(2.0);
        let quad = donors_pre.t().dot(&donors_pre);
        let cross = donors_pre.t().dot(&treated_pre);
        let dist = Array1::from_iter(donors_pre.columns().into_iter().map(|col| {
            col.iter()
                .zip(treated_pre.iter())
                .map(|(&x, &y)| (y - x) * (y - x))
                .sum::<T>()
        }));
        let lin = &dist * gamma - &cross * two;
        SimplexQp {
            quad,
            lin,
            constant: treated_pre.dot(&treated_pre),
        }
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn objective(&self, w: ArrayView1<'_, T>) -> T {
        w.dot(&self.quad.dot(&w)) + self.lin.dot(&w) + self.constant
    }

    pub fn gradient(&self, w: ArrayView1<'_, T>) -> Array1<T> {
        self.quad.dot(&w) * T::lit(2.0) + &self.lin
    }

    pub fn solve(&self, options: &SolverOptions<T>) -> Result<WeightSolution<T>, SolverError> {
        let n = self.dim();
        if n == 0 {
            return Err(SolverError::NoDonors);
        }
        if self.quad.iter().chain(self.lin.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        if n == 1 {
            return Ok(self.finish(vec![T::one()], T::zero(), 0));
        }
        let mut ws = Workspace::new(self);
        // First Frank-Wolfe step from the uniform start uses the classic
        // step size 2/(k+2) = 1 and lands on the best vertex.
        ws.refresh_gradient();
        let (s0, _) = argmin(&ws.g);
        ws.w.fill(T::zero());
        ws.w[s0] = T::one();
        ws.active.fill(false);
        ws.active[s0] = true;
        let mut iterations = 0usize;
        loop {
            ws.minimize_on_face(&mut iterations, options.max_iter);
            ws.refresh_gradient();
            let f = self.objective(ArrayView1::from(&ws.w[..]));
            let (s, gs) = argmin(&ws.g);
            let wg: T = ws.w.iter().zip(&ws.g).map(|(&a, &b)| a * b).sum();
            let gap = (wg - gs).max(T::zero());
            if gap <= options.gap_tol * (T::one() + f.abs()) {
                return Ok(self.finish(ws.w, gap, iterations));
            }
            if iterations >= options.max_iter {
                return Err(self.limit(ws.w, gap, iterations));
            }
            if !ws.active[s] {
                ws.active[s] = true;
            } else if !ws.pairwise_step(s) {
                // No representable descent left along any active edge.
                return Err(self.limit(ws.w, gap, iterations));
            }
            iterations += 1;
        }
    }

    fn finish(&self, w: Vec<T>, gap: T, iterations: usize) -> WeightSolution<T> {
        let mut w = Array1::from(w);
        w.mapv_inplace(|v| v.max(T::zero()));
        let total = w.sum();
        w.mapv_inplace(|v| v / total);
        let objective = self.objective(w.view());
        WeightSolution {
            weights: w,
            objective,
            gap,
            iterations,
        }
    }

    fn limit(&self, w: Vec<T>, gap: T, iterations: usize) -> SolverError {
        let best = self.finish(w, gap, iterations);
        SolverError::IterationLimit {
            iterations,
            gap: gap.to_f64_lossy(),
            objective: best.objective.to_f64_lossy(),
            best_weights: best.weights.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

fn argmin<T: Scalar>(g: &[T]) -> (usize, T) {
    let mut best = 0;
    for j in 1..g.len() {
        if g[j] < g[best] {
            best = j;
        }
    }
    (best, g[best])
}

/// Iterate state and scratch buffers for one solve. Matrices are row-major.
struct Workspace<T> {
    n: usize,
    q: Vec<T>,
    lin: Vec<T>,
    w: Vec<T>,
    g: Vec<T>,
    active: Vec<bool>,
    idx: Vec<usize>,
    free: Vec<usize>,
    // reduced problem of size m = |active| − 1
    h: Vec<T>,
    r: Vec<T>,
    perm: Vec<usize>,
    p: Vec<T>,
    y: Vec<T>,
    x: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(qp: &SimplexQp<T>) -> Self {
        let n = qp.dim();
        Workspace {
            n,
            q: qp.quad.iter().copied().collect(),
            lin: qp.lin.to_vec(),
            w: vec![T::one() / T::from_count(n); n],
            g: vec![T::zero(); n],
            active: vec![true; n],
            idx: Vec::with_capacity(n),
            free: Vec::with_capacity(n),
            h: vec![T::zero(); n * n],
            r: vec![T::zero(); n],
            perm: Vec::with_capacity(n),
            p: vec![T::zero(); n],
            y: vec![T::zero(); n],
            x: vec![T::zero(); n],
            d: vec![T::zero(); n],
        }
    }

    #[inline]
    fn qv(&self, a: usize, b: usize) -> T {
        self.q[a * self.n + b]
    }

    /// g = 2Qw + h, using only the nonzero weights.
    fn refresh_gradient(&mut self) {
        let n = self.n;
        let two = T::lit(2.0);
        self.g.copy_from_slice(&self.lin);
        for j in 0..n {
            let wj = self.w[j];
            if wj != T::zero() {
                let row = &self.q[j * n..(j + 1) * n];
                let c = two * wj;
                for (gk, &qk) in self.g.iter_mut().zip(row) {
                    *gk += c * qk;
                }
            }
        }
    }

    /// Moves mass from the active vertex with the largest derivative to
    /// vertex `s` with exact line search. Returns false if no progress.
    fn pairwise_step(&mut self, s: usize) -> bool {
        let away = (0..self.n)
            .filter(|&j| self.active[j] && j != s && self.w[j] > T::zero())
            .max_by(|&a, &b| self.g[a].partial_cmp(&self.g[b]).unwrap());
        let Some(a) = away else { return false };
        let slope = self.g[s] - self.g[a];
        if slope >= T::zero() {
            return false;
        }
        let two = T::lit(2.0);
        let curv = self.qv(s, s) - two * self.qv(a, s) + self.qv(a, a);
        let max_step = self.w[a];
        let step = if curv > T::zero() {
            (-slope / (two * curv)).min(max_step)
        } else {
            max_step
        };
        if !(step > T::zero()) {
            return false;
        }
        self.w[s] += step;
        if step >= max_step {
            self.w[a] = T::zero();
            self.active[a] = false;
        } else {
            self.w[a] -= step;
        }
        true
    }

    /// Minimizes over the convex hull of the active vertices. Inactive
    /// coordinates stay at zero; coordinates that reach zero are deactivated.
    fn minimize_on_face(&mut self, iterations: &mut usize, max_iter: usize) {
        let two = T::lit(2.0);
        let eps = T::epsilon();
        loop {
            if *iterations >= max_iter {
                return;
            }
            *iterations += 1;

            self.idx.clear();
            self.idx.extend((0..self.n).filter(|&j| self.active[j]));
            if self.idx.len() == 1 {
                self.w.fill(T::zero());
                self.w[self.idx[0]] = T::one();
                return;
            }
            // Largest weight is eliminated through the sum constraint.
            let mut e = self.idx[0];
            for &j in &self.idx {
                if self.w[j] > self.w[e] {
                    e = j;
                }
            }
            self.free.clear();
            self.free.extend(self.idx.iter().copied().filter(|&j| j != e));
            let m = self.free.len();

            self.refresh_gradient();
            let qee = self.qv(e, e);
            for a in 0..m {
                let fa = self.free[a];
                self.r[a] = self.g[fa] - self.g[e];
                let qae = self.qv(fa, e);
                for b in 0..=a {
                    let fb = self.free[b];
                    let v = two * (self.qv(fa, fb) - qae - self.qv(e, fb) + qee);
                    self.h[a * m + b] = v;
                    self.h[b * m + a] = v;
                }
            }

            let Some(newton) = self.reduced_direction(m) else {
                return;
            };
            let slope: T = (0..m).map(|a| self.r[a] * self.p[a]).sum();
            if !(slope < T::zero()) {
                return;
            }
            // Full-space direction over the active set.
            let mut dsum = T::zero();
            for a in 0..m {
                dsum += self.p[a];
            }
            self.d.fill(T::zero());
            for a in 0..m {
                self.d[self.free[a]] = self.p[a];
            }
            self.d[e] = -dsum;

            // Exact line search on the full quadratic, capped by the ratio test.
            let mut curv = T::zero();
            for &a in &self.idx {
                let da = self.d[a];
                let mut acc = T::zero();
                for &b in &self.idx {
                    acc += self.qv(a, b) * self.d[b];
                }
                curv += da * acc;
            }
            let mut step = if curv > T::zero() {
                -slope / (two * curv)
            } else {
                T::infinity()
            };
            let mut blocking = None;
            for &j in &self.idx {
                if self.d[j] < T::zero() {
                    let limit = self.w[j] / -self.d[j];
                    if limit < step {
                        step = limit;
                        blocking = Some(j);
                    }
                }
            }
            if !step.is_finite() {
                return;
            }
            let mut moved = false;
            for &j in &self.idx {
                let old = self.w[j];
                self.w[j] = old + step * self.d[j];
                moved |= (self.w[j] - old).abs() > eps * (T::one() + old.abs());
            }
            if let Some(b) = blocking {
                self.w[b] = T::zero();
                self.active[b] = false;
            }
            for &j in &self.idx {
                if j != e && self.active[j] && self.w[j] <= T::zero() {
                    self.w[j] = T::zero();
                    self.active[j] = false;
                }
            }
            let rest: T = self.free.iter().map(|&j| self.w[j]).sum();
            self.w[e] = T::one() - rest;
            if self.w[e] <= T::zero() {
                self.w[e] = T::zero();
                self.active[e] = false;
                let total: T = self.w.iter().copied().sum();
                for v in self.w.iter_mut() {
                    *v /= total;
                }
            }
            if blocking.is_none() {
                // An unblocked Newton step lands on the face minimum; a
                // zero-curvature move that stopped short is retried.
                if newton || !moved {
                    return;
                }
            }
        }
    }

    /// Computes `p` (first `m` entries) for the reduced quadratic
    /// `r'p + ½p'Hp`, `H` positive semidefinite. Gives the Newton step when
    /// `r` lies in the range of `H` (returns true), otherwise a descent
    /// direction of zero curvature (returns false).
    fn reduced_direction(&mut self, m: usize) -> Option<bool> {
        if m == 0 {
            return None;
        }
        let rank = pivoted_cholesky(&mut self.h[..m * m], m, &mut self.perm);
        let l = &self.h;
        let at = |i: usize, k: usize| l[i * m + k];
        let rp = |i: usize| self.r[self.perm[i]];

        // x1 = −(L11 L11')⁻¹ rp1
        for i in 0..rank {
            let mut acc = -rp(i);
            for k in 0..i {
                acc -= at(i, k) * self.y[k];
            }
            self.y[i] = acc / at(i, i);
        }
        back_substitute(l, m, &self.y, &mut self.x, rank);

        let mut p_perm = vec![T::zero(); m];
        let mut newton = true;
        if rank < m {
            // Gradient of the reduced model in the dropped coordinates.
            let lt_x: Vec<T> = (0..rank)
                .map(|k| (k..rank).map(|i| at(i, k) * self.x[i]).sum())
                .collect();
            let res: Vec<T> = (rank..m)
                .map(|i| rp(i) + (0..rank).map(|k| at(i, k) * lt_x[k]).sum::<T>())
                .collect();
            let res_norm = res.iter().map(|v| *v * *v).sum::<T>().sqrt();
            let r_norm = self.r[..m].iter().map(|v| *v * *v).sum::<T>().sqrt();
            if res_norm > T::epsilon().sqrt() * (T::one() + r_norm) {
                // n2 = −res, n1 = −L11'⁻¹ L21' n2
                for k in 0..rank {
                    self.y[k] = (0..m - rank).map(|a| at(rank + a, k) * res[a]).sum();
                }
                back_substitute(l, m, &self.y, &mut self.x, rank);
                for a in 0..m - rank {
                    p_perm[rank + a] = -res[a];
                }
                newton = false;
            }
        }
        p_perm[..rank].copy_from_slice(&self.x[..rank]);
        for (a, &orig) in self.perm.iter().enumerate() {
            self.p[orig] = p_perm[a];
        }
        Some(newton)
    }
}

/// Solves `L11' x = y` for the leading `rank` block of the m × m factor.
fn back_substitute<T: Scalar>(l: &[T], m: usize, y: &[T], x: &mut [T], rank: usize) {
    for i in (0..rank).rev() {
        let mut acc = y[i];
        for k in i + 1..rank {
            acc -= l[k * m + i] * x[k];
        }
        x[i] = acc / l[i * m + i];
    }
}

/// In-place `P H P' ≈ L L'` with diagonal pivoting for a positive
/// semidefinite `m × m` matrix. On return the lower triangle holds `L` in
/// permuted order and `perm[k]` is the original index of row `k`. Returns
/// the numerical rank.
fn pivoted_cholesky<T: Scalar>(a: &mut [T], m: usize, perm: &mut Vec<usize>) -> usize {
    perm.clear();
    perm.extend(0..m);
    let max_diag = (0..m).map(|i| a[i * m + i]).fold(T::zero(), T::max);
    let tol = T::epsilon() * T::lit(100.0) * T::from_count(m) * max_diag;
    for j in 0..m {
        let mut q = j;
        for i in j + 1..m {
            if a[i * m + i] > a[q * m + q] {
                q = i;
            }
        }
        if !(a[q * m + q] > tol) {
            return j;
        }
        if q != j {
            // Rows j and q, then columns j and q, of the full matrix.
            for c in 0..m {
                a.swap(j * m + c, q * m + c);
            }
            for r in 0..m {
                a.swap(r * m + j, r * m + q);
            }
            perm.swap(j, q);
        }
        let d = a[j * m + j].sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            a[i * m + j] /= d;
        }
        for i in j + 1..m {
            let lij = a[i * m + j];
            for c in j + 1..=i {
                let v = a[i * m + c] - lij * a[c * m + j];
                a[i * m + c] = v;
                a[c * m + i] = v;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn opts() -> SolverOptions<f64> {
        SolverOptions::default()
    }

    #[test]
    fn objective_examples() {
        let donors = array![[1.0, -1.0]];
        let treated = array![0.0];
        let w = array![0.5, 0.5];
        let f0 = penalized_objective(w.view(), treated.view(), donors.view(), 0.0).unwrap();
        assert_eq!(f0, 0.0);
        let f1 = penalized_objective(w.view(), treated.view(), donors.view(), 1.0).unwrap();
        assert_eq!(f1, 1.0);

        let d = array![[1.0, 5.0], [2.0, 0.0], [3.0, 1.0]];
        let y = array![1.0, 2.0, 3.0];
        let e = array![1.0, 0.0];
        assert_eq!(
            penalized_objective(e.view(), y.view(), d.view(), 3.7).unwrap(),
            0.0
        );
    }

    #[test]
    fn objective_rejects_bad_input() {
        let d = array![[1.0, 2.0]];
        let y = array![1.0];
        assert!(matches!(
            penalized_objective(array![1.0].view(), y.view(), d.view(), 0.0),
            Err(SolverError::DimensionMismatch(_))
        ));
        assert!(matches!(
            penalized_objective(array![0.5, 0.5].view(), y.view(), d.view(), -1.0),
            Err(SolverError::NegativeGamma(_))
        ));
        assert!(matches!(
            solve_weights(array![f64::NAN].view(), d.view(), 0.0, &opts()),
            Err(SolverError::NonFinite)
        ));
    }

    #[test]
    fn single_donor_gets_full_weight() {
        let d = array![[3.0], [-1.0], [7.0]];
        let y = array![0.0, 1.0, 2.0];
        let sol = solve_weights(y.view(), d.view(), 0.4, &opts()).unwrap();
        assert_eq!(sol.weights.to_vec(), vec![1.0]);
    }

    #[test]
    fn exact_copy_of_a_donor() {
        let d = array![
            [1.0, 4.0, 0.5, 2.0],
            [2.0, 1.0, -0.5, 2.5],
            [0.0, 3.0, 1.5, 1.0],
            [5.0, 2.0, 0.0, 3.0]
        ];
        let y = d.column(3).to_owned();
        for &gamma in &[0.0, 0.2, 5.0] {
            let sol = solve_weights(y.view(), d.view(), gamma, &opts()).unwrap();
            assert_abs_diff_eq!(sol.weights[3], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_grid_on_small_example() {
        // Grid over w_A with step 1e-6.
        let d = array![[0.0, 2.0], [0.0, 4.0], [0.0, 6.0]];
        let y = array![1.0, 2.0, 3.0];
        let gamma = 0.2;
        let mut best = f64::INFINITY;
        for k in 0..=1_000_000u32 {
            let wa = k as f64 * 1e-6;
            let w = array![wa, 1.0 - wa];
            best = best.min(penalized_objective(w.view(), y.view(), d.view(), gamma).unwrap());
        }
        let sol = solve_weights(y.view(), d.view(), gamma, &opts()).unwrap();
        assert!(sol.objective <= best + 1e-8, "{} vs {}", sol.objective, best);
        assert!(best - sol.objective <= 1e-8);
        // Closed form: f(a) = 14(1-a)² + 0.2(14a + 14(1-a)) → minimum at w_A = 0.5.
        assert_abs_diff_eq!(sol.weights[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn duplicated_donors_break_ties_to_first() {
        let d = array![[1.0, 1.0, 5.0], [2.0, 2.0, 1.0], [0.0, 0.0, 2.0]];
        let y = array![1.0, 2.0, 0.0];
        let sol = solve_weights(y.view(), d.view(), 0.0, &opts()).unwrap();
        assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.weights[0] + sol.weights[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn underdetermined_fit_is_allowed() {
        let d = array![[1.0, 2.0, 3.0, 4.0, 0.0], [0.5, -1.0, 2.0, 0.0, 1.0]];
        let y = array![2.2, 0.4];
        let sol = solve_weights(y.view(), d.view(), 0.0, &opts()).unwrap();
        assert!(sol.objective < 1e-10);
        assert_abs_diff_eq!(sol.weights.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_problem_matches_series_problem() {
        let units = array![
            [1.0, 2.0, 0.5, 3.0],
            [0.0, 1.0, 1.5, 2.0],
            [2.0, 2.5, 0.0, 3.5],
            [1.1, 1.9, 0.6, 2.8]
        ];
        let gram = Gram::new(units.view());
        let qp_g = gram.problem(0, &[1, 2, 3], 0.3);
        let donors = units.slice(ndarray::s![1.., ..]).reversed_axes();
        let qp_s = SimplexQp::penalized(units.row(0), donors, 0.3);
        let w = array![0.2, 0.3, 0.5];
        assert_abs_diff_eq!(qp_g.objective(w.view()), qp_s.objective(w.view()), epsilon = 1e-12);
        let direct = penalized_objective(w.view(), units.row(0), donors, 0.3).unwrap();
        assert_abs_diff_eq!(qp_s.objective(w.view()), direct, epsilon = 1e-12);

        let dropped = gram.without_period(units.column(2));
        let kept = ndarray::concatenate![Axis(1), units.slice(ndarray::s![.., ..2]), units.slice(ndarray::s![.., 3..])];
        let direct = Gram::new(kept.view());
        for (a, b) in dropped.matrix().iter().zip(direct.matrix().iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn f32_path_solves() {
        let d = array![[0.0f32, 2.0], [0.0, 4.0], [0.0, 6.0]];
        let y = array![1.0f32, 2.0, 3.0];
        let sol = solve_weights(y.view(), d.view(), 0.2, &SolverOptions::default()).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-4);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize, usize, f64)> {
        (1usize..8, 1usize..7, 0.0f64..2.0).prop_flat_map(|(t0, j, gamma)| {
            (
                proptest::collection::vec(-3.0f64..3.0, t0),
                proptest::collection::vec(-3.0f64..3.0, t0 * j),
                Just(t0),
                Just(j),
                Just(gamma),
            )
        })
    }

    proptest! {
        #[test]
        fn kkt_and_vertex_bounds((y, x, t0, j, gamma) in instance()) {
            let y = Array1::from(y);
            let x = Array2::from_shape_vec((t0, j), x).unwrap();
            let sol = solve_weights(y.view(), x.view(), gamma, &opts()).unwrap();
            prop_assert!(sol.weights.iter().all(|&v| v >= 0.0));
            prop_assert!((sol.weights.sum() - 1.0).abs() < 1e-9);

            let qp = SimplexQp::penalized(y.view(), x.view(), gamma);
            let g = qp.gradient(sol.weights.view());
            let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
            for k in 0..j {
                if sol.weights[k] > 1e-8 {
                    prop_assert!((g[k] - gmin).abs() <= 1e-6 * (1.0 + gmin.abs()), "{g:?}");
                }
                let mut e = Array1::zeros(j);
                e[k] = 1.0;
                let fv = penalized_objective(e.view(), y.view(), x.view(), gamma).unwrap();
                prop_assert!(sol.objective <= fv + 1e-9);
            }
        }

        #[test]
        fn scale_does_not_move_argmin(
            (y, x, j) in (1usize..5).prop_flat_map(|j| (
                proptest::collection::vec(-3.0f64..3.0, j + 3),
                proptest::collection::vec(-3.0f64..3.0, (j + 3) * j),
                Just(j),
            )),
            gamma in 0.0f64..2.0,
            c in 0.1f64..20.0,
        ) {
            // T0 > J, so the fit term is strictly convex and the argmin unique.
            let y = Array1::from(y);
            let x = Array2::from_shape_vec((j + 3, j), x).unwrap();
            let a = solve_weights(y.view(), x.view(), gamma, &opts()).unwrap();
            let b = solve_weights((&y * c).view(), (&x * c).view(), gamma, &opts()).unwrap();
            for k in 0..j {
                prop_assert!((a.weights[k] - b.weights[k]).abs() < 1e-6, "{a:?} {b:?}");
            }
        }
    }
}
