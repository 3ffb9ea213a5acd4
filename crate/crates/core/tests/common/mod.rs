//! Test-only oracles. Nothing here calls into the solver.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Penalized objective straight from its definition; `donors[j][t]`.
pub fn objective(w: &[f64], y: &[f64], donors: &[Vec<f64>], gamma: f64) -> f64 {
    let mut total = 0.0;
    for t in 0..y.len() {
        let synth: f64 = w.iter().zip(donors).map(|(wj, d)| wj * d[t]).sum();
        total += (y[t] - synth).powi(2);
        for (wj, d) in w.iter().zip(donors) {
            total += gamma * wj * (y[t] - d[t]).powi(2);
        }
    }
    total
}

/// Minimum over w = (a, 1 − a), a on a grid of the given step.
pub fn grid_two(y: &[f64], donors: &[Vec<f64>], gamma: f64, step: f64) -> (f64, [f64; 2]) {
    let n = (1.0 / step).round() as u64;
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for k in 0..=n {
        let a = k as f64 / n as f64;
        let w = [a, 1.0 - a];
        let f = objective(&w, y, donors, gamma);
        if f < best.0 {
            best = (f, w);
        }
    }
    best
}

fn grid_three_window(
    y: &[f64],
    donors: &[Vec<f64>],
    gamma: f64,
    center: [f64; 2],
    half: f64,
    step: f64,
) -> (f64, [f64; 3]) {
    let mut best = (f64::INFINITY, [0.0; 3]);
    let n = (2.0 * half / step).round() as i64;
    for i in 0..=n {
        let a = (center[0] - half + i as f64 * step).clamp(0.0, 1.0);
        for j in 0..=n {
            let b = (center[1] - half + j as f64 * step).clamp(0.0, 1.0);
            if a + b > 1.0 {
                continue;
            }
            let w = [a, b, 1.0 - a - b];
            let f = objective(&w, y, donors, gamma);
            if f < best.0 {
                best = (f, w);
            }
        }
    }
    best
}

/// Full-simplex grid over three donors with the given step.
pub fn grid_three(y: &[f64], donors: &[Vec<f64>], gamma: f64, step: f64) -> (f64, [f64; 3]) {
    grid_three_window(y, donors, gamma, [0.5, 0.5], 0.5, step)
}

/// `grid_three` at step 1e-3 followed by two zoomed grids around the best
/// point (steps 1e-5 and 1e-7).
pub fn grid_three_refined(y: &[f64], donors: &[Vec<f64>], gamma: f64) -> (f64, [f64; 3]) {
    let mut best = grid_three(y, donors, gamma, 1e-3);
    for &(half, step) in &[(2e-3, 1e-5), (2e-5, 1e-7)] {
        let zoom = grid_three_window(y, donors, gamma, [best.1[0], best.1[1]], half, step);
        if zoom.0 < best.0 {
            best = zoom;
        }
    }
    best
}

/// Gaussian elimination with partial pivoting; None if singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            let pivot_row = a[c].clone();
            for (x, p) in a[r][c..].iter_mut().zip(&pivot_row[c..]) {
                *x -= f * p;
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Exact simplex minimum by enumerating supports: on each face solve the
/// equality-constrained KKT system and keep feasible stationary points.
pub fn face_enumeration(y: &[f64], donors: &[Vec<f64>], gamma: f64) -> (f64, Vec<f64>) {
    let j = donors.len();
    let t0 = y.len();
    let q = |a: usize, b: usize| (0..t0).map(|t| donors[a][t] * donors[b][t]).sum::<f64>();
    let lin = |a: usize| {
        let cross: f64 = (0..t0).map(|t| donors[a][t] * y[t]).sum();
        let dist: f64 = (0..t0).map(|t| (y[t] - donors[a][t]).powi(2)).sum();
        gamma * dist - 2.0 * cross
    };
    let mut best = (f64::INFINITY, vec![0.0; j]);
    for mask in 1u32..(1 << j) {
        let s: Vec<usize> = (0..j).filter(|k| mask & (1 << k) != 0).collect();
        let k = s.len();
        // [2Q_SS 1; 1' 0] [w; −μ] = [−h_S; 1]
        let mut a = vec![vec![0.0; k + 1]; k + 1];
        let mut b = vec![0.0; k + 1];
        for (r, &sr) in s.iter().enumerate() {
            for (c, &sc) in s.iter().enumerate() {
                a[r][c] = 2.0 * q(sr, sc);
            }
            a[r][k] = 1.0;
            a[k][r] = 1.0;
            b[r] = -lin(sr);
        }
        b[k] = 1.0;
        if let Some(sol) = solve_dense(a, b) {
            if sol[..k].iter().all(|&v| v >= -1e-12) {
                let mut w = vec![0.0; j];
                for (r, &sr) in s.iter().enumerate() {
                    w[sr] = sol[r].max(0.0);
                }
                let f = objective(&w, y, donors, gamma);
                if f < best.0 {
                    best = (f, w);
                }
            }
        }
    }
    best
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// `donors[j][t]` to the T0 × J layout the library expects.
pub fn donor_block(donors: &[Vec<f64>]) -> ndarray::Array2<f64> {
    let t0 = donors[0].len();
    ndarray::Array2::from_shape_fn((t0, donors.len()), |(t, j)| donors[j][t])
}

/// Sample mean and its Bartlett-kernel HAC standard error with `lags` lags.
pub fn mean_hac(x: &[f64], lags: usize) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let c = |k: usize| x.iter().zip(&x[k..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n;
    let mut lrv = c(0);
    for k in 1..=lags {
        lrv += 2.0 * (1.0 - k as f64 / (lags + 1) as f64) * c(k);
    }
    (m, (lrv / n).sqrt())
}

/// Sample variance with the HAC standard error of the mean of `(x − x̄)²`.
pub fn var_hac(x: &[f64], lags: usize) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sq: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
    mean_hac(&sq, lags)
}

/// One stationary moment to check against its analytic value.
pub struct Moment {
    pub name: &'static str,
    pub target: f64,
    pub estimate: f64,
    pub se: f64,
}

impl Moment {
    pub fn z(&self) -> f64 {
        (self.estimate - self.target) / self.se
    }
}

/// Means and variances of η, λ1, λ2, λ3 over one long path of `t` periods.
/// Stationary values: η = 1 + η₋₁/2 + ν has mean 2 and variance 4/3;
/// λ1 = λ1₋₁/2 + ν has variance 4/3; λ2 = 1 + ν + ν₋₁/2 has mean 1 and
/// variance 5/4; λ3 = λ3₋₁/2 + ν + ν₋₁/2 has variance (1 + 1/2 + 1/4)/(3/4)
/// = 7/3.
pub fn factor_moments(path: &scm_core::FactorPath) -> Vec<Moment> {
    let lags = 60;
    let eta = path.eta.to_vec();
    let l: Vec<Vec<f64>> = (0..3).map(|k| path.lambda.row(k).to_vec()).collect();
    let mk = |name, target, (estimate, se): (f64, f64)| Moment {
        name,
        target,
        estimate,
        se,
    };
    vec![
        mk("eta mean", 2.0, mean_hac(&eta, lags)),
        mk("eta variance", 4.0 / 3.0, var_hac(&eta, lags)),
        mk("lambda1 mean", 0.0, mean_hac(&l[0], lags)),
        mk("lambda1 variance", 4.0 / 3.0, var_hac(&l[0], lags)),
        mk("lambda2 mean", 1.0, mean_hac(&l[1], lags)),
        mk("lambda2 variance", 1.25, var_hac(&l[1], lags)),
        mk("lambda3 mean", 0.0, mean_hac(&l[2], lags)),
        mk("lambda3 variance", 7.0 / 3.0, var_hac(&l[2], lags)),
    ]
}
