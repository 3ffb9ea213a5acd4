//! Factor-model panels and Monte Carlo rejection rates.
//!
//! Untreated outcomes follow `y_mt(0) = η_t + λ_t'μ_m + ε_mt` with
//!
//! ```text
//! η_t   = 1 + 0.5 η_{t−1} + ν0_t
//! λ1_t  = 0.5 λ1_{t−1} + ν1_t
//! λ2_t  = 1 + ν2_t + 0.5 ν2_{t−1}
//! λ3_t  = 0.5 λ3_{t−1} + ν3_t + 0.5 ν3_{t−1}
//! ```
//!
//! all shocks i.i.d. N(0, 1) and loadings `μ_m ~ U[0, 1]³`. Treated units get
//! the effect `α` added in the post period.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::distr::{Distribution, StandardUniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::prediction_errors;
use crate::inference::{andrews_loo_test, andrews_test, placebo_test, InferenceError, Method};
use crate::panel::PanelData;
use crate::scalar::Scalar;
use crate::solver::{fit_weight_matrix, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

fn default_gamma() -> f64 {
    0.2
}
fn default_alpha_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
}
fn default_reps() -> usize {
    500
}
fn default_tau() -> f64 {
    0.05
}
fn default_burn_in() -> usize {
    100
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Experiment parameters. Deserializes from flat `key = value` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t_pre: usize,
    pub n_treated: usize,
    pub n_donors: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default = "default_reps")]
    pub n_permutations: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Adds a second N(0, 1) shock to every unit in the post period on top
    /// of `ε`. Off by default.
    #[serde(default)]
    pub post_shock: bool,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
}

impl SimConfig {
    /// Defaults for a `(T0, n1, n0)` setting.
    pub fn new(t_pre: usize, n_treated: usize, n_donors: usize, seed: u64) -> Self {
        SimConfig {
            t_pre,
            n_treated,
            n_donors,
            gamma: default_gamma(),
            alpha_grid: default_alpha_grid(),
            n_reps: default_reps(),
            n_permutations: default_reps(),
            tau: default_tau(),
            seed,
            burn_in: default_burn_in(),
            post_shock: false,
            methods: default_methods(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::Config(m.to_string()));
        if self.t_pre < 2 {
            return fail("t_pre must be at least 2");
        }
        if self.n_treated == 0 || self.n_donors == 0 {
            return fail("n_treated and n_donors must be positive");
        }
        if self.n_reps == 0 {
            return fail("n_reps must be positive");
        }
        if self.methods.contains(&Method::Placebo) && self.n_permutations == 0 {
            return fail("n_permutations must be positive");
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !a.is_finite()) {
            return fail("alpha_grid must be a nonempty list of finite values");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail("tau must lie in (0, 1)");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail("gamma must be a finite non-negative number");
        }
        if self.methods.is_empty() {
            return fail("methods must name at least one test");
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.n_treated + self.n_donors
    }
}

/// Simulated factors and idiosyncratic errors over `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPath<T> {
    pub eta: Array1<T>,
    /// 3 × T, rows λ1, λ2, λ3.
    pub lambda: Array2<T>,
    /// N × 3.
    pub loadings: Array2<T>,
    /// N × T.
    pub eps: Array2<T>,
}

/// Simulates `t_total` periods after discarding `burn_in` periods. Recursions
/// start from their unconditional means with zero lagged shocks.
pub fn generate_factors<T, R>(t_total: usize, n_units: usize, burn_in: usize, rng: &mut R) -> FactorPath<T>
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    let half = T::lit(0.5);
    let one = T::one();
    let mut normal = || -> T { rng.sample(StandardNormal) };

    let mut eta = Array1::zeros(t_total);
    let mut lambda = Array2::zeros((3, t_total));
    let (mut eta_prev, mut l1_prev, mut l3_prev) = (T::lit(2.0), T::zero(), T::zero());
    let (mut nu2_prev, mut nu3_prev) = (T::zero(), T::zero());
    for step in 0..burn_in + t_total {
        let nu: [T; 4] = [normal(), normal(), normal(), normal()];
        let e = one + half * eta_prev + nu[0];
        let l1 = half * l1_prev + nu[1];
        let l2 = one + nu[2] + half * nu2_prev;
        let l3 = half * l3_prev + nu[3] + half * nu3_prev;
        if step >= burn_in {
            let t = step - burn_in;
            eta[t] = e;
            lambda[[0, t]] = l1;
            lambda[[1, t]] = l2;
            lambda[[2, t]] = l3;
        }
        eta_prev = e;
        l1_prev = l1;
        l3_prev = l3;
        nu2_prev = nu[2];
        nu3_prev = nu[3];
    }
    let eps = Array2::from_shape_simple_fn((n_units, t_total), &mut normal);
    let loadings = Array2::from_shape_simple_fn((n_units, 3), || rng.sample(StandardUniform));
    FactorPath {
        eta,
        lambda,
        loadings,
        eps,
    }
}

impl<T: Scalar> FactorPath<T> {
    /// Untreated potential outcomes, N × T.
    pub fn potential_outcomes(&self) -> Array2<T> {
        let common = self.loadings.dot(&self.lambda);
        &common + &self.eta.view().insert_axis(ndarray::Axis(0)) + &self.eps
    }

    /// Observed panel: the last period is post-treatment, the first
    /// `n_treated` units receive `alpha` there, and `post_shock` (one value
    /// per unit) is added to every unit's post outcome when given.
    pub fn assemble(
        &self,
        n_treated: usize,
        alpha: T,
        post_shock: Option<ArrayView1<'_, T>>,
    ) -> PanelData<T> {
        let mut y = self.potential_outcomes();
        let post = y.ncols() - 1;
        if let Some(e) = post_shock {
            let mut col = y.column_mut(post);
            col += &e;
        }
        y.slice_mut(s![..n_treated, post]).mapv_inplace(|v| v + alpha);
        PanelData::from_outcomes(y, n_treated, post).expect("simulated panel dimensions are valid")
    }
}

/// One simulated panel with effect `alpha`.
pub fn generate_panel<T, R>(config: &SimConfig, alpha: T, rng: &mut R) -> PanelData<T>
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    let n = config.n_units();
    let factors = generate_factors(config.t_pre + 1, n, config.burn_in, rng);
    let shock = config
        .post_shock
        .then(|| Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal)));
    factors.assemble(config.n_treated, alpha, shock.as_ref().map(|e| e.view()))
}

/// Random stream for replication `rep` at grid position `alpha_index`.
/// Independent of `n_reps`, so adding replications leaves earlier ones intact.
pub fn replication_rng(seed: u64, alpha_index: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((alpha_index as u64) << 32) | rep as u64);
    rng
}

/// Rejection decisions of one replication, in `config.methods` order.
pub fn run_replication<T>(
    config: &SimConfig,
    alpha_index: usize,
    rep: usize,
    options: &SolverOptions<T>,
) -> Result<Vec<bool>, SimError>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    let mut rng = replication_rng(config.seed, alpha_index, rep);
    let alpha = T::lit(config.alpha_grid[alpha_index]);
    let panel: PanelData<T> = generate_panel(config, alpha, &mut rng);
    let placebo_seed = rng.next_u64();
    let gamma = T::lit(config.gamma);
    let tau = T::lit(config.tau);
    config
        .methods
        .iter()
        .map(|m| {
            let result = match m {
                Method::Placebo => {
                    placebo_test(&panel, gamma, config.n_permutations, tau, placebo_seed, options)?
                }
                Method::Andrews => {
                    let w = fit_weight_matrix(&panel, gamma, options).map_err(InferenceError::from)?;
                    let e = prediction_errors(&panel, &w).map_err(InferenceError::from)?;
                    andrews_test(&e, tau)?
                }
                Method::AndrewsLoo => andrews_loo_test(&panel, gamma, tau, options)?,
            };
            Ok(result.reject)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub alpha: f64,
    pub method: Method,
    pub rejection_rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RejectionTable {
    pub rows: Vec<RejectionRow>,
}

impl RejectionTable {
    pub fn get(&self, alpha: f64, method: Method) -> Option<&RejectionRow> {
        self.rows
            .iter()
            .find(|r| r.alpha == alpha && r.method == method)
    }

    /// `alpha,method,rejection_rate,mc_se`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["alpha", "method", "rejection_rate", "mc_se"])?;
        for r in &self.rows {
            wtr.write_record([
                r.alpha.to_string(),
                r.method.to_string(),
                r.rejection_rate.to_string(),
                r.mc_se.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Rejection frequency and its binomial standard error.
pub fn rate_with_se(rejections: usize, reps: usize) -> (f64, f64) {
    let r = rejections as f64 / reps as f64;
    (r, (r * (1.0 - r) / reps as f64).sqrt())
}

/// Runs every replication for every effect size and tabulates rejection
/// frequencies per (alpha, method). Replications run in parallel on the
/// current rayon pool; results do not depend on scheduling.
pub fn rejection_rates<T>(config: &SimConfig, options: &SolverOptions<T>) -> Result<RejectionTable, SimError>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.alpha_grid.len())
        .flat_map(|a| (0..config.n_reps).map(move |r| (a, r)))
        .collect();
    let outcomes: Vec<Vec<bool>> = jobs
        .par_iter()
        .map(|&(a, r)| run_replication::<T>(config, a, r, options))
        .collect::<Result<_, _>>()?;

    let mut table = RejectionTable::default();
    for (a, &alpha) in config.alpha_grid.iter().enumerate() {
        let block = &outcomes[a * config.n_reps..(a + 1) * config.n_reps];
        for (k, &method) in config.methods.iter().enumerate() {
            let hits = block.iter().filter(|o| o[k]).count();
            let (rejection_rate, mc_se) = rate_with_se(hits, config.n_reps);
            table.rows.push(RejectionRow {
                alpha,
                method,
                rejection_rate,
                mc_se,
            });
        }
    }
    Ok(table)
}
