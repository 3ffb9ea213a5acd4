//! Placebo (permutation) and end-of-sample (Andrews-type) tests of the
//! sharp null that every treated unit has zero effect.
//!
//! * Placebo: the pre/post error-ratio statistic of the real assignment is
//!   ranked against the same statistic for random `n1`-subsets of all units
//!   relabelled as treated. Small ratios are extreme.
//! * Andrews: the post-period sum of squared errors is ranked against the
//!   per-period sums over the pre-treatment window. Large values are extreme.
//!   The leave-one-out variant uses jackknife errors for the pre window.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{assignment_errors, loo_errors, units, ErrorKind, ErrorMatrix, EstimatorError};
use crate::panel::PanelData;
use crate::scalar::Scalar;
use crate::solver::{Gram, SolverError, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("at least one permutation required")]
    NoPermutations,
    #[error("placebo draw {0} is not a valid {1}-subset")]
    InvalidDraw(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Placebo,
    Andrews,
    AndrewsLoo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Placebo, Method::Andrews, Method::AndrewsLoo];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Placebo => "placebo",
            Method::Andrews => "andrews",
            Method::AndrewsLoo => "andrews_loo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult<T> {
    pub method: Method,
    pub statistic: T,
    pub p_value: T,
    /// Reference draws: `T(p)` for placebo, `S(t)` for the Andrews variants.
    pub null_sample: Vec<T>,
    pub reject: bool,
}

fn check_tau<T: Scalar>(tau: T) -> Result<(), InferenceError> {
    if tau > T::zero() && tau < T::one() {
        Ok(())
    } else {
        Err(InferenceError::InvalidTau(tau.to_f64_lossy()))
    }
}

/// `Σ_{t≤T0} (Σ_i u_{i,t})² / (Σ_i u_{i,T0+1})²`.
///
/// A zero post-period aggregate error yields `+∞`.
pub fn rmspe_statistic<T: Scalar>(errors: &ErrorMatrix<T>) -> T {
    let numerator: T = errors
        .pre()
        .columns()
        .into_iter()
        .map(|c| {
            let s = c.sum();
            s * s
        })
        .sum();
    let post = errors.post().sum();
    let denominator = post * post;
    if denominator == T::zero() {
        T::infinity()
    } else {
        numerator / denominator
    }
}

/// `Σ_i u_{i,T0+1}²`.
pub fn andrews_statistic<T: Scalar>(errors: &ErrorMatrix<T>) -> T {
    errors.post().iter().map(|u| *u * *u).sum()
}

/// `P` independent uniform `n_treated`-subsets of `0..n_units`, generated
/// up front from `seed` so evaluation order cannot affect the result.
pub fn placebo_draws(n_units: usize, n_treated: usize, n_permutations: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_permutations)
        .map(|_| {
            let mut d = sample(&mut rng, n_units, n_treated).into_vec();
            d.sort_unstable();
            d
        })
        .collect()
}

/// Placebo test with `n_permutations` random relabellings drawn from `seed`.
pub fn placebo_test<T: Scalar>(
    panel: &PanelData<T>,
    gamma: T,
    n_permutations: usize,
    tau: T,
    seed: u64,
    options: &SolverOptions<T>,
) -> Result<TestResult<T>, InferenceError> {
    if n_permutations == 0 {
        return Err(InferenceError::NoPermutations);
    }
    let draws = placebo_draws(panel.n_units(), panel.n_treated, n_permutations, seed);
    placebo_test_with_draws(panel, gamma, &draws, tau, options)
}

fn placebo_stat<T: Scalar>(
    panel: &PanelData<T>,
    gram: &Gram<T>,
    treated: &[usize],
    gamma: T,
    options: &SolverOptions<T>,
) -> Result<T, SolverError> {
    let mut is_treated = vec![false; panel.n_units()];
    for &i in treated {
        is_treated[i] = true;
    }
    let donors: Vec<usize> = (0..panel.n_units()).filter(|&j| !is_treated[j]).collect();
    let errors = assignment_errors(
        panel.outcomes.view(),
        panel.n_pre,
        treated,
        &donors,
        gram,
        gamma,
        options,
    )?;
    Ok(rmspe_statistic(&ErrorMatrix {
        errors,
        kind: ErrorKind::Plain,
    }))
}

/// Placebo test over a caller-supplied list of pseudo-treated sets. Each set
/// must hold `n_treated` distinct unit indices.
pub fn placebo_test_with_draws<T: Scalar>(
    panel: &PanelData<T>,
    gamma: T,
    draws: &[Vec<usize>],
    tau: T,
    options: &SolverOptions<T>,
) -> Result<TestResult<T>, InferenceError> {
    check_tau(tau)?;
    if draws.is_empty() {
        return Err(InferenceError::NoPermutations);
    }
    let n = panel.n_units();
    for (k, d) in draws.iter().enumerate() {
        let mut seen = vec![false; n];
        let ok = d.len() == panel.n_treated
            && d.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
        if !ok {
            return Err(InferenceError::InvalidDraw(k, panel.n_treated));
        }
    }

    let gram = Gram::new(panel.pre_outcomes());
    let (treated, _) = units(panel.n_treated, n);
    let statistic = placebo_stat(panel, &gram, &treated, gamma, options)?;
    let null_sample: Vec<T> = draws
        .par_iter()
        .map(|d| placebo_stat(panel, &gram, d, gamma, options))
        .collect::<Result<_, _>>()?;

    let hits = null_sample.iter().filter(|&&tp| tp <= statistic).count();
    let p_value = T::from_count(1 + hits) / T::from_count(draws.len() + 1);
    Ok(TestResult {
        method: Method::Placebo,
        statistic,
        p_value,
        null_sample,
        reject: p_value <= tau,
    })
}

/// End-of-sample test on a precomputed error matrix. The method tag follows
/// the kind of errors supplied.
pub fn andrews_test<T: Scalar>(errors: &ErrorMatrix<T>, tau: T) -> Result<TestResult<T>, InferenceError> {
    check_tau(tau)?;
    let statistic = andrews_statistic(errors);
    let null_sample: Vec<T> = errors
        .pre()
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|u| *u * *u).sum())
        .collect();
    let hits = null_sample.iter().filter(|&&s| s >= statistic).count();
    let p_value = T::from_count(hits) / T::from_count(null_sample.len());
    let method = match errors.kind {
        ErrorKind::Plain => Method::Andrews,
        ErrorKind::LeaveOneOut => Method::AndrewsLoo,
    };
    Ok(TestResult {
        method,
        statistic,
        p_value,
        null_sample,
        reject: p_value <= tau,
    })
}

/// Leave-one-out errors followed by [`andrews_test`].
pub fn andrews_loo_test<T: Scalar>(
    panel: &PanelData<T>,
    gamma: T,
    tau: T,
    options: &SolverOptions<T>,
) -> Result<TestResult<T>, InferenceError> {
    check_tau(tau)?;
    let errors = loo_errors(panel, gamma, options)?;
    andrews_test(&errors, tau)
}
