//! Prediction errors, the average effect on the treated, leave-one-out
//! errors and cross-validated penalty selection.

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::panel::PanelData;
use crate::scalar::Scalar;
use crate::solver::{Gram, SolverError, SolverOptions, WeightMatrix};

/// Penalty grid used when none is given.
pub const DEFAULT_GAMMA_GRID: [f64; 8] = [0.0, 1e-3, 1e-2, 1e-1, 0.2, 0.5, 1.0, 10.0];

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("leave-one-out needs at least 2 pre-treatment periods, got {0}")]
    TooFewPrePeriods(usize),
    #[error("empty penalty grid")]
    EmptyGrid,
    #[error("penalty grid contains an invalid value {0}")]
    InvalidGamma(f64),
    #[error("train fraction {fraction} leaves {train} training and {validation} validation periods")]
    DegenerateSplit {
        fraction: f64,
        train: usize,
        validation: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Plain,
    LeaveOneOut,
}

/// Prediction errors `u_{i,t}` for each treated unit (rows) and period
/// (columns); the last column is the post period.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix<T> {
    pub errors: Array2<T>,
    pub kind: ErrorKind,
}

impl<T: Scalar> ErrorMatrix<T> {
    pub fn n_pre(&self) -> usize {
        self.errors.ncols() - 1
    }

    pub fn pre(&self) -> ArrayView2<'_, T> {
        self.errors.slice(s![.., ..self.n_pre()])
    }

    pub fn post(&self) -> ndarray::ArrayView1<'_, T> {
        self.errors.column(self.n_pre())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T> {
    pub gamma_star: T,
    /// `(gamma, validation MSE)` in grid order.
    pub grid: Vec<(T, T)>,
}

/// `Y_{i,t} − Σ_j W_ij Y_{j,t}` for every treated unit and period.
pub fn prediction_errors<T: Scalar>(
    panel: &PanelData<T>,
    weights: &WeightMatrix<T>,
) -> Result<ErrorMatrix<T>, EstimatorError> {
    let (rows, cols) = weights.weights.dim();
    if rows != panel.n_treated || cols != panel.n_donors() {
        return Err(EstimatorError::DimensionMismatch(format!(
            "weights are {rows}×{cols}, panel has {} treated and {} donors",
            panel.n_treated,
            panel.n_donors()
        )));
    }
    let treated = panel.outcomes.slice(s![..panel.n_treated, ..]);
    let donors = panel.outcomes.slice(s![panel.n_treated.., ..]);
    let errors = &treated - &weights.weights.dot(&donors);
    Ok(ErrorMatrix {
        errors,
        kind: ErrorKind::Plain,
    })
}

/// Average post-period prediction error across treated units.
pub fn att<T: Scalar>(errors: &ErrorMatrix<T>) -> T {
    let post = errors.post();
    post.sum() / T::from_count(post.len())
}

/// Weights fitted against an arbitrary donor set, with `gram` built from the
/// periods used for fitting. Row `a` of the result belongs to `treated[a]`.
pub(crate) fn fit_assignment<T: Scalar>(
    gram: &Gram<T>,
    treated: &[usize],
    donors: &[usize],
    gamma: T,
    options: &SolverOptions<T>,
) -> Result<Array2<T>, SolverError> {
    let mut w = Array2::zeros((treated.len(), donors.len()));
    for (a, &i) in treated.iter().enumerate() {
        let sol = gram.problem(i, donors, gamma).solve(options)?;
        w.row_mut(a).assign(&sol.weights);
    }
    Ok(w)
}

/// Plain prediction errors for a treated/donor split of the units in
/// `outcomes` (all periods), weights fitted on the first `n_pre` columns.
pub(crate) fn assignment_errors<T: Scalar>(
    outcomes: ArrayView2<'_, T>,
    n_pre: usize,
    treated: &[usize],
    donors: &[usize],
    gram: &Gram<T>,
    gamma: T,
    options: &SolverOptions<T>,
) -> Result<Array2<T>, SolverError> {
    debug_assert!(n_pre < outcomes.ncols());
    let w = fit_assignment(gram, treated, donors, gamma, options)?;
    let y_treated = outcomes.select(Axis(0), treated);
    let y_donors = outcomes.select(Axis(0), donors);
    Ok(&y_treated - &w.dot(&y_donors))
}

pub(crate) fn units(panel_n_treated: usize, n_units: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..panel_n_treated).collect(), (panel_n_treated..n_units).collect())
}

/// Jackknife errors: the entry at pre period `t` is the prediction error at
/// `t` under weights re-fitted without period `t`. The post column uses the
/// full pre-period fit.
pub fn loo_errors<T: Scalar>(
    panel: &PanelData<T>,
    gamma: T,
    options: &SolverOptions<T>,
) -> Result<ErrorMatrix<T>, EstimatorError> {
    let t0 = panel.n_pre;
    if t0 < 2 {
        return Err(EstimatorError::TooFewPrePeriods(t0));
    }
    let (treated, donors) = units(panel.n_treated, panel.n_units());
    let pre = panel.pre_outcomes();
    let gram = Gram::new(pre);

    let full = assignment_errors(
        panel.outcomes.view(),
        t0,
        &treated,
        &donors,
        &gram,
        gamma,
        options,
    )?;

    let columns: Vec<Vec<T>> = (0..t0)
        .into_par_iter()
        .map(|t| {
            let column = pre.column(t);
            let reduced = gram.without_period(column);
            let w = fit_assignment(&reduced, &treated, &donors, gamma, options)?;
            Ok(treated
                .iter()
                .enumerate()
                .map(|(a, &i)| {
                    let synth: T = donors
                        .iter()
                        .enumerate()
                        .map(|(b, &j)| w[[a, b]] * column[j])
                        .sum();
                    column[i] - synth
                })
                .collect())
        })
        .collect::<Result<_, SolverError>>()?;

    let mut errors = full;
    for (t, col) in columns.into_iter().enumerate() {
        for (a, v) in col.into_iter().enumerate() {
            errors[[a, t]] = v;
        }
    }
    Ok(ErrorMatrix {
        errors,
        kind: ErrorKind::LeaveOneOut,
    })
}

/// Number of training periods for a chronological split of `t0` periods.
pub fn train_periods(t0: usize, train_fraction: f64) -> usize {
    (train_fraction * t0 as f64).ceil() as usize
}

/// Picks the penalty with the smallest validation MSE. Weights are fitted on
/// the first `⌈train_fraction · T0⌉` pre periods and scored on the remaining
/// pre periods; ties go to the smaller penalty.
pub fn select_gamma<T: Scalar>(
    panel: &PanelData<T>,
    grid: &[T],
    train_fraction: f64,
    options: &SolverOptions<T>,
) -> Result<CvResult<T>, EstimatorError> {
    if grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    if let Some(bad) = grid.iter().find(|g| !(**g >= T::zero()) || !g.is_finite()) {
        return Err(EstimatorError::InvalidGamma(bad.to_f64_lossy()));
    }
    let t0 = panel.n_pre;
    let train = if train_fraction > 0.0 && train_fraction < 1.0 {
        train_periods(t0, train_fraction)
    } else {
        0
    };
    if train == 0 || train >= t0 {
        return Err(EstimatorError::DegenerateSplit {
            fraction: train_fraction,
            train,
            validation: t0.saturating_sub(train),
        });
    }
    let (treated, donors) = units(panel.n_treated, panel.n_units());
    let pre = panel.pre_outcomes();
    let gram = Gram::new(pre.slice(s![.., ..train]));
    let validation = pre.slice(s![.., train..]);
    let cells = T::from_count(treated.len() * (t0 - train));

    let scored: Vec<(T, T)> = grid
        .par_iter()
        .map(|&gamma| {
            let err = assignment_errors(validation, 0, &treated, &donors, &gram, gamma, options)?;
            let mse = err.iter().map(|e| *e * *e).sum::<T>() / cells;
            Ok((gamma, mse))
        })
        .collect::<Result<_, SolverError>>()?;

    let mut best = 0;
    for (k, &(gamma, mse)) in scored.iter().enumerate() {
        let (bg, bm) = scored[best];
        if mse < bm || (mse == bm && gamma < bg) {
            best = k;
        }
    }
    Ok(CvResult {
        gamma_star: scored[best].0,
        grid: scored,
    })
}
