//! Balanced outcome panels: N units observed over T = T0 + 1 periods.
//!
//! Rows are units with the treated units first, columns are periods with the
//! pre-treatment periods first and the single post period last.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::Deserialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: outcome {value:?} is not a finite number")]
    NonNumeric { line: u64, value: String },
    #[error("line {line}: treated flag {value:?} must be 0 or 1")]
    BadTreatedFlag { line: u64, value: String },
    #[error("duplicate observation for unit {unit:?} at time {time}")]
    Duplicate { unit: String, time: i64 },
    #[error("unbalanced panel: unit {unit:?} has no observation at time {time}")]
    Unbalanced { unit: String, time: i64 },
    #[error("treated column marks {marked} units but n_treated = {requested}")]
    TreatedCountMismatch { marked: usize, requested: usize },
    #[error("empty panel file")]
    Empty,
    #[error("invalid panel: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A broken panel invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoTreated,
    NoDonors,
    NoPrePeriods,
    PreNotBeforeEnd,
    MultiplePostPeriods { periods: usize, n_pre: usize },
    UnitIdCount { ids: usize, rows: usize },
    NonFinite { unit: usize, period: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoTreated => write!(f, "at least one treated unit required"),
            Violation::NoDonors => write!(f, "at least one donor required"),
            Violation::NoPrePeriods => write!(f, "at least one pre-treatment period required"),
            Violation::PreNotBeforeEnd => write!(f, "n_pre must be < T"),
            Violation::MultiplePostPeriods { periods, n_pre } => write!(
                f,
                "exactly one post period required: T = {periods} but n_pre = {n_pre}"
            ),
            Violation::UnitIdCount { ids, rows } => {
                write!(f, "{ids} unit ids for {rows} outcome rows")
            }
            Violation::NonFinite { unit, period } => {
                write!(f, "missing or non-finite outcome at unit {unit}, period {period}")
            }
        }
    }
}

/// Outcome panel with treated units in rows `0..n_treated` and
/// pre-treatment periods in columns `0..n_pre`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData<T> {
    /// N × T outcomes.
    pub outcomes: Array2<T>,
    pub n_treated: usize,
    pub n_pre: usize,
    pub unit_ids: Vec<String>,
    /// Time label of the first column; later columns are consecutive.
    pub first_time: i64,
}

impl<T: Scalar> PanelData<T> {
    pub fn new(
        outcomes: Array2<T>,
        n_treated: usize,
        n_pre: usize,
        unit_ids: Vec<String>,
    ) -> Result<Self, PanelError> {
        let panel = PanelData {
            outcomes,
            n_treated,
            n_pre,
            unit_ids,
            first_time: 1,
        };
        let violations = panel.validate();
        if violations.is_empty() {
            Ok(panel)
        } else {
            Err(PanelError::Invalid(violations))
        }
    }

    /// Builds a panel with generated unit ids `u0, u1, ...`.
    pub fn from_outcomes(
        outcomes: Array2<T>,
        n_treated: usize,
        n_pre: usize,
    ) -> Result<Self, PanelError> {
        let ids = (0..outcomes.nrows()).map(|i| format!("u{i}")).collect();
        Self::new(outcomes, n_treated, n_pre, ids)
    }

    /// Every violated invariant; empty iff the panel is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let (n, t) = self.outcomes.dim();
        let mut out = Vec::new();
        if self.n_treated == 0 {
            out.push(Violation::NoTreated);
        }
        if self.n_treated >= n {
            out.push(Violation::NoDonors);
        }
        if self.n_pre == 0 {
            out.push(Violation::NoPrePeriods);
        }
        if self.n_pre >= t {
            out.push(Violation::PreNotBeforeEnd);
        } else if t != self.n_pre + 1 {
            out.push(Violation::MultiplePostPeriods {
                periods: t,
                n_pre: self.n_pre,
            });
        }
        if self.unit_ids.len() != n {
            out.push(Violation::UnitIdCount {
                ids: self.unit_ids.len(),
                rows: n,
            });
        }
        if let Some(((unit, period), _)) =
            self.outcomes.indexed_iter().find(|(_, v)| !v.is_finite())
        {
            out.push(Violation::NonFinite { unit, period });
        }
        out
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_donors(&self) -> usize {
        self.n_units() - self.n_treated
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Column index of the post-treatment period.
    pub fn post(&self) -> usize {
        self.n_pre
    }

    /// N × T0 pre-period block.
    pub fn pre_outcomes(&self) -> ArrayView2<'_, T> {
        self.outcomes.slice(s![.., ..self.n_pre])
    }

    pub fn post_outcomes(&self) -> ArrayView1<'_, T> {
        self.outcomes.column(self.n_pre)
    }

    /// Pre-period donor block laid out T0 × n_donors, as the solver expects.
    pub fn donors_pre(&self) -> ArrayView2<'_, T> {
        self.outcomes
            .slice(s![self.n_treated.., ..self.n_pre])
            .reversed_axes()
    }

    fn time_label(&self, col: usize) -> i64 {
        self.first_time + col as i64
    }
}

#[derive(Debug, Deserialize)]
struct Record {
    unit: String,
    time: i64,
    outcome: String,
    #[serde(default)]
    treated: Option<String>,
}

/// Reads a long-format `unit,time,outcome[,treated]` CSV file.
pub fn load_panel<T: Scalar>(
    path: impl AsRef<Path>,
    n_treated: usize,
    n_pre: usize,
) -> Result<PanelData<T>, PanelError> {
    let file = std::fs::File::open(path)?;
    read_panel(file, n_treated, n_pre)
}

/// Same as [`load_panel`] but from any reader.
pub fn read_panel<T: Scalar, R: Read>(
    reader: R,
    n_treated: usize,
    n_pre: usize,
) -> Result<PanelData<T>, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut flags: Vec<Option<bool>> = Vec::new();
    let mut cells: Vec<BTreeMap<i64, T>> = Vec::new();

    let headers = rdr.headers()?.clone();
    let mut raw = csv::StringRecord::new();
    while rdr.read_record(&mut raw)? {
        let line = raw.position().map_or(0, |p| p.line());
        let rec: Record = raw.deserialize(Some(&headers))?;
        let value: T = rec
            .outcome
            .parse()
            .ok()
            .filter(|v: &T| v.is_finite())
            .ok_or_else(|| PanelError::NonNumeric {
                line,
                value: rec.outcome.clone(),
            })?;
        let flag = match rec.treated.as_deref() {
            None | Some("") => None,
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(other) => {
                return Err(PanelError::BadTreatedFlag {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let u = *index.entry(rec.unit.clone()).or_insert_with(|| {
            order.push(rec.unit.clone());
            flags.push(None);
            cells.push(BTreeMap::new());
            order.len() - 1
        });
        if flag.is_some() {
            flags[u] = flag;
        }
        if cells[u].insert(rec.time, value).is_some() {
            return Err(PanelError::Duplicate {
                unit: rec.unit,
                time: rec.time,
            });
        }
    }

    if order.is_empty() {
        return Err(PanelError::Empty);
    }
    let t_min = cells
        .iter()
        .filter_map(|c| c.keys().next())
        .min()
        .copied()
        .ok_or(PanelError::Empty)?;
    let t_max = cells
        .iter()
        .filter_map(|c| c.keys().next_back())
        .max()
        .copied()
        .ok_or(PanelError::Empty)?;
    let n_periods = (t_max - t_min + 1) as usize;

    let units: Vec<usize> = if flags.iter().any(Option::is_some) {
        let treated: Vec<usize> = (0..order.len()).filter(|&u| flags[u] == Some(true)).collect();
        if treated.len() != n_treated {
            return Err(PanelError::TreatedCountMismatch {
                marked: treated.len(),
                requested: n_treated,
            });
        }
        treated
            .into_iter()
            .chain((0..order.len()).filter(|&u| flags[u] != Some(true)))
            .collect()
    } else {
        (0..order.len()).collect()
    };

    let mut outcomes = Array2::zeros((order.len(), n_periods));
    for (row, &u) in units.iter().enumerate() {
        for col in 0..n_periods {
            let time = t_min + col as i64;
            match cells[u].get(&time) {
                Some(v) => outcomes[[row, col]] = *v,
                None => {
                    return Err(PanelError::Unbalanced {
                        unit: order[u].clone(),
                        time,
                    })
                }
            }
        }
    }
    let unit_ids = units.iter().map(|&u| order[u].clone()).collect();
    let mut panel = PanelData::new(outcomes, n_treated, n_pre, unit_ids)?;
    panel.first_time = t_min;
    Ok(panel)
}

/// Writes the panel in the long format accepted by [`read_panel`], including
/// the `treated` column. Values use the shortest round-trip representation.
pub fn write_panel<T: Scalar, W: Write>(panel: &PanelData<T>, writer: W) -> Result<(), PanelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["unit", "time", "outcome", "treated"])?;
    for (row, id) in panel.unit_ids.iter().enumerate() {
        let flag = if row < panel.n_treated { "1" } else { "0" };
        for col in 0..panel.n_periods() {
            wtr.write_record([
                id.as_str(),
                &panel.time_label(col).to_string(),
                &panel.outcomes[[row, col]].to_string(),
                flag,
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const SMALL: &str = "unit,time,outcome\nA,1,1.0\nA,2,2.0\nA,3,3.0\nA,4,4.5\n\
B,1,0.5\nB,2,1.5\nB,3,2.5\nB,4,3.5\nC,1,2\nC,2,3\nC,3,4\nC,4,5\n";

    #[test]
    fn loads_small_balanced_file() {
        let p: PanelData<f64> = read_panel(SMALL.as_bytes(), 1, 3).unwrap();
        assert_eq!(p.outcomes.dim(), (3, 4));
        assert_eq!(p.unit_ids, vec!["A", "B", "C"]);
        assert_eq!(p.outcomes[[0, 3]], 4.5);
        assert_eq!(p.first_time, 1);
        assert_eq!(p.donors_pre().dim(), (3, 2));
        assert_eq!(p.donors_pre()[[1, 0]], 1.5);
    }

    #[test]
    fn missing_cell_is_unbalanced() {
        let text = SMALL.replace("A,2,2.0\n", "");
        let err = read_panel::<f64, _>(text.as_bytes(), 1, 3).unwrap_err();
        assert!(matches!(err, PanelError::Unbalanced { ref unit, time: 2 } if unit == "A"));
    }

    #[test]
    fn duplicate_and_non_numeric_rejected() {
        let dup = format!("{SMALL}A,2,9\n");
        assert!(matches!(
            read_panel::<f64, _>(dup.as_bytes(), 1, 3),
            Err(PanelError::Duplicate { .. })
        ));
        let bad = SMALL.replace("B,3,2.5", "B,3,abc");
        assert!(matches!(
            read_panel::<f64, _>(bad.as_bytes(), 1, 3),
            Err(PanelError::NonNumeric { .. })
        ));
    }

    #[test]
    fn all_units_treated_leaves_no_donors() {
        let err = read_panel::<f64, _>(SMALL.as_bytes(), 3, 3).unwrap_err();
        match err {
            PanelError::Invalid(v) => assert!(v.contains(&Violation::NoDonors)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn treated_flag_reorders_units() {
        let text = "unit,time,outcome,treated\nA,1,1,0\nA,2,2,0\nB,1,5,1\nB,2,6,1\nC,1,0,0\nC,2,1,0\n";
        let p: PanelData<f64> = read_panel(text.as_bytes(), 1, 1).unwrap();
        assert_eq!(p.unit_ids, vec!["B", "A", "C"]);
        assert_eq!(p.outcomes.row(0).to_vec(), vec![5.0, 6.0]);
        assert!(matches!(
            read_panel::<f64, _>(text.as_bytes(), 2, 1),
            Err(PanelError::TreatedCountMismatch { .. })
        ));
    }

    #[test]
    fn validate_reports_each_violation() {
        let ok = PanelData::<f64>::from_outcomes(Array2::zeros((3, 4)), 1, 3).unwrap();
        assert!(ok.validate().is_empty());

        let mut p = ok.clone();
        p.n_pre = 4;
        let v = p.validate();
        assert_eq!(v, vec![Violation::PreNotBeforeEnd]);
        assert_eq!(v[0].to_string(), "n_pre must be < T");

        let mut p = ok.clone();
        p.n_treated = 3;
        let v = p.validate();
        assert_eq!(v, vec![Violation::NoDonors]);
        assert_eq!(v[0].to_string(), "at least one donor required");

        let mut p = ok;
        p.n_pre = 2;
        assert!(matches!(
            p.validate()[..],
            [Violation::MultiplePostPeriods { periods: 4, n_pre: 2 }]
        ));
    }

    #[test]
    fn nan_is_a_violation() {
        let p = PanelData {
            outcomes: array![[1.0, f64::NAN], [0.0, 1.0]],
            n_treated: 1,
            n_pre: 1,
            unit_ids: vec!["a".into(), "b".into()],
            first_time: 0,
        };
        assert_eq!(p.validate(), vec![Violation::NonFinite { unit: 0, period: 1 }]);
    }

    #[test]
    fn write_then_read_is_identity() {
        let p: PanelData<f64> = read_panel(SMALL.as_bytes(), 1, 3).unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        let q: PanelData<f64> = read_panel(buf.as_slice(), 1, 3).unwrap();
        assert_eq!(p, q);
    }
}
