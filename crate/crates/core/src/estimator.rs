//! Per-time-point estimation via one stacked least-squares system.
//!
//! At grid index `j` the complete cases contribute two blocks of rows to a
//! single system in the coefficient vector `d_j = (a_1..a_K, c_1..c_K, b)`:
//!
//! * mediator rows: `(arm_1..arm_K | 0..0 | 0)` with response `m_j`,
//! * outcome rows: `(0..0 | arm_1..arm_K | m_{j-1})` with response `y_j`,
//!
//! all columns centered beforehand (see [`crate::panel::center_slice`]),
//! which absorbs the intercepts. The two blocks share no columns, so the
//! stacked solution coincides with two separate OLS fits — a property the
//! test suite checks against an independent normal-equations oracle.
//!
//! The solver uses a column-pivoted QR decomposition. Numerical rank is
//! the number of pivoted `R` diagonal entries above
//! `rank_tol x (largest design-column norm)`; a deficient system is
//! reported as [`Error::RankDeficient`] and skipped by [`estimate_all`]
//! (skip-and-warn), never silently regularized.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::panel::{center_slice, CompleteCaseSlice, Panel};
use crate::{Error, Result};

/// Default relative rank tolerance for [`solve_least_squares`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// The stacked per-time system: `2 n_j` rows, `2 K + 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub n_arms: usize,
    /// Complete cases behind the system (`n_j`; rows = `2 n_j`).
    pub n_cases: usize,
}

/// Assemble the stacked system from a (centered) complete-case slice.
pub fn build_stacked_system(slice: &CompleteCaseSlice) -> StackedSystem {
    let k = slice.arm.len();
    let n = slice.n();
    let cols = 2 * k + 1;
    let mut design = DMatrix::zeros(2 * n, cols);
    let mut response = DVector::zeros(2 * n);
    for i in 0..n {
        for (a, col) in slice.arm.iter().enumerate() {
            design[(i, a)] = col[i];
            design[(n + i, k + a)] = col[i];
        }
        design[(n + i, 2 * k)] = slice.m_lag[i];
        response[i] = slice.m_cur[i];
        response[n + i] = slice.outcome[i];
    }
    StackedSystem {
        design,
        response,
        n_arms: k,
        n_cases: n,
    }
}

/// Least squares by column-pivoted QR with explicit rank policy.
///
/// `rank_tol` is relative: the rank threshold is
/// `rank_tol x max column norm` of the design. Singular values are not
/// needed — with column pivoting the leading `|R| `diagonal entry equals
/// the largest column norm, and the diagonal is non-increasing, so
/// counting diagonal entries above the threshold is the rank.
pub fn solve_least_squares(system: &StackedSystem, rank_tol: f64) -> Result<DVector<f64>> {
    if !(rank_tol > 0.0) {
        return Err(Error::config(format!(
            "rank tolerance must be positive, got {rank_tol}"
        )));
    }
    let needed = system.design.ncols();
    let nrows = system.design.nrows();
    if nrows < needed {
        return Err(Error::RankDeficient {
            rank: nrows,
            needed,
        });
    }
    let max_col_norm = system
        .design
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    let threshold = rank_tol * max_col_norm;

    let qr = system.design.clone().col_piv_qr();
    let r = qr.r();
    let rank = (0..needed)
        .take_while(|&i| r[(i, i)].abs() > threshold)
        .count();
    if rank < needed {
        return Err(Error::RankDeficient { rank, needed });
    }
    let qtb = qr.q().transpose() * &system.response;
    let mut solution = r
        .rows(0, needed)
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient { rank, needed })?;
    qr.p().inv_permute_rows(&mut solution);
    Ok(solution)
}

/// Why a time point produced no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SkipReason {
    /// No complete cases at this time point.
    EmptySlice,
    /// The design was numerically rank deficient (e.g. every complete case
    /// in the same arm, or a collinear lagged mediator).
    RankDeficient { rank: usize, needed: usize },
}

/// A skipped time point with its reason; reported, never silent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPoint {
    pub time_index: usize,
    pub time: f64,
    pub reason: SkipReason,
}

/// Raw per-time coefficient estimates on the estimable time points.
///
/// Series are stored per arm: `a[k][p]` is the treatment->mediator
/// estimate for arm `k` at `times[p]`, `c[k][p]` the direct effect, and
/// `b[p]` the (shared) mediator->outcome estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEstimates {
    pub times: Vec<f64>,
    pub time_indices: Vec<usize>,
    pub n_used: Vec<usize>,
    pub a: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub n_arms: usize,
    pub skipped: Vec<SkippedPoint>,
}

impl RawEstimates {
    /// Number of estimable time points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Write the `time,n_used,a_1..a_K,c_1..c_K,b` CSV.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "n_used".to_string()];
        header.extend((1..=self.n_arms).map(|k| format!("a_{k}")));
        header.extend((1..=self.n_arms).map(|k| format!("c_{k}")));
        header.push("b".into());
        w.write_record(&header)?;
        for p in 0..self.len() {
            let mut row = vec![format!("{}", self.times[p]), self.n_used[p].to_string()];
            row.extend(self.a.iter().map(|col| format!("{}", col[p])));
            row.extend(self.c.iter().map(|col| format!("{}", col[p])));
            row.push(format!("{}", self.b[p]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimate `(a_k, c_k, b)` at every estimable time point.
///
/// Time points with no complete cases or a rank-deficient design are
/// skipped and recorded in [`RawEstimates::skipped`]. Fewer than two
/// estimable points is an error — nothing downstream can smooth a single
/// point.
pub fn estimate_all(panel: &Panel, rank_tol: f64) -> Result<RawEstimates> {
    let k = panel.n_arms();
    let mut raw = RawEstimates {
        times: Vec::new(),
        time_indices: Vec::new(),
        n_used: Vec::new(),
        a: vec![Vec::new(); k],
        c: vec![Vec::new(); k],
        b: Vec::new(),
        n_arms: k,
        skipped: Vec::new(),
    };
    for j in 1..panel.n_times() {
        let slice = panel.complete_cases(j)?;
        if slice.n() == 0 {
            raw.skipped.push(SkippedPoint {
                time_index: j,
                time: slice.time,
                reason: SkipReason::EmptySlice,
            });
            continue;
        }
        let (centered, _) = center_slice(&slice);
        let system = build_stacked_system(&centered);
        match solve_least_squares(&system, rank_tol) {
            Ok(d) => {
                raw.times.push(slice.time);
                raw.time_indices.push(j);
                raw.n_used.push(slice.n());
                for (a, col) in raw.a.iter_mut().enumerate() {
                    col.push(d[a]);
                }
                for (a, col) in raw.c.iter_mut().enumerate() {
                    col.push(d[k + a]);
                }
                raw.b.push(d[2 * k]);
            }
            Err(Error::RankDeficient { rank, needed }) => {
                raw.skipped.push(SkippedPoint {
                    time_index: j,
                    time: slice.time,
                    reason: SkipReason::RankDeficient { rank, needed },
                });
            }
            Err(other) => return Err(other),
        }
    }
    if raw.len() < 2 {
        return Err(Error::TooFewTimePoints {
            found: raw.len(),
            needed: 2,
        });
    }
    Ok(raw)
}
