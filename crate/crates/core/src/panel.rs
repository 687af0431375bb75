//! Longitudinal panel data: subjects observed on a shared time grid.
//!
//! A [`Panel`] holds one record per subject — a constant one-hot arm
//! assignment plus mediator and outcome series aligned to the grid, with
//! explicit per-cell missingness. The estimator consumes panels through
//! [`Panel::complete_cases`]: the slice at grid index `j` keeps the
//! subjects with the lagged mediator (at `j - 1`), the current mediator,
//! and the current outcome all observed. Per-time centering
//! ([`center_slice`]) replaces intercepts in the stacked regression, so
//! every slice column (arm indicators included) is demeaned before
//! estimation.
//!
//! Invariants enforced at construction and load:
//! * at least 3 grid points, strictly increasing, all finite;
//! * every subject's series have grid length, values finite where present;
//! * arm indicators are 0/1 with at most one indicator set (all zero =
//!   reference group), constant across the subject's rows;
//! * subject ids are unique and non-empty.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One subject: constant arm assignment plus value series on the panel grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// One-hot over the `K` treatment arms; all zeros = reference group.
    pub arm: Vec<u8>,
    /// Mediator series aligned to the grid; `None` = not observed.
    pub mediator: Vec<Option<f64>>,
    /// Outcome series aligned to the grid; `None` = not observed.
    pub outcome: Vec<Option<f64>>,
}

impl SubjectRecord {
    /// Index of the arm this subject belongs to; `None` = reference group.
    pub fn arm_index(&self) -> Option<usize> {
        self.arm.iter().position(|&v| v == 1)
    }
}

/// A validated panel: subjects plus the shared, strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    subjects: Vec<SubjectRecord>,
    grid: Vec<f64>,
    n_arms: usize,
}

impl Panel {
    /// Build a panel, checking every invariant listed in the module docs.
    pub fn new(subjects: Vec<SubjectRecord>, grid: Vec<f64>, n_arms: usize) -> Result<Self> {
        if n_arms == 0 {
            return Err(Error::config("a panel needs at least one treatment arm"));
        }
        if grid.len() < 3 {
            return Err(Error::TooFewTimePoints {
                found: grid.len(),
                needed: 3,
            });
        }
        if grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::malformed("grid times must be finite"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::malformed("grid times must be strictly increasing"));
        }
        let mut seen = HashMap::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            if s.id.is_empty() {
                return Err(Error::malformed(format!("subject {i} has an empty id")));
            }
            if let Some(prev) = seen.insert(s.id.clone(), i) {
                return Err(Error::malformed(format!(
                    "duplicate subject id {:?} (records {prev} and {i})",
                    s.id
                )));
            }
            if s.arm.len() != n_arms {
                return Err(Error::malformed(format!(
                    "subject {:?}: {} arm indicators, expected {n_arms}",
                    s.id,
                    s.arm.len()
                )));
            }
            if s.arm.iter().any(|&v| v > 1) {
                return Err(Error::malformed(format!(
                    "subject {:?}: arm indicators must be 0 or 1",
                    s.id
                )));
            }
            if s.arm.iter().map(|&v| v as usize).sum::<usize>() > 1 {
                return Err(Error::malformed(format!(
                    "subject {:?}: at most one arm indicator may be 1",
                    s.id
                )));
            }
            for (name, series) in [("mediator", &s.mediator), ("outcome", &s.outcome)] {
                if series.len() != grid.len() {
                    return Err(Error::malformed(format!(
                        "subject {:?}: {name} series has length {}, expected {}",
                        s.id,
                        series.len(),
                        grid.len()
                    )));
                }
                if series.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::malformed(format!(
                        "subject {:?}: non-finite {name} value",
                        s.id
                    )));
                }
            }
        }
        Ok(Panel {
            subjects,
            grid,
            n_arms,
        })
    }

    /// Construct without re-validating; for internal paths (bootstrap
    /// resampling) that preserve invariants by construction.
    pub(crate) fn from_parts_unchecked(
        subjects: Vec<SubjectRecord>,
        grid: Vec<f64>,
        n_arms: usize,
    ) -> Self {
        Panel {
            subjects,
            grid,
            n_arms,
        }
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    /// Complete cases at grid index `j` (0-based, `1 <= j < T`): subjects
    /// with the mediator observed at `j - 1` and `j` and the outcome
    /// observed at `j`. An empty slice is a legal return.
    pub fn complete_cases(&self, time_index: usize) -> Result<CompleteCaseSlice> {
        if time_index == 0 || time_index >= self.grid.len() {
            return Err(Error::InvalidTimeIndex {
                index: time_index,
                t_len: self.grid.len(),
            });
        }
        let mut slice = CompleteCaseSlice {
            time_index,
            time: self.grid[time_index],
            arm: vec![Vec::new(); self.n_arms],
            m_lag: Vec::new(),
            m_cur: Vec::new(),
            outcome: Vec::new(),
        };
        for s in &self.subjects {
            let (Some(m_lag), Some(m_cur), Some(y)) = (
                s.mediator[time_index - 1],
                s.mediator[time_index],
                s.outcome[time_index],
            ) else {
                continue;
            };
            for (k, col) in slice.arm.iter_mut().enumerate() {
                col.push(f64::from(s.arm[k]));
            }
            slice.m_lag.push(m_lag);
            slice.m_cur.push(m_cur);
            slice.outcome.push(y);
        }
        Ok(slice)
    }

    /// Per-time complete-case counts and dimensions, for summaries.
    pub fn summary(&self) -> PanelSummary {
        let per_time = (1..self.grid.len())
            .map(|j| {
                let n = self
                    .complete_cases(j)
                    .map(|s| s.n())
                    .expect("index in range");
                TimeCount {
                    time_index: j,
                    time: self.grid[j],
                    n_complete: n,
                }
            })
            .collect();
        PanelSummary {
            n_subjects: self.subjects.len(),
            n_times: self.grid.len(),
            n_arms: self.n_arms,
            per_time,
        }
    }
}

/// Complete cases at one time point, stored column-major for the estimator.
///
/// `arm[k][i]` is subject `i`'s indicator for arm `k` (0.0 or 1.0 before
/// centering); `m_lag`, `m_cur`, `outcome` are aligned value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteCaseSlice {
    pub time_index: usize,
    pub time: f64,
    pub arm: Vec<Vec<f64>>,
    pub m_lag: Vec<f64>,
    pub m_cur: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl CompleteCaseSlice {
    /// Number of complete cases in the slice.
    pub fn n(&self) -> usize {
        self.m_cur.len()
    }
}

/// Column means removed by [`center_slice`].
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMeans {
    pub arm: Vec<f64>,
    pub m_lag: f64,
    pub m_cur: f64,
    pub outcome: f64,
}

fn center_column(values: &[f64]) -> (Vec<f64>, f64) {
    if values.is_empty() {
        return (Vec::new(), 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| v - mean).collect(), mean)
}

/// Demean every column of a slice (arm indicators, lagged mediator, current
/// mediator, outcome). Centering replaces the intercepts of the per-time
/// regressions; the returned means let callers reconstruct fitted levels.
pub fn center_slice(slice: &CompleteCaseSlice) -> (CompleteCaseSlice, SliceMeans) {
    let mut arm_means = Vec::with_capacity(slice.arm.len());
    let arm = slice
        .arm
        .iter()
        .map(|col| {
            let (c, m) = center_column(col);
            arm_means.push(m);
            c
        })
        .collect();
    let (m_lag, m_lag_mean) = center_column(&slice.m_lag);
    let (m_cur, m_cur_mean) = center_column(&slice.m_cur);
    let (outcome, outcome_mean) = center_column(&slice.outcome);
    (
        CompleteCaseSlice {
            time_index: slice.time_index,
            time: slice.time,
            arm,
            m_lag,
            m_cur,
            outcome,
        },
        SliceMeans {
            arm: arm_means,
            m_lag: m_lag_mean,
            m_cur: m_cur_mean,
            outcome: outcome_mean,
        },
    )
}

/// Column bindings for the long-format panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub id: String,
    pub time: String,
    pub arms: Vec<String>,
    pub mediator: String,
    pub outcome: String,
}

impl ColumnSchema {
    /// Default bindings for `K` arms: `subject_id,time,x,mediator,outcome`
    /// for a single arm, arm columns `x1..xK` otherwise.
    pub fn default_for(n_arms: usize) -> Self {
        let arms = if n_arms == 1 {
            vec!["x".to_string()]
        } else {
            (1..=n_arms).map(|k| format!("x{k}")).collect()
        };
        ColumnSchema {
            id: "subject_id".into(),
            time: "time".into(),
            arms,
            mediator: "mediator".into(),
            outcome: "outcome".into(),
        }
    }
}

/// Subjects dropped at load (and why), reported rather than silently lost.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    /// Ids of subjects with no observed mediator or outcome value at all.
    pub dropped_subjects: Vec<String>,
}

struct PendingSubject {
    id: String,
    arm: Vec<u8>,
    first_line: u64,
    /// (grid time bits, line, mediator, outcome) per row, resolved to grid
    /// positions once the full grid is known.
    rows: Vec<(u64, u64, Option<f64>, Option<f64>)>,
}

fn parse_cell(raw: &str, what: &str, line: u64) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::malformed(format!("line {line}: unparseable {what} {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::malformed(format!(
            "line {line}: non-finite {what} {raw:?}"
        )));
    }
    Ok(Some(v))
}

/// Load a long-format panel CSV (`,` separated, `.` decimal separator,
/// empty cell = missing, LF or CRLF). Subjects keep first-appearance order;
/// the grid is the sorted set of distinct observed times. Subjects with no
/// observed values are dropped and reported.
pub fn load_panel(reader: impl Read, schema: &ColumnSchema) -> Result<(Panel, LoadReport)> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::malformed(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::malformed(format!("missing column {name:?}")))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let arm_cols = schema
        .arms
        .iter()
        .map(|a| col(a))
        .collect::<Result<Vec<_>>>()?;
    let mediator_col = col(&schema.mediator)?;
    let outcome_col = col(&schema.outcome)?;

    let mut order: Vec<PendingSubject> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut time_bits: Vec<u64> = Vec::new();

    for record in csv.records() {
        let record = record.map_err(|e| Error::malformed(format!("CSV parse error: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::malformed(format!("line {line}: too few fields")))
        };
        let id = field(id_col)?.trim();
        if id.is_empty() {
            return Err(Error::malformed(format!("line {line}: empty subject id")));
        }
        let time = parse_cell(field(time_col)?, "time", line)?
            .ok_or_else(|| Error::malformed(format!("line {line}: empty time")))?;
        let mut arm = Vec::with_capacity(arm_cols.len());
        for (k, &c) in arm_cols.iter().enumerate() {
            let v = parse_cell(field(c)?, &format!("arm indicator {:?}", schema.arms[k]), line)?
                .ok_or_else(|| {
                    Error::malformed(format!(
                        "line {line}: empty arm indicator {:?}",
                        schema.arms[k]
                    ))
                })?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::malformed(format!(
                    "line {line}: arm indicator {:?} must be 0 or 1, got {v}",
                    schema.arms[k]
                )));
            }
            arm.push(v as u8);
        }
        let mediator = parse_cell(field(mediator_col)?, "mediator", line)?;
        let outcome = parse_cell(field(outcome_col)?, "outcome", line)?;

        let bits = time.to_bits();
        time_bits.push(bits);
        let subject = match index.get(id) {
            Some(&i) => {
                let s = &mut order[i];
                if s.arm != arm {
                    return Err(Error::malformed(format!(
                        "line {line}: subject {id:?} changes arm assignment \
                         (first seen at line {})",
                        s.first_line
                    )));
                }
                s
            }
            None => {
                index.insert(id.to_string(), order.len());
                order.push(PendingSubject {
                    id: id.to_string(),
                    arm,
                    first_line: line,
                    rows: Vec::new(),
                });
                order.last_mut().expect("just pushed")
            }
        };
        if subject.rows.iter().any(|&(b, ..)| b == bits) {
            return Err(Error::malformed(format!(
                "line {line}: duplicate row for subject {id:?} at time {time}"
            )));
        }
        subject.rows.push((bits, line, mediator, outcome));
    }

    let mut grid: Vec<f64> = {
        time_bits.sort_unstable();
        time_bits.dedup();
        time_bits.iter().map(|&b| f64::from_bits(b)).collect()
    };
    grid.sort_by(f64::total_cmp);
    let slot: HashMap<u64, usize> = grid
        .iter()
        .enumerate()
        .map(|(i, t)| (t.to_bits(), i))
        .collect();

    let n_arms = schema.arms.len();
    let mut report = LoadReport::default();
    let mut subjects = Vec::with_capacity(order.len());
    for pending in order {
        let mut mediator = vec![None; grid.len()];
        let mut outcome = vec![None; grid.len()];
        for (bits, _, m, y) in pending.rows {
            let &i = slot.get(&bits).expect("time seen while collecting grid");
            mediator[i] = m;
            outcome[i] = y;
        }
        if mediator.iter().all(Option::is_none) && outcome.iter().all(Option::is_none) {
            report.dropped_subjects.push(pending.id);
            continue;
        }
        subjects.push(SubjectRecord {
            id: pending.id,
            arm: pending.arm,
            mediator,
            outcome,
        });
    }

    let panel = Panel::new(subjects, grid, n_arms)?;
    Ok((panel, report))
}

/// Convenience wrapper over [`load_panel`] for a file path.
pub fn load_panel_path(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<(Panel, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    load_panel(std::io::BufReader::new(file), schema)
}

/// Write a panel in the long CSV format [`load_panel`] reads.
///
/// Every (subject, grid time) pair is written — rows with both value cells
/// empty included — so the grid survives a round trip even at times where a
/// subject observed nothing. Numbers use the shortest round-trip decimal
/// form, so `load_panel(write_panel(p)) == p`.
pub fn write_panel(panel: &Panel, writer: impl Write, schema: &ColumnSchema) -> Result<()> {
    if schema.arms.len() != panel.n_arms() {
        return Err(Error::config(format!(
            "schema has {} arm columns, panel has {}",
            schema.arms.len(),
            panel.n_arms()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.id.clone(), schema.time.clone()];
    header.extend(schema.arms.iter().cloned());
    header.push(schema.mediator.clone());
    header.push(schema.outcome.clone());
    w.write_record(&header)?;
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
    for s in panel.subjects() {
        for (j, t) in panel.grid().iter().enumerate() {
            let mut row = vec![s.id.clone(), format!("{t}")];
            row.extend(s.arm.iter().map(|a| a.to_string()));
            row.push(fmt_opt(s.mediator[j]));
            row.push(fmt_opt(s.outcome[j]));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Dimensions plus per-time complete-case counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelSummary {
    pub n_subjects: usize,
    pub n_times: usize,
    pub n_arms: usize,
    pub per_time: Vec<TimeCount>,
}

/// Complete-case count at one estimable time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeCount {
    pub time_index: usize,
    pub time: f64,
    pub n_complete: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subject(id: &str, arm: &[u8], m: &[Option<f64>], y: &[Option<f64>]) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            arm: arm.to_vec(),
            mediator: m.to_vec(),
            outcome: y.to_vec(),
        }
    }

    fn small_panel() -> Panel {
        Panel::new(
            vec![
                subject(
                    "a",
                    &[1],
                    &[Some(1.0), Some(2.0), Some(3.0)],
                    &[Some(4.0), Some(5.0), Some(6.0)],
                ),
                subject(
                    "b",
                    &[0],
                    &[Some(7.0), Some(8.0), Some(9.0)],
                    &[Some(1.0), Some(2.0), Some(3.0)],
                ),
            ],
            vec![0.0, 0.5, 1.0],
            1,
        )
        .expect("valid panel")
    }

    #[test]
    fn load_two_subjects_three_times() {
        let csv = "subject_id,time,x,mediator,outcome\n\
                   a,0,1,1.0,4.0\na,0.5,1,2.0,5.0\na,1,1,3.0,6.0\n\
                   b,0,0,7.0,1.0\nb,0.5,0,8.0,2.0\nb,1,0,9.0,3.0\n";
        let (panel, report) =
            load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).expect("loads");
        assert_eq!(panel.n_times(), 3);
        assert_eq!(panel.n_subjects(), 2);
        assert_eq!(panel.grid(), &[0.0, 0.5, 1.0]);
        assert!(report.dropped_subjects.is_empty());
        assert_eq!(panel.subjects()[0].mediator[1], Some(2.0));
    }

    #[test]
    fn empty_cell_is_missing_not_error() {
        let csv = "subject_id,time,x,mediator,outcome\n\
                   a,0,1,,4.0\na,0.5,1,2.0,5.0\na,1,1,3.0,\n\
                   b,0,0,7.0,1.0\nb,0.5,0,8.0,2.0\nb,1,0,9.0,3.0\n";
        let (panel, _) = load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).expect("loads");
        assert_eq!(panel.subjects()[0].mediator[0], None);
        assert_eq!(panel.subjects()[0].outcome[2], None);
        assert_eq!(panel.subjects()[0].mediator[1], Some(2.0));
    }

    #[test]
    fn arm_flip_rejected() {
        let csv = "subject_id,time,x,mediator,outcome\n\
                   a,0,1,1.0,4.0\na,0.5,0,2.0,5.0\na,1,1,3.0,6.0\n";
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).unwrap_err();
        assert!(matches!(err, Error::MalformedInput(_)), "{err}");
        assert!(err.to_string().contains("changes arm"), "{err}");
    }

    #[test]
    fn non_binary_indicator_rejected() {
        let csv = "subject_id,time,x,mediator,outcome\na,0,2,1.0,4.0\n";
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).unwrap_err();
        assert!(err.to_string().contains("must be 0 or 1"), "{err}");
    }

    #[test]
    fn duplicate_subject_time_rejected() {
        let csv = "subject_id,time,x,mediator,outcome\n\
                   a,0,1,1.0,4.0\na,0,1,2.0,5.0\n";
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).unwrap_err();
        assert!(err.to_string().contains("duplicate row"), "{err}");
    }

    #[test]
    fn two_indicators_set_rejected() {
        let csv = "sid,time,x1,x2,mediator,outcome\n\
                   a,0,1,1,1.0,4.0\na,0.5,1,1,2.0,5.0\na,1,1,1,3.0,6.0\n";
        let schema = ColumnSchema {
            id: "sid".into(),
            time: "time".into(),
            arms: vec!["x1".into(), "x2".into()],
            mediator: "mediator".into(),
            outcome: "outcome".into(),
        };
        let err = load_panel(csv.as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("at most one arm"), "{err}");
    }

    #[test]
    fn zero_usable_subject_dropped_with_report() {
        let csv = "subject_id,time,x,mediator,outcome\n\
                   a,0,1,1.0,4.0\na,0.5,1,2.0,5.0\na,1,1,3.0,6.0\n\
                   b,0,0,7.0,1.0\nb,0.5,0,8.0,2.0\nb,1,0,9.0,3.0\n\
                   ghost,0,0,,\nghost,0.5,0,,\n";
        let (panel, report) =
            load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).expect("loads");
        assert_eq!(panel.n_subjects(), 2);
        assert_eq!(report.dropped_subjects, vec!["ghost".to_string()]);
    }

    #[test]
    fn fewer_than_three_times_rejected() {
        let csv = "subject_id,time,x,mediator,outcome\na,0,1,1.0,4.0\na,1,1,2.0,5.0\n";
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).unwrap_err();
        assert!(matches!(err, Error::TooFewTimePoints { found: 2, needed: 3 }), "{err}");
    }

    #[test]
    fn crlf_accepted() {
        let csv = "subject_id,time,x,mediator,outcome\r\n\
                   a,0,1,1.0,4.0\r\na,0.5,1,2.0,5.0\r\na,1,1,3.0,6.0\r\n";
        let (panel, _) = load_panel(csv.as_bytes(), &ColumnSchema::default_for(1)).expect("loads");
        assert_eq!(panel.n_times(), 3);
    }

    #[test]
    fn complete_cases_all_present() {
        let panel = small_panel();
        let slice = panel.complete_cases(1).expect("in range");
        assert_eq!(slice.n(), 2);
        assert_eq!(slice.m_lag, vec![1.0, 7.0]);
        assert_eq!(slice.m_cur, vec![2.0, 8.0]);
        assert_eq!(slice.outcome, vec![5.0, 2.0]);
        assert_eq!(slice.arm, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn missing_lagged_mediator_excludes_subject() {
        let mut panel = small_panel();
        // knock out subject a's mediator at index 0 => excluded at j = 1 only
        let mut subjects = panel.subjects.clone();
        subjects[0].mediator[0] = None;
        panel = Panel::new(subjects, panel.grid.clone(), 1).expect("still valid");
        assert_eq!(panel.complete_cases(1).expect("ok").n(), 1);
        assert_eq!(panel.complete_cases(2).expect("ok").n(), 2);
    }

    #[test]
    fn first_time_index_not_estimable() {
        let panel = small_panel();
        let err = panel.complete_cases(0).unwrap_err();
        assert!(matches!(err, Error::InvalidTimeIndex { index: 0, .. }), "{err}");
        assert!(panel.complete_cases(3).is_err());
    }

    #[test]
    fn centering_binary_column() {
        let slice = CompleteCaseSlice {
            time_index: 1,
            time: 0.5,
            arm: vec![vec![1.0, 0.0, 1.0, 0.0]],
            m_lag: vec![2.0, 1.0, 3.0, 2.0],
            m_cur: vec![1.0, 3.0, 4.0, 8.0],
            outcome: vec![3.0, 2.0, 7.0, 6.0],
        };
        let (centered, means) = center_slice(&slice);
        assert_eq!(centered.arm[0], vec![0.5, -0.5, 0.5, -0.5]);
        assert_eq!(means.arm[0], 0.5);
        assert_eq!(means.m_cur, 4.0);
    }

    #[test]
    fn centering_is_idempotent() {
        let slice = CompleteCaseSlice {
            time_index: 1,
            time: 0.5,
            arm: vec![vec![1.0, 0.0, 0.0]],
            m_lag: vec![2.0, 1.0, 3.0],
            m_cur: vec![1.0, 3.0, 4.0],
            outcome: vec![3.0, 2.0, 7.0],
        };
        let (once, _) = center_slice(&slice);
        let (twice, means) = center_slice(&once);
        // idempotent up to one rounding step: the second pass subtracts a
        // mean that is already only rounding noise
        for (a, b) in [
            (&once.m_lag, &twice.m_lag),
            (&once.m_cur, &twice.m_cur),
            (&once.outcome, &twice.outcome),
            (&once.arm[0], &twice.arm[0]),
        ] {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15, "{x} vs {y}");
            }
        }
        assert!(means.arm[0].abs() < 1e-15);
        assert!(means.outcome.abs() < 1e-15);
    }

    #[test]
    fn centering_single_row_gives_zeros() {
        let slice = CompleteCaseSlice {
            time_index: 1,
            time: 0.5,
            arm: vec![vec![1.0]],
            m_lag: vec![2.0],
            m_cur: vec![1.0],
            outcome: vec![3.0],
        };
        let (centered, _) = center_slice(&slice);
        assert_eq!(centered.arm[0], vec![0.0]);
        assert_eq!(centered.m_cur, vec![0.0]);
    }

    #[test]
    fn summary_counts_complete_cases() {
        let panel = small_panel();
        let s = panel.summary();
        assert_eq!(s.n_subjects, 2);
        assert_eq!(s.per_time.len(), 2);
        assert!(s.per_time.iter().all(|t| t.n_complete == 2));
    }

    prop_compose! {
        /// Panels with 1-3 arms, 3-6 times, 1-6 subjects, ~15% missing cells.
        fn arb_panel()(
            n_arms in 1usize..=3,
            n_times in 3usize..=6,
            n_subjects in 1usize..=6,
            seed in any::<u64>(),
        ) -> Panel {
            use rand::RngExt;
            let mut rng = crate::rng::stream(seed, 0);
            let grid: Vec<f64> = {
                let mut t = 0.0;
                (0..n_times)
                    .map(|_| {
                        t += rng.random_range(0.25..2.0f64);
                        // quantize so written decimal forms stay short but exact
                        (t * 64.0).round() / 64.0
                    })
                    .collect()
            };
            let subjects = (0..n_subjects)
                .map(|i| {
                    let mut arm = vec![0u8; n_arms];
                    let pick = rng.random_range(0..=n_arms);
                    if pick < n_arms {
                        arm[pick] = 1;
                    }
                    let mut value = |forced: bool| -> Option<f64> {
                        if forced || rng.random_range(0.0..1.0f64) > 0.15 {
                            Some((rng.random_range(-8.0..8.0f64) * 32.0).round() / 32.0)
                        } else {
                            None
                        }
                    };
                    // force one observed mediator so no subject is zero-usable
                    let mediator: Vec<_> = (0..n_times).map(|j| value(j == 0)).collect();
                    let outcome: Vec<_> = (0..n_times).map(|_| value(false)).collect();
                    SubjectRecord { id: format!("s{i}"), arm, mediator, outcome }
                })
                .collect();
            Panel::new(subjects, grid, n_arms).expect("generator respects invariants")
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_identity(panel in arb_panel()) {
            let schema = ColumnSchema::default_for(panel.n_arms());
            let mut buf = Vec::new();
            write_panel(&panel, &mut buf, &schema).expect("writes");
            let (reloaded, report) = load_panel(buf.as_slice(), &schema).expect("reads back");
            prop_assert_eq!(&reloaded, &panel);
            prop_assert!(report.dropped_subjects.is_empty());
        }

        #[test]
        fn centered_columns_have_near_zero_mean(panel in arb_panel()) {
            for j in 1..panel.n_times() {
                let slice = panel.complete_cases(j).expect("in range");
                if slice.n() == 0 {
                    continue;
                }
                let (centered, _) = center_slice(&slice);
                let scale = slice.m_cur.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                let mean = centered.m_cur.iter().sum::<f64>() / centered.n() as f64;
                prop_assert!(mean.abs() <= 1e-12 * scale);
                for col in &centered.arm {
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    prop_assert!(mean.abs() <= 1e-12);
                }
            }
        }
    }
}
