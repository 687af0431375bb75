//! Subject-level bootstrap of the full pipeline and percentile bands.
//!
//! Whole subjects are drawn with replacement — each drawn subject keeps
//! its entire time series, preserving within-subject serial correlation.
//! Every replicate reruns estimation and smoothing from scratch
//! (bandwidths re-selected per replicate unless frozen), and the pointwise
//! band at each evaluation time is formed from the surviving replicates'
//! mediation-effect values.
//!
//! ## Percentile convention (frozen)
//!
//! For `n` sorted values and probability `q`, the *lower* bound is the
//! order statistic at index `ceil(q n)` and the *upper* bound the one at
//! `floor(q n) + 1`, both 1-based and clamped to `[1, n]`. `q n` is
//! snapped to the nearest integer first when within `1e-9 n` of one, so
//! binary floating-point noise (e.g. `0.025 * 40 = 1.0000000000000002`)
//! cannot shift a bound by a whole order statistic.
//!
//! ## Determinism
//!
//! Replicate `r` draws from its own RNG stream derived from
//! `(seed, 1 + r)`; results are collected into a replicate-indexed buffer,
//! so bands are identical for any worker count.

use std::io::Write;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use rand::RngExt;

use crate::mediation::{BandwidthPolicy, MediationBand};
use crate::panel::{Panel, SubjectRecord};
use crate::pipeline::{fit_eta, fit_panel, FitConfig, FitResult};
use crate::{Error, Result};

/// Bootstrap settings on top of a fit configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    /// Number of replicates `B`.
    pub replicates: usize,
    /// Confidence level of the band.
    pub level: f64,
    pub seed: u64,
    pub fit: FitConfig,
    /// Reuse the original fit's bandwidths in every replicate instead of
    /// re-selecting (faster; ignores bandwidth-selection variability).
    pub freeze_bandwidths: bool,
    /// Keep the full replicate matrix for dumping.
    pub keep_replicates: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            level: 0.95,
            seed: 0,
            fit: FitConfig::default(),
            freeze_bandwidths: false,
            keep_replicates: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!(
                "confidence level must lie strictly between 0 and 1, got {}",
                self.level
            )));
        }
        let floor = 2.0 / (1.0 - self.level);
        if (self.replicates as f64) < floor {
            return Err(Error::config(format!(
                "{} replicates cannot define {}% percentile bounds; need at least {}",
                self.replicates,
                100.0 * self.level,
                floor.ceil()
            )));
        }
        Ok(())
    }
}

/// Draw `N` subjects with replacement; ids are disambiguated by draw
/// position so the resample is again a valid panel.
pub fn resample_panel(panel: &Panel, rng: &mut impl rand::Rng) -> Panel {
    let originals = panel.subjects();
    let subjects: Vec<SubjectRecord> = (0..originals.len())
        .map(|draw| {
            let pick = &originals[rng.random_range(0..originals.len())];
            SubjectRecord {
                id: format!("{}~{draw}", pick.id),
                ..pick.clone()
            }
        })
        .collect();
    Panel::from_parts_unchecked(subjects, panel.grid().to_vec(), panel.n_arms())
}

/// The raw replicate matrix, kept only on request.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    pub eval: Vec<f64>,
    pub n_arms: usize,
    /// `replicates[r]` is `None` when replicate `r` failed, else the
    /// arm-major effect values on `eval`.
    pub replicates: Vec<Option<Vec<Vec<f64>>>>,
}

impl BootstrapDistribution {
    /// Dump surviving replicates as `replicate,time,arm,eta_hat`
    /// (replicate and arm numbered from 1).
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replicate", "time", "arm", "eta_hat"])?;
        for (r, rep) in self.replicates.iter().enumerate() {
            let Some(eta) = rep else { continue };
            for (p, t) in self.eval.iter().enumerate() {
                for (arm, series) in eta.iter().enumerate() {
                    w.write_record(&[
                        (r + 1).to_string(),
                        format!("{t}"),
                        (arm + 1).to_string(),
                        format!("{}", series[p]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A completed bootstrap: the original fit, the banded effect, and the
/// failure tally.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRun {
    pub fit: FitResult,
    pub band: MediationBand,
    pub n_failed: usize,
    pub n_success: usize,
    pub distribution: Option<BootstrapDistribution>,
}

/// Lower-bound order statistic: index `ceil(q n)`, clamped to `[1, n]`.
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64> {
    order_statistic(sorted, q, false)
}

/// Upper-bound order statistic: index `floor(q n) + 1`, clamped to `[1, n]`.
pub fn upper_percentile(sorted: &[f64], q: f64) -> Result<f64> {
    order_statistic(sorted, q, true)
}

fn order_statistic(sorted: &[f64], q: f64, upper: bool) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config(format!(
            "percentile probability must lie in [0, 1], got {q}"
        )));
    }
    let n = sorted.len();
    let mut x = q * n as f64;
    let snapped = x.round();
    if (x - snapped).abs() <= 1e-9 * n as f64 {
        x = snapped;
    }
    let index = if upper { x.floor() + 1.0 } else { x.ceil() };
    let index = (index as i64).clamp(1, n as i64) as usize;
    Ok(sorted[index - 1])
}

/// Run the bootstrap and attach percentile bounds to the mediation curve.
///
/// Point estimates come from the original panel. A replicate that fails
/// anywhere in its pipeline (all its time points rank-deficient, a
/// degenerate smoothing neighborhood, ...) is dropped and counted; more
/// than 10% failures aborts with [`Error::TooManyFailures`]. Skipped time
/// points *within* a replicate merely thin that replicate's raw series —
/// the smoother needs no regular grid.
pub fn bootstrap_band(panel: &Panel, config: &BootstrapConfig) -> Result<BootstrapRun> {
    config.validate()?;
    let base = fit_panel(panel, &config.fit)?;
    let dt = base.curves.dt;
    let eval = base.curves.eval.clone();
    let frozen = config.freeze_bandwidths.then(|| base.curves.bandwidths.clone());
    let b = config.replicates;

    let run_one = |r: usize| -> Option<Vec<Vec<f64>>> {
        let mut rng = crate::rng::stream(config.seed, 1 + r as u64);
        let resample = resample_panel(panel, &mut rng);
        let policy = match &frozen {
            Some(bandwidths) => BandwidthPolicy::Frozen {
                family: config.fit.smooth.family,
                bandwidths,
            },
            None => BandwidthPolicy::Select(config.fit.smooth),
        };
        fit_eta(&resample, config.fit.rank_tol, dt, &eval, &policy).ok()
    };

    #[cfg(feature = "parallel")]
    let replicates: Vec<Option<Vec<Vec<f64>>>> = (0..b).into_par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let replicates: Vec<Option<Vec<Vec<f64>>>> = (0..b).map(run_one).collect();

    let n_failed = replicates.iter().filter(|r| r.is_none()).count();
    if n_failed * 10 > b {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total: b,
        });
    }
    let n_success = b - n_failed;

    let q_lo = 0.5 * (1.0 - config.level);
    let q_hi = 1.0 - q_lo;
    let n_arms = base.band.eta.len();
    let mut lower = vec![vec![0.0; eval.len()]; n_arms];
    let mut upper = vec![vec![0.0; eval.len()]; n_arms];
    let mut column = Vec::with_capacity(n_success);
    for arm in 0..n_arms {
        for p in 0..eval.len() {
            column.clear();
            column.extend(
                replicates
                    .iter()
                    .flatten()
                    .map(|eta| eta[arm][p]),
            );
            column.sort_by(f64::total_cmp);
            lower[arm][p] = percentile(&column, q_lo)?;
            upper[arm][p] = upper_percentile(&column, q_hi)?;
        }
    }

    let band = MediationBand {
        eval: eval.clone(),
        eta: base.band.eta.clone(),
        lower: Some(lower),
        upper: Some(upper),
        level: Some(config.level),
    };
    let distribution = config.keep_replicates.then(|| BootstrapDistribution {
        eval,
        n_arms,
        replicates,
    });
    Ok(BootstrapRun {
        fit: base,
        band,
        n_failed,
        n_success,
        distribution,
    })
}
