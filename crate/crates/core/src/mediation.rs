//! Smoothed coefficient curves and the time-varying mediation effect.
//!
//! The raw per-time estimates are smoothed per series (each arm's `a` and
//! `c` sequence, and the shared `b` sequence) onto an evaluation grid.
//! The treatment->mediator curve is evaluated at the *lagged* times
//! `t - dt`, because the mediation effect at `t` is the product
//!
//! ```text
//! eta_k(t) = alpha_k(t - dt) * beta(t).
//! ```
//!
//! Each series gets its own rule-of-thumb bandwidth unless a fixed
//! bandwidth overrides all of them. Rule-of-thumb bandwidths are raised to
//! a feasibility floor — 1.05x the largest second-nearest-source distance
//! over that series' evaluation targets — so an aggressively small
//! selection can never make the local line unidentified at some target; an
//! explicitly given bandwidth is used exactly as given.

use std::io::Write;

use serde::Serialize;

use crate::estimator::RawEstimates;
use crate::smoother::{rot_bandwidth, BandwidthSelect, KernelFamily};
use crate::{Error, Result};

/// Kernel family plus bandwidth policy for one smoothing pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothConfig {
    pub family: KernelFamily,
    pub bandwidth: BandwidthSelect,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            family: KernelFamily::Epanechnikov,
            bandwidth: BandwidthSelect::RuleOfThumb,
        }
    }
}

/// The bandwidth actually used for each smoothed series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesBandwidths {
    /// Per arm, for the treatment->mediator series.
    pub a: Vec<f64>,
    /// Per arm, for the direct-effect series.
    pub c: Vec<f64>,
    /// For the mediator->outcome series.
    pub b: f64,
}

/// Smoothed coefficient curves aligned with an evaluation grid.
///
/// `alpha_lag[k][p]` is arm `k`'s treatment->mediator curve evaluated at
/// `eval[p] - dt`; `gamma` and `beta` are evaluated at `eval[p]` itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedCurves {
    pub eval: Vec<f64>,
    pub dt: f64,
    pub family: KernelFamily,
    pub alpha_lag: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub bandwidths: SeriesBandwidths,
}

impl SmoothedCurves {
    pub fn n_arms(&self) -> usize {
        self.alpha_lag.len()
    }
}

/// Mediation-effect point curve, optionally with confidence bounds.
///
/// Percentile bounds come from a resampled distribution, so
/// `lower <= eta <= upper` is *not* guaranteed pointwise (though it nearly
/// always holds); `lower <= upper` always holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediationBand {
    pub eval: Vec<f64>,
    /// `eta[k][p]`: arm `k`'s mediation effect at `eval[p]`.
    pub eta: Vec<Vec<f64>>,
    pub lower: Option<Vec<Vec<f64>>>,
    pub upper: Option<Vec<Vec<f64>>>,
    /// Confidence level of the bounds; `None` until a bootstrap runs.
    pub level: Option<f64>,
}

impl MediationBand {
    pub fn n_arms(&self) -> usize {
        self.eta.len()
    }
}

/// Default evaluation lag: half the smallest gap between consecutive
/// observation times.
pub fn default_dt(grid: &[f64]) -> Result<f64> {
    let min_gap = grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if min_gap.is_finite() && min_gap > 0.0 {
        Ok(0.5 * min_gap)
    } else {
        Err(Error::config(
            "cannot derive a default lag from fewer than two distinct time points",
        ))
    }
}

/// Distance from `target` to its second-nearest point of `sources`.
fn second_nearest_distance(sources: &[f64], target: f64) -> f64 {
    let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
    for &s in sources {
        let d = (s - target).abs();
        if d < d1 {
            d2 = d1;
            d1 = d;
        } else if d < d2 {
            d2 = d;
        }
    }
    d2
}

/// Smallest bandwidth that keeps at least two sources strictly inside the
/// kernel window at every target (with 5% headroom).
fn feasibility_floor(sources: &[f64], targets: &[f64]) -> f64 {
    1.05 * targets
        .iter()
        .map(|&t| second_nearest_distance(sources, t))
        .fold(0.0f64, f64::max)
}

/// Resolve one series' bandwidth and check its targets are reachable.
fn series_bandwidth(
    sources: &[f64],
    values: &[f64],
    targets: &[f64],
    config: &SmoothConfig,
) -> Result<f64> {
    let h = match config.bandwidth {
        BandwidthSelect::Fixed(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::config(format!(
                    "bandwidth must be a positive finite number, got {h}"
                )));
            }
            h
        }
        BandwidthSelect::RuleOfThumb => {
            let h = rot_bandwidth(sources, values, config.family)?;
            h.max(feasibility_floor(sources, targets))
        }
    };
    let lo = sources.iter().copied().fold(f64::INFINITY, f64::min) - h;
    let hi = sources.iter().copied().fold(f64::NEG_INFINITY, f64::max) + h;
    for &t in targets {
        if !t.is_finite() || t < lo || t > hi {
            return Err(Error::EvalOutOfRange { point: t, lo, hi });
        }
    }
    Ok(h)
}

fn smooth_one(
    sources: &[f64],
    values: &[f64],
    targets: &[f64],
    family: KernelFamily,
    h: f64,
) -> Result<Vec<f64>> {
    crate::smoother::smooth_series(sources, values, targets, family, h)
}

/// Per-series bandwidth policy: select fresh, or reuse a previous fit's.
pub(crate) enum BandwidthPolicy<'a> {
    Select(SmoothConfig),
    Frozen {
        family: KernelFamily,
        bandwidths: &'a SeriesBandwidths,
    },
}

pub(crate) fn smooth_all_with(
    raw: &RawEstimates,
    dt: f64,
    eval: &[f64],
    policy: &BandwidthPolicy,
) -> Result<SmoothedCurves> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::config(format!(
            "evaluation lag must be a nonnegative finite number, got {dt}"
        )));
    }
    if eval.is_empty() {
        return Err(Error::config("empty evaluation grid"));
    }
    if eval.iter().any(|t| !t.is_finite()) {
        return Err(Error::config("evaluation grid contains a non-finite time"));
    }
    if raw.len() < 2 {
        return Err(Error::TooFewTimePoints {
            found: raw.len(),
            needed: 2,
        });
    }
    let k = raw.a.len();
    let lagged: Vec<f64> = eval.iter().map(|t| t - dt).collect();

    let (family, frozen_bw) = match policy {
        BandwidthPolicy::Select(c) => (c.family, None),
        BandwidthPolicy::Frozen { family, bandwidths } => (*family, Some(*bandwidths)),
    };
    let resolve = |values: &[f64], targets: &[f64], frozen_h: Option<f64>, series: &str| {
        match (policy, frozen_h) {
            (BandwidthPolicy::Select(c), _) => {
                series_bandwidth(&raw.times, values, targets, c).map_err(|e| e.in_series(series))
            }
            (BandwidthPolicy::Frozen { .. }, Some(h)) => Ok(h),
            (BandwidthPolicy::Frozen { .. }, None) => Err(Error::config(format!(
                "no frozen bandwidth recorded for series {series}"
            ))),
        }
    };

    let mut alpha_lag = Vec::with_capacity(k);
    let mut gamma = Vec::with_capacity(k);
    let mut h_a = Vec::with_capacity(k);
    let mut h_c = Vec::with_capacity(k);
    for arm in 0..k {
        let name_a = format!("a_{}", arm + 1);
        let h = resolve(
            &raw.a[arm],
            &lagged,
            frozen_bw.and_then(|b| b.a.get(arm).copied()),
            &name_a,
        )?;
        alpha_lag.push(
            smooth_one(&raw.times, &raw.a[arm], &lagged, family, h)
                .map_err(|e| e.in_series(&name_a))?,
        );
        h_a.push(h);

        let name_c = format!("c_{}", arm + 1);
        let h = resolve(
            &raw.c[arm],
            eval,
            frozen_bw.and_then(|b| b.c.get(arm).copied()),
            &name_c,
        )?;
        gamma.push(
            smooth_one(&raw.times, &raw.c[arm], eval, family, h)
                .map_err(|e| e.in_series(&name_c))?,
        );
        h_c.push(h);
    }
    let h_b = resolve(&raw.b, eval, frozen_bw.map(|b| b.b), "b")?;
    let beta =
        smooth_one(&raw.times, &raw.b, eval, family, h_b).map_err(|e| e.in_series("b"))?;

    Ok(SmoothedCurves {
        eval: eval.to_vec(),
        dt,
        family,
        alpha_lag,
        gamma,
        beta,
        bandwidths: SeriesBandwidths {
            a: h_a,
            c: h_c,
            b: h_b,
        },
    })
}

/// Smooth every coefficient series onto `eval` (treatment->mediator at
/// `eval - dt`), selecting bandwidths per `config`.
pub fn smooth_all(
    raw: &RawEstimates,
    dt: f64,
    config: &SmoothConfig,
    eval: &[f64],
) -> Result<SmoothedCurves> {
    smooth_all_with(raw, dt, eval, &BandwidthPolicy::Select(*config))
}

/// Pointwise mediation effect `eta_k(t) = alpha_k(t - dt) * beta(t)`.
pub fn mediation_effect(curves: &SmoothedCurves) -> MediationBand {
    let eta = curves
        .alpha_lag
        .iter()
        .map(|alpha| {
            alpha
                .iter()
                .zip(&curves.beta)
                .map(|(a, b)| a * b)
                .collect()
        })
        .collect();
    MediationBand {
        eval: curves.eval.clone(),
        eta,
        lower: None,
        upper: None,
        level: None,
    }
}

/// Write the long-format curve CSV:
/// `time,arm,alpha_hat,gamma_hat,beta_hat,eta_hat[,ci_lower,ci_upper]`.
///
/// One row per (time, arm), time-major; `alpha_hat` is the lagged
/// evaluation `alpha_k(t - dt)` entering the mediation product, and
/// `beta_hat` repeats across arms (the mediator->outcome curve is shared).
/// The confidence columns appear only when `band` carries bounds.
pub fn write_curves_csv(
    curves: &SmoothedCurves,
    band: &MediationBand,
    writer: impl Write,
) -> Result<()> {
    if band.eval != curves.eval || band.n_arms() != curves.n_arms() {
        return Err(Error::GridMismatch(
            "mediation band does not align with the smoothed curves".into(),
        ));
    }
    let with_ci = band.lower.is_some() && band.upper.is_some();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "time", "arm", "alpha_hat", "gamma_hat", "beta_hat", "eta_hat",
    ];
    if with_ci {
        header.extend(["ci_lower", "ci_upper"]);
    }
    w.write_record(&header)?;
    for (p, t) in curves.eval.iter().enumerate() {
        for arm in 0..curves.n_arms() {
            let mut row = vec![
                format!("{t}"),
                (arm + 1).to_string(),
                format!("{}", curves.alpha_lag[arm][p]),
                format!("{}", curves.gamma[arm][p]),
                format!("{}", curves.beta[p]),
                format!("{}", band.eta[arm][p]),
            ];
            if with_ci {
                row.push(format!("{}", band.lower.as_ref().expect("checked")[arm][p]));
                row.push(format!("{}", band.upper.as_ref().expect("checked")[arm][p]));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON variant of the curve output, with smoothing metadata attached.
#[derive(Debug, Clone, Serialize)]
pub struct CurvesReport<'a> {
    pub eval: &'a [f64],
    pub dt: f64,
    pub kernel: KernelFamily,
    pub bandwidths: &'a SeriesBandwidths,
    pub level: Option<f64>,
    pub alpha_hat: &'a [Vec<f64>],
    pub gamma_hat: &'a [Vec<f64>],
    pub beta_hat: &'a [f64],
    pub eta_hat: &'a [Vec<f64>],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_lower: Option<&'a [Vec<f64>]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_upper: Option<&'a [Vec<f64>]>,
}

impl<'a> CurvesReport<'a> {
    pub fn new(curves: &'a SmoothedCurves, band: &'a MediationBand) -> Self {
        CurvesReport {
            eval: &curves.eval,
            dt: curves.dt,
            kernel: curves.family,
            bandwidths: &curves.bandwidths,
            level: band.level,
            alpha_hat: &curves.alpha_lag,
            gamma_hat: &curves.gamma,
            beta_hat: &curves.beta,
            eta_hat: &band.eta,
            ci_lower: band.lower.as_deref(),
            ci_upper: band.upper.as_deref(),
        }
    }
}
