//! End-to-end fit: panel -> raw per-time estimates -> smoothed curves ->
//! mediation-effect curve.
//!
//! [`fit_panel`] wires the stages together and resolves the two data-driven
//! defaults: the evaluation lag `dt` (half the smallest grid gap) and the
//! evaluation grid (the estimable raw time points).

use crate::estimator::{estimate_all, RawEstimates};
use crate::mediation::{
    default_dt, mediation_effect, smooth_all, smooth_all_with, BandwidthPolicy, MediationBand,
    SmoothConfig, SmoothedCurves,
};
use crate::panel::Panel;
use crate::Result;

/// Configuration for one full fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Relative rank tolerance for the per-time solver.
    pub rank_tol: f64,
    pub smooth: SmoothConfig,
    /// Evaluation lag; `None` -> half the smallest grid gap.
    pub dt: Option<f64>,
    /// Evaluation grid; `None` -> the estimable raw time points.
    pub eval: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rank_tol: crate::estimator::DEFAULT_RANK_TOL,
            smooth: SmoothConfig::default(),
            dt: None,
            eval: None,
        }
    }
}

/// Everything a fit produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub raw: RawEstimates,
    pub curves: SmoothedCurves,
    pub band: MediationBand,
}

/// Run the full pipeline on a panel.
pub fn fit_panel(panel: &Panel, config: &FitConfig) -> Result<FitResult> {
    let raw = estimate_all(panel, config.rank_tol)?;
    let dt = match config.dt {
        Some(dt) => dt,
        None => default_dt(panel.grid())?,
    };
    let eval: &[f64] = match &config.eval {
        Some(eval) => eval,
        None => &raw.times,
    };
    let curves = smooth_all(&raw, dt, &config.smooth, eval)?;
    let band = mediation_effect(&curves);
    Ok(FitResult { raw, curves, band })
}

/// Refit on (typically resampled) data with everything already resolved:
/// fixed lag, fixed evaluation grid, and an explicit bandwidth policy.
/// Returns the per-arm mediation-effect values only.
pub(crate) fn fit_eta(
    panel: &Panel,
    rank_tol: f64,
    dt: f64,
    eval: &[f64],
    policy: &BandwidthPolicy,
) -> Result<Vec<Vec<f64>>> {
    let raw = estimate_all(panel, rank_tol)?;
    let curves = smooth_all_with(&raw, dt, eval, policy)?;
    Ok(mediation_effect(&curves).eta)
}
