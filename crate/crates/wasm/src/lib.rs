//! Browser bindings for the estimation pipeline: three JSON-in/JSON-out
//! operations sized for interactive use. Each `*_json` function is plain
//! Rust (unit-tested on the host); the `#[wasm_bindgen]` wrappers only
//! translate errors for JavaScript callers.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use rand::RngExt;
use tvmed::bootstrap::{bootstrap_band, BootstrapConfig};
use tvmed::mediation::{SeriesBandwidths, SmoothConfig};
use tvmed::pipeline::{fit_panel, FitConfig};
use tvmed::sim::{generate_panel, ou_path, SimScenario};
use tvmed::smoother::{rot_bandwidth, smooth_series, BandwidthSelect, KernelFamily};

// ---------------------------------------------------------------------------
// simulate + fit + band

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    /// Built-in generating model: "i" or "ii".
    #[serde(default = "default_model")]
    model: String,
    #[serde(default = "default_n_subjects")]
    n_subjects: usize,
    #[serde(default)]
    seed: u64,
    /// Override the error-process variance (default: the model's own 15).
    #[serde(default)]
    sigma2: Option<f64>,
    /// Bootstrap replicates; 0 skips the band.
    #[serde(default = "default_bootstrap")]
    bootstrap: usize,
    #[serde(default = "default_level")]
    level: f64,
    #[serde(default)]
    kernel: Option<KernelFamily>,
}

fn default_model() -> String {
    "i".to_string()
}
fn default_n_subjects() -> usize {
    100
}
fn default_bootstrap() -> usize {
    200
}
fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Serialize)]
struct FitResponse {
    eval: Vec<f64>,
    dt: f64,
    /// Estimated mediation effect (single-arm models).
    eta: Vec<f64>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    level: Option<f64>,
    /// Generating-model curves on the same grid.
    eta_truth: Vec<f64>,
    alpha_hat: Vec<f64>,
    alpha_truth: Vec<f64>,
    beta_hat: Vec<f64>,
    beta_truth: Vec<f64>,
    gamma_hat: Vec<f64>,
    gamma_truth: Vec<f64>,
    bandwidths: SeriesBandwidths,
    bootstrap_failures: usize,
}

pub fn fit_simulated_json(request: &str) -> Result<String, String> {
    let req: FitRequest = serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    let mut scenario = match req.model.as_str() {
        "i" => SimScenario::model_i(req.n_subjects, req.seed),
        "ii" => SimScenario::model_ii(req.n_subjects, req.seed),
        other => return Err(format!("unknown model {other:?}: expected \"i\" or \"ii\"")),
    };
    if !(10..=2000).contains(&req.n_subjects) {
        return Err(format!(
            "n_subjects {} outside the interactive range 10..=2000",
            req.n_subjects
        ));
    }
    if req.bootstrap > 1000 {
        return Err(format!(
            "bootstrap {} outside the interactive range 0..=1000",
            req.bootstrap
        ));
    }
    if let Some(s2) = req.sigma2 {
        if !(s2 >= 0.0) {
            return Err(format!("sigma2 must be nonnegative, got {s2}"));
        }
        scenario.sigma2 = s2;
    }
    let (panel, _) = generate_panel(&scenario).map_err(|e| e.to_string())?;

    let mut fit_config = FitConfig::default();
    if let Some(family) = req.kernel {
        fit_config.smooth = SmoothConfig {
            family,
            bandwidth: BandwidthSelect::RuleOfThumb,
        };
    }

    let (fit, band, failures) = if req.bootstrap == 0 {
        let fit = fit_panel(&panel, &fit_config).map_err(|e| e.to_string())?;
        let band = fit.band.clone();
        (fit, band, 0)
    } else {
        let config = BootstrapConfig {
            replicates: req.bootstrap,
            level: req.level,
            seed: scenario.seed,
            fit: fit_config,
            ..BootstrapConfig::default()
        };
        let run = bootstrap_band(&panel, &config).map_err(|e| e.to_string())?;
        (run.fit, run.band, run.n_failed)
    };

    let eval = band.eval.clone();
    let dt = fit.curves.dt;
    let response = FitResponse {
        eta: band.eta[0].clone(),
        lower: band.lower.map(|b| b[0].clone()),
        upper: band.upper.map(|b| b[0].clone()),
        level: band.level,
        eta_truth: eval.iter().map(|&t| scenario.eta_true(0, t)).collect(),
        alpha_hat: fit.curves.alpha_lag[0].clone(),
        alpha_truth: eval
            .iter()
            .map(|&t| scenario.arms[0].alpha.eval(t - dt))
            .collect(),
        beta_hat: fit.curves.beta.clone(),
        beta_truth: eval.iter().map(|&t| scenario.beta.eval(t)).collect(),
        gamma_hat: fit.curves.gamma[0].clone(),
        gamma_truth: eval
            .iter()
            .map(|&t| scenario.arms[0].gamma.eval(t))
            .collect(),
        bandwidths: fit.curves.bandwidths.clone(),
        bootstrap_failures: failures,
        eval,
        dt,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

/// Simulate a panel from a built-in model, run the full two-step fit with
/// a percentile bootstrap band, and return estimate + truth curves.
#[wasm_bindgen]
pub fn fit_simulated(request: &str) -> Result<String, JsError> {
    fit_simulated_json(request).map_err(|e| JsError::new(&e))
}

// ---------------------------------------------------------------------------
// smoothing playground

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SmoothRequest {
    #[serde(default = "default_n_points")]
    n_points: usize,
    #[serde(default = "default_noise_sd")]
    noise_sd: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    kernel: Option<KernelFamily>,
    /// Fixed bandwidth; omit for the rule-of-thumb choice.
    #[serde(default)]
    bandwidth: Option<f64>,
}

fn default_n_points() -> usize {
    50
}
fn default_noise_sd() -> f64 {
    1.5
}

#[derive(Debug, Serialize)]
struct SmoothResponse {
    times: Vec<f64>,
    values: Vec<f64>,
    truth: Vec<f64>,
    grid: Vec<f64>,
    fitted: Vec<f64>,
    bandwidth: f64,
    bandwidth_was_automatic: bool,
}

pub fn smooth_noisy_series_json(request: &str) -> Result<String, String> {
    let req: SmoothRequest =
        serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    if !(5..=400).contains(&req.n_points) {
        return Err(format!(
            "n_points {} outside the interactive range 5..=400",
            req.n_points
        ));
    }
    if !(0.0..=100.0).contains(&req.noise_sd) {
        return Err(format!("noise_sd must lie in [0, 100], got {}", req.noise_sd));
    }
    if let Some(h) = req.bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(format!("bandwidth must be positive and finite, got {h}"));
        }
    }
    let family = req.kernel.unwrap_or(KernelFamily::Epanechnikov);
    let n = req.n_points;
    let times: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    // the model-i treatment->mediator curve as the showcase signal
    let signal = |t: f64| 10.0 + 12.0 * t * t * t;
    let mut rng = tvmed::rng::stream(req.seed, 0);
    let values: Vec<f64> = times
        .iter()
        .map(|&t| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            signal(t) + req.noise_sd * z
        })
        .collect();
    let (bandwidth, automatic) = match req.bandwidth {
        Some(h) => (h, false),
        None => (
            rot_bandwidth(&times, &values, family).map_err(|e| e.to_string())?,
            true,
        ),
    };
    let grid: Vec<f64> = (0..200).map(|j| j as f64 / 199.0).collect();
    let fitted = smooth_series(&times, &values, &grid, family, bandwidth)
        .map_err(|e| e.to_string())?;
    let response = SmoothResponse {
        truth: times.iter().copied().map(signal).collect(),
        times,
        values,
        fitted,
        grid,
        bandwidth,
        bandwidth_was_automatic: automatic,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

/// Generate a noisy sample of a smooth curve and fit it with the
/// local-linear smoother at a chosen (or rule-of-thumb) bandwidth.
#[wasm_bindgen]
pub fn smooth_noisy_series(request: &str) -> Result<String, JsError> {
    smooth_noisy_series_json(request).map_err(|e| JsError::new(&e))
}

// ---------------------------------------------------------------------------
// error-process sampler

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsRequest {
    #[serde(default = "default_n_paths")]
    n_paths: usize,
    #[serde(default = "default_n_times")]
    n_times: usize,
    #[serde(default = "default_sigma2")]
    sigma2: f64,
    #[serde(default = "default_phi")]
    phi: f64,
    #[serde(default)]
    seed: u64,
}

fn default_n_paths() -> usize {
    8
}
fn default_n_times() -> usize {
    120
}
fn default_sigma2() -> f64 {
    15.0
}
fn default_phi() -> f64 {
    0.3
}

#[derive(Debug, Serialize)]
struct PathsResponse {
    times: Vec<f64>,
    paths: Vec<Vec<f64>>,
    /// Stationary standard deviation, for reference lines.
    stationary_sd: f64,
}

pub fn sample_error_paths_json(request: &str) -> Result<String, String> {
    let req: PathsRequest =
        serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    if !(1..=30).contains(&req.n_paths) {
        return Err(format!(
            "n_paths {} outside the interactive range 1..=30",
            req.n_paths
        ));
    }
    if !(3..=500).contains(&req.n_times) {
        return Err(format!(
            "n_times {} outside the interactive range 3..=500",
            req.n_times
        ));
    }
    if !(req.sigma2 >= 0.0 && req.sigma2 <= 1000.0) {
        return Err(format!("sigma2 must lie in [0, 1000], got {}", req.sigma2));
    }
    if !(req.phi >= 0.0 && req.phi <= 100.0) {
        return Err(format!("phi must lie in [0, 100], got {}", req.phi));
    }
    let n = req.n_times;
    let times: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let paths: Vec<Vec<f64>> = (0..req.n_paths)
        .map(|k| {
            let mut rng = tvmed::rng::stream(req.seed, k as u64);
            ou_path(&times, req.sigma2, req.phi, &mut rng)
        })
        .collect();
    let response = PathsResponse {
        times,
        paths,
        stationary_sd: req.sigma2.sqrt(),
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

/// Draw stationary Gaussian error-process paths with exponential-decay
/// correlation, as used by the simulation engine.
#[wasm_bindgen]
pub fn sample_error_paths(request: &str) -> Result<String, JsError> {
    sample_error_paths_json(request).map_err(|e| JsError::new(&e))
}
