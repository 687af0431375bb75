//! Independent oracles for the integration and acceptance suites.
//!
//! Everything here is written from the defining formulas — normal
//! equations, the weighted-design intercept row, leave-one-out error —
//! deliberately sharing no code with the library implementations it
//! checks. The library solves the per-time system by orthogonal
//! decomposition and computes smoothing weights in equivalent-kernel
//! closed form; these oracles brute-force the same quantities so
//! agreement is evidence, not tautology.

#![allow(dead_code)] // each integration-test binary uses a subset

/// Solve ordinary least squares `min ||X b - y||` by normal equations with
/// Gaussian elimination (partial pivoting). Returns `None` when the
/// Gram matrix is numerically singular.
pub fn ols_normal_equations(columns: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let p = columns.len();
    let n = y.len();
    assert!(columns.iter().all(|c| c.len() == n));
    // Gram matrix and right-hand side
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = dot(&columns[r], &columns[c]);
        }
        a[r][p] = dot(&columns[r], y);
    }
    // Gaussian elimination with partial pivoting
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 * gram_scale(&a, p) {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            for c in col..=p {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    let mut b = vec![0.0; p];
    for row in (0..p).rev() {
        let mut v = a[row][p];
        for c in row + 1..p {
            v -= a[row][c] * b[c];
        }
        b[row] = v / a[row][row];
    }
    Some(b)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn gram_scale(a: &[Vec<f64>], p: usize) -> f64 {
    let mut s = 0.0f64;
    for row in a.iter().take(p) {
        for v in row.iter().take(p) {
            s = s.max(v.abs());
        }
    }
    s.max(1e-300)
}

/// Blockwise oracle for the per-time stacked system: the M-block and
/// Y-block regressions share no columns, so the stacked least-squares
/// solution must equal two separate OLS fits. Input columns are already
/// centered. Returns `(a, c, b)` or `None` if either block is singular.
pub fn blockwise_oracle(
    arm: &[Vec<f64>],
    m_lag: &[f64],
    m_cur: &[f64],
    outcome: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let a = ols_normal_equations(arm, m_cur)?;
    let mut y_cols: Vec<Vec<f64>> = arm.to_vec();
    y_cols.push(m_lag.to_vec());
    let cb = ols_normal_equations(&y_cols, outcome)?;
    let (c, b) = cb.split_at(arm.len());
    Some((a, c.to_vec(), b[0]))
}

/// Kernels re-stated from their textbook definitions (not the library's).
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 { 0.75 * (1.0 - u * u) } else { 0.0 }
}

pub fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Brute-force local-linear weights at `target`: fit the weighted design
/// `[1, (t_l - target)]` and read off the intercept row
/// `e1' (X'WX)^{-1} X'W`. Equals the equivalent-kernel closed form.
pub fn intercept_weights_oracle(
    times: &[f64],
    target: f64,
    kernel: impl Fn(f64) -> f64,
    h: f64,
) -> Option<Vec<f64>> {
    let w: Vec<f64> = times.iter().map(|t| kernel((t - target) / h)).collect();
    if w.iter().filter(|&&v| v > 0.0).count() < 2 {
        return None;
    }
    // X'WX for X = [1, d], d = t - target
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (t, wi) in times.iter().zip(&w) {
        let d = t - target;
        s0 += wi;
        s1 += wi * d;
        s2 += wi * d * d;
    }
    let det = s0 * s2 - s1 * s1;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    // first row of (X'WX)^{-1}: [s2, -s1] / det; weights = that row * X'W
    Some(
        times
            .iter()
            .zip(&w)
            .map(|(t, wi)| {
                let d = t - target;
                wi * (s2 - s1 * d) / det
            })
            .collect::<Vec<_>>(),
    )
}

/// Smooth one point with the brute-force weights; `None` when undefined.
pub fn smooth_at_oracle(
    times: &[f64],
    values: &[f64],
    target: f64,
    kernel: &impl Fn(f64) -> f64,
    h: f64,
) -> Option<f64> {
    let w = intercept_weights_oracle(times, target, kernel, h)?;
    Some(w.iter().zip(values).map(|(wi, v)| wi * v).sum())
}

/// Leave-one-out cross-validation oracle for the smoothing bandwidth:
/// pick the candidate `h` minimizing mean squared leave-one-out
/// prediction error of the local-linear fit. Candidates where any
/// leave-one-out prediction is undefined are skipped.
pub fn loocv_bandwidth(
    times: &[f64],
    values: &[f64],
    kernel: impl Fn(f64) -> f64,
    candidates: &[f64],
) -> Option<f64> {
    let n = times.len();
    let mut best: Option<(f64, f64)> = None;
    for &h in candidates {
        let mut sse = 0.0;
        let mut ok = true;
        for leave in 0..n {
            let t_rest: Vec<f64> = (0..n).filter(|&i| i != leave).map(|i| times[i]).collect();
            let v_rest: Vec<f64> = (0..n).filter(|&i| i != leave).map(|i| values[i]).collect();
            match smooth_at_oracle(&t_rest, &v_rest, times[leave], &kernel, h) {
                Some(pred) if pred.is_finite() => sse += (pred - values[leave]).powi(2),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mse = sse / n as f64;
        if best.is_none_or(|(_, b)| mse < b) {
            best = Some((h, mse));
        }
    }
    best.map(|(h, _)| h)
}

/// Simpson-rule quadrature on `[a, b]`.
pub fn quadrature(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels * 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Re-derive the local-linear (p = 1, estimating the mean) rule-of-thumb
/// constant from its defining integrals:
/// `C(K) = [ (p+1)!^2 int K^2 / (2 (p+1) mu_2(K)^2) ]^(1/(2p+3))`
/// which reduces to `(int K^2 / mu_2^2)^(1/5)`.
pub fn rot_constant_from_integrals(kernel: impl Fn(f64) -> f64, support: f64) -> f64 {
    let k2 = quadrature(|u| kernel(u) * kernel(u), -support, support, 4000);
    let mu2 = quadrature(|u| u * u * kernel(u), -support, support, 4000);
    (k2 / (mu2 * mu2)).powf(0.2)
}

/// Reference empirical quantile (linear interpolation between order
/// statistics, the common "type 7" definition) for cross-checking the
/// frozen order-statistic convention.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi.min(n - 1)] * frac
}
