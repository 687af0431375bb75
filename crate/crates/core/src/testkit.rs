//! Shared fixtures for the unit-test suites (compiled only under test).

use rand::RngExt;

use crate::panel::{Panel, SubjectRecord};

/// Deterministic synthetic panel with enough jitter for full rank at
/// every time point: even-indexed subjects treated, odd-indexed control.
pub(crate) fn jittered_panel(n_subjects: usize, n_times: usize, seed: u64) -> Panel {
    let grid: Vec<f64> = (0..n_times)
        .map(|j| j as f64 / (n_times - 1) as f64)
        .collect();
    let mut rng = crate::rng::stream(seed, 1);
    let subjects = (0..n_subjects)
        .map(|i| {
            let arm = u8::from(i % 2 == 0);
            let mediator = grid
                .iter()
                .map(|t| {
                    Some(1.0 + 2.0 * t + 1.5 * f64::from(arm) + rng.random_range(-1.0..1.0f64))
                })
                .collect();
            let outcome = grid
                .iter()
                .map(|t| {
                    Some(0.5 - t + 0.8 * f64::from(arm) + rng.random_range(-1.0..1.0f64))
                })
                .collect();
            SubjectRecord {
                id: format!("s{i}"),
                arm: vec![arm],
                mediator,
                outcome,
            }
        })
        .collect();
    Panel::new(subjects, grid, 1).expect("valid panel")
}
