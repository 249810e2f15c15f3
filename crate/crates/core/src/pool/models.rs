//! One-step-ahead point forecasters used as base learners.
//!
//! Each function takes the training window (oldest first) and returns the
//! forecast for the period right after it. Callers guarantee the window is at
//! least the model's minimum length.

use nalgebra::{DMatrix, DVector};

/// Smoothing grid shared by every exponential-smoothing model: 0.1, 0.2, ..., 0.9.
const GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const DAMPING_GRID: [f64; 3] = [0.8, 0.9, 0.98];

pub fn moving_average(window: &[f64]) -> f64 {
    window.iter().sum::<f64>() / window.len() as f64
}

pub fn seasonal_naive(window: &[f64], season: usize) -> f64 {
    window[window.len() - season]
}

/// AR(p) with intercept, fit by least squares on the window.
pub fn autoregressive(window: &[f64], order: usize) -> f64 {
    let n = window.len();
    let last = window[n - 1];
    if order == 0 || n < 2 * order + 1 {
        return last;
    }
    // Work on a unit scale so the normal equations stay well conditioned.
    let scale = moving_average(window).abs().max(f64::MIN_POSITIVE);
    let x: Vec<f64> = window.iter().map(|v| v / scale).collect();
    let rows = n - order;
    let cols = order + 1;
    let design = DMatrix::from_fn(rows, cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            x[order + r - c]
        }
    });
    let target = DVector::from_iterator(rows, x[order..].iter().copied());
    let mut gram = design.transpose() * &design;
    let ridge = 1e-9 * (gram.trace() / cols as f64).max(1e-12);
    for i in 0..cols {
        gram[(i, i)] += ridge;
    }
    let rhs = design.transpose() * target;
    let Some(coef) = gram.cholesky().map(|c| c.solve(&rhs)) else {
        return last;
    };
    let mut forecast = coef[0];
    for lag in 1..=order {
        forecast += coef[lag] * x[n - lag];
    }
    let out = forecast * scale;
    if out.is_finite() {
        out
    } else {
        last
    }
}

fn ses_pass(window: &[f64], alpha: f64) -> (f64, f64) {
    let mut level = window[0];
    let mut abs_err = 0.0;
    for &x in &window[1..] {
        abs_err += (x - level).abs();
        level = alpha * x + (1.0 - alpha) * level;
    }
    (abs_err, level)
}

/// Simple exponential smoothing with a fixed smoothing constant.
pub fn ses_with_alpha(window: &[f64], alpha: f64) -> f64 {
    ses_pass(window, alpha).1
}

/// Simple exponential smoothing; alpha chosen on the grid by in-sample one-step MAE.
pub fn ses(window: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, window[window.len() - 1]);
    for &alpha in &GRID {
        let (err, level) = ses_pass(window, alpha);
        if err < best.0 {
            best = (err, level);
        }
    }
    best.1
}

fn damped_pass(window: &[f64], alpha: f64, beta: f64, phi: f64) -> (f64, f64) {
    let mut level = window[0];
    let mut trend = window[1] - window[0];
    let mut abs_err = 0.0;
    for &x in &window[1..] {
        let forecast = level + phi * trend;
        abs_err += (x - forecast).abs();
        let new_level = alpha * x + (1.0 - alpha) * forecast;
        trend = beta * (new_level - level) + (1.0 - beta) * phi * trend;
        level = new_level;
    }
    (abs_err, level + phi * trend)
}

/// Additive damped-trend smoothing; alpha, beta and the damping factor are grid-searched.
pub fn damped_trend(window: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, window[window.len() - 1]);
    for &alpha in &GRID {
        for &beta in &GRID {
            for &phi in &DAMPING_GRID {
                let (err, forecast) = damped_pass(window, alpha, beta, phi);
                if err < best.0 {
                    best = (err, forecast);
                }
            }
        }
    }
    best.1
}

/// Holt-Winters with additive trend and additive seasonality.
///
/// The first two cycles seed level, trend and seasonal indices; alpha, beta
/// and gamma are grid-searched on one-step MAE over the remainder.
pub fn holt_winters_additive(window: &[f64], season: usize) -> f64 {
    let n = window.len();
    let m = season;
    let first = moving_average(&window[..m]);
    let second = moving_average(&window[m..2 * m]);
    let level0 = first;
    let trend0 = (second - first) / m as f64;
    let seasonal0: Vec<f64> = window[..m].iter().map(|x| x - level0).collect();

    let mut seasonal = vec![0.0; n + 1];
    let mut best = (f64::INFINITY, window[n - 1]);
    for &alpha in &GRID {
        for &beta in &GRID {
            for &gamma in &GRID {
                seasonal[..m].copy_from_slice(&seasonal0);
                let mut level = level0;
                let mut trend = trend0;
                let mut abs_err = 0.0;
                for i in m..n {
                    let x = window[i];
                    let s_prev = seasonal[i - m];
                    abs_err += (x - (level + trend + s_prev)).abs();
                    let new_level = alpha * (x - s_prev) + (1.0 - alpha) * (level + trend);
                    trend = beta * (new_level - level) + (1.0 - beta) * trend;
                    seasonal[i] = gamma * (x - new_level) + (1.0 - gamma) * s_prev;
                    level = new_level;
                }
                if abs_err < best.0 {
                    best = (abs_err, level + trend + seasonal[n - m]);
                }
            }
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_of_three() {
        assert_eq!(moving_average(&[10.0, 20.0, 30.0]), 20.0);
    }

    #[test]
    fn ses_hand_unrolled() {
        // s1 = 100, s2 = 0.5 * 200 + 0.5 * 100
        assert_eq!(ses_with_alpha(&[100.0, 200.0], 0.5), 150.0);
    }

    #[test]
    fn seasonal_naive_takes_lag() {
        let h: Vec<f64> = (1..=13).map(f64::from).collect();
        assert_eq!(seasonal_naive(&h, 12), 2.0);
    }

    #[test]
    fn ar_recovers_linear_recursion() {
        // y_t = 10 + 0.5 y_{t-1}, converging to 20.
        let mut y = vec![100.0];
        for _ in 0..30 {
            let last = *y.last().unwrap();
            y.push(10.0 + 0.5 * last);
        }
        let expected = 10.0 + 0.5 * y.last().unwrap();
        assert!((autoregressive(&y, 1) - expected).abs() < 1e-6);
    }

    #[test]
    fn damped_trend_follows_line() {
        let line: Vec<f64> = (0..20).map(|i| 100.0 + 5.0 * i as f64).collect();
        let f = damped_trend(&line);
        assert!(f > line[19] && f <= line[19] + 5.0 + 1e-9, "{f}");
    }

    #[test]
    fn holt_winters_on_pure_season() {
        let season = [1.0, 3.0, 2.0, 5.0];
        let data: Vec<f64> = (0..16).map(|i| 100.0 + season[i % 4]).collect();
        let f = holt_winters_additive(&data, 4);
        assert!((f - 101.0).abs() < 1e-9, "{f}");
    }
}
