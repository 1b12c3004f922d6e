//! Linear dynamical system smoothing: a scalar random-walk Kalman filter with
//! an RTS backward pass, run offline over one feature's window sequence.
//!
//! Model: x_t = x_{t-1} + w_t, w ~ N(0, q); y_t = x_t + v_t, v ~ N(0, r).
//! Initialization is diffuse, giving posterior (y_0, r) at t = 0, so the
//! smoothed mean equals the MAP solution of the unanchored quadratic
//! sum_t (y_t - x_t)^2 / r + sum_{t>=1} (x_t - x_{t-1})^2 / q.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdsParams {
    /// Random-walk process variance (q).
    pub process_var: f64,
    /// Observation variance (r).
    pub obs_var: f64,
}

impl Default for LdsParams {
    fn default() -> Self {
        LdsParams {
            process_var: 0.01,
            obs_var: 1.0,
        }
    }
}

/// Fixed-interval smoothing of one scalar series.
pub fn lds_smooth(series: &[f64], params: &LdsParams) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Data("lds_smooth: empty series".into()));
    }
    if !(params.process_var > 0.0) || !(params.obs_var > 0.0) {
        return Err(Error::Config(format!(
            "lds_smooth variances must be positive, got q={} r={}",
            params.process_var, params.obs_var
        )));
    }
    let n = series.len();
    let (q, r) = (params.process_var, params.obs_var);

    // Forward filter. Diffuse start: posterior mean y_0, posterior variance r.
    let mut mean_upd = vec![0.0; n];
    let mut var_upd = vec![0.0; n];
    let mut mean_pred = vec![0.0; n]; // prediction made for step t (t >= 1)
    let mut var_pred = vec![0.0; n];
    mean_upd[0] = series[0];
    var_upd[0] = r;
    for t in 1..n {
        mean_pred[t] = mean_upd[t - 1];
        var_pred[t] = var_upd[t - 1] + q;
        let gain = var_pred[t] / (var_pred[t] + r);
        mean_upd[t] = mean_pred[t] + gain * (series[t] - mean_pred[t]);
        var_upd[t] = (1.0 - gain) * var_pred[t];
    }

    // RTS backward pass.
    let mut smoothed = mean_upd.clone();
    for t in (0..n - 1).rev() {
        let gain = var_upd[t] / var_pred[t + 1];
        smoothed[t] = mean_upd[t] + gain * (smoothed[t + 1] - mean_pred[t + 1]);
    }
    Ok(smoothed)
}
