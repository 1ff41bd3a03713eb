//! Stationary variances and the two correlation-time estimators.
//!
//! `tau_ratio = 2 σ²_θ / σ²_v` is the primary definition. `tau_sum` is the
//! normalized first moment of the velocity autocovariance,
//! `Σ_{n=1}^{L} n·c(n) / Σ_{n=1}^{L} c(n)`, with biased lag covariances
//! `c(n) = (1/T) Σ_t v_t v_{t+n}`. Both lag sums are evaluated in `O(T)`
//! per direction from prefix sums.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sim::Trajectory;

/// Number of contiguous batches used for batched-means errors.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionStats {
    pub sigma_theta2: f64,
    pub sigma_v2: f64,
    pub tau_ratio: f64,
    pub tau_sum: f64,
    pub se_theta2: f64,
    pub se_v2: f64,
    pub se_tau: f64,
    /// The `tau_sum` denominator is within two standard errors of zero.
    pub tau_sum_ill_conditioned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalStationary {
    pub directions: Vec<DirectionStats>,
    pub tau_lag: usize,
}

/// `L_τ = min(5M, T/10)`.
pub fn default_tau_lag(batches_per_epoch: usize, steps: usize) -> usize {
    (5 * batches_per_epoch).min(steps / 10).max(1)
}

fn centered(col: impl Iterator<Item = f64>, len: usize) -> Vec<f64> {
    let x: Vec<f64> = col.collect();
    let mean = x.iter().sum::<f64>() / len as f64;
    x.into_iter().map(|v| v - mean).collect()
}

/// `(Σ_{n=1}^{L} Σ_t x_t x_{t+n}, Σ_{n=1}^{L} n Σ_t x_t x_{t+n})`.
pub fn lag_sums(x: &[f64], lag: usize) -> (f64, f64) {
    let t = x.len();
    // prefix sums S_j = Σ_{i<j} x_i and W_j = Σ_{i<j} i·x_i
    let mut s = vec![0.0; t + 1];
    let mut w = vec![0.0; t + 1];
    for i in 0..t {
        s[i + 1] = s[i] + x[i];
        w[i + 1] = w[i] + i as f64 * x[i];
    }
    let (mut zeroth, mut first) = (0.0, 0.0);
    for i in 0..t {
        let hi = (i + lag + 1).min(t);
        let lo = i + 1;
        if lo >= hi {
            break;
        }
        let block = s[hi] - s[lo];
        let weighted = (w[hi] - w[lo]) - i as f64 * block;
        zeroth += x[i] * block;
        first += x[i] * weighted;
    }
    (zeroth, first)
}

fn variance(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / (x.len() as f64 - 1.0).max(1.0)
}

/// Batched-means standard error of a statistic evaluated on contiguous blocks.
fn batched_se(values: &[f64]) -> f64 {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (var / k).sqrt()
}

/// Per-direction stationary statistics of a (drift-removed, projected) window.
pub fn estimate_stationary(trajectory: &Trajectory, tau_lag: usize) -> Result<EmpiricalStationary> {
    let (theta, velocity) = trajectory.stationary_view();
    estimate_stationary_series(theta, velocity, tau_lag)
}

pub fn estimate_stationary_series(theta: &DMatrix<f64>, velocity: &DMatrix<f64>, tau_lag: usize) -> Result<EmpiricalStationary> {
    let (t, m) = theta.shape();
    if velocity.shape() != (t, m) {
        return Err(Error::Dimension("theta and velocity windows differ in shape".into()));
    }
    if t < 2 * BATCHES || tau_lag == 0 || tau_lag >= t {
        return Err(Error::InvalidInput(format!(
            "window of {t} steps too short for {BATCHES} batches and lag {tau_lag}"
        )));
    }
    let blen = t / BATCHES;
    let mut directions = Vec::with_capacity(m);
    for j in 0..m {
        let th = centered(theta.column(j).iter().copied(), t);
        let v = centered(velocity.column(j).iter().copied(), t);
        let sigma_theta2 = variance(&th);
        let sigma_v2 = variance(&v);
        let tau_ratio = 2.0 * sigma_theta2 / sigma_v2;
        let (z, f) = lag_sums(&v, tau_lag);
        let tau_sum = f / z;

        let mut bt = Vec::with_capacity(BATCHES);
        let mut bv = Vec::with_capacity(BATCHES);
        let mut btau = Vec::with_capacity(BATCHES);
        let mut bden = Vec::with_capacity(BATCHES);
        for b in 0..BATCHES {
            let r = b * blen..(b + 1) * blen;
            let a = th[r.clone()].iter().map(|x| x * x).sum::<f64>() / blen as f64;
            let c = v[r.clone()].iter().map(|x| x * x).sum::<f64>() / blen as f64;
            bt.push(a);
            bv.push(c);
            btau.push(2.0 * a / c);
            let lag = tau_lag.min(blen - 1).max(1);
            bden.push(lag_sums(&v[r], lag).0 / blen as f64);
        }
        let den = z / t as f64;
        let ill = den.abs() <= 2.0 * batched_se(&bden);
        if ill {
            debug!("direction {j}: tau_sum denominator {den:e} within 2 standard errors of zero");
        }
        directions.push(DirectionStats {
            sigma_theta2,
            sigma_v2,
            tau_ratio,
            tau_sum,
            se_theta2: batched_se(&bt),
            se_v2: batched_se(&bv),
            se_tau: batched_se(&btau),
            tau_sum_ill_conditioned: ill,
        });
    }
    let ill = directions.iter().filter(|d| d.tau_sum_ill_conditioned).count();
    if ill > 0 {
        warn!("{ill} of {m} directions have an ill-conditioned tau_sum denominator");
    }
    Ok(EmpiricalStationary { directions, tau_lag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn brute(x: &[f64], lag: usize) -> (f64, f64) {
        let (mut z, mut f) = (0.0, 0.0);
        for n in 1..=lag {
            let c: f64 = (0..x.len() - n).map(|t| x[t] * x[t + n]).sum();
            z += c;
            f += n as f64 * c;
        }
        (z, f)
    }

    #[test]
    fn lag_sums_match_double_sum() {
        let mut rng = StreamId::new(5, 0).rng();
        let x: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        for lag in [1, 7, 100, 999] {
            let (a, b) = lag_sums(&x, lag);
            let (c, d) = brute(&x, lag);
            assert!((a - c).abs() < 1e-9 * c.abs().max(1.0));
            assert!((b - d).abs() < 1e-9 * d.abs().max(1.0));
        }
    }

    #[test]
    fn decay_has_vanishing_variance() {
        let theta = DMatrix::from_fn(400, 1, |k, _| 0.9f64.powi(k as i32 + 200));
        let v = DMatrix::from_fn(400, 1, |k, _| 0.9f64.powi(k as i32 + 200) * -0.1);
        let s = estimate_stationary_series(&theta, &v, 10).unwrap();
        assert!(s.directions[0].sigma_theta2 < 1e-15);
        assert!(s.directions[0].sigma_v2 < 1e-15);
    }

    #[test]
    fn ar1_velocity_tau_sum() {
        // AR(1) velocity with coefficient a: Σ n aⁿ / Σ aⁿ = 1/(1−a)
        let a = 0.8f64;
        let mut rng = StreamId::new(6, 0).rng();
        let mut x = 0.0;
        let v = DMatrix::from_fn(200_000, 1, |_, _| {
            x = a * x + rng.sample::<f64, _>(StandardNormal);
            x
        });
        let theta = v.clone();
        let s = estimate_stationary_series(&theta, &v, 40).unwrap();
        assert!((s.directions[0].tau_sum - 5.0).abs() < 0.5, "{}", s.directions[0].tau_sum);
    }

    #[test]
    fn rejects_short_windows() {
        let m = DMatrix::from_element(10, 1, 1.0);
        assert!(estimate_stationary_series(&m, &m, 2).is_err());
    }
}
