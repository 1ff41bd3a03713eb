use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Direction-averaged normalized autocorrelation for lags `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrEstimate {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    /// Half-width of the 2σ sampling band at each lag.
    pub band: Vec<f64>,
}

impl AutocorrEstimate {
    /// Fraction of lags whose value lies within the band around `reference(h)`.
    pub fn fraction_within(&self, reference: impl Fn(usize) -> f64) -> f64 {
        let inside = self
            .lags
            .iter()
            .zip(self.values.iter().zip(&self.band))
            .filter(|(h, (v, b))| (**v - reference(**h)).abs() <= **b)
            .count();
        inside as f64 / self.lags.len().max(1) as f64
    }
}

/// Biased-normalized autocorrelation of each column of `series` (rows are
/// time), averaged over columns. The band is `2/sqrt((T−h)·m)`, the
/// standard error of a lag-`h` correlation of `m` independent white series.
pub fn estimate_autocorr(series: &DMatrix<f64>, max_lag: usize) -> Result<AutocorrEstimate> {
    let (t, m) = series.shape();
    if max_lag == 0 {
        return Err(Error::InvalidInput("max lag must be at least 1".into()));
    }
    if m == 0 || t < 10 * max_lag {
        return Err(Error::InvalidInput(format!(
            "need at least {} samples for {max_lag} lags, got {t}",
            10 * max_lag
        )));
    }
    let mut acc = vec![0.0; max_lag];
    let mut x = vec![0.0; t];
    for j in 0..m {
        let col = series.column(j);
        let mean = col.mean();
        for (xi, c) in x.iter_mut().zip(col.iter()) {
            *xi = c - mean;
        }
        let c0: f64 = x.iter().map(|v| v * v).sum();
        let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(c0 > 0.0) || c0 <= (t as f64) * (scale * 1e-14).powi(2) {
            return Err(Error::InvalidInput(format!("series {j} is constant")));
        }
        for (h, a) in acc.iter_mut().enumerate() {
            let lag = h + 1;
            let s: f64 = x[..t - lag].iter().zip(&x[lag..]).map(|(p, q)| p * q).sum();
            *a += s / c0;
        }
    }
    let lags: Vec<usize> = (1..=max_lag).collect();
    let values = acc.iter().map(|a| a / m as f64).collect();
    let band = lags
        .iter()
        .map(|h| 2.0 / (((t - h) * m) as f64).sqrt())
        .collect();
    Ok(AutocorrEstimate { lags, values, band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn white_noise_inside_null_band() {
        let mut rng = StreamId::new(11, 0).rng();
        let s = DMatrix::from_fn(4000, 20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let est = estimate_autocorr(&s, 100).unwrap();
        assert!(est.fraction_within(|_| 0.0) >= 0.95);
    }

    #[test]
    fn alternating_is_anticorrelated() {
        let s = DMatrix::from_fn(100, 1, |k, _| if k % 2 == 0 { 1.0 } else { -1.0 });
        let est = estimate_autocorr(&s, 3).unwrap();
        assert!((est.values[0] + 0.99).abs() < 1e-12);
        assert!((est.values[1] - 0.98).abs() < 1e-12);
    }

    #[test]
    fn rejects_constant_and_short() {
        let s = DMatrix::from_element(100, 2, 3.0);
        assert!(estimate_autocorr(&s, 5).is_err());
        let s = DMatrix::from_fn(20, 1, |k, _| k as f64);
        assert!(estimate_autocorr(&s, 5).is_err());
    }
}
