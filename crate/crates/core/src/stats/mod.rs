//! Estimators over recorded trajectories.

mod autocorr;
mod stationary;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::sorted_eigen;

pub use autocorr::{estimate_autocorr, AutocorrEstimate};
pub use stationary::{
    default_tau_lag, estimate_stationary, estimate_stationary_series, lag_sums, DirectionStats, EmpiricalStationary,
    BATCHES,
};

/// Principal axes of the window covariance of `theta` (rows = steps).
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Orthonormal columns, ordered by decreasing explained variance.
    pub basis: DMatrix<f64>,
    pub explained: Vec<f64>,
}

pub fn pca_basis(theta: &DMatrix<f64>) -> Result<Pca> {
    let (t, d) = theta.shape();
    if t < 2 || d == 0 {
        return Err(Error::InvalidInput("PCA needs at least two steps".into()));
    }
    let mut x = theta.clone();
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / (t as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    let (explained, basis) = sorted_eigen(&cov);
    Ok(Pca { basis, explained })
}

/// Sample variance of every column.
pub fn column_variances(x: &DMatrix<f64>) -> Vec<f64> {
    let t = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.mean();
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0)
        })
        .collect()
}

/// `max / min` of a set of positive values.
pub fn spread_ratio(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    /// Twice the standard error of the slope.
    pub two_sigma: f64,
    pub log_intercept: f64,
    pub points: usize,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        (self.log_intercept + self.exponent * x.ln()).exp()
    }
}

/// Least-squares line through `(ln x, ln y)` for the points with `x` in `[lo, hi]`.
pub fn powerlaw_fit(x: &[f64], y: &[f64], region: (f64, f64)) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension("x and y lengths differ".into()));
    }
    if x.iter().chain(y).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("power-law fit needs positive finite values".into()));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, _)| **a >= region.0 && **a <= region.1)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("only {n} points in fit region, need 3")));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidInput("fit region holds a single abscissa".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let se = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(PowerLawFit { exponent: slope, two_sigma: 2.0 * se, log_intercept: intercept, points: n })
}

/// `tr(AᵀB) / (‖A‖_F ‖B‖_F)`.
pub fn cosine_similarity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("cosine similarity of a zero matrix".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between two vectors, sign-insensitive.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

/// Flatness `Fᵢ = λᵢ^{-1/2}`, reported as a derived column.
pub fn flatness(lambda: f64) -> f64 {
    1.0 / lambda.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn cosine_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&a, &(-&a)).unwrap() + 1.0).abs() < 1e-15);
        let p = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(cosine_similarity(&p, &q).unwrap(), 0.0);
        assert!(cosine_similarity(&p, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn powerlaw_examples() {
        let x: Vec<f64> = (1..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let f = powerlaw_fit(&x, &y, (0.0, 10.0)).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12 && f.two_sigma < 1e-10);
        let y: Vec<f64> = x.iter().map(|_| 2.0).collect();
        let f = powerlaw_fit(&x, &y, (0.0, 10.0)).unwrap();
        assert!(f.exponent.abs() < 1e-12);
        assert!(powerlaw_fit(&[1.0, 2.0, -1.0], &[1.0, 1.0, 1.0], (0.0, 9.0)).is_err());
        assert!(powerlaw_fit(&x, &y, (0.05, 0.25)).is_err());
    }

    #[test]
    fn pca_finds_drift() {
        let d = 30;
        let mut rng = StreamId::new(8, 0).rng();
        let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let theta = DMatrix::from_fn(500, d, |k, i| k as f64 * u[i] * 0.01 + 0.01 * rng.sample::<f64, _>(StandardNormal));
        let pca = pca_basis(&theta).unwrap();
        let first: Vec<f64> = pca.basis.column(0).iter().copied().collect();
        assert!(abs_cosine(&first, &u) > 0.99);
        assert!(pca.explained.windows(2).all(|w| w[0] >= w[1]));
    }

    proptest! {
        #[test]
        fn cosine_in_range(v in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let a = DMatrix::from_row_slice(2, 2, &[v[0], v[1], v[1], v[2]]);
            let b = DMatrix::from_row_slice(2, 2, &[v[3], v[4], v[4], v[5]]);
            if a.norm() > 1e-9 && b.norm() > 1e-9 {
                let c = cosine_similarity(&a, &b).unwrap();
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn powerlaw_recovers_exponent(p in -3.0f64..3.0, c in 0.1f64..10.0) {
            let x: Vec<f64> = (1..30).map(|i| (i as f64 * 0.3).exp()).collect();
            let y: Vec<f64> = x.iter().map(|v| c * v.powf(p)).collect();
            let f = powerlaw_fit(&x, &y, (0.0, f64::INFINITY)).unwrap();
            prop_assert!((f.exponent - p).abs() < 1e-9);
        }
    }
}
