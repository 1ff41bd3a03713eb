//! Random matrix helpers for the dense (non-commuting) ensembles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q diag(eigs) Qᵀ` for a random orthogonal `Q`; returns the matrix and `Q`.
pub fn random_psd_with_spectrum<R: Rng + ?Sized>(eigs: &[f64], rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = random_orthogonal(eigs.len(), rng);
    let m = &q * DMatrix::from_diagonal(&DVector::from_column_slice(eigs)) * q.transpose();
    ((&m + m.transpose()) * 0.5, q)
}

/// `(1/d) X Xᵀ` with `X` a `d × d` matrix of `N(0, sigma²)` entries.
pub fn wishart_perturbation<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> DMatrix<f64> {
    let x = DMatrix::<f64>::from_fn(d, d, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let m = (&x * x.transpose()) / d as f64;
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::orthonormality_deviation;
    use crate::rng::StreamId;

    #[test]
    fn orthogonal_is_orthonormal() {
        let mut rng = StreamId::new(1, 9).rng();
        let q = random_orthogonal(30, &mut rng);
        assert!(orthonormality_deviation(&q) < 1e-12);
    }

    #[test]
    fn psd_spectrum_recovered() {
        let mut rng = StreamId::new(2, 9).rng();
        let (m, _) = random_psd_with_spectrum(&[3.0, 2.0, 0.5], &mut rng);
        let (w, _) = crate::model::sorted_eigen(&m);
        for (a, b) in w.iter().zip([3.0, 2.0, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wishart_mean_scale() {
        let mut rng = StreamId::new(3, 9).rng();
        let m = wishart_perturbation(200, 0.1, &mut rng);
        let mean_diag = m.diagonal().mean();
        assert!((mean_diag - 0.01).abs() < 0.001);
    }
}
