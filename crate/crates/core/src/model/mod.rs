//! Hyperparameters, Hessian spectra and synthetic quadratic ensembles.
//!
//! Every example `n` carries a fixed gradient offset `εₙ`, so the per-example
//! loss gradient is `Hθ + εₙ` and the minibatch noise does not depend on the
//! weights. The offsets are centred so that they sum to zero, which makes the
//! minibatch gradients of one epoch average to the full gradient.

pub mod io;
pub mod matrices;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{streams, StreamId};

/// Learning rate, momentum and batching of one SGD run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    eta: f64,
    beta: f64,
    batch_size: usize,
    num_examples: usize,
}

impl Hyperparams {
    pub fn new(eta: f64, beta: f64, batch_size: usize, num_examples: usize) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidHyperparams(format!("eta must be positive, got {eta}")));
        }
        if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
            return Err(Error::InvalidHyperparams(format!("beta must lie in [0, 1), got {beta}")));
        }
        if batch_size == 0 {
            return Err(Error::InvalidHyperparams("batch size must be at least 1".into()));
        }
        if batch_size > num_examples {
            return Err(Error::InvalidHyperparams(format!(
                "batch size {batch_size} exceeds dataset size {num_examples}"
            )));
        }
        Ok(Self { eta, beta, batch_size, num_examples })
    }

    /// Hyperparameters for theory evaluation where only the number of batches
    /// per epoch matters (batch size 1, `N = M`).
    pub fn with_batches(eta: f64, beta: f64, batches_per_epoch: usize) -> Result<Self> {
        Self::new(eta, beta, 1, batches_per_epoch.max(1))
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    /// `M = ceil(N / S)`. Equal to `N / S` when the epoch splits evenly.
    pub fn batches_per_epoch(&self) -> usize {
        self.num_examples.div_ceil(self.batch_size)
    }

    pub fn integer_epoch(&self) -> bool {
        self.num_examples % self.batch_size == 0
    }

    /// `M` as used by the closed-form results, which need at least two batches.
    pub fn epoch_batches_for_theory(&self) -> Result<usize> {
        let m = self.batches_per_epoch();
        if m < 2 {
            return Err(Error::DegenerateEpoch { batches: m });
        }
        if !self.integer_epoch() {
            warn!(
                "N = {} is not a multiple of S = {}; closed-form results use M = ceil(N/S) = {m}",
                self.num_examples, self.batch_size
            );
        }
        Ok(m)
    }

    /// The `(1/S)(1 - S/N)` factor relating the per-example gradient sample
    /// covariance to the minibatch noise covariance.
    pub fn noise_scale(&self) -> f64 {
        let s = self.batch_size as f64;
        let n = self.num_examples as f64;
        (1.0 / s) * (1.0 - s / n)
    }

    /// Heavy-ball stability: `0 < ηλ < 2(1 + β)`.
    pub fn check_stable(&self, lambda: f64) -> Result<()> {
        let eta_lambda = self.eta * lambda;
        let bound = 2.0 * (1.0 + self.beta);
        if eta_lambda > 0.0 && eta_lambda < bound && eta_lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::Stability { eta_lambda, beta: self.beta, bound })
        }
    }
}

/// Minibatch noise variance per Hessian eigendirection.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseLevels {
    /// Explicit `σ²_{δg,i}` values, paired with the eigenvalues.
    Explicit(Vec<f64>),
    /// `σ²_{δg,i} = c·λᵢ`.
    Proportional(f64),
}

/// Hessian eigenvalues paired with the noise variance along each eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    lambdas: Vec<f64>,
    noise: NoiseLevels,
}

impl Spectrum {
    /// Builds a spectrum; eigenvalues (and explicit noise levels with them) are
    /// sorted into descending order.
    pub fn new(lambdas: Vec<f64>, noise: NoiseLevels) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidInput("spectrum needs at least one eigenvalue".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidInput(format!("eigenvalues must be positive, got {bad}")));
        }
        let noise = match noise {
            NoiseLevels::Explicit(v) => {
                if v.len() != lambdas.len() {
                    return Err(Error::Dimension(format!(
                        "{} eigenvalues but {} noise variances",
                        lambdas.len(),
                        v.len()
                    )));
                }
                if let Some(bad) = v.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(Error::InvalidInput(format!(
                        "noise variances must be non-negative, got {bad}"
                    )));
                }
                let mut pairs: Vec<(f64, f64)> = lambdas.iter().copied().zip(v).collect();
                pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
                let (l, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                return Ok(Self { lambdas: l, noise: NoiseLevels::Explicit(s) });
            }
            NoiseLevels::Proportional(c) => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "noise proportionality constant must be non-negative, got {c}"
                    )));
                }
                NoiseLevels::Proportional(c)
            }
        };
        let mut lambdas = lambdas;
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { lambdas, noise })
    }

    /// `n` eigenvalues log-spaced over `[lo, hi]` with `σ² = c·λ`.
    pub fn log_spaced(lo: f64, hi: f64, n: usize, c: f64) -> Result<Self> {
        Self::new(log_space(lo, hi, n)?, NoiseLevels::Proportional(c))
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn noise_levels(&self) -> &NoiseLevels {
        &self.noise
    }

    pub fn noise_variance(&self, i: usize) -> f64 {
        match &self.noise {
            NoiseLevels::Explicit(v) => v[i],
            NoiseLevels::Proportional(c) => c * self.lambdas[i],
        }
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.noise_variance(i)).collect()
    }

    pub fn check_stable(&self, hp: &Hyperparams) -> Result<()> {
        self.lambdas.iter().try_for_each(|&l| hp.check_stable(l))
    }
}

/// `n` points log-spaced over `[lo, hi]`, ascending.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || n == 0 {
        return Err(Error::InvalidInput(format!("bad log range [{lo}, {hi}] with {n} points")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Hessian storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Diagonal(d) => d.len(),
            Hessian::Dense(m) => m.nrows(),
        }
    }

    /// `out = H x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Diagonal(d) => {
                for ((o, h), xi) in out.iter_mut().zip(d).zip(x) {
                    *o = h * xi;
                }
            }
            Hessian::Dense(m) => {
                let n = m.nrows();
                out.iter_mut().for_each(|o| *o = 0.0);
                // column-major storage: accumulate column by column
                for (j, &xj) in x.iter().enumerate().take(n) {
                    if xj == 0.0 {
                        continue;
                    }
                    let col = m.column(j);
                    for (o, h) in out.iter_mut().zip(col.iter()) {
                        *o += h * xj;
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Hessian::Dense(m) => m.clone(),
        }
    }

    /// Eigenvalues (descending) and matching orthonormal eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        match self {
            Hessian::Diagonal(d) => {
                let mut idx: Vec<usize> = (0..d.len()).collect();
                idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
                let mut basis = DMatrix::zeros(d.len(), d.len());
                for (col, &i) in idx.iter().enumerate() {
                    basis[(i, col)] = 1.0;
                }
                (idx.iter().map(|&i| d[i]).collect(), basis)
            }
            Hessian::Dense(m) => sorted_eigen(m),
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

/// Quadratic loss with Hessian `H` and per-example gradient offsets `εₙ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnsemble {
    hessian: Hessian,
    /// Row-major `N × d`.
    noise: Vec<f64>,
    num_examples: usize,
    basis: Option<DMatrix<f64>>,
    approximate: bool,
}

/// Relative tolerance of the zero-sum check applied to decoded or
/// user-supplied offsets.
const ZERO_SUM_TOL: f64 = 1e-9;
/// Orthonormality tolerance of a stored analysis basis.
pub const BASIS_TOL: f64 = 1e-10;

impl QuadraticEnsemble {
    /// Assembles an ensemble from raw parts, validating every invariant.
    pub fn from_parts(
        hessian: Hessian,
        noise: Vec<f64>,
        num_examples: usize,
        basis: Option<DMatrix<f64>>,
        approximate: bool,
    ) -> Result<Self> {
        let d = hessian.dim();
        if d == 0 {
            return Err(Error::InvalidInput("ensemble dimension must be positive".into()));
        }
        if num_examples < 2 {
            return Err(Error::InvalidInput("ensemble needs at least two examples".into()));
        }
        if noise.len() != d * num_examples {
            return Err(Error::Dimension(format!(
                "noise has {} values, expected {num_examples} x {d}",
                noise.len()
            )));
        }
        match &hessian {
            Hessian::Diagonal(h) => {
                if let Some(bad) = h.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                    return Err(Error::InvalidInput(format!("diagonal Hessian entry {bad} not >= 0")));
                }
            }
            Hessian::Dense(m) => {
                if m.ncols() != d {
                    return Err(Error::Dimension("dense Hessian must be square".into()));
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput("Hessian has non-finite entries".into()));
                }
                let scale = m.amax().max(f64::MIN_POSITIVE);
                if (m - m.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::InvalidInput("dense Hessian is not symmetric".into()));
                }
            }
        }
        if noise.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("noise offsets must be finite".into()));
        }
        let scale = noise.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for i in 0..d {
            let s: f64 = (0..num_examples).map(|n| noise[n * d + i]).sum();
            if s.abs() > ZERO_SUM_TOL * scale * num_examples as f64 {
                return Err(Error::InvalidInput(format!(
                    "noise offsets do not sum to zero in coordinate {i} (sum {s:e})"
                )));
            }
        }
        if let Some(p) = &basis {
            if p.nrows() != d || p.ncols() != d {
                return Err(Error::Dimension("basis must be d x d".into()));
            }
            let dev = orthonormality_deviation(p);
            if !(dev <= BASIS_TOL) {
                return Err(Error::NotOrthonormal { deviation: dev });
            }
        }
        Ok(Self { hessian, noise, num_examples, basis, approximate })
    }

    pub fn dim(&self) -> usize {
        self.hessian.dim()
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn hessian(&self) -> &Hessian {
        &self.hessian
    }

    /// Gradient offset `εₙ` of example `n`.
    pub fn example_noise(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.noise[n * d..(n + 1) * d]
    }

    pub fn noise_flat(&self) -> &[f64] {
        &self.noise
    }

    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        self.basis.as_ref()
    }

    pub fn with_basis(mut self, basis: DMatrix<f64>) -> Result<Self> {
        let d = self.dim();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::Dimension("basis must be d x d".into()));
        }
        let dev = orthonormality_deviation(&basis);
        if !(dev <= BASIS_TOL) {
            return Err(Error::NotOrthonormal { deviation: dev });
        }
        self.basis = Some(basis);
        Ok(self)
    }

    /// True when the non-commuting builder could not match the target
    /// covariance exactly (fewer examples than dimensions).
    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    /// Example offsets `μₙ` with `εₙ = -H μₙ`; only defined for invertible `H`.
    pub fn offsets(&self) -> Option<Vec<Vec<f64>>> {
        let d = self.dim();
        match &self.hessian {
            Hessian::Diagonal(h) => {
                if h.iter().any(|x| *x <= 0.0) {
                    return None;
                }
                Some(
                    (0..self.num_examples)
                        .map(|n| self.example_noise(n).iter().zip(h).map(|(e, l)| -e / l).collect())
                        .collect(),
                )
            }
            Hessian::Dense(m) => {
                let lu = m.clone().lu();
                (0..self.num_examples)
                    .map(|n| {
                        let e = DVector::from_column_slice(self.example_noise(n));
                        lu.solve(&(-e)).map(|x| x.as_slice().to_vec())
                    })
                    .collect::<Option<Vec<_>>>()
                    .filter(|v| v.iter().all(|x| x.len() == d && x.iter().all(|y| y.is_finite())))
            }
        }
    }

    /// `C₀ = (1/(N-1)) Σₙ εₙ εₙᵀ`, exactly symmetric.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut c = DMatrix::<f64>::zeros(d, d);
        for n in 0..self.num_examples {
            let e = self.example_noise(n);
            for j in 0..d {
                let ej = e[j];
                if ej == 0.0 {
                    continue;
                }
                for i in 0..=j {
                    c[(i, j)] += e[i] * ej;
                }
            }
        }
        let norm = 1.0 / (self.num_examples as f64 - 1.0);
        for j in 0..d {
            for i in 0..=j {
                let v = c[(i, j)] * norm;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }

    /// Minibatch noise covariance `C = (1/S)(1 - S/N) C₀`.
    pub fn noise_covariance(&self, hp: &Hyperparams) -> DMatrix<f64> {
        self.sample_covariance() * hp.noise_scale()
    }

    /// Cosine similarity between the gradient sample covariance and `H`.
    pub fn noise_hessian_cosine(&self) -> Result<f64> {
        crate::stats::cosine_similarity(&self.sample_covariance(), &self.hessian.to_dense())
    }

    /// Noise variance along each column of `basis`: `pᵢᵀ C pᵢ`.
    pub fn directional_noise_variances(&self, hp: &Hyperparams, basis: &DMatrix<f64>) -> Vec<f64> {
        let c = self.noise_covariance(hp);
        (0..basis.ncols())
            .map(|i| {
                let p = basis.column(i);
                (p.transpose() * &c * p)[(0, 0)]
            })
            .collect()
    }

    /// The same ensemble expressed in the Hessian eigenbasis `P` (eigenvalues
    /// descending): diagonal `H` and offsets `Pᵀεₙ`. Returns `P` alongside.
    ///
    /// The recursion is linear, so simulating the rotated ensemble and reading
    /// coordinate `i` is identical to projecting the original run onto `pᵢ`.
    pub fn to_eigenbasis(&self) -> Result<(QuadraticEnsemble, DMatrix<f64>)> {
        let (w, p) = self.hessian.eigen();
        let d = self.dim();
        let scale = w.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        let w = w
            .into_iter()
            .map(|x| if x < 0.0 && x > -1e-12 * scale { 0.0 } else { x })
            .collect();
        let eps = DMatrix::from_row_slice(self.num_examples, d, &self.noise);
        let rotated = eps * &p;
        let mut noise = Vec::with_capacity(self.noise.len());
        for n in 0..self.num_examples {
            noise.extend(rotated.row(n).iter());
        }
        for i in 0..d {
            let mean = (0..self.num_examples).map(|r| noise[r * d + i]).sum::<f64>() / self.num_examples as f64;
            (0..self.num_examples).for_each(|r| noise[r * d + i] -= mean);
        }
        let e = QuadraticEnsemble::from_parts(
            Hessian::Diagonal(w),
            noise,
            self.num_examples,
            Some(DMatrix::identity(d, d)),
            self.approximate,
        )?;
        Ok((e, p))
    }

    /// Mean of minibatch noise over a set of example indices.
    pub fn batch_noise(&self, batch: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &n in batch {
            for (o, e) in out.iter_mut().zip(self.example_noise(n)) {
                *o += e;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
}

/// `max |PᵀP - I|`.
pub fn orthonormality_deviation(p: &DMatrix<f64>) -> f64 {
    let g = p.transpose() * p;
    let mut dev = 0.0f64;
    for ((i, j), v) in g.iter().enumerate().map(|(k, v)| ((k % g.nrows(), k / g.nrows()), v)) {
        let t = if i == j { 1.0 } else { 0.0 };
        dev = dev.max((v - t).abs());
    }
    if dev.is_nan() {
        f64::INFINITY
    } else {
        dev
    }
}

/// Commuting ensemble: `H = diag(λᵢ)` and per-coordinate Gaussian offsets,
/// centred and rescaled so the minibatch noise variance of coordinate `i`
/// is exactly `σ²_{δg,i}`.
pub fn build_commuting_ensemble(spectrum: &Spectrum, hp: &Hyperparams, seed: u64) -> Result<QuadraticEnsemble> {
    let n = hp.num_examples();
    if n < 2 {
        return Err(Error::InvalidInput("ensemble needs at least two examples".into()));
    }
    let d = spectrum.len();
    let scale = hp.noise_scale();
    let targets = spectrum.noise_variances();
    if scale == 0.0 && targets.iter().any(|s| *s > 0.0) {
        return Err(Error::DegenerateEpoch { batches: hp.batches_per_epoch() });
    }
    let mut rng = StreamId::new(seed, streams::ENSEMBLE).rng();
    let mut noise = vec![0.0; n * d];
    let mut column = vec![0.0; n];
    for (i, &target) in targets.iter().enumerate() {
        for x in column.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        if target == 0.0 {
            continue;
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        column.iter_mut().for_each(|x| *x -= mean);
        let c0 = column.iter().map(|x| x * x).sum::<f64>() / (n as f64 - 1.0);
        let want_c0 = target / scale;
        let k = (want_c0 / c0).sqrt();
        for (row, x) in column.iter().enumerate() {
            noise[row * d + i] = x * k;
        }
    }
    // enforce the zero sum after rescaling rounding
    for i in 0..d {
        let mean = (0..n).map(|r| noise[r * d + i]).sum::<f64>() / n as f64;
        (0..n).for_each(|r| noise[r * d + i] -= mean);
    }
    QuadraticEnsemble::from_parts(
        Hessian::Diagonal(spectrum.lambdas().to_vec()),
        noise,
        n,
        Some(DMatrix::identity(d, d)),
        false,
    )
}

/// How strictly the non-commuting builder must hit its target covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMatch {
    /// Error out when the realized sample covariance is rank deficient.
    Exact,
    /// Match on the span of the realized covariance and flag the result.
    AllowApproximate,
}

/// Dense ensemble whose gradient sample covariance equals `c0_target`.
///
/// Falls back to approximate matching (and flags it) when `N - 1 < d`.
pub fn build_noncommuting_ensemble(
    hessian: &DMatrix<f64>,
    c0_target: &DMatrix<f64>,
    num_examples: usize,
    seed: u64,
) -> Result<QuadraticEnsemble> {
    build_noncommuting_ensemble_with(hessian, c0_target, num_examples, seed, CovarianceMatch::AllowApproximate)
}

pub fn build_noncommuting_ensemble_with(
    hessian: &DMatrix<f64>,
    c0_target: &DMatrix<f64>,
    num_examples: usize,
    seed: u64,
    mode: CovarianceMatch,
) -> Result<QuadraticEnsemble> {
    let d = hessian.nrows();
    if hessian.ncols() != d || c0_target.nrows() != d || c0_target.ncols() != d {
        return Err(Error::Dimension("Hessian and target covariance must be square and equal-sized".into()));
    }
    if num_examples < 2 {
        return Err(Error::InvalidInput("ensemble needs at least two examples".into()));
    }
    check_symmetric_psd(hessian, "Hessian")?;
    check_symmetric_psd(c0_target, "target covariance")?;

    let rank_ok = num_examples > d;
    if !rank_ok && mode == CovarianceMatch::Exact {
        return Err(Error::InvalidInput(format!(
            "exact covariance matching needs N - 1 >= d (N = {num_examples}, d = {d})"
        )));
    }

    let mut rng = StreamId::new(seed, streams::ENSEMBLE).rng();
    let mut raw = DMatrix::<f64>::from_fn(d, num_examples, |_, _| rng.sample(StandardNormal));
    for mut row in raw.row_iter_mut() {
        let mean = row.sum() / num_examples as f64;
        row.add_scalar_mut(-mean);
    }
    let realized = (&raw * raw.transpose()) / (num_examples as f64 - 1.0);
    let (w, v) = sorted_eigen(&realized);
    let wmax = w.first().copied().unwrap_or(0.0).max(0.0);
    let floor = 1e-12 * wmax;
    let deficient = w.iter().any(|x| *x <= floor);
    if deficient && mode == CovarianceMatch::Exact {
        return Err(Error::InvalidInput("realized sample covariance is rank deficient".into()));
    }
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        w.iter().map(|x| if *x > floor { 1.0 / x.sqrt() } else { 0.0 }),
    ));
    let realized_inv_sqrt = &v * inv_sqrt * v.transpose();
    let transform = psd_sqrt(c0_target) * realized_inv_sqrt;
    let mapped = transform * raw;

    let approximate = deficient || !rank_ok;
    if approximate {
        warn!("non-commuting ensemble: N - 1 < d, covariance matched only on the sampled span");
    }
    let mut noise = vec![0.0; num_examples * d];
    for n in 0..num_examples {
        for i in 0..d {
            noise[n * d + i] = mapped[(i, n)];
        }
    }
    for i in 0..d {
        let mean = (0..num_examples).map(|r| noise[r * d + i]).sum::<f64>() / num_examples as f64;
        (0..num_examples).for_each(|r| noise[r * d + i] -= mean);
    }
    let h = symmetrize(hessian);
    let (_, basis) = sorted_eigen(&h);
    QuadraticEnsemble::from_parts(Hessian::Dense(h), noise, num_examples, Some(basis), approximate)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    let (w, _) = sorted_eigen(&symmetrize(m));
    if let Some(min) = w.last() {
        if *min < -1e-10 * scale * m.nrows() as f64 {
            return Err(Error::InvalidInput(format!("{what} is not positive semidefinite (min eigenvalue {min:e})")));
        }
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (w, v) = sorted_eigen(&symmetrize(m));
    let root = DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().map(|x| x.max(0.0).sqrt())));
    &v * root * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(s: usize, n: usize) -> Hyperparams {
        Hyperparams::new(0.1, 0.5, s, n).unwrap()
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::new(0.0, 0.5, 1, 10).is_err());
        assert!(Hyperparams::new(0.1, 1.0, 1, 10).is_err());
        assert!(Hyperparams::new(0.1, -0.1, 1, 10).is_err());
        assert!(Hyperparams::new(0.1, 0.5, 11, 10).is_err());
        assert!(Hyperparams::new(0.1, 0.5, 0, 10).is_err());
        let h = Hyperparams::new(0.1, 0.5, 3, 10).unwrap();
        assert_eq!(h.batches_per_epoch(), 4);
        assert!(!h.integer_epoch());
        let h = hp(2, 10);
        assert_eq!(h.batches_per_epoch(), 5);
        assert!(h.integer_epoch());
        assert_eq!(hp(10, 10).epoch_batches_for_theory(), Err(Error::DegenerateEpoch { batches: 1 }));
    }

    #[test]
    fn stability_region() {
        let h = Hyperparams::new(1.0, 0.5, 1, 4).unwrap();
        assert!(h.check_stable(2.9).is_ok());
        assert!(h.check_stable(3.0).is_err());
        assert!(h.check_stable(0.0).is_err());
    }

    #[test]
    fn spectrum_sorts_descending() {
        let s = Spectrum::new(vec![1.0, 3.0, 2.0], NoiseLevels::Explicit(vec![0.1, 0.3, 0.2])).unwrap();
        assert_eq!(s.lambdas(), &[3.0, 2.0, 1.0]);
        assert_eq!(s.noise_variances(), vec![0.3, 0.2, 0.1]);
        assert!(Spectrum::new(vec![1.0], NoiseLevels::Explicit(vec![-1.0])).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0], NoiseLevels::Explicit(vec![1.0])).is_err());
    }

    #[test]
    fn zero_noise_ensemble() {
        let s = Spectrum::new(vec![1.0], NoiseLevels::Explicit(vec![0.0])).unwrap();
        let e = build_commuting_ensemble(&s, &hp(2, 4), 1).unwrap();
        assert!(e.noise_flat().iter().all(|x| *x == 0.0));
        assert_eq!(e.sample_covariance()[(0, 0)], 0.0);
    }

    #[test]
    fn commuting_ensemble_realizes_noise_covariance() {
        let s = Spectrum::new(vec![2.0, 1.0], NoiseLevels::Proportional(1.0)).unwrap();
        let h = hp(10, 100);
        let e = build_commuting_ensemble(&s, &h, 3).unwrap();
        // direct summation of C₀, then C = (1/S)(1 - S/N) C₀
        let mut c00 = 0.0;
        let mut c11 = 0.0;
        for n in 0..100 {
            let x = e.example_noise(n);
            c00 += x[0] * x[0];
            c11 += x[1] * x[1];
        }
        // σ² describes the minibatch noise C, so C₀ = σ² / ((1/S)(1 - S/N))
        let k = (1.0 / 10.0) * (1.0 - 10.0 / 100.0) / 99.0;
        assert!((c00 * k - 2.0).abs() < 1e-12);
        assert!((c11 * k - 1.0).abs() < 1e-12);
        assert!((c00 / 99.0 - 2.0 / 0.09).abs() < 1e-10);
    }

    #[test]
    fn commuting_ensemble_rejects() {
        assert!(Hyperparams::new(0.1, 0.0, 5, 4).is_err());
        let s = Spectrum::new(vec![1.0], NoiseLevels::Proportional(1.0)).unwrap();
        let full_batch = Hyperparams::new(0.1, 0.0, 4, 4).unwrap();
        assert!(build_commuting_ensemble(&s, &full_batch, 0).is_err());
    }

    #[test]
    fn offsets_sum_to_zero() {
        for seed in 0..5 {
            let s = Spectrum::log_spaced(0.01, 1.0, 7, 0.3).unwrap();
            let e = build_commuting_ensemble(&s, &hp(3, 30), seed).unwrap();
            let max = e.noise_flat().iter().fold(0.0f64, |a, x| a.max(x.abs()));
            for i in 0..7 {
                let sum: f64 = (0..30).map(|n| e.example_noise(n)[i]).sum();
                assert!(sum.abs() <= 1e-12 * max);
            }
        }
    }

    #[test]
    fn sample_covariance_two_points() {
        let e = QuadraticEnsemble::from_parts(Hessian::Diagonal(vec![1.0]), vec![1.0, -1.0], 2, None, false).unwrap();
        assert_eq!(e.sample_covariance()[(0, 0)], 2.0);
    }

    #[test]
    fn sample_covariance_symmetric_psd() {
        let s = Spectrum::log_spaced(0.1, 1.0, 5, 1.0).unwrap();
        let e = build_commuting_ensemble(&s, &hp(2, 20), 9).unwrap();
        let c = e.sample_covariance();
        assert_eq!(c, c.transpose());
        let (w, _) = sorted_eigen(&c);
        assert!(w.iter().all(|x| *x >= -1e-12));
    }

    #[test]
    fn noncommuting_matches_target_small() {
        let h = DMatrix::identity(2, 2);
        let target = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let e = build_noncommuting_ensemble(&h, &target, 50, 4).unwrap();
        assert!(!e.is_approximate());
        let mut c = DMatrix::<f64>::zeros(2, 2);
        for n in 0..50 {
            let x = e.example_noise(n);
            for i in 0..2 {
                for j in 0..2 {
                    c[(i, j)] += x[i] * x[j] / 49.0;
                }
            }
        }
        assert!((c - target).amax() < 1e-10);
    }

    #[test]
    fn noncommuting_commuting_case_has_unit_cosine() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let e = build_noncommuting_ensemble(&h, &h, 40, 1).unwrap();
        assert!((e.noise_hessian_cosine().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noncommuting_rank_deficient() {
        let h = DMatrix::identity(6, 6);
        assert!(build_noncommuting_ensemble_with(&h, &h, 4, 0, CovarianceMatch::Exact).is_err());
        let e = build_noncommuting_ensemble(&h, &h, 4, 0).unwrap();
        assert!(e.is_approximate());
    }

    #[test]
    fn noncommuting_rejects_non_psd() {
        let h = DMatrix::identity(2, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(build_noncommuting_ensemble(&h, &bad, 10, 0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(build_noncommuting_ensemble(&asym, &h, 10, 0).is_err());
    }

    #[test]
    fn offsets_recover_mu() {
        let s = Spectrum::new(vec![2.0, 0.5], NoiseLevels::Proportional(1.0)).unwrap();
        let e = build_commuting_ensemble(&s, &hp(1, 5), 2).unwrap();
        let mu = e.offsets().unwrap();
        let x = e.example_noise(3);
        assert!((x[0] + 2.0 * mu[3][0]).abs() < 1e-14);
        assert!((x[1] + 0.5 * mu[3][1]).abs() < 1e-14);
        let singular = QuadraticEnsemble::from_parts(Hessian::Diagonal(vec![0.0]), vec![1.0, -1.0], 2, None, false).unwrap();
        assert!(singular.offsets().is_none());
    }

    #[test]
    fn from_parts_rejects_nonzero_sum() {
        let r = QuadraticEnsemble::from_parts(Hessian::Diagonal(vec![1.0]), vec![1.0, 0.5], 2, None, false);
        assert!(r.is_err());
    }
}
