//! Heavy-ball SGD integrator over a [`QuadraticEnsemble`].
//!
//! `v_k = −η g_k(θ_{k−1}) + β v_{k−1}`, `θ_k = θ_{k−1} + v_k`, with
//! `g_k = H θ_{k−1} + (1/|B_k|) Σ_{n∈B_k} εₙ`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, QuadraticEnsemble};
use crate::sampling::BatchSchedule;
use crate::theory::tau_sgd;

/// Orthonormality tolerance for projection bases.
pub const PROJECTION_TOL: f64 = 1e-8;
/// Divergence threshold relative to the initial scale.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Drift-corrected series `θ⁽ˢ⁾_k = θ_k − v̄·k`, `v⁽ˢ⁾_k = v_k − v̄`, with `k`
/// counted from the start of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub theta: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
}

/// Recorded window of a run: one row per step, one column per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
    pub noise: Option<DMatrix<f64>>,
    /// Global step index of the first recorded row.
    pub start_index: usize,
    pub mean_velocity: Option<Vec<f64>>,
    pub shifted: Option<Shifted>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.theta.nrows()
    }

    pub fn directions(&self) -> usize {
        self.theta.ncols()
    }

    /// The drift-corrected series if present, otherwise the raw one.
    pub fn stationary_view(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match &self.shifted {
            Some(s) => (&s.theta, &s.velocity),
            None => (&self.theta, &self.velocity),
        }
    }
}

/// Knobs of [`run_sgd`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub steps: usize,
    pub burn_in: usize,
    pub record_noise: bool,
    /// `d × m` orthonormal columns; record `Pᵀθ` instead of `θ`.
    pub projection: Option<DMatrix<f64>>,
    /// The minimum moves by this vector every step (`θ*_k = k·u`).
    pub drift: Option<Vec<f64>>,
    /// Freeze the weights (`η = 0`) and only record the noise.
    pub probe: bool,
    /// Largest number of recorded values per series without a projection.
    pub memory_budget: usize,
}

impl RunOptions {
    pub fn new(steps: usize, burn_in: usize) -> Self {
        Self {
            steps,
            burn_in,
            record_noise: false,
            projection: None,
            drift: None,
            probe: false,
            memory_budget: 1 << 27,
        }
    }
}

/// Default burn-in: the larger of 20 epochs and `10·τ_SGD`.
pub fn default_burn_in(hp: &Hyperparams) -> usize {
    let epochs = 20 * hp.batches_per_epoch();
    let tau = tau_sgd(hp).map(|t| (10.0 * t).ceil() as usize).unwrap_or(0);
    epochs.max(tau)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Integrates `burn_in + steps` updates and records the last `steps`.
pub fn run_sgd(
    ensemble: &QuadraticEnsemble,
    hp: &Hyperparams,
    schedule: &mut BatchSchedule,
    init_theta: &[f64],
    init_v: &[f64],
    opts: &RunOptions,
) -> Result<Trajectory> {
    let d = ensemble.dim();
    if init_theta.len() != d || init_v.len() != d {
        return Err(Error::Dimension(format!("initial state must have length {d}")));
    }
    if schedule.num_examples() != ensemble.num_examples() {
        return Err(Error::Dimension(format!(
            "schedule over {} examples, ensemble has {}",
            schedule.num_examples(),
            ensemble.num_examples()
        )));
    }
    if opts.steps == 0 {
        return Err(Error::InvalidInput("need at least one recorded step".into()));
    }
    if let Some(u) = &opts.drift {
        if u.len() != d {
            return Err(Error::Dimension(format!("drift must have length {d}")));
        }
    }
    let m = match &opts.projection {
        Some(p) => {
            check_basis(p, d)?;
            p.ncols()
        }
        None => {
            if d.saturating_mul(opts.steps) > opts.memory_budget {
                return Err(Error::InvalidInput(format!(
                    "recording {} x {d} values exceeds the memory budget; project onto fewer directions",
                    opts.steps
                )));
            }
            d
        }
    };
    let (eta, beta) = (hp.eta(), hp.beta());
    let mut theta = init_theta.to_vec();
    let mut v = init_v.to_vec();
    let mut hx = vec![0.0; d];
    let mut dg = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let scale = norm(init_theta).max(norm(init_v)).max(1.0);
    let limit = DIVERGENCE_FACTOR * scale;

    let mut th_rec = DMatrix::<f64>::zeros(opts.steps, m);
    let mut v_rec = DMatrix::<f64>::zeros(opts.steps, m);
    let mut dg_rec = opts.record_noise.then(|| DMatrix::<f64>::zeros(opts.steps, m));

    let total = opts.burn_in + opts.steps;
    for k in 1..=total {
        let batch = schedule.next_batch();
        ensemble.batch_noise(batch, &mut dg);
        if !opts.probe {
            match &opts.drift {
                Some(u) => {
                    let kk = (k - 1) as f64;
                    for ((s, t), ui) in shifted.iter_mut().zip(&theta).zip(u) {
                        *s = t - kk * ui;
                    }
                    ensemble.hessian().apply(&shifted, &mut hx);
                }
                None => ensemble.hessian().apply(&theta, &mut hx),
            }
            for i in 0..d {
                let g = hx[i] + dg[i];
                v[i] = -eta * g + beta * v[i];
                theta[i] += v[i];
            }
            if k % 64 == 0 || k == total {
                let n = norm(&theta);
                if !(n <= limit) {
                    return Err(Error::Divergence { step: k, norm: n });
                }
            }
        }
        if k > opts.burn_in {
            let row = k - opts.burn_in - 1;
            match &opts.projection {
                Some(p) => {
                    for j in 0..m {
                        let col = p.column(j);
                        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                        for i in 0..d {
                            let w = col[i];
                            a += w * theta[i];
                            b += w * v[i];
                            c += w * dg[i];
                        }
                        th_rec[(row, j)] = a;
                        v_rec[(row, j)] = b;
                        if let Some(r) = dg_rec.as_mut() {
                            r[(row, j)] = c;
                        }
                    }
                }
                None => {
                    for i in 0..d {
                        th_rec[(row, i)] = theta[i];
                        v_rec[(row, i)] = v[i];
                        if let Some(r) = dg_rec.as_mut() {
                            r[(row, i)] = dg[i];
                        }
                    }
                }
            }
        }
    }
    Ok(Trajectory {
        theta: th_rec,
        velocity: v_rec,
        noise: dg_rec,
        start_index: opts.burn_in + 1,
        mean_velocity: None,
        shifted: None,
    })
}

fn check_basis(p: &DMatrix<f64>, d: usize) -> Result<()> {
    if p.nrows() != d || p.ncols() == 0 || p.ncols() > d {
        return Err(Error::Dimension(format!(
            "basis is {} x {}, expected {d} rows and 1..={d} columns",
            p.nrows(),
            p.ncols()
        )));
    }
    let dev = crate::model::orthonormality_deviation(p);
    if !(dev <= PROJECTION_TOL) {
        return Err(Error::NotOrthonormal { deviation: dev });
    }
    Ok(())
}

/// Projects every recorded series onto the columns of `basis`.
pub fn project(trajectory: &Trajectory, basis: &DMatrix<f64>) -> Result<Trajectory> {
    check_basis(basis, trajectory.directions())?;
    Ok(Trajectory {
        theta: &trajectory.theta * basis,
        velocity: &trajectory.velocity * basis,
        noise: trajectory.noise.as_ref().map(|n| n * basis),
        start_index: trajectory.start_index,
        mean_velocity: trajectory.mean_velocity.as_ref().map(|mv| {
            (0..basis.ncols())
                .map(|j| basis.column(j).iter().zip(mv).map(|(p, x)| p * x).sum())
                .collect()
        }),
        shifted: trajectory.shifted.as_ref().map(|s| Shifted {
            theta: &s.theta * basis,
            velocity: &s.velocity * basis,
        }),
    })
}

/// Removes the window-mean velocity and the linear drift it implies.
pub fn subtract_mean_velocity(trajectory: &Trajectory) -> Result<Trajectory> {
    let t = trajectory.steps();
    if t < 2 {
        return Err(Error::InvalidInput("drift removal needs at least two steps".into()));
    }
    let m = trajectory.directions();
    let mean: Vec<f64> = (0..m).map(|j| trajectory.velocity.column(j).mean()).collect();
    let theta = DMatrix::from_fn(t, m, |k, j| trajectory.theta[(k, j)] - mean[j] * k as f64);
    let velocity = DMatrix::from_fn(t, m, |k, j| trajectory.velocity[(k, j)] - mean[j]);
    let mut out = trajectory.clone();
    out.mean_velocity = Some(mean);
    out.shifted = Some(Shifted { theta, velocity });
    Ok(out)
}

/// Long-format CSV: `step,direction_index,theta,v[,dg]`, preceded by
/// `# key=value` header lines.
pub fn write_trajectory_csv<W: Write>(trajectory: &Trajectory, header: &[(String, String)], mut w: W) -> Result<()> {
    for (k, v) in header {
        writeln!(w, "# {k}={v}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let record_noise = trajectory.noise.is_some();
    let mut cols = vec!["step", "direction_index", "theta", "v"];
    if record_noise {
        cols.push("dg");
    }
    out.write_record(&cols).map_err(io)?;
    for k in 0..trajectory.steps() {
        for j in 0..trajectory.directions() {
            let mut row = vec![
                (trajectory.start_index + k).to_string(),
                j.to_string(),
                format!("{:e}", trajectory.theta[(k, j)]),
                format!("{:e}", trajectory.velocity[(k, j)]),
            ];
            if let Some(n) = &trajectory.noise {
                row.push(format!("{:e}", n[(k, j)]));
            }
            out.write_record(&row).map_err(io)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_commuting_ensemble, Hessian, NoiseLevels, Spectrum};
    use crate::sampling::SamplingMode;
    use proptest::prelude::*;

    fn zero_noise(lambdas: Vec<f64>, n: usize) -> QuadraticEnsemble {
        let d = lambdas.len();
        QuadraticEnsemble::from_parts(Hessian::Diagonal(lambdas), vec![0.0; n * d], n, None, false).unwrap()
    }

    fn sched(n: usize, s: usize, seed: u64) -> BatchSchedule {
        BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, n, s, seed).unwrap()
    }

    #[test]
    fn deterministic_decay() {
        let e = zero_noise(vec![1.0], 4);
        let hp = Hyperparams::new(0.1, 0.0, 2, 4).unwrap();
        let t = run_sgd(&e, &hp, &mut sched(4, 2, 0), &[1.0], &[0.0], &RunOptions::new(30, 0)).unwrap();
        for k in 0..30 {
            assert!((t.theta[(k, 0)] - 0.9f64.powi(k as i32 + 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn velocity_is_difference() {
        let s = Spectrum::new(vec![2.0, 0.3], NoiseLevels::Proportional(0.5)).unwrap();
        let hp = Hyperparams::new(0.1, 0.7, 2, 10).unwrap();
        let e = build_commuting_ensemble(&s, &hp, 1).unwrap();
        let t = run_sgd(&e, &hp, &mut sched(10, 2, 1), &[1.0, -1.0], &[0.0, 0.0], &RunOptions::new(200, 5)).unwrap();
        for k in 1..200 {
            for j in 0..2 {
                let dv = t.theta[(k, j)] - t.theta[(k - 1, j)];
                assert!((dv - t.velocity[(k, j)]).abs() <= 1e-15 * t.theta[(k, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn probe_mode_epoch_sum_is_zero() {
        let s = Spectrum::log_spaced(0.1, 1.0, 3, 1.0).unwrap();
        let hp = Hyperparams::new(0.1, 0.0, 4, 20).unwrap();
        let e = build_commuting_ensemble(&s, &hp, 2).unwrap();
        let mut opts = RunOptions::new(50, 0);
        opts.probe = true;
        opts.record_noise = true;
        let t = run_sgd(&e, &hp, &mut sched(20, 4, 2), &[0.5; 3], &[0.0; 3], &opts).unwrap();
        let n = t.noise.unwrap();
        for ep in 0..10 {
            for j in 0..3 {
                let sum: f64 = (0..5).map(|b| n[(ep * 5 + b, j)]).sum();
                assert!(sum.abs() < 1e-13);
            }
        }
        assert!(t.theta.iter().all(|x| *x == 0.5));
    }

    #[test]
    fn divergence_detected() {
        // stability is the caller's job; an unstable run must still stop cleanly
        let e = zero_noise(vec![1.0], 4);
        let hp = Hyperparams::new(2.5, 0.0, 2, 4).unwrap();
        let err = run_sgd(&e, &hp, &mut sched(4, 2, 0), &[1.0], &[0.0], &RunOptions::new(10_000, 0));
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn identity_projection_unchanged() {
        let s = Spectrum::log_spaced(0.1, 1.0, 3, 1.0).unwrap();
        let hp = Hyperparams::new(0.1, 0.5, 2, 10).unwrap();
        let e = build_commuting_ensemble(&s, &hp, 3).unwrap();
        let t = run_sgd(&e, &hp, &mut sched(10, 2, 3), &[0.0; 3], &[0.0; 3], &RunOptions::new(40, 10)).unwrap();
        let p = project(&t, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(p.theta, t.theta);
        let bad = DMatrix::from_element(3, 1, 1.0);
        assert!(project(&t, &bad).is_err());
    }

    #[test]
    fn linear_drift_removed() {
        let t = Trajectory {
            theta: DMatrix::from_fn(10, 1, |k, _| 0.5 * (k as f64 + 1.0)),
            velocity: DMatrix::from_element(10, 1, 0.5),
            noise: None,
            start_index: 1,
            mean_velocity: None,
            shifted: None,
        };
        let s = subtract_mean_velocity(&t).unwrap();
        let sh = s.shifted.unwrap();
        assert!(sh.velocity.iter().all(|x| x.abs() < 1e-15));
        assert!(sh.theta.iter().all(|x| (x - 0.5).abs() < 1e-15));
        assert_eq!(s.mean_velocity.unwrap(), vec![0.5]);
    }

    #[test]
    fn drifting_minimum_is_followed() {
        let s = Spectrum::new(vec![0.5], NoiseLevels::Proportional(0.0)).unwrap();
        let hp = Hyperparams::new(0.2, 0.5, 1, 4).unwrap();
        let e = build_commuting_ensemble(&s, &hp, 0).unwrap();
        let mut opts = RunOptions::new(100, 200);
        opts.drift = Some(vec![0.01]);
        let t = run_sgd(&e, &hp, &mut sched(4, 1, 0), &[0.0], &[0.0], &opts).unwrap();
        let t = subtract_mean_velocity(&t).unwrap();
        assert!((t.mean_velocity.unwrap()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn csv_export_shape() {
        let e = zero_noise(vec![1.0, 2.0], 4);
        let hp = Hyperparams::new(0.1, 0.0, 2, 4).unwrap();
        let mut opts = RunOptions::new(3, 0);
        opts.record_noise = true;
        let t = run_sgd(&e, &hp, &mut sched(4, 2, 0), &[1.0, 1.0], &[0.0, 0.0], &opts).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &[("seed".into(), "0".into())], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=0");
        assert_eq!(lines[1], "step,direction_index,theta,v,dg");
        assert_eq!(lines.len(), 2 + 6);
    }

    proptest! {
        #[test]
        fn projection_commutes_with_drift_removal(seed in any::<u64>(), angle in 0.0f64..6.28) {
            let s = Spectrum::log_spaced(0.2, 1.0, 2, 1.0).unwrap();
            let hp = Hyperparams::new(0.1, 0.5, 2, 10).unwrap();
            let e = build_commuting_ensemble(&s, &hp, seed).unwrap();
            let t = run_sgd(&e, &hp, &mut sched(10, 2, seed), &[0.0; 2], &[0.0; 2], &RunOptions::new(60, 5)).unwrap();
            let (c, sn) = (angle.cos(), angle.sin());
            let basis = DMatrix::from_row_slice(2, 2, &[c, -sn, sn, c]);
            let a = project(&subtract_mean_velocity(&t).unwrap(), &basis).unwrap();
            let b = subtract_mean_velocity(&project(&t, &basis).unwrap()).unwrap();
            let (sa, sb) = (a.shifted.unwrap(), b.shifted.unwrap());
            let scale = t.theta.amax().max(1e-300);
            prop_assert!((sa.theta - sb.theta).amax() <= 1e-12 * scale);
            prop_assert!((sa.velocity - sb.velocity).amax() <= 1e-12 * scale);
        }

        #[test]
        fn parseval(seed in any::<u64>()) {
            let s = Spectrum::log_spaced(0.2, 1.0, 3, 1.0).unwrap();
            let hp = Hyperparams::new(0.1, 0.5, 2, 10).unwrap();
            let e = build_commuting_ensemble(&s, &hp, seed).unwrap();
            let t = run_sgd(&e, &hp, &mut sched(10, 2, seed), &[0.0; 3], &[0.0; 3], &RunOptions::new(20, 0)).unwrap();
            let mut rng = crate::rng::StreamId::new(seed, 99).rng();
            let q = crate::model::matrices::random_orthogonal(3, &mut rng);
            let p = project(&t, &q).unwrap();
            for k in 0..20 {
                let a: f64 = t.theta.row(k).iter().map(|x| x * x).sum();
                let b: f64 = p.theta.row(k).iter().map(|x| x * x).sum();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
            }
        }
    }
}
