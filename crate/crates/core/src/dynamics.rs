//! Time evolution: norm-preserving Krylov propagation of pure states, two
//! independent Lindblad integrators, frame-equivalence verification, decay
//! fitting, and symmetric-subspace cavity cooling.
//!
//! Rate conventions: every collapse rate is a population decay rate, so a
//! single excitation in a channel with rate gamma decays as exp(-gamma t).

use crate::error::{Error, Result};
use crate::hamiltonian::{build_collapse_ops, build_hamiltonian, collective_number, interaction_picture_generator, LindbladModel};
use crate::hilbert::{enumerate_basis, BasisState, EnumeratedBasis, SpaceTruncation};
use crate::linalg::{self, expm_action_hermitian, C64, KrylovOptions, Rk45Options};
use crate::operator::SparseOperator;
use crate::params::SystemParams;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;

/// States along a trajectory: pure vectors or density matrices.
#[derive(Debug, Clone)]
pub enum StateSeries {
    Pure(Vec<DVector<C64>>),
    Density(Vec<DMatrix<C64>>),
}

impl StateSeries {
    pub fn len(&self) -> usize {
        match self {
            StateSeries::Pure(v) => v.len(),
            StateSeries::Density(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Time series of states plus named real observable columns.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: StateSeries,
    pub observables: BTreeMap<String, Vec<f64>>,
}

impl Trajectory {
    /// Re <op> at every time.
    pub fn expectation_series(&self, op: &SparseOperator) -> Vec<f64> {
        match &self.states {
            StateSeries::Pure(states) => states.iter().map(|s| op.expectation(s).re).collect(),
            StateSeries::Density(states) => states
                .iter()
                .map(|rho| {
                    op.entries()
                        .iter()
                        .map(|&(r, c, v)| (v * rho[(c, r)]).re)
                        .sum()
                })
                .collect(),
        }
    }

    /// Population of one basis state at every time.
    pub fn population_series(&self, index: usize) -> Vec<f64> {
        match &self.states {
            StateSeries::Pure(states) => states.iter().map(|s| s[index].norm_sqr()).collect(),
            StateSeries::Density(states) => states.iter().map(|rho| rho[(index, index)].re).collect(),
        }
    }

    /// Overlap population |<phi|psi>|^2 (or <phi|rho|phi>) at every time.
    pub fn overlap_series(&self, phi: &DVector<C64>) -> Vec<f64> {
        match &self.states {
            StateSeries::Pure(states) => states.iter().map(|s| phi.dotc(s).norm_sqr()).collect(),
            StateSeries::Density(states) => {
                states.iter().map(|rho| (phi.adjoint() * rho * phi)[(0, 0)].re).collect()
            }
        }
    }

    /// Computes and stores a named observable column.
    pub fn record(&mut self, name: &str, op: &SparseOperator) {
        let series = self.expectation_series(op);
        self.observables.insert(name.to_string(), series);
    }

    pub fn final_pure(&self) -> Option<&DVector<C64>> {
        match &self.states {
            StateSeries::Pure(v) => v.last(),
            _ => None,
        }
    }
}

/// Unit basis vector for a labeled state.
pub fn basis_vector(basis: &EnumeratedBasis, state: &BasisState) -> Result<DVector<C64>> {
    let idx = basis
        .index_of(state)
        .ok_or_else(|| Error::validation(format!("state {} is not in the basis", state.label())))?;
    let mut v = DVector::zeros(basis.len());
    v[idx] = C64::new(1.0, 0.0);
    Ok(v)
}

/// |psi><psi|.
pub fn pure_density(psi: &DVector<C64>) -> DMatrix<C64> {
    psi * psi.adjoint()
}

fn check_pure_contract(psi: &DVector<C64>, t: f64) -> Result<()> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::numerical(format!(
            "norm drift {:.3e} at t = {t:.6e} violates the 1e-9 contract",
            (norm - 1.0).abs()
        )));
    }
    Ok(())
}

fn check_density_contract(rho: &DMatrix<C64>, t: f64) -> Result<()> {
    let trace: C64 = (0..rho.nrows()).map(|i| rho[(i, i)]).sum();
    if (trace.re - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-8 {
        return Err(Error::numerical(format!(
            "trace {trace} at t = {t:.6e} violates the 1e-8 contract"
        )));
    }
    let herm_defect = linalg::max_abs(&(rho - rho.adjoint()));
    if herm_defect > 1e-10 {
        return Err(Error::numerical(format!(
            "Hermiticity defect {herm_defect:.3e} at t = {t:.6e} violates the 1e-10 contract"
        )));
    }
    let sym = (rho + rho.adjoint()).scale(0.5);
    let (evals, _) = linalg::eigh(&sym)?;
    if let Some(&min) = evals.first() {
        if min < -1e-8 {
            return Err(Error::numerical(format!(
                "density matrix eigenvalue {min:.3e} at t = {t:.6e} below -1e-8; \
                 reduce the integrator step or tolerance"
            )));
        }
    }
    Ok(())
}

fn validate_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::validation("time grid must not be empty"));
    }
    for w in t_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::validation("time grid must be strictly ascending"));
        }
    }
    Ok(())
}

/// Propagates psi(t) = exp(-i H t) psi0 through the grid by Lanczos steps.
/// The grid's first entry is the initial time carrying psi0 itself.
pub fn evolve_unitary(
    h: &SparseOperator,
    psi0: &DVector<C64>,
    t_grid: &[f64],
    opts: &KrylovOptions,
) -> Result<Trajectory> {
    validate_grid(t_grid)?;
    if psi0.len() != h.dim() {
        return Err(Error::validation("initial state dimension mismatch"));
    }
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::validation("initial state must be normalized"));
    }
    if !h.is_hermitian() {
        return Err(Error::validation("unitary evolution requires a verified Hermitian operator"));
    }
    let mut states = Vec::with_capacity(t_grid.len());
    states.push(psi0.clone());
    let mut psi = psi0.clone();
    for w in t_grid.windows(2) {
        let dt = w[1] - w[0];
        psi = expm_action_hermitian(|x| h.matvec(x), &psi, dt, opts)?;
        check_pure_contract(&psi, w[1])?;
        states.push(psi.clone());
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        states: StateSeries::Pure(states),
        observables: BTreeMap::new(),
    })
}

/// Method selection for the master-equation integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LindbladMethod {
    /// Dense exponential when the Liouvillian is small and the grid uniform,
    /// adaptive Runge-Kutta otherwise.
    Auto,
    DenseExponential,
    AdaptiveRk,
}

#[derive(Debug, Clone, Copy)]
pub struct LindbladOptions {
    pub method: LindbladMethod,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        LindbladOptions { method: LindbladMethod::Auto, rtol: 1e-8, atol: 1e-12 }
    }
}

/// Largest density-matrix dimension handled by the dense-exponential route.
pub const DENSE_LIOUVILLIAN_DIM_CAP: usize = 45;
/// Cap on vectorized Liouvillian length d^2 for any route.
pub const LIOUVILLIAN_LEN_CAP: usize = 4_000_000;

/// Dense superoperator of drho/dt on column-major vec(rho).
pub fn dense_liouvillian(model: &LindbladModel) -> Result<DMatrix<C64>> {
    model.validate()?;
    let d = model.hamiltonian.dim();
    if d > DENSE_LIOUVILLIAN_DIM_CAP {
        return Err(Error::size_cap(format!(
            "dense Liouvillian needs d <= {DENSE_LIOUVILLIAN_DIM_CAP}, got {d}"
        )));
    }
    let id = DMatrix::<C64>::identity(d, d);
    let h = model.hamiltonian.to_dense();
    let minus_i = C64::new(0.0, -1.0);
    let mut l = (linalg::kron(&id, &h) - linalg::kron(&h.transpose(), &id)).map(|z| z * minus_i);
    for (op, rate) in &model.collapse_ops {
        let ld = op.to_dense();
        let ldag_l = ld.adjoint() * &ld;
        let jump = linalg::kron(&ld.conjugate(), &ld);
        let anti = linalg::kron(&id, &ldag_l) + linalg::kron(&ldag_l.transpose(), &id);
        l += (jump - anti.scale(0.5)).map(|z| z * C64::new(*rate, 0.0));
    }
    Ok(l)
}

fn lindblad_rhs(
    h: &DMatrix<C64>,
    channels: &[(DMatrix<C64>, DMatrix<C64>, f64)],
    rho: &DMatrix<C64>,
) -> DMatrix<C64> {
    let minus_i = C64::new(0.0, -1.0);
    let mut drho = (h * rho - rho * h).map(|z| z * minus_i);
    for (l, ldag_l, rate) in channels {
        let jump = l * rho * l.adjoint();
        let anti = ldag_l * rho + rho * ldag_l;
        drho += (jump - anti.scale(0.5)).map(|z| z * C64::new(*rate, 0.0));
    }
    drho
}

/// Integrates the Lindblad master equation through the grid and enforces
/// the trace/Hermiticity/positivity contracts at every output point.
pub fn evolve_lindblad(
    model: &LindbladModel,
    rho0: &DMatrix<C64>,
    t_grid: &[f64],
    opts: &LindbladOptions,
) -> Result<Trajectory> {
    validate_grid(t_grid)?;
    model.validate()?;
    let d = model.hamiltonian.dim();
    if rho0.nrows() != d || rho0.ncols() != d {
        return Err(Error::validation("initial density matrix dimension mismatch"));
    }
    if d * d > LIOUVILLIAN_LEN_CAP {
        return Err(Error::size_cap(format!(
            "vectorized density matrix of length {} exceeds the {LIOUVILLIAN_LEN_CAP} cap",
            d * d
        )));
    }
    check_density_contract(rho0, t_grid[0])?;

    let uniform = t_grid.len() < 3
        || t_grid.windows(2).map(|w| w[1] - w[0]).all(|dt| {
            let first = t_grid[1] - t_grid[0];
            (dt - first).abs() <= 1e-12 * first.abs().max(1e-300)
        });
    let use_dense = match opts.method {
        LindbladMethod::DenseExponential => true,
        LindbladMethod::AdaptiveRk => false,
        LindbladMethod::Auto => d <= DENSE_LIOUVILLIAN_DIM_CAP && uniform,
    };

    let mut states = Vec::with_capacity(t_grid.len());
    states.push(rho0.clone());

    if use_dense {
        let l = dense_liouvillian(model)?;
        let mut cache: Option<(u64, DMatrix<C64>)> = None;
        let mut v = DVector::from_column_slice(rho0.as_slice());
        for w in t_grid.windows(2) {
            let dt = w[1] - w[0];
            let key = dt.to_bits();
            let propagator = match &cache {
                Some((k, p)) if *k == key => p.clone(),
                _ => {
                    let p = linalg::expm(&l.map(|z| z * C64::new(dt, 0.0)))?;
                    cache = Some((key, p.clone()));
                    p
                }
            };
            v = &propagator * v;
            let rho = DMatrix::from_column_slice(d, d, v.as_slice());
            check_density_contract(&rho, w[1])?;
            states.push(rho);
        }
    } else {
        let h = model.hamiltonian.to_dense();
        let channels: Vec<(DMatrix<C64>, DMatrix<C64>, f64)> = model
            .collapse_ops
            .iter()
            .map(|(op, rate)| {
                let l = op.to_dense();
                let ldag_l = l.adjoint() * &l;
                (l, ldag_l, *rate)
            })
            .collect();
        let y0 = DVector::from_column_slice(rho0.as_slice());
        let rhs = |_t: f64, y: &DVector<C64>| {
            let rho = DMatrix::from_column_slice(d, d, y.as_slice());
            let drho = lindblad_rhs(&h, &channels, &rho);
            DVector::from_column_slice(drho.as_slice())
        };
        let rk_opts = Rk45Options { rtol: opts.rtol, atol: opts.atol, ..Default::default() };
        let solution = linalg::rk45(rhs, &y0, t_grid, &rk_opts)?;
        for (i, y) in solution.into_iter().enumerate().skip(1) {
            let rho = DMatrix::from_column_slice(d, d, y.as_slice());
            check_density_contract(&rho, t_grid[i])?;
            states.push(rho);
        }
    }

    Ok(Trajectory {
        times: t_grid.to_vec(),
        states: StateSeries::Density(states),
        observables: BTreeMap::new(),
    })
}

/// Diagonal detuning energies D_s = -delta [transmon] - sum_j Delta_j k_j,
/// the generator of the map between the rotating frame and the interaction
/// picture.
pub fn detuning_diagonal(params: &SystemParams, basis: &EnumeratedBasis) -> Vec<f64> {
    basis
        .states()
        .iter()
        .map(|s| {
            let mut e = 0.0;
            if s.transmon == 1 {
                e -= params.delta;
            }
            for (j, ens) in params.ensembles.iter().enumerate() {
                e -= ens.delta * s.k[j] as f64;
            }
            e
        })
        .collect()
}

/// Fourth-order commutator-free Magnus step for the explicitly
/// time-dependent interaction-picture generator.
fn cf4_step(
    params: &SystemParams,
    basis: &EnumeratedBasis,
    psi: &DVector<C64>,
    t: f64,
    h_step: f64,
    krylov: &KrylovOptions,
) -> Result<DVector<C64>> {
    let root3_6 = 3f64.sqrt() / 6.0;
    let c1 = t + h_step * (0.5 - root3_6);
    let c2 = t + h_step * (0.5 + root3_6);
    let b1 = 0.25 + root3_6;
    let b2 = 0.25 - root3_6;
    let h1 = interaction_picture_generator(params, basis, c1)?;
    let h2 = interaction_picture_generator(params, basis, c2)?;
    let first = SparseOperator::lincomb(&[(C64::new(b1, 0.0), &h1), (C64::new(b2, 0.0), &h2)])?;
    let second = SparseOperator::lincomb(&[(C64::new(b2, 0.0), &h1), (C64::new(b1, 0.0), &h2)])?;
    let mid = expm_action_hermitian(|x| first.matvec(x), psi, h_step, krylov)?;
    expm_action_hermitian(|x| second.matvec(x), &mid, h_step, krylov)
}

/// Evolves psi0 under the time-dependent interaction-picture generator and
/// under the static rotating-frame Hamiltonian, then compares populations.
/// The two frames differ by the diagonal map exp(i D t), which leaves every
/// basis population invariant, so the returned maximum deviation is pure
/// integrator disagreement and must stay below 1e-6.
pub fn frame_equivalence(
    params: &SystemParams,
    trunc: &SpaceTruncation,
    psi0: &DVector<C64>,
    t_end: f64,
) -> Result<f64> {
    params.validate()?;
    if t_end < 0.0 {
        return Err(Error::validation("t_end must be non-negative"));
    }
    let basis = enumerate_basis(trunc, &params.ensembles)?;
    if psi0.len() != basis.len() {
        return Err(Error::validation("initial state dimension mismatch"));
    }
    if t_end == 0.0 {
        return Ok(0.0);
    }
    let h_rot = build_hamiltonian(params, &basis)?;
    let n_out = 51;
    let t_grid: Vec<f64> = (0..n_out).map(|i| t_end * i as f64 / (n_out - 1) as f64).collect();
    let krylov = KrylovOptions { tol: 1e-13, ..Default::default() };
    let rotating = evolve_unitary(&h_rot, psi0, &t_grid, &krylov)?;

    // Step size resolving the fastest phase in H_I(t).
    let g_big = params.collective_coupling_first();
    let scale = params.delta.abs()
        + params.ensembles.iter().map(|e| e.delta.abs()).fold(0.0, f64::max)
        + 2.0 * (params.g_c + g_big) * (trunc.n_max as f64).sqrt();
    let dt_target = 0.02 / scale.max(1e-3);

    let mut psi = psi0.clone();
    let mut worst = 0.0f64;
    let rot_states = match &rotating.states {
        StateSeries::Pure(v) => v,
        _ => unreachable!(),
    };
    for (i, w) in t_grid.windows(2).enumerate() {
        let span = w[1] - w[0];
        let n_sub = (span / dt_target).ceil().max(1.0) as usize;
        let h_sub = span / n_sub as f64;
        for k in 0..n_sub {
            let t = w[0] + k as f64 * h_sub;
            psi = cf4_step(params, &basis, &psi, t, h_sub, &krylov)?;
        }
        check_pure_contract(&psi, w[1])?;
        let reference = &rot_states[i + 1];
        for s in 0..basis.len() {
            let dev = (psi[s].norm_sqr() - reference[s].norm_sqr()).abs();
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Exponential-decay fit A exp(-Gamma t) + C.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitResult {
    pub rate: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

/// Least-squares fit of a positive series to A exp(-Gamma t) + C by
/// Gauss-Newton with Levenberg damping, seeded from a log-linear fit.
pub fn fit_decay(series: &[f64], t_grid: &[f64]) -> Result<FitResult> {
    if series.len() != t_grid.len() {
        return Err(Error::validation("series and grid lengths differ"));
    }
    if series.len() < 10 {
        return Err(Error::validation("decay fit needs at least 10 points"));
    }
    validate_grid(t_grid)?;
    if series.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::validation("decay fit requires a non-negative finite series"));
    }
    let y_max = series.iter().cloned().fold(0.0, f64::max);
    let y_min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    if y_max == 0.0 || y_max - y_min <= 1e-12 * y_max {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        return Ok(FitResult { rate: 0.0, amplitude: 0.0, offset: mean, rms_residual: 0.0 });
    }

    // Normalized coordinates keep the normal equations conditioned.
    let t_scale = t_grid[t_grid.len() - 1] - t_grid[0];
    let ts: Vec<f64> = t_grid.iter().map(|&t| (t - t_grid[0]) / t_scale).collect();
    let ys: Vec<f64> = series.iter().map(|&y| y / y_max).collect();

    // Log-linear seed on the offset-subtracted series.
    let c_seed = ys[ys.len() - 1].min(ys[0]) * 0.999;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (i, &y) in ys.iter().enumerate() {
        let z = y - c_seed;
        if z > 1e-8 {
            pts.push((ts[i], z.ln()));
        }
    }
    let (mut a, mut gamma, mut c) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() > 1e-30 {
            let slope = (n * sxy - sx * sy) / denom;
            let intercept = (sy - slope * sx) / n;
            (intercept.exp(), -slope, c_seed)
        } else {
            (ys[0] - c_seed, 1.0, c_seed)
        }
    } else {
        (ys[0] - c_seed, 1.0, c_seed)
    };

    let rms = |a: f64, gamma: f64, c: f64| -> f64 {
        let s: f64 = ts
            .iter()
            .zip(&ys)
            .map(|(&t, &y)| {
                let r = a * (-gamma * t).exp() + c - y;
                r * r
            })
            .sum();
        (s / ts.len() as f64).sqrt()
    };

    let mut lambda = 1e-6;
    let mut best = rms(a, gamma, c);
    let mut history = vec![best];
    let mut converged = false;
    for _ in 0..200 {
        // Normal equations J^T J delta = -J^T r with Levenberg damping.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&t, &y) in ts.iter().zip(&ys) {
            let e = (-gamma * t).exp();
            let r = a * e + c - y;
            let j = [e, -a * t * e, 1.0];
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let m = nalgebra::Matrix3::from_fn(|r, cc| jtj[r][cc] + if r == cc { lambda * jtj[r][r].max(1e-12) } else { 0.0 });
        let rhs = nalgebra::Vector3::new(-jtr[0], -jtr[1], -jtr[2]);
        let step = match m.lu().solve(&rhs) {
            Some(s) => s,
            None => break,
        };
        let trial = (a + step[0], gamma + step[1], c + step[2]);
        let trial_rms = rms(trial.0, trial.1, trial.2);
        if trial_rms <= best {
            let rel_step = step.norm() / (1.0 + a.abs() + gamma.abs() + c.abs());
            a = trial.0;
            gamma = trial.1;
            c = trial.2;
            lambda = (lambda * 0.3).max(1e-14);
            let improved = best - trial_rms;
            best = trial_rms;
            history.push(best);
            if rel_step < 1e-13 || improved < 1e-16 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            history.push(trial_rms);
            if lambda > 1e8 {
                converged = best < 1e-6;
                break;
            }
        }
    }
    if !converged && best > 1e-6 {
        let tail: Vec<String> = history.iter().rev().take(5).map(|r| format!("{r:.3e}")).collect();
        return Err(Error::numerical(format!(
            "decay fit did not converge; recent rms residuals: {}",
            tail.join(", ")
        )));
    }
    let rate = gamma / t_scale;
    if rate < -1e-6 {
        return Err(Error::validation(format!(
            "fitted rate {rate:.3e} is negative: series does not decay"
        )));
    }
    Ok(FitResult {
        rate: rate.max(0.0),
        amplitude: a * y_max,
        offset: c * y_max,
        rms_residual: best * y_max,
    })
}

/// Dominant angular frequency of a uniformly sampled series via a windowed
/// discrete transform with quadratic log-magnitude peak interpolation.
pub fn dominant_frequency(series: &[f64], dt: f64) -> Result<f64> {
    let n = series.len();
    if n < 16 {
        return Err(Error::validation("frequency extraction needs at least 16 samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::validation("sample spacing must be positive"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = series
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos());
            rustfft::num_complex::Complex::new((y - mean) * w, 0.0)
        })
        .collect();
    rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let (mut k_peak, mut mag_peak) = (1usize, 0.0f64);
    for (k, z) in buf.iter().enumerate().take(half).skip(1) {
        let m = z.norm();
        if m > mag_peak {
            mag_peak = m;
            k_peak = k;
        }
    }
    if mag_peak <= 0.0 {
        return Err(Error::numerical("no oscillation found in the series"));
    }
    let ln_mag = |k: usize| buf[k].norm().max(1e-300).ln();
    let p = if k_peak > 1 && k_peak + 1 < half {
        let alpha = ln_mag(k_peak - 1);
        let beta = ln_mag(k_peak);
        let gamma = ln_mag(k_peak + 1);
        let denom = alpha - 2.0 * beta + gamma;
        if denom.abs() > 1e-30 {
            (0.5 * (alpha - gamma) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(2.0 * std::f64::consts::PI * (k_peak as f64 + p) / (n as f64 * dt))
}

/// Outcome of a symmetric-subspace cooling run.
#[derive(Debug)]
pub struct CoolingReport {
    pub trajectory: Trajectory,
    pub fit: FitResult,
    /// Overdamped-cavity estimate 4 G^2 / kappa_c.
    pub purcell_estimate: f64,
    /// Set when kappa_c < 2 G, outside the overdamped regime.
    pub warning: Option<String>,
}

/// Decay of a collective spin excitation through the lossy cavity, with the
/// first ensemble resonant (Delta = 0 in the cavity frame). Fits the decay
/// of <k_0> and compares against the Purcell estimate.
pub fn cooling_simulation(
    params: &SystemParams,
    trunc: &SpaceTruncation,
    initial_k: u32,
    t_grid: &[f64],
) -> Result<CoolingReport> {
    params.validate()?;
    validate_grid(t_grid)?;
    if params.ensembles[0].delta.abs() > 1e-12 * params.g_c {
        return Err(Error::validation(
            "cooling requires the first ensemble resonant with the cavity (Delta = 0)",
        ));
    }
    if !(params.kappa_c > 0.0) {
        return Err(Error::validation("cooling requires kappa_c > 0"));
    }
    let g_big = params.collective_coupling_first();
    let warning = if params.kappa_c < 2.0 * g_big {
        Some(format!(
            "kappa_c = {:.3e} < 2 G = {:.3e}: outside the overdamped regime, \
             the Purcell estimate is unreliable",
            params.kappa_c,
            2.0 * g_big
        ))
    } else {
        None
    };
    let basis = enumerate_basis(trunc, &params.ensembles)?;
    let mut k0 = vec![0u32; params.ensembles.len()];
    k0[0] = initial_k;
    let initial = BasisState { transmon: 0, photons: 0, k: k0 };
    let psi0 = basis_vector(&basis, &initial)?;
    let model = build_collapse_ops(params, &basis)?;
    let mut trajectory = evolve_lindblad(&model, &pure_density(&psi0), t_grid, &LindbladOptions::default())?;
    let k_op = collective_number(&basis, 0);
    trajectory.record("collective_excitation_0", &k_op);
    let series = trajectory.observables["collective_excitation_0"].clone();
    let fit = fit_decay(&series, t_grid)?;
    Ok(CoolingReport {
        trajectory,
        fit,
        purcell_estimate: 4.0 * g_big * g_big / params.kappa_c,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::photon_number;
    use crate::params::{EnsembleParams, SpinModel};
    use approx::assert_relative_eq;

    fn tiny_params() -> SystemParams {
        SystemParams {
            g_c: 1.0,
            g_m: 0.0,
            delta: 0.0,
            ensembles: vec![EnsembleParams { n_s: 1_000_000, delta: 1.0 }],
            omega_c: None,
            kappa_c: 0.0,
            gamma_jj: 0.0,
            gamma_spin: 0.0,
            spin_model: SpinModel::ExactDicke,
            hierarchy_threshold: 10.0,
        }
    }

    fn small_trunc() -> SpaceTruncation {
        SpaceTruncation { n_max: 1, k_max: 1, total_excitation_max: Some(1) }
    }

    fn grid(t_end: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn diagonal_evolution_is_pure_phase() {
        let mut params = tiny_params();
        params.g_c = 1e-300;
        params.delta = 0.7;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let h = build_hamiltonian(&params, &basis).unwrap();
        let b_state = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let a1 = basis_vector(&basis, &BasisState { transmon: 0, photons: 1, k: vec![0] }).unwrap();
        let psi0 = (b_state + a1).unscale(2f64.sqrt());
        let t_grid = grid(5.0, 11);
        let traj = evolve_unitary(&h, &psi0, &t_grid, &KrylovOptions::default()).unwrap();
        let states = match &traj.states {
            StateSeries::Pure(v) => v,
            _ => unreachable!(),
        };
        let idx_b = basis.index_of(&BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        for (i, &t) in t_grid.iter().enumerate() {
            // Population constant, phase exp(+i delta t) on |b,0,0>.
            assert_relative_eq!(states[i][idx_b].norm_sqr(), 0.5, epsilon = 1e-12);
            let expect = C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, params.delta * t);
            assert!((states[i][idx_b] - expect).norm() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn vacuum_rabi_oscillation() {
        let params = tiny_params();
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let h = build_hamiltonian(&params, &basis).unwrap();
        let psi0 = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let t_grid = grid(6.0, 61);
        let traj = evolve_unitary(&h, &psi0, &t_grid, &KrylovOptions::default()).unwrap();
        let a1 = basis.index_of(&BasisState { transmon: 0, photons: 1, k: vec![0] }).unwrap();
        let series = traj.population_series(a1);
        for (i, &t) in t_grid.iter().enumerate() {
            assert_relative_eq!(series[i], (params.g_c * t).sin().powi(2), epsilon = 1e-9);
        }
    }

    #[test]
    fn hybrid_revival_at_vacuum_rabi_period() {
        let g_big = 0.02;
        let mut params = tiny_params();
        params.g_m = g_big / 1e3;
        let basis = enumerate_basis(&SpaceTruncation::default(), &params.ensembles).unwrap();
        let h = build_hamiltonian(&params, &basis).unwrap();
        let spin = BasisState { transmon: 0, photons: 0, k: vec![1] };
        let psi0 = basis_vector(&basis, &spin).unwrap();
        let t_revival = 2.0 * std::f64::consts::PI / (2f64.sqrt() * g_big);
        let t_grid = vec![0.0, t_revival];
        let traj = evolve_unitary(&h, &psi0, &t_grid, &KrylovOptions::default()).unwrap();
        let p = traj.population_series(basis.index_of(&spin).unwrap());
        assert!(p[1] > 1.0 - 1e-3, "revival population {}", p[1]);
    }

    #[test]
    fn unitary_conserves_energy_and_excitation() {
        let mut params = tiny_params();
        params.g_m = 0.01;
        params.delta = 0.3;
        let basis = enumerate_basis(&SpaceTruncation::default(), &params.ensembles).unwrap();
        let h = build_hamiltonian(&params, &basis).unwrap();
        let n_exc = crate::hamiltonian::total_excitation_number(&basis);
        let b1 = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let a01 = basis_vector(&basis, &BasisState { transmon: 0, photons: 0, k: vec![1] }).unwrap();
        let psi0 = (b1 + a01).unscale(2f64.sqrt());
        let traj = evolve_unitary(&h, &psi0, &grid(30.0, 31), &KrylovOptions::default()).unwrap();
        let e = traj.expectation_series(&h);
        let x = traj.expectation_series(&n_exc);
        let h_norm = h.entries().iter().map(|&(_, _, v)| v.norm_sqr()).sum::<f64>().sqrt();
        for i in 1..e.len() {
            assert!((e[i] - e[0]).abs() < 1e-9 * h_norm);
            assert!((x[i] - x[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn photon_decay_both_routes() {
        let mut params = tiny_params();
        params.g_c = 1e-300;
        params.kappa_c = 0.5;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let model = build_collapse_ops(&params, &basis).unwrap();
        let photon = BasisState { transmon: 0, photons: 1, k: vec![0] };
        let rho0 = pure_density(&basis_vector(&basis, &photon).unwrap());
        let t_grid = grid(4.0, 21);
        let n_op = photon_number(&basis);
        for method in [LindbladMethod::DenseExponential, LindbladMethod::AdaptiveRk] {
            let opts = LindbladOptions { method, ..Default::default() };
            let mut traj = evolve_lindblad(&model, &rho0, &t_grid, &opts).unwrap();
            traj.record("n", &n_op);
            for (i, &t) in t_grid.iter().enumerate() {
                let want = (-params.kappa_c * t).exp();
                assert!(
                    (traj.observables["n"][i] - want).abs() < 1e-7,
                    "{method:?} at t = {t}"
                );
            }
        }
    }

    #[test]
    fn spin_decay_at_gamma_spin() {
        let mut params = tiny_params();
        params.g_c = 1e-300;
        params.gamma_spin = 0.25;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let model = build_collapse_ops(&params, &basis).unwrap();
        let spin = BasisState { transmon: 0, photons: 0, k: vec![1] };
        let rho0 = pure_density(&basis_vector(&basis, &spin).unwrap());
        let t_grid = grid(8.0, 17);
        let traj = evolve_lindblad(&model, &rho0, &t_grid, &LindbladOptions::default()).unwrap();
        let series = traj.population_series(basis.index_of(&spin).unwrap());
        for (i, &t) in t_grid.iter().enumerate() {
            assert!((series[i] - (-params.gamma_spin * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rates_match_unitary() {
        let mut params = tiny_params();
        params.g_m = 0.02 / 1e3;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let h = build_hamiltonian(&params, &basis).unwrap();
        let model = build_collapse_ops(&params, &basis).unwrap();
        assert!(model.collapse_ops.is_empty());
        let psi0 = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let t_grid = grid(3.0, 7);
        let unitary = evolve_unitary(&h, &psi0, &t_grid, &KrylovOptions::default()).unwrap();
        let lindblad =
            evolve_lindblad(&model, &pure_density(&psi0), &t_grid, &LindbladOptions::default()).unwrap();
        let rhos = match &lindblad.states {
            StateSeries::Density(v) => v,
            _ => unreachable!(),
        };
        let pures = match &unitary.states {
            StateSeries::Pure(v) => v,
            _ => unreachable!(),
        };
        for i in 0..t_grid.len() {
            let diff = &rhos[i] - pure_density(&pures[i]);
            // Trace distance bound via Frobenius norm on these tiny systems.
            assert!(linalg::fro_norm(&diff) < 1e-8);
        }
    }

    #[test]
    fn lindblad_routes_cross_validate() {
        let mut params = tiny_params();
        params.g_m = 0.05 / 1e3;
        params.kappa_c = 0.01;
        params.gamma_jj = 0.005;
        params.gamma_spin = 0.002;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let model = build_collapse_ops(&params, &basis).unwrap();
        let psi0 = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let t_grid = grid(20.0, 11);
        let dense = evolve_lindblad(
            &model,
            &pure_density(&psi0),
            &t_grid,
            &LindbladOptions { method: LindbladMethod::DenseExponential, ..Default::default() },
        )
        .unwrap();
        let rk = evolve_lindblad(
            &model,
            &pure_density(&psi0),
            &t_grid,
            &LindbladOptions { method: LindbladMethod::AdaptiveRk, rtol: 1e-10, atol: 1e-14 },
        )
        .unwrap();
        for i in 0..basis.len() {
            let a = dense.population_series(i);
            let b = rk.population_series(i);
            for j in 0..t_grid.len() {
                assert!((a[j] - b[j]).abs() < 1e-8, "state {i} point {j}");
            }
        }
    }

    #[test]
    fn frame_equivalence_jc_only() {
        let mut params = tiny_params();
        params.delta = 1.3;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let psi0 = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let dev = frame_equivalence(&params, &small_trunc(), &psi0, 10.0).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn frame_equivalence_full_model() {
        let mut params = tiny_params();
        params.g_m = 0.02 / 1e3;
        params.delta = 0.4;
        let trunc = SpaceTruncation { n_max: 2, k_max: 2, total_excitation_max: Some(2) };
        let basis = enumerate_basis(&trunc, &params.ensembles).unwrap();
        let b1 = basis_vector(&basis, &BasisState { transmon: 1, photons: 0, k: vec![0] }).unwrap();
        let a01 = basis_vector(&basis, &BasisState { transmon: 0, photons: 0, k: vec![1] }).unwrap();
        let psi0 = (b1 + a01).unscale(2f64.sqrt());
        let dev = frame_equivalence(&params, &trunc, &psi0, 15.0).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
        let zero = frame_equivalence(&params, &trunc, &psi0, 0.0).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let t_grid = grid(10.0, 60);
        let series: Vec<f64> = t_grid.iter().map(|&t| 0.8 * (-0.37 * t).exp() + 0.15).collect();
        let fit = fit_decay(&series, &t_grid).unwrap();
        assert_relative_eq!(fit.rate, 0.37, max_relative = 1e-6);
        assert_relative_eq!(fit.amplitude, 0.8, max_relative = 1e-6);
        assert_relative_eq!(fit.offset, 0.15, max_relative = 1e-5);
        assert!(fit.rms_residual < 1e-10);
    }

    #[test]
    fn fit_constant_series() {
        let t_grid = grid(5.0, 20);
        let series = vec![0.42; 20];
        let fit = fit_decay(&series, &t_grid).unwrap();
        assert_eq!(fit.rate, 0.0);
        assert_relative_eq!(fit.offset, 0.42, max_relative = 1e-12);
    }

    #[test]
    fn fit_lindblad_photon_decay() {
        let mut params = tiny_params();
        params.g_c = 1e-300;
        params.kappa_c = 0.2;
        let basis = enumerate_basis(&small_trunc(), &params.ensembles).unwrap();
        let model = build_collapse_ops(&params, &basis).unwrap();
        let photon = BasisState { transmon: 0, photons: 1, k: vec![0] };
        let rho0 = pure_density(&basis_vector(&basis, &photon).unwrap());
        let t_grid = grid(15.0, 40);
        let mut traj = evolve_lindblad(&model, &rho0, &t_grid, &LindbladOptions::default()).unwrap();
        traj.record("n", &photon_number(&basis));
        let fit = fit_decay(&traj.observables["n"], &t_grid).unwrap();
        assert_relative_eq!(fit.rate, params.kappa_c, max_relative = 1e-3);
    }

    #[test]
    fn frequency_extraction_accuracy() {
        let omega = 0.733;
        let n = 4096;
        let dt = 0.05;
        let series: Vec<f64> = (0..n).map(|i| 0.3 + 0.5 * (omega * i as f64 * dt).cos()).collect();
        let got = dominant_frequency(&series, dt).unwrap();
        // Log-parabolic interpolation on a Hann window is good to ~1e-3
        // of the frequency, far finer than the bin width of ~4e-2.
        assert_relative_eq!(got, omega, max_relative = 1e-3);
    }

    #[test]
    fn cooling_matches_purcell() {
        let g_big = 0.01;
        let mut params = tiny_params();
        params.g_m = g_big / 1e3;
        params.delta = 20.0; // transmon parked far above
        params.ensembles[0].delta = 0.0;
        params.kappa_c = 1.0;
        let rate_scale = 4.0 * g_big * g_big / params.kappa_c;
        let t_grid = grid(3.0 / rate_scale, 40);
        let report = cooling_simulation(&params, &small_trunc(), 1, &t_grid).unwrap();
        assert!(report.warning.is_none());
        assert_relative_eq!(report.fit.rate, report.purcell_estimate, max_relative = 0.1);

        // Overdamped scaling: doubling kappa_c halves the cooling rate.
        let mut faster = params.clone();
        faster.kappa_c = 2.0;
        let t_grid2 = grid(6.0 / rate_scale, 40);
        let report2 = cooling_simulation(&faster, &small_trunc(), 1, &t_grid2).unwrap();
        assert_relative_eq!(report2.fit.rate, report.fit.rate / 2.0, max_relative = 0.06);
    }

    #[test]
    fn cooling_without_coupling_is_static() {
        let mut params = tiny_params();
        params.g_m = 0.0;
        params.delta = 20.0;
        params.ensembles[0].delta = 0.0;
        params.kappa_c = 1.0;
        let report = cooling_simulation(&params, &small_trunc(), 1, &grid(50.0, 25)).unwrap();
        assert_eq!(report.fit.rate, 0.0);
    }

    #[test]
    fn cooling_underdamped_warns() {
        let mut params = tiny_params();
        params.g_m = 0.5 / 1e3;
        params.delta = 20.0;
        params.ensembles[0].delta = 0.0;
        params.kappa_c = 0.1;
        let report = cooling_simulation(&params, &small_trunc(), 1, &grid(500.0, 60));
        // Underdamped: oscillatory series; the fit may or may not converge,
        // but when it does the warning must be present.
        if let Ok(r) = report {
            assert!(r.warning.is_some());
        }
    }
}
