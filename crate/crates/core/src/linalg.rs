//! Dense linear-algebra kernels: complex Hermitian eigensolver, matrix
//! exponentials, Krylov propagation, and an adaptive Runge-Kutta integrator.
//!
//! Excitation blocks of the system Hamiltonian are at most a few hundred
//! states at realistic truncations, so dense kernels with strict residual
//! checks beat iterative sparse solvers here.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

pub type C64 = Complex<f64>;

/// Frobenius norm.
pub fn fro_norm(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<C64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest entry magnitude.
pub fn max_abs(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Kronecker product a (x) b.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let scale = a[(i, j)];
            if scale == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = scale * b[(k, l)];
                }
            }
        }
    }
    out
}

fn check_hermitian(a: &DMatrix<C64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::validation("eigensolver requires a square matrix"));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    if worst > 1e-12 * scale {
        return Err(Error::numerical(format!(
            "matrix is not Hermitian: max |A - A^dag| = {worst:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues ascending and the matching orthonormal
/// eigenvector columns.
///
/// Unitary similarity by construction keeps eigenvectors orthonormal to
/// machine precision, which downstream residual contracts rely on.
pub fn eigh(a: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    check_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let mut m = a.clone();
    let mut v = DMatrix::<C64>::identity(n, n);
    let norm = fro_norm(&m).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * norm;

    let off = |m: &DMatrix<C64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let max_sweeps = 100;
    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        if off(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sp = phase * s; // J[p][q] = s e^{i phi}
                // Columns: B = M J.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * c - mkq * sp.conj();
                    m[(k, q)] = mkp * sp + mkq * c;
                }
                // Rows: M' = J^dag B.
                for l in 0..n {
                    let mpl = m[(p, l)];
                    let mql = m[(q, l)];
                    m[(p, l)] = mpl * c - mql * sp;
                    m[(q, l)] = mpl * sp.conj() + mql * c;
                }
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * sp.conj();
                    v[(k, q)] = vkp * sp + vkq * c;
                }
            }
        }
    }
    if !converged && off(&m) > tol * 10.0 {
        return Err(Error::numerical(format!(
            "Jacobi eigensolver failed to converge: off-diagonal norm {:.3e} vs tolerance {:.3e}",
            off(&m),
            tol
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| evals[i].partial_cmp(&evals[j]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let mut sorted_vecs = DMatrix::<C64>::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        sorted_vecs.set_column(new, &v.column(old));
    }
    Ok((sorted_vals, sorted_vecs))
}

/// Matrix exponential by degree-13 Pade approximation with scaling and
/// squaring.
pub fn expm(a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::validation("expm requires a square matrix"));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    const THETA_13: f64 = 5.371_920_351_148_152;
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.map(|z| z / 2f64.powi(s as i32));
    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = |x: f64| C64::new(x, 0.0);
    let u_inner = &a6 * c(B[13]) + &a4 * c(B[11]) + &a2 * c(B[9]);
    let u = &scaled
        * (&a6 * u_inner + &a6 * c(B[7]) + &a4 * c(B[5]) + &a2 * c(B[3]) + &id * c(B[1]));
    let v_inner = &a6 * c(B[12]) + &a4 * c(B[10]) + &a2 * c(B[8]);
    let v = &a6 * v_inner + &a6 * c(B[6]) + &a4 * c(B[4]) + &a2 * c(B[2]) + &id * c(B[0]);
    let lhs = &v - &u;
    let rhs = &v + &u;
    let lu = lhs.lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular Pade denominator in expm"))?;
    for _ in 0..s {
        x = &x * &x;
    }
    Ok(x)
}

/// Controls for the Lanczos exponential propagator.
#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    /// A-posteriori error target per unit propagation, absolute.
    pub tol: f64,
    /// Maximum Krylov dimension per substep.
    pub max_dim: usize,
    /// Give up after this many time subdivisions.
    pub max_splits: u32,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions { tol: 1e-12, max_dim: 64, max_splits: 24 }
    }
}

/// Computes y = exp(-i t H) v for Hermitian H given only as a matvec, by
/// Lanczos projection with full reorthogonalization.
///
/// The result is built as norm(v) * Q_m u with Q_m orthonormal and u a unit
/// vector, so the propagation is norm-preserving by construction.
pub fn expm_action_hermitian<F>(matvec: F, v: &DVector<C64>, t: f64, opts: &KrylovOptions) -> Result<DVector<C64>>
where
    F: Fn(&DVector<C64>) -> DVector<C64>,
{
    let beta0 = v.norm();
    if beta0 == 0.0 || t == 0.0 {
        return Ok(v.clone());
    }
    let mut psi = v.clone();
    let mut n_sub: u64 = 1;
    let mut splits = 0u32;
    loop {
        let dt = t / n_sub as f64;
        let mut failed = false;
        let mut out = psi.clone();
        for _ in 0..n_sub {
            match lanczos_substep(&matvec, &out, dt, opts) {
                Some(next) => out = next,
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            psi = out;
            break;
        }
        splits += 1;
        if splits > opts.max_splits {
            return Err(Error::numerical(format!(
                "Krylov propagator did not converge after {splits} time subdivisions"
            )));
        }
        n_sub *= 2;
    }
    Ok(psi)
}

/// One Lanczos substep; None when the error estimate misses the target at
/// the maximum Krylov dimension.
fn lanczos_substep<F>(matvec: &F, v: &DVector<C64>, dt: f64, opts: &KrylovOptions) -> Option<DVector<C64>>
where
    F: Fn(&DVector<C64>) -> DVector<C64>,
{
    let n = v.len();
    let beta0 = v.norm();
    if beta0 == 0.0 {
        return Some(v.clone());
    }
    let m_max = opts.max_dim.min(n);
    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(m_max);
    basis.push(v.unscale(beta0));
    let mut alphas: Vec<f64> = Vec::with_capacity(m_max);
    let mut betas: Vec<f64> = Vec::with_capacity(m_max);

    for j in 0..m_max {
        let mut w = matvec(&basis[j]);
        let alpha = basis[j].dotc(&w).re;
        alphas.push(alpha);
        w -= basis[j].scale(alpha);
        if j > 0 {
            w -= basis[j - 1].scale(betas[j - 1]);
        }
        // Full reorthogonalization, twice for numerical safety.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w -= q * c;
            }
        }
        let beta = w.norm();
        let u = tridiag_exp_e1(&alphas, &betas, dt);
        // Saad's a-posteriori estimate: coupling out of the Krylov space.
        let err = beta * u[u.len() - 1].norm() * beta0;
        let happy = beta <= 1e-14 * (alpha.abs() + 1.0);
        if happy || err <= opts.tol * beta0.max(1.0) {
            let mut y = DVector::<C64>::zeros(n);
            for (k, q) in basis.iter().enumerate() {
                y += q * (u[k] * C64::new(beta0, 0.0));
            }
            return Some(y);
        }
        if j + 1 == m_max {
            return None;
        }
        betas.push(beta);
        basis.push(w.unscale(beta));
    }
    None
}

/// u = exp(-i dt T) e1 for the real symmetric tridiagonal T built from the
/// Lanczos coefficients.
fn tridiag_exp_e1(alphas: &[f64], betas: &[f64], dt: f64) -> Vec<C64> {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(t);
    let mut u = vec![C64::new(0.0, 0.0); m];
    for k in 0..m {
        let lambda = eig.eigenvalues[k];
        let phase = C64::from_polar(1.0, -lambda * dt);
        let w = eig.eigenvectors[(0, k)];
        for i in 0..m {
            u[i] += phase * (w * eig.eigenvectors[(i, k)]);
        }
    }
    u
}

/// Controls for the adaptive Dormand-Prince integrator.
#[derive(Debug, Clone, Copy)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: u64,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Rk45Options { rtol: 1e-8, atol: 1e-12, max_steps: 50_000_000 }
    }
}

/// Integrates y' = f(t, y) through the ascending grid and returns the state
/// at every grid point (the first entry is y0 itself).
pub fn rk45<F>(f: F, y0: &DVector<C64>, t_grid: &[f64], opts: &Rk45Options) -> Result<Vec<DVector<C64>>>
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
{
    if t_grid.is_empty() {
        return Err(Error::validation("time grid must not be empty"));
    }
    for w in t_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::validation("time grid must be strictly ascending"));
        }
    }
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(y0.clone());
    let mut y = y0.clone();
    let mut t = t_grid[0];
    let span = t_grid[t_grid.len() - 1] - t;
    let mut h = if span > 0.0 { span / 1000.0 } else { 1.0 };
    let mut steps: u64 = 0;

    for &t_target in &t_grid[1..] {
        while t < t_target {
            if steps >= opts.max_steps {
                return Err(Error::numerical(format!(
                    "RK45 exceeded {} steps at t = {t:.6e}",
                    opts.max_steps
                )));
            }
            steps += 1;
            let h_step = h.min(t_target - t);
            let (y_new, err_ratio) = dopri_step(&f, t, &y, h_step, opts);
            if err_ratio <= 1.0 {
                t += h_step;
                y = y_new;
                let grow = 0.9 * err_ratio.powf(-0.2);
                h = h_step * grow.clamp(1.0, 5.0);
            } else {
                let shrink = (0.9 * err_ratio.powf(-0.2)).clamp(0.2, 0.9);
                h = h_step * shrink;
                if h < 1e-15 * span.max(1.0) {
                    return Err(Error::numerical(format!(
                        "RK45 step size underflow at t = {t:.6e}"
                    )));
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Single Dormand-Prince 5(4) step; returns the 5th-order update and the
/// scaled error-norm ratio (accept when <= 1).
fn dopri_step<F>(f: &F, t: f64, y: &DVector<C64>, h: f64, opts: &Rk45Options) -> (DVector<C64>, f64)
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
{
    let hc = C64::new(h, 0.0);
    let k1 = f(t, y);
    let k2 = f(t + h / 5.0, &(y + &k1 * (hc / 5.0)));
    let k3 = f(
        t + 3.0 * h / 10.0,
        &(y + &k1 * (hc * (3.0 / 40.0)) + &k2 * (hc * (9.0 / 40.0))),
    );
    let k4 = f(
        t + 4.0 * h / 5.0,
        &(y + &k1 * (hc * (44.0 / 45.0)) - &k2 * (hc * (56.0 / 15.0)) + &k3 * (hc * (32.0 / 9.0))),
    );
    let k5 = f(
        t + 8.0 * h / 9.0,
        &(y + &k1 * (hc * (19372.0 / 6561.0)) - &k2 * (hc * (25360.0 / 2187.0))
            + &k3 * (hc * (64448.0 / 6561.0))
            - &k4 * (hc * (212.0 / 729.0))),
    );
    let k6 = f(
        t + h,
        &(y + &k1 * (hc * (9017.0 / 3168.0)) - &k2 * (hc * (355.0 / 33.0))
            + &k3 * (hc * (46732.0 / 5247.0))
            + &k4 * (hc * (49.0 / 176.0))
            - &k5 * (hc * (5103.0 / 18656.0))),
    );
    let y5 = y
        + &k1 * (hc * (35.0 / 384.0))
        + &k3 * (hc * (500.0 / 1113.0))
        + &k4 * (hc * (125.0 / 192.0))
        - &k5 * (hc * (2187.0 / 6784.0))
        + &k6 * (hc * (11.0 / 84.0));
    let k7 = f(t + h, &y5);
    let y4 = y
        + &k1 * (hc * (5179.0 / 57600.0))
        + &k3 * (hc * (7571.0 / 16695.0))
        + &k4 * (hc * (393.0 / 640.0))
        - &k5 * (hc * (92097.0 / 339200.0))
        + &k6 * (hc * (187.0 / 2100.0))
        + &k7 * (hc / 40.0);
    let diff = &y5 - &y4;
    let mut acc = 0.0f64;
    for i in 0..y.len() {
        let scale = opts.atol + opts.rtol * y[i].norm().max(y5[i].norm());
        let e = diff[i].norm() / scale;
        acc += e * e;
    }
    let err_ratio = (acc / y.len().max(1) as f64).sqrt();
    (y5, err_ratio.max(1e-10))
}
