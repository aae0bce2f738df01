//! Gaussian kernel, landmark configurations and the landmark Hamiltonian.
//!
//! Positions and momenta are flat arrays of length `n * d`; coordinate `alpha`
//! of landmark `i` lives at index `i * d + alpha`. A phase-space vector is the
//! concatenation `[q; p]` of length `2 * n * d`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::CholFactor;
use crate::scalar::Scalar;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Landmarks closer than this multiple of the kernel length-scale are rejected.
pub const MIN_SEPARATION_FACTOR: f64 = 1e-8;

/// Scalar Gaussian kernel `k(x) = c exp(-|x|^2 / (2 a^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub a: f64,
    pub c: f64,
}

impl KernelParams {
    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("kernel needs a > 0 and c > 0, got a={a}, c={c}")));
        }
        Ok(KernelParams { a, c })
    }

    /// Unit-amplitude kernel with length-scale `a`.
    pub fn with_scale(a: f64) -> Result<Self> {
        Self::new(a, 1.0)
    }

    /// Kernel value as a function of the squared norm.
    #[inline]
    pub fn of_sq<T: Scalar>(&self, sq: T) -> T {
        (sq * (-0.5 / (self.a * self.a))).exp() * self.c
    }

    #[inline]
    pub fn eval_generic<T: Scalar>(&self, x: &[T]) -> T {
        let mut sq = T::zero();
        for &v in x {
            sq += v * v;
        }
        self.of_sq(sq)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_generic(x)
    }

    /// `grad k(x) = -a^{-2} k(x) x`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let k = self.eval(x);
        let s = -k / (self.a * self.a);
        x.iter().map(|v| s * v).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkConfig {
    n: usize,
    d: usize,
    q: Vec<f64>,
}

impl LandmarkConfig {
    /// Builds a configuration of pairwise distinct landmarks.
    pub fn new(d: usize, q: Vec<f64>) -> Result<Self> {
        Self::checked(d, q, 0.0)
    }

    /// Builds a configuration whose minimum pairwise distance is at least
    /// `MIN_SEPARATION_FACTOR * a`.
    pub fn with_scale(d: usize, q: Vec<f64>, a: f64) -> Result<Self> {
        Self::checked(d, q, MIN_SEPARATION_FACTOR * a)
    }

    fn checked(d: usize, q: Vec<f64>, min_dist: f64) -> Result<Self> {
        if d == 0 || d > MAX_DIM || q.is_empty() || q.len() % d != 0 {
            return Err(Error::Dimension(format!(
                "position array of length {} is not a whole number of {d}-dimensional landmarks",
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("landmark positions must be finite".into()));
        }
        let n = q.len() / d;
        if let Some((i, j, distance)) = closest_pair(&q, d) {
            if !(distance > min_dist) {
                return Err(Error::CoincidentLandmarks { i, j, distance });
            }
        }
        Ok(LandmarkConfig { n, d, q })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.q
    }

    pub fn landmark(&self, i: usize) -> &[f64] {
        &self.q[i * self.d..(i + 1) * self.d]
    }

    pub fn min_distance(&self) -> f64 {
        closest_pair(&self.q, self.d).map_or(f64::INFINITY, |(_, _, dist)| dist)
    }
}

fn closest_pair(q: &[f64], d: usize) -> Option<(usize, usize, f64)> {
    let n = q.len() / d;
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = (0..d)
                .map(|a| (q[i * d + a] - q[j * d + a]).powi(2))
                .sum::<f64>()
                .sqrt();
            if best.map_or(true, |(_, _, b)| dist < b) {
                best = Some((i, j, dist));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub q: LandmarkConfig,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: LandmarkConfig, p: Vec<f64>) -> Result<Self> {
        if p.len() != q.as_slice().len() {
            return Err(Error::Dimension(format!(
                "momenta have length {}, positions {}",
                p.len(),
                q.as_slice().len()
            )));
        }
        Ok(PhaseState { q, p })
    }

    pub fn at_rest(q: LandmarkConfig) -> Self {
        let p = vec![0.0; q.as_slice().len()];
        PhaseState { q, p }
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn d(&self) -> usize {
        self.q.d()
    }

    /// `[q; p]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = self.q.as_slice().to_vec();
        x.extend_from_slice(&self.p);
        x
    }

    pub fn from_flat(d: usize, x: &[f64]) -> Result<Self> {
        if x.len() % (2 * d) != 0 {
            return Err(Error::Dimension(format!("phase vector of length {} with d={d}", x.len())));
        }
        let m = x.len() / 2;
        PhaseState::new(LandmarkConfig::new(d, x[..m].to_vec())?, x[m..].to_vec())
    }
}

/// Kernel matrix `k(q_i - q_j)` over landmark pairs (n x n), for generic positions.
pub fn pairwise_kernel<T: Scalar>(params: &KernelParams, n: usize, d: usize, q: &[T]) -> Vec<T> {
    let mut k = vec![T::zero(); n * n];
    let diag = T::cst(params.c);
    for i in 0..n {
        k[i * n + i] = diag;
        for j in (i + 1)..n {
            let mut sq = T::zero();
            for a in 0..d {
                let diff = q[i * d + a] - q[j * d + a];
                sq += diff * diff;
            }
            let v = params.of_sq(sq);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `H(q, p) = 1/2 sum_ij <p_i, p_j> k(q_i - q_j)`.
pub fn hamiltonian_generic<T: Scalar>(params: &KernelParams, d: usize, q: &[T], p: &[T]) -> T {
    let n = q.len() / d;
    let k = pairwise_kernel(params, n, d, q);
    let mut h = T::zero();
    for i in 0..n {
        for j in 0..n {
            let pp = crate::scalar::dot(&p[i * d..(i + 1) * d], &p[j * d..(j + 1) * d]);
            h += pp * k[i * n + j];
        }
    }
    h * 0.5
}

/// Writes `dH/dp` and `dH/dq` into the two output slices.
pub fn hamiltonian_partials_into<T: Scalar>(
    params: &KernelParams,
    d: usize,
    q: &[T],
    p: &[T],
    dhdp: &mut [T],
    dhdq: &mut [T],
) {
    let n = q.len() / d;
    let inv_a2 = 1.0 / (params.a * params.a);
    for v in dhdp.iter_mut() {
        *v = T::zero();
    }
    for v in dhdq.iter_mut() {
        *v = T::zero();
    }
    for i in 0..n {
        for a in 0..d {
            dhdp[i * d + a] += p[i * d + a] * params.c;
        }
        for j in (i + 1)..n {
            let mut diff = [T::zero(); MAX_DIM];
            let mut sq = T::zero();
            for a in 0..d {
                diff[a] = q[i * d + a] - q[j * d + a];
                sq += diff[a] * diff[a];
            }
            let k = params.of_sq(sq);
            let pij = crate::scalar::dot(&p[i * d..(i + 1) * d], &p[j * d..(j + 1) * d]);
            // grad k(q_i - q_j) = -k (q_i - q_j) / a^2, odd in the difference
            let w = pij * k * (-inv_a2);
            for a in 0..d {
                dhdp[i * d + a] += p[j * d + a] * k;
                dhdp[j * d + a] += p[i * d + a] * k;
                let g = w * diff[a];
                dhdq[i * d + a] += g;
                dhdq[j * d + a] -= g;
            }
        }
    }
}

pub fn kernel_eval(params: &KernelParams, x: &[f64]) -> f64 {
    params.eval(x)
}

pub fn kernel_grad(params: &KernelParams, x: &[f64]) -> Vec<f64> {
    params.grad(x)
}

pub fn hamiltonian(params: &KernelParams, x: &PhaseState) -> f64 {
    hamiltonian_generic(params, x.d(), x.q.as_slice(), &x.p)
}

/// Returns `(dH/dp, dH/dq)`.
pub fn hamiltonian_partials(params: &KernelParams, x: &PhaseState) -> (Vec<f64>, Vec<f64>) {
    let m = x.p.len();
    let mut dp = vec![0.0; m];
    let mut dq = vec![0.0; m];
    hamiltonian_partials_into(params, x.d(), x.q.as_slice(), &x.p, &mut dp, &mut dq);
    (dp, dq)
}

/// Kernel Gram matrix `K(q)` with blocks `k(q_i - q_j) I_d`, with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub chol: CholFactor,
}

pub fn gram_matrix(params: &KernelParams, q: &LandmarkConfig) -> Result<GramMatrix> {
    gram_matrix_jittered(params, q, 0.0)
}

/// Gram matrix with `jitter * I` added before factorisation.
pub fn gram_matrix_jittered(params: &KernelParams, q: &LandmarkConfig, jitter: f64) -> Result<GramMatrix> {
    let (n, d) = (q.n(), q.d());
    let k = pairwise_kernel(params, n, d, q.as_slice());
    let mut m = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            for a in 0..d {
                m[(i * d + a, j * d + a)] = k[i * n + j];
            }
        }
    }
    for i in 0..n * d {
        m[(i, i)] += jitter;
    }
    let chol = CholFactor::new(&m).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "kernel Gram matrix (minimum landmark distance {:e})",
            q.min_distance()
        ))
    })?;
    Ok(GramMatrix { matrix: m, chol })
}
