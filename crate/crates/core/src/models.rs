//! Stochastic landmark models in Itô form and their linear auxiliary processes.
//!
//! Three models are supported:
//!
//! * Lagrangian: additive noise `gamma / sqrt(n) dW` on every momentum coordinate.
//! * Langevin: the Lagrangian model with an extra dissipative drift `-lambda dH/dp`.
//! * Eulerian: transport noise from a fixed grid of Gaussian vector fields,
//!   given in Stratonovich form and converted to Itô form by adding the
//!   correction returned by [`Coefficients::ito_correction`].

use std::f64::consts::FRAC_2_PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{self, KernelParams, LandmarkConfig, PhaseState, MAX_DIM};
use crate::linalg::RowMat;
use crate::scalar::Scalar;

/// Default damping when the Langevin model is requested without one.
pub const DEFAULT_LANGEVIN_LAMBDA: f64 = 0.25;

/// Spatially fixed noise vector fields for the Eulerian model.
///
/// Every center carries `d` fields, one per coordinate direction:
/// field `(j, beta)` is `(2/pi) gamma_beta k_tau(q - delta_j) e_beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFieldGrid {
    d: usize,
    centers: Vec<f64>,
    tau: f64,
    gamma: Vec<f64>,
}

impl NoiseFieldGrid {
    pub fn new(d: usize, centers: Vec<f64>, tau: f64, gamma: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("noise field scale tau must be positive, got {tau}")));
        }
        if d == 0 || d > MAX_DIM || centers.is_empty() || centers.len() % d != 0 {
            return Err(Error::Dimension(format!(
                "{} center coordinates do not form {d}-dimensional points",
                centers.len()
            )));
        }
        if gamma.len() != d {
            return Err(Error::Dimension(format!("gamma has length {}, expected {d}", gamma.len())));
        }
        Ok(NoiseFieldGrid { d, centers, tau, gamma })
    }

    /// Axis-aligned grid with spacing `2 tau` starting at `lo` and not exceeding `hi`.
    pub fn regular(lo: &[f64], hi: &[f64], tau: f64, gamma: Vec<f64>) -> Result<Self> {
        let d = lo.len();
        if hi.len() != d {
            return Err(Error::Dimension("grid bounds differ in dimension".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("noise field scale tau must be positive, got {tau}")));
        }
        let step = 2.0 * tau;
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let count = ((hi[a] - lo[a]) / step + 1e-9).floor().max(0.0) as usize + 1;
                (0..count).map(|k| lo[a] + k as f64 * step).collect()
            })
            .collect();
        let mut centers = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            for a in 0..d {
                centers.push(axes[a][idx[a]]);
            }
            let mut a = 0;
            loop {
                if a == d {
                    return Self::new(d, centers, tau, gamma);
                }
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    /// Grid covering the bounding box of `configs`, expanded by `2 tau` on each side.
    pub fn covering(configs: &[&LandmarkConfig], tau: f64, gamma: Vec<f64>) -> Result<Self> {
        let first = configs
            .first()
            .ok_or_else(|| Error::Config("no configurations to cover".into()))?;
        let d = first.d();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for c in configs {
            for i in 0..c.n() {
                for (a, v) in c.landmark(i).iter().enumerate() {
                    lo[a] = lo[a].min(*v);
                    hi[a] = hi[a].max(*v);
                }
            }
        }
        for a in 0..d {
            lo[a] -= 2.0 * tau;
            hi[a] += 2.0 * tau;
        }
        Self::regular(&lo, &hi, tau, gamma)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn center_count(&self) -> usize {
        self.centers.len() / self.d
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.d..(j + 1) * self.d]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Total number of scalar noise fields `J`.
    pub fn field_count(&self) -> usize {
        self.center_count() * self.d
    }

    /// Center index and amplitude vector of field `l`.
    fn field(&self, l: usize) -> (usize, [f64; MAX_DIM]) {
        let (j, beta) = (l / self.d, l % self.d);
        let mut g = [0.0; MAX_DIM];
        g[beta] = FRAC_2_PI * self.gamma[beta];
        (j, g)
    }

    fn kernel(&self) -> KernelParams {
        KernelParams { a: self.tau, c: 1.0 }
    }

    /// Values `sigma_l(q)` of all `J` fields at the point `q`.
    pub fn eval(&self, q: &[f64]) -> Vec<Vec<f64>> {
        let k = self.kernel();
        (0..self.field_count())
            .map(|l| {
                let (j, g) = self.field(l);
                let y: Vec<f64> = q.iter().zip(self.center(j)).map(|(a, b)| a - b).collect();
                let kb = k.eval(&y);
                (0..self.d).map(|a| g[a] * kb).collect()
            })
            .collect()
    }
}

/// Values `sigma_l(q)` of the noise fields at `q`.
pub fn noise_field_eval(grid: &NoiseFieldGrid, q: &[f64]) -> Vec<Vec<f64>> {
    grid.eval(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Lagrangian,
    Langevin,
    Eulerian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub n: usize,
    pub d: usize,
    pub kernel: KernelParams,
    /// Total additive noise level; each landmark receives `gamma / sqrt(n)`.
    pub gamma: f64,
    /// Damping; always zero for the Lagrangian and Eulerian models.
    pub lambda: f64,
    pub fields: Option<NoiseFieldGrid>,
}

impl ModelSpec {
    pub fn lagrangian(n: usize, d: usize, kernel: KernelParams, gamma: f64) -> Result<Self> {
        Self::additive(ModelVariant::Lagrangian, n, d, kernel, gamma, 0.0)
    }

    pub fn langevin(n: usize, d: usize, kernel: KernelParams, gamma: f64, lambda: Option<f64>) -> Result<Self> {
        let lambda = lambda.unwrap_or(DEFAULT_LANGEVIN_LAMBDA);
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        Self::additive(ModelVariant::Langevin, n, d, kernel, gamma, lambda)
    }

    fn additive(variant: ModelVariant, n: usize, d: usize, kernel: KernelParams, gamma: f64, lambda: f64) -> Result<Self> {
        check_dims(n, d)?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be non-negative, got {gamma}")));
        }
        Ok(ModelSpec { variant, n, d, kernel, gamma, lambda, fields: None })
    }

    pub fn eulerian(n: usize, d: usize, kernel: KernelParams, fields: NoiseFieldGrid) -> Result<Self> {
        check_dims(n, d)?;
        if fields.d() != d {
            return Err(Error::Dimension(format!(
                "noise fields live in dimension {}, landmarks in {d}",
                fields.d()
            )));
        }
        Ok(ModelSpec {
            variant: ModelVariant::Eulerian,
            n,
            d,
            kernel,
            gamma: 0.0,
            lambda: 0.0,
            fields: Some(fields),
        })
    }

    /// Same model with Hamiltonian kernel length-scale `a`.
    pub fn with_kernel_scale(&self, a: f64) -> Result<Self> {
        let mut s = self.clone();
        s.kernel = KernelParams::new(a, self.kernel.c)?;
        Ok(s)
    }

    /// Phase-space dimension `2 n d`.
    pub fn state_dim(&self) -> usize {
        2 * self.n * self.d
    }

    /// Dimension of the driving Wiener process.
    pub fn wiener_dim(&self) -> usize {
        match &self.fields {
            Some(f) => f.field_count(),
            None => self.n * self.d,
        }
    }

    /// Per-landmark noise amplitude `gamma / sqrt(n)`.
    pub fn landmark_gamma(&self) -> f64 {
        self.gamma / (self.n as f64).sqrt()
    }

    pub fn has_constant_diffusion(&self) -> bool {
        self.fields.is_none()
    }

    pub fn coefficients<'a, T: Scalar>(&'a self, x: &'a [T]) -> Coefficients<'a, T> {
        Coefficients::new(self, x)
    }

    /// Itô drift `b(t, x)`; the models are autonomous so `t` is unused.
    pub fn drift(&self, _t: f64, x: &PhaseState) -> Vec<f64> {
        self.coefficients(&x.to_flat()).drift()
    }

    /// Diffusion coefficient, `2nd x J` (Eulerian) or `2nd x nd`.
    pub fn diffusion(&self, _t: f64, x: &PhaseState) -> DMatrix<f64> {
        let flat = x.to_flat();
        let c = self.coefficients(&flat);
        let nn = self.state_dim();
        let jj = self.wiener_dim();
        let mut m = DMatrix::zeros(nn, jj);
        for l in 0..jj {
            let col = c.column(l);
            for r in 0..nn {
                m[(r, l)] = col[r];
            }
        }
        m
    }

    /// Stratonovich-to-Itô drift correction (zero for the additive-noise models).
    pub fn strat_to_ito_correction(&self, x: &PhaseState) -> Vec<f64> {
        let flat = x.to_flat();
        let mut out = vec![0.0; flat.len()];
        self.coefficients(&flat).add_ito_correction(&mut out);
        out
    }
}

fn check_dims(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 || d > MAX_DIM {
        return Err(Error::Dimension(format!("unsupported landmark count {n} / dimension {d}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct FieldAt<T> {
    kb: T,
    grad: [T; MAX_DIM],
    /// `<grad kb, g>`
    z: T,
    /// `Hess(kb) g`
    grad_z: [T; MAX_DIM],
}

/// Drift and diffusion of a model evaluated at one phase-space point.
///
/// Kernel evaluations of the noise fields are computed once and shared by
/// the drift correction, the diffusion products and the trace term.
pub struct Coefficients<'a, T: Scalar> {
    spec: &'a ModelSpec,
    x: &'a [T],
    /// Indexed `l * n + i`; empty for the additive models.
    fields: Vec<FieldAt<T>>,
}

impl<'a, T: Scalar> Coefficients<'a, T> {
    fn new(spec: &'a ModelSpec, x: &'a [T]) -> Self {
        debug_assert_eq!(x.len(), spec.state_dim());
        let mut fields = Vec::new();
        if let Some(grid) = &spec.fields {
            let (n, d) = (spec.n, spec.d);
            let kern = grid.kernel();
            let inv_t2 = 1.0 / (grid.tau * grid.tau);
            fields.reserve(grid.field_count() * n);
            for l in 0..grid.field_count() {
                let (j, g) = grid.field(l);
                let center = grid.center(j);
                for i in 0..n {
                    let mut y = [T::zero(); MAX_DIM];
                    let mut sq = T::zero();
                    let mut yg = T::zero();
                    for a in 0..d {
                        y[a] = x[i * d + a] - center[a];
                        sq += y[a] * y[a];
                        yg += y[a] * g[a];
                    }
                    let kb = kern.of_sq(sq);
                    let mut grad = [T::zero(); MAX_DIM];
                    let mut grad_z = [T::zero(); MAX_DIM];
                    let s = kb * (-inv_t2);
                    for a in 0..d {
                        grad[a] = y[a] * s;
                    }
                    let z = yg * s;
                    // Hess kb = kb (y y^T / tau^4 - I / tau^2)
                    let c = yg * kb * (inv_t2 * inv_t2);
                    for a in 0..d {
                        grad_z[a] = y[a] * c + kb * (-g[a] * inv_t2);
                    }
                    fields.push(FieldAt { kb, grad, z, grad_z });
                }
            }
        }
        Coefficients { spec, x, fields }
    }

    fn half(&self) -> usize {
        self.spec.n * self.spec.d
    }

    /// Drift without the Itô correction: Hamiltonian flow plus damping.
    pub fn stratonovich_drift(&self) -> Vec<T> {
        let m = self.half();
        let (q, p) = self.x.split_at(m);
        let mut out = vec![T::zero(); 2 * m];
        {
            let (dq, dp) = out.split_at_mut(m);
            geometry::hamiltonian_partials_into(&self.spec.kernel, self.spec.d, q, p, dq, dp);
            let lambda = self.spec.lambda;
            for i in 0..m {
                let damp = if lambda != 0.0 { dq[i] * lambda } else { T::zero() };
                dp[i] = -dp[i] - damp;
            }
        }
        out
    }

    /// Itô drift.
    pub fn drift(&self) -> Vec<T> {
        let mut out = self.stratonovich_drift();
        self.add_ito_correction(&mut out);
        out
    }

    /// Adds the Stratonovich-to-Itô drift correction of the Eulerian model.
    pub fn add_ito_correction(&self, out: &mut [T]) {
        let Some(grid) = &self.spec.fields else { return };
        let (n, d) = (self.spec.n, self.spec.d);
        let m = n * d;
        for l in 0..grid.field_count() {
            let (_, g) = grid.field(l);
            for i in 0..n {
                let f = &self.fields[l * n + i];
                let zk = f.z * f.kb * 0.5;
                let mut pg = T::zero();
                for a in 0..d {
                    pg += self.x[m + i * d + a] * g[a];
                }
                let half_pg = pg * 0.5;
                for a in 0..d {
                    if g[a] != 0.0 {
                        out[i * d + a] += zk * g[a];
                    }
                    out[m + i * d + a] += half_pg * (f.z * f.grad[a] - f.kb * f.grad_z[a]);
                }
            }
        }
    }

    /// Column `l` of the diffusion coefficient.
    pub fn column(&self, l: usize) -> Vec<T> {
        let (n, d) = (self.spec.n, self.spec.d);
        let m = n * d;
        let mut col = vec![T::zero(); 2 * m];
        match &self.spec.fields {
            None => col[m + l] = T::cst(self.spec.landmark_gamma()),
            Some(grid) => {
                let (_, g) = grid.field(l);
                for i in 0..n {
                    let f = &self.fields[l * n + i];
                    let mut pg = T::zero();
                    for a in 0..d {
                        pg += self.x[m + i * d + a] * g[a];
                    }
                    for a in 0..d {
                        if g[a] != 0.0 {
                            col[i * d + a] = f.kb * g[a];
                        }
                        col[m + i * d + a] = -(pg * f.grad[a]);
                    }
                }
            }
        }
        col
    }

    /// `sigma(x) dw`.
    pub fn sigma_times(&self, dw: &[f64]) -> Vec<T> {
        let (n, d) = (self.spec.n, self.spec.d);
        let m = n * d;
        let mut out = vec![T::zero(); 2 * m];
        match &self.spec.fields {
            None => {
                let g = self.spec.landmark_gamma();
                for i in 0..m {
                    out[m + i] = T::cst(g * dw[i]);
                }
            }
            Some(grid) => {
                for l in 0..grid.field_count() {
                    if dw[l] == 0.0 {
                        continue;
                    }
                    let col = self.column(l);
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += c * dw[l];
                    }
                }
            }
        }
        out
    }

    /// `a(x) r = sigma sigma^T r`.
    pub fn a_times(&self, r: &[T]) -> Vec<T> {
        let m = self.half();
        let mut out = vec![T::zero(); 2 * m];
        match &self.spec.fields {
            None => {
                let g2 = self.spec.landmark_gamma().powi(2);
                for i in 0..m {
                    out[m + i] = r[m + i] * g2;
                }
            }
            Some(grid) => {
                for l in 0..grid.field_count() {
                    let col = self.column(l);
                    let s = crate::scalar::dot(&col, r);
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += c * s;
                    }
                }
            }
        }
        out
    }

    /// `sum_l sigma_l^T H sigma_l - sum_l (sigma_l^T r)^2`, i.e. `tr(a (H - r r^T))`.
    pub fn trace_against(&self, h: &RowMat, r: &[T]) -> T {
        let mut acc = T::zero();
        for l in 0..self.spec.wiener_dim() {
            let col = self.column(l);
            let hc = h.mul_vec(&col);
            let sr = crate::scalar::dot(&col, r);
            acc += crate::scalar::dot(&col, &hc) - sr * sr;
        }
        acc
    }
}

/// Linear auxiliary process `dX = (B x + beta) dt + sigma dW` with constant coefficients.
#[derive(Clone, Debug)]
pub struct AuxiliaryProcess {
    pub btil: DMatrix<f64>,
    pub betatil: DVector<f64>,
    pub sigmatil: DMatrix<f64>,
    pub atil: DMatrix<f64>,
    b_rows: RowMat,
    sigma_t_rows: RowMat,
}

impl AuxiliaryProcess {
    pub fn new(btil: DMatrix<f64>, betatil: DVector<f64>, sigmatil: DMatrix<f64>) -> Result<Self> {
        let nn = btil.nrows();
        if btil.ncols() != nn || betatil.len() != nn || sigmatil.nrows() != nn {
            return Err(Error::Dimension(format!(
                "auxiliary process: B {:?}, beta {}, sigma {:?}",
                btil.shape(),
                betatil.len(),
                sigmatil.shape()
            )));
        }
        let atil = &sigmatil * sigmatil.transpose();
        let b_rows = RowMat::from_dmatrix(&btil);
        let sigma_t_rows = RowMat::from_dmatrix(&sigmatil.transpose());
        Ok(AuxiliaryProcess { btil, betatil, sigmatil, atil, b_rows, sigma_t_rows })
    }

    pub fn state_dim(&self) -> usize {
        self.btil.nrows()
    }

    /// `B x + beta`.
    pub fn drift<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut out = self.b_rows.mul_vec(x);
        for (o, b) in out.iter_mut().zip(self.betatil.iter()) {
            if *b != 0.0 {
                *o += T::cst(*b);
            }
        }
        out
    }

    /// `r^T a~ r`.
    pub fn quad_atil<T: Scalar>(&self, r: &[T]) -> T {
        let s = self.sigma_t_rows.mul_vec(r);
        crate::scalar::dot(&s, &s)
    }
}

/// Builds the auxiliary process of `spec` with kernels frozen at the observed
/// final configuration `qt`.
pub fn auxiliary_for(spec: &ModelSpec, qt: &LandmarkConfig) -> Result<AuxiliaryProcess> {
    let (n, d) = (spec.n, spec.d);
    if qt.n() != n || qt.d() != d {
        return Err(Error::Dimension(format!(
            "observation has {} landmarks in dimension {}, model expects {n} in {d}",
            qt.n(),
            qt.d()
        )));
    }
    let qt = LandmarkConfig::with_scale(d, qt.as_slice().to_vec(), spec.kernel.a)?;
    let m = n * d;
    let nn = 2 * m;
    let k = geometry::pairwise_kernel(&spec.kernel, n, d, qt.as_slice());
    let mut btil = DMatrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            for a in 0..d {
                btil[(i * d + a, m + j * d + a)] = k[i * n + j];
                if spec.lambda != 0.0 {
                    btil[(m + i * d + a, m + j * d + a)] = -spec.lambda * k[i * n + j];
                }
            }
        }
    }
    let mut betatil = DVector::zeros(nn);
    let jj = spec.wiener_dim();
    let mut sigmatil = DMatrix::zeros(nn, jj);
    match &spec.fields {
        None => {
            let g = spec.landmark_gamma();
            for i in 0..m {
                sigmatil[(m + i, i)] = g;
            }
        }
        Some(grid) => {
            // Correction frozen at q = qT: the q-part is constant, the p-part
            // is linear in p and enters B.
            let mut xt = qt.as_slice().to_vec();
            xt.extend(std::iter::repeat(0.0).take(m));
            let coeffs = spec.coefficients(&xt);
            for l in 0..grid.field_count() {
                let (_, g) = grid.field(l);
                for i in 0..n {
                    let f = &coeffs.fields[l * n + i];
                    for a in 0..d {
                        betatil[i * d + a] += 0.5 * f.z * f.kb * g[a];
                        sigmatil[(i * d + a, l)] = f.kb * g[a];
                        let w = 0.5 * (f.z * f.grad[a] - f.kb * f.grad_z[a]);
                        for b in 0..d {
                            btil[(m + i * d + a, m + i * d + b)] += w * g[b];
                        }
                    }
                }
            }
        }
    }
    AuxiliaryProcess::new(btil, betatil, sigmatil)
}
