//! Guided proposals for conditioned landmark diffusions.
//!
//! The guiding term `r~ = grad log rho~` comes from a linear auxiliary
//! process whose transition density to the endpoint observation is Gaussian
//! with parameters `(L, M^dagger, mu)` obtained from backward ODEs.  The guided
//! process is simulated by Euler–Maruyama and the likelihood ratio
//! `log Psi = int G` is accumulated with the left-point rule.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::wiener::WienerPath;
use crate::linalg::{CholFactor, RowMat};
use crate::models::{AuxiliaryProcess, ModelSpec};
use crate::scalar::{self, Scalar};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Time knots `0 = t_0 < ... < t_K = T`, denser towards `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// Grid from explicit knots; must start at 0 and increase strictly.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("time knots must start at 0 and increase strictly".into()));
        }
        Ok(TimeGrid { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of intervals `K`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Length of interval `k`, `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.knots[k + 1] - self.knots[k]
    }
}

/// Uniform mesh `h` on `[0, T]` mapped through `s -> s (2 - s)` in units of `T`.
pub fn make_grid(t_end: f64, h: f64) -> Result<TimeGrid> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Config(format!("time horizon must be positive, got {t_end}")));
    }
    if !(h > 0.0) || h > t_end {
        return Err(Error::Config(format!("mesh width must lie in (0, T], got {h}")));
    }
    let k = ((t_end / h).round() as usize).max(1);
    let mut knots: Vec<f64> = (0..=k)
        .map(|i| {
            let s = i as f64 / k as f64;
            t_end * s * (2.0 - s)
        })
        .collect();
    knots[k] = t_end;
    TimeGrid::from_knots(knots)
}

/// Optional Gaussian observation of the initial state.
#[derive(Clone, Debug)]
pub struct InitialObservation {
    pub l0: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    pub v0: Vec<f64>,
}

/// Observation `v_T = L_T X_T + N(0, Sigma_T)` plus an optional time-0 observation.
#[derive(Clone, Debug)]
pub struct ObservationScheme {
    pub lt: DMatrix<f64>,
    pub sigma_t: DMatrix<f64>,
    pub v_t: Vec<f64>,
    pub initial: Option<InitialObservation>,
}

impl ObservationScheme {
    pub fn new(lt: DMatrix<f64>, sigma_t: DMatrix<f64>, v_t: Vec<f64>) -> Result<Self> {
        let m = lt.nrows();
        if sigma_t.shape() != (m, m) || v_t.len() != m {
            return Err(Error::Dimension(format!(
                "observation of dimension {m} with Sigma {:?} and v of length {}",
                sigma_t.shape(),
                v_t.len()
            )));
        }
        if CholFactor::new(&sigma_t).is_none() {
            return Err(Error::Config("observation covariance must be positive definite".into()));
        }
        Ok(ObservationScheme { lt, sigma_t, v_t, initial: None })
    }

    /// Observes all landmark positions at time `T` with noise `eps^2 I`.
    pub fn positions(n: usize, d: usize, v_t: Vec<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("observation noise eps must be positive, got {eps}")));
        }
        let m = n * d;
        let mut lt = DMatrix::zeros(m, 2 * m);
        for i in 0..m {
            lt[(i, i)] = 1.0;
        }
        Self::new(lt, DMatrix::identity(m, m) * (eps * eps), v_t)
    }

    /// Adds an observation of the initial positions with noise `sigma0^2 I`.
    pub fn with_initial_positions(mut self, v0: Vec<f64>, sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(Error::Config(format!("initial observation noise must be positive, got {sigma0}")));
        }
        let m = v0.len();
        let nn = self.lt.ncols();
        if 2 * m != nn {
            return Err(Error::Dimension("initial observation must cover all positions".into()));
        }
        let mut l0 = DMatrix::zeros(m, nn);
        for i in 0..m {
            l0[(i, i)] = 1.0;
        }
        self.initial = Some(InitialObservation { l0, sigma0: DMatrix::identity(m, m) * (sigma0 * sigma0), v0 });
        Ok(self)
    }

    pub fn obs_dim(&self) -> usize {
        self.lt.nrows()
    }
}

/// Backward-filter quantities at one time knot.
#[derive(Clone, Debug)]
pub struct Knot {
    pub l: RowMat,
    l_t: RowMat,
    pub mdag: DMatrix<f64>,
    pub chol: CholFactor,
    pub mu: Vec<f64>,
    pub v: Vec<f64>,
    /// `H~ = L^T M L`, present when the diffusion is state dependent.
    pub h_tilde: Option<RowMat>,
    /// `tr(a~ H~)`, zero unless `h_tilde` is present.
    pub tr_atil_h: f64,
}

impl Knot {
    fn new(l: DMatrix<f64>, mdag: DMatrix<f64>, mu: Vec<f64>, v: Vec<f64>, aux: &AuxiliaryProcess, hessian: bool) -> Result<Self> {
        let chol = CholFactor::new(&mdag)
            .ok_or_else(|| Error::NotPositiveDefinite("M-dagger of the backward filter".into()))?;
        let (h_tilde, tr_atil_h) = if hessian {
            let ml = chol_solve_matrix(&chol, &l);
            let h = l.transpose() * ml;
            let tr = (&aux.atil * &h).trace();
            (Some(RowMat::from_dmatrix(&h)), tr)
        } else {
            (None, 0.0)
        };
        Ok(Knot {
            l_t: RowMat::from_dmatrix(&l.transpose()),
            l: RowMat::from_dmatrix(&l),
            mdag,
            chol,
            mu,
            v,
            h_tilde,
            tr_atil_h,
        })
    }

    /// `v - mu - L x`
    fn residual<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let lx = self.l.mul_vec(x);
        lx.into_iter()
            .zip(self.v.iter().zip(&self.mu))
            .map(|(a, (v, mu))| -a + (v - mu))
            .collect()
    }

    /// `r~ = L^T M (v - mu - L x)`.
    pub fn r<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        self.l_t.mul_vec(&self.chol.solve(&self.residual(x)))
    }

    /// `log psi(v; mu + L x, M^dagger)`.
    pub fn log_rho<T: Scalar>(&self, x: &[T]) -> T {
        let y = self.chol.solve_lower(&self.residual(x));
        let m = y.len() as f64;
        scalar::dot(&y, &y) * (-0.5) + (-0.5 * m * LOG_2PI - 0.5 * self.chol.log_det)
    }
}

fn chol_solve_matrix(chol: &CholFactor, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for j in 0..b.ncols() {
        let col: Vec<f64> = b.column(j).iter().copied().collect();
        let s = chol.solve(&col);
        for i in 0..b.nrows() {
            out[(i, j)] = s[i];
        }
    }
    out
}

/// Solution of the backward ODEs on a time grid.
#[derive(Clone, Debug)]
pub struct GuidingTables {
    pub grid: TimeGrid,
    pub knots: Vec<Knot>,
    /// Time-zero knot including the initial observation, when configured.
    pub initial: Option<Knot>,
}

impl GuidingTables {
    pub fn knot(&self, k: usize) -> &Knot {
        &self.knots[k]
    }

    /// Knot used for `rho~(0, x_0)`: the augmented one when an initial observation exists.
    pub fn initial_knot(&self) -> &Knot {
        self.initial.as_ref().unwrap_or(&self.knots[0])
    }
}

fn singular_step() -> Error {
    Error::NotPositiveDefinite("implicit Euler step is singular".into())
}

/// Splits `B = [[0, A], [0, D]]` when the position columns of `B` vanish,
/// as they do for every landmark auxiliary process.  `D` is `None` when zero.
fn phase_blocks(b: &DMatrix<f64>) -> Option<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    let nn = b.nrows();
    if nn % 2 != 0 || b.ncols() != nn {
        return None;
    }
    let h = nn / 2;
    if b.columns(0, h).iter().any(|v| *v != 0.0) {
        return None;
    }
    let a = b.view((0, h), (h, h)).into_owned();
    let d = b.view((h, h), (h, h)).into_owned();
    let d = if d.iter().all(|v| *v == 0.0) { None } else { Some(d) };
    Some((a, d))
}

/// One implicit Euler step `L_k (I - dt B) = L_{k+1}` for `B = [[0, A], [0, D]]`:
/// the position columns carry over and the momentum columns solve
/// `L_p (I - dt D) = L_{k+1,p} + dt L_{k+1,q} A`.
fn implicit_euler_blocks(next: &DMatrix<f64>, a: &DMatrix<f64>, d: Option<&DMatrix<f64>>, dt: f64) -> Result<DMatrix<f64>> {
    let h = a.nrows();
    let lq = next.columns(0, h);
    let rhs = next.columns(h, h) + (lq * a) * dt;
    let lp = match d {
        None => rhs,
        Some(d) => {
            let m = (DMatrix::identity(h, h) - d * dt).transpose();
            m.lu().solve(&rhs.transpose()).ok_or_else(singular_step)?.transpose()
        }
    };
    let mut l = next.clone();
    l.columns_mut(h, h).copy_from(&lp);
    Ok(l)
}

/// Solves the backward ODEs for `(L, M^dagger, mu)`.
///
/// `L` uses implicit Euler, `M^dagger` and `mu` the trapezoid rule, all on
/// the simulation grid.  `hessian` requests `H~` at every knot (needed for
/// state-dependent diffusions).
pub fn solve_backward(aux: &AuxiliaryProcess, obs: &ObservationScheme, grid: &TimeGrid, hessian: bool) -> Result<GuidingTables> {
    let nn = aux.state_dim();
    if obs.lt.ncols() != nn {
        return Err(Error::Dimension(format!(
            "observation acts on dimension {}, process has {nn}",
            obs.lt.ncols()
        )));
    }
    let kk = grid.steps();
    let mut ls: Vec<DMatrix<f64>> = Vec::with_capacity(kk + 1);
    let mut mdags: Vec<DMatrix<f64>> = Vec::with_capacity(kk + 1);
    let mut mus: Vec<DVector<f64>> = Vec::with_capacity(kk + 1);
    let m = obs.obs_dim();
    ls.push(obs.lt.clone());
    mdags.push(obs.sigma_t.clone());
    mus.push(DVector::zeros(m));
    let btil_zero = aux.btil.iter().all(|v| *v == 0.0);
    let blocks = phase_blocks(&aux.btil);
    let beta_zero = aux.betatil.iter().all(|v| *v == 0.0);
    // L a~ L^T = (L sigma~)(L sigma~)^T avoids forming products with the dense a~
    let l_a_lt = |l: &DMatrix<f64>| {
        let ls = l * &aux.sigmatil;
        &ls * ls.transpose()
    };
    let mut prev_lal = l_a_lt(&obs.lt);
    let mut prev_lbeta = &obs.lt * &aux.betatil;
    for k in (0..kk).rev() {
        let dt = grid.dt(k);
        let next = ls.last().expect("terminal value");
        let l = if btil_zero {
            next.clone()
        } else if let Some((a_blk, d_blk)) = &blocks {
            implicit_euler_blocks(next, a_blk, d_blk.as_ref(), dt)?
        } else {
            // L_k (I - dt B) = L_{k+1}  <=>  (I - dt B)^T L_k^T = L_{k+1}^T
            let a = (DMatrix::identity(nn, nn) - &aux.btil * dt).transpose();
            let lu = a.lu();
            let sol = lu.solve(&next.transpose()).ok_or_else(singular_step)?;
            sol.transpose()
        };
        let lal = l_a_lt(&l);
        let mut mdag = mdags.last().expect("terminal value") + (&lal + &prev_lal) * (0.5 * dt);
        mdag = (&mdag + mdag.transpose()) * 0.5;
        let mu = if beta_zero {
            mus.last().expect("terminal value").clone()
        } else {
            let lbeta = &l * &aux.betatil;
            let mu = mus.last().expect("terminal value") + (&lbeta + &prev_lbeta) * (0.5 * dt);
            prev_lbeta = lbeta;
            mu
        };
        prev_lal = lal;
        ls.push(l);
        mdags.push(mdag);
        mus.push(mu);
    }
    ls.reverse();
    mdags.reverse();
    mus.reverse();

    let initial = match &obs.initial {
        None => None,
        Some(init) => {
            let m0 = init.l0.nrows();
            let mut l = DMatrix::zeros(m0 + m, nn);
            l.rows_mut(0, m0).copy_from(&init.l0);
            l.rows_mut(m0, m).copy_from(&ls[0]);
            let mut mdag = DMatrix::zeros(m0 + m, m0 + m);
            mdag.view_mut((0, 0), (m0, m0)).copy_from(&init.sigma0);
            mdag.view_mut((m0, m0), (m, m)).copy_from(&mdags[0]);
            let mut mu = vec![0.0; m0];
            mu.extend(mus[0].iter());
            let mut v = init.v0.clone();
            v.extend(&obs.v_t);
            Some(Knot::new(l, mdag, mu, v, aux, hessian)?)
        }
    };

    let knots = ls
        .into_iter()
        .zip(mdags)
        .zip(mus)
        .map(|((l, mdag), mu)| Knot::new(l, mdag, mu.iter().copied().collect(), obs.v_t.clone(), aux, hessian))
        .collect::<Result<Vec<_>>>()?;
    Ok(GuidingTables { grid: grid.clone(), knots, initial })
}

/// Guiding term `r~(t_k, x)`.
pub fn guiding_r(tables: &GuidingTables, k: usize, x: &[f64]) -> Vec<f64> {
    tables.knot(k).r(x)
}

/// `log rho~(t_k, x)`; at `k = 0` this includes the initial observation if any.
pub fn log_rho_tilde(tables: &GuidingTables, k: usize, x: &[f64]) -> f64 {
    if k == 0 {
        tables.initial_knot().log_rho(x)
    } else {
        tables.knot(k).log_rho(x)
    }
}

/// Integrand `G = (b - b~)^T r~ - 1/2 tr([a - a~][H~ - r~ r~^T])` at knot `k`.
pub fn g_integrand<T: Scalar>(spec: &ModelSpec, aux: &AuxiliaryProcess, knot: &Knot, x: &[T]) -> T {
    let coeffs = spec.coefficients(x);
    let r = knot.r(x);
    g_from_parts(&coeffs, aux, knot, x, &r, &coeffs.drift())
}

fn g_from_parts<T: Scalar>(
    coeffs: &crate::models::Coefficients<'_, T>,
    aux: &AuxiliaryProcess,
    knot: &Knot,
    x: &[T],
    r: &[T],
    b: &[T],
) -> T {
    let bt = aux.drift(x);
    let mut g = T::zero();
    for i in 0..b.len() {
        g += (b[i] - bt[i]) * r[i];
    }
    if let Some(h) = &knot.h_tilde {
        // tr([a - a~][H - r r^T]) = tr(aH) - |sigma^T r|^2 - tr(a~H) + r^T a~ r
        let t = coeffs.trace_against(h, r) - knot.tr_atil_h + aux.quad_atil(r);
        g -= t * 0.5;
    }
    g
}

/// Output of a guided simulation.
#[derive(Clone, Debug)]
pub struct GuidedPath {
    /// State dimension.
    pub dim: usize,
    /// Flattened states at every knot, `(K + 1) x dim`.
    pub states: Vec<f64>,
    /// `G` evaluated at knots `0..K`.
    pub g_values: Vec<f64>,
    pub log_psi: f64,
}

impl GuidedPath {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        let k = self.states.len() / self.dim - 1;
        self.state(k)
    }
}

/// Result of a generic guided run: `log Psi`, final state and (values of) the path.
pub struct GuidedRun<T> {
    pub log_psi: T,
    pub final_state: Vec<T>,
    pub path: GuidedPath,
}

/// Euler–Maruyama simulation of the guided process with `log Psi` accumulation.
///
/// Generic over the scalar type so that the map `(x0, W) -> log Psi` can be
/// differentiated.  The recorded path always holds plain values.
pub fn run_guided<T: Scalar>(
    spec: &ModelSpec,
    aux: &AuxiliaryProcess,
    tables: &GuidingTables,
    x0: &[T],
    w: &WienerPath,
) -> Result<GuidedRun<T>> {
    let nn = spec.state_dim();
    let kk = tables.grid.steps();
    if x0.len() != nn || aux.state_dim() != nn {
        return Err(Error::Dimension(format!("state of length {} for a model of dimension {nn}", x0.len())));
    }
    if w.steps() != kk || w.dim() != spec.wiener_dim() {
        return Err(Error::Dimension(format!(
            "Wiener path has {} steps of dimension {}, expected {kk} of dimension {}",
            w.steps(),
            w.dim(),
            spec.wiener_dim()
        )));
    }
    let mut x: Vec<T> = x0.to_vec();
    let mut states = Vec::with_capacity((kk + 1) * nn);
    states.extend(x.iter().map(|v| v.value()));
    let mut g_values = Vec::with_capacity(kk);
    let mut log_psi = T::zero();
    for k in 0..kk {
        let dt = tables.grid.dt(k);
        let knot = tables.knot(k);
        let coeffs = spec.coefficients(&x);
        let r = knot.r(&x);
        let b = coeffs.drift();
        let g = g_from_parts(&coeffs, aux, knot, &x, &r, &b);
        g_values.push(g.value());
        log_psi += g * dt;
        let ar = coeffs.a_times(&r);
        let noise = coeffs.sigma_times(w.increment(k));
        let next: Vec<T> = (0..nn).map(|i| x[i] + (b[i] + ar[i]) * dt + noise[i]).collect();
        if next.iter().any(|v| !v.value().is_finite()) || !log_psi.value().is_finite() {
            return Err(Error::NonFinite { step: k + 1 });
        }
        states.extend(next.iter().map(|v| v.value()));
        x = next;
    }
    Ok(GuidedRun {
        path: GuidedPath { dim: nn, states, g_values, log_psi: log_psi.value() },
        log_psi,
        final_state: x,
    })
}

/// Guided path `GP(x0, W)` in plain floating point.
pub fn simulate_guided(
    spec: &ModelSpec,
    aux: &AuxiliaryProcess,
    tables: &GuidingTables,
    x0: &[f64],
    w: &WienerPath,
) -> Result<GuidedPath> {
    Ok(run_guided(spec, aux, tables, x0, w)?.path)
}

/// The two tractable factors of the likelihood ratio: `(log Psi, log rho~(0, x0))`.
pub fn log_likelihood_ratio_terms(path: &GuidedPath, tables: &GuidingTables, x0: &[f64]) -> (f64, f64) {
    (path.log_psi, log_rho_tilde(tables, 0, x0))
}
