//! The four Metropolis–Hastings moves of the Gibbs samplers.
//!
//! * [`update_bridge_pcn`]: Crank–Nicolson update of the driving Wiener path.
//! * [`update_momenta_mala`]: Langevin update of the initial momenta.
//! * [`update_theta`]: log-normal random walk on the kernel scale `a`.
//! * [`update_template_rmmala`]: Langevin update of the template positions,
//!   preconditioned by the kernel Gram matrix.
//!
//! Numerical failures of a proposal (diverging path, singular matrices,
//! coincident landmarks) reject it; other errors propagate.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{gram_matrix, LandmarkConfig};
use crate::guiding::{run_guided, solve_backward, GuidedPath, GuidingTables, ObservationScheme, TimeGrid};
use crate::inference::priors::Priors;
use crate::inference::rng::Rng as StreamRng;
use crate::inference::wiener::WienerPath;
use crate::models::{auxiliary_for, AuxiliaryProcess, ModelSpec};
use crate::scalar::{lift, reverse_gradient, Objective, Scalar};

/// Auxiliary process and backward-filter tables for one observation.
#[derive(Clone, Debug)]
pub struct Guide {
    pub aux: AuxiliaryProcess,
    pub tables: GuidingTables,
}

/// Builds the guide of `obs` under `spec`, freezing kernels at the observed positions.
pub fn build_guide(spec: &ModelSpec, obs: &ObservationScheme, grid: &TimeGrid) -> Result<Guide> {
    let qt = LandmarkConfig::new(spec.d, obs.v_t.clone())?;
    let aux = auxiliary_for(spec, &qt)?;
    let tables = solve_backward(&aux, obs, grid, !spec.has_constant_diffusion())?;
    Ok(Guide { aux, tables })
}

/// Current Wiener path and guided path of one shape.
#[derive(Clone, Debug)]
pub struct Bridge {
    pub wiener: WienerPath,
    pub path: GuidedPath,
    /// Value and gradient of this shape's log target in the Langevin-move
    /// variable, valid for the current `(x0, W, theta)`.
    pub(crate) target_cache: Option<(f64, Vec<f64>)>,
}

impl Bridge {
    pub fn new(spec: &ModelSpec, guide: &Guide, x0: &[f64], wiener: WienerPath) -> Result<Self> {
        let path = run_guided(spec, &guide.aux, &guide.tables, x0, &wiener)?.path;
        Ok(Bridge { wiener, path, target_cache: None })
    }

    pub fn log_psi(&self) -> f64 {
        self.path.log_psi
    }
}

fn reject_numerical<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_numerical() => Ok(None),
        Err(e) => Err(e),
    }
}

fn accept(rng: &mut StreamRng, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        // still consume a uniform so the stream position does not depend on the ratio
        let _: f64 = rng.random();
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn normals(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

// ---------------------------------------------------------------------------
// Algorithm 1

/// Crank–Nicolson update of the Wiener path of one shape, conditional on `x0` and `theta`.
pub fn update_bridge_pcn(
    spec: &ModelSpec,
    guide: &Guide,
    x0: &[f64],
    bridge: &mut Bridge,
    eta: f64,
    rng: &mut StreamRng,
) -> Result<bool> {
    let fresh = WienerPath::sample(rng, &guide.tables.grid, spec.wiener_dim());
    let proposal = bridge.wiener.pcn(eta, &fresh);
    let Some(run) = reject_numerical(run_guided(spec, &guide.aux, &guide.tables, x0, &proposal))? else {
        let _: f64 = rng.random();
        return Ok(false);
    };
    let accepted = accept(rng, run.path.log_psi - bridge.path.log_psi);
    if accepted {
        bridge.wiener = proposal;
        bridge.path = run.path;
        bridge.target_cache = None;
    }
    Ok(accepted)
}

// ---------------------------------------------------------------------------
// Algorithm 2

/// `p0 -> log rho~(0, (q0, p0)) + log Psi(GP((q0, p0), W))`.
pub struct MomentumTarget<'a> {
    pub spec: &'a ModelSpec,
    pub guide: &'a Guide,
    pub q0: &'a [f64],
    pub wiener: &'a WienerPath,
}

impl Objective for MomentumTarget<'_> {
    type Extra = GuidedPath;
    fn eval<T: Scalar>(&self, p0: &[T]) -> Result<(T, GuidedPath)> {
        let mut x0: Vec<T> = lift(self.q0);
        x0.extend_from_slice(p0);
        let log_rho = self.guide.tables.initial_knot().log_rho(&x0);
        let run = run_guided(self.spec, &self.guide.aux, &self.guide.tables, &x0, self.wiener)?;
        Ok((log_rho + run.log_psi, run.path))
    }
}

/// Value and gradient of the momentum log target (prior excluded).
pub fn momentum_log_target(
    spec: &ModelSpec,
    guide: &Guide,
    q0: &[f64],
    p0: &[f64],
    wiener: &WienerPath,
) -> Result<(f64, Vec<f64>, GuidedPath)> {
    reverse_gradient(&MomentumTarget { spec, guide, q0, wiener }, p0)
}

/// Langevin update of the initial momenta, conditional on `q0`, `theta` and `W`.
#[allow(clippy::too_many_arguments)]
pub fn update_momenta_mala(
    spec: &ModelSpec,
    guide: &Guide,
    q0: &LandmarkConfig,
    p0: &mut Vec<f64>,
    bridge: &mut Bridge,
    priors: &Priors,
    delta: f64,
    rng: &mut StreamRng,
) -> Result<bool> {
    let m = p0.len();
    let z = normals(rng, m);
    let (cur_val, cur_grad) = match bridge.target_cache.take() {
        Some(c) => c,
        None => {
            let (v, g, _) = momentum_log_target(spec, guide, q0.as_slice(), p0, &bridge.wiener)?;
            (v, g)
        }
    };
    let sd = delta.sqrt();
    let prop: Vec<f64> = (0..m).map(|i| p0[i] + 0.5 * delta * cur_grad[i] + sd * z[i]).collect();
    let evaluated = reject_numerical(momentum_log_target(spec, guide, q0.as_slice(), &prop, &bridge.wiener))?;
    let Some((prop_val, prop_grad, prop_path)) = evaluated else {
        bridge.target_cache = Some((cur_val, cur_grad));
        let _: f64 = rng.random();
        return Ok(false);
    };
    let log_q_fwd: f64 = -z.iter().map(|v| v * v).sum::<f64>() * 0.5;
    let log_q_bwd: f64 = -(0..m)
        .map(|i| (p0[i] - prop[i] - 0.5 * delta * prop_grad[i]).powi(2))
        .sum::<f64>()
        / (2.0 * delta);
    let log_prior_cur = priors.log_momenta(&spec.kernel, q0, p0)?;
    let log_prior_prop = priors.log_momenta(&spec.kernel, q0, &prop)?;
    let log_ratio = prop_val - cur_val + log_prior_prop - log_prior_cur + log_q_bwd - log_q_fwd;
    let accepted = accept(rng, log_ratio);
    if accepted {
        *p0 = prop;
        bridge.path = prop_path;
        bridge.target_cache = Some((prop_val, prop_grad));
    } else {
        bridge.target_cache = Some((cur_val, cur_grad));
    }
    Ok(accepted)
}

// ---------------------------------------------------------------------------
// Algorithm 3

/// Log-normal random-walk update of the kernel scale `a`.
///
/// The likelihood sums `log Psi + log rho~(0, x0)` over all shapes;
/// `extra_log_prior` adds any prior term that depends on `a` (the momentum
/// prior in matching mode).  On acceptance `spec`, `guides` and `bridges`
/// are replaced.
#[allow(clippy::too_many_arguments)]
pub fn update_theta<F>(
    spec: &mut ModelSpec,
    grid: &TimeGrid,
    observations: &[ObservationScheme],
    guides: &mut Vec<Guide>,
    bridges: &mut [Bridge],
    x0: &[f64],
    priors: &Priors,
    sigma_theta: f64,
    extra_log_prior: F,
    rng: &mut StreamRng,
) -> Result<bool>
where
    F: Fn(&ModelSpec) -> Result<f64>,
{
    let z: f64 = rng.sample(StandardNormal);
    let a = spec.kernel.a;
    let a_prop = a * (sigma_theta * z).exp();
    let log_prior_prop = priors.log_kernel_scale(a_prop);
    if log_prior_prop == f64::NEG_INFINITY {
        let _: f64 = rng.random();
        return Ok(false);
    }
    let spec_prop = spec.with_kernel_scale(a_prop)?;
    let proposal: Result<Vec<(Guide, GuidedPath)>> = observations
        .par_iter()
        .zip(bridges.par_iter())
        .map(|(obs, bridge)| {
            let guide = build_guide(&spec_prop, obs, grid)?;
            let path = run_guided(&spec_prop, &guide.aux, &guide.tables, x0, &bridge.wiener)?.path;
            Ok((guide, path))
        })
        .collect();
    let extra_prop = proposal.and_then(|p| Ok((p, extra_log_prior(&spec_prop)?)));
    let Some((proposal, extra_prop)) = reject_numerical(extra_prop)? else {
        let _: f64 = rng.random();
        return Ok(false);
    };
    let cur: f64 = guides
        .iter()
        .zip(bridges.iter())
        .map(|(g, b)| b.path.log_psi + g.tables.initial_knot().log_rho(x0))
        .sum();
    let prop: f64 = proposal
        .iter()
        .map(|(g, p)| p.log_psi + g.tables.initial_knot().log_rho(x0))
        .sum();
    let log_ratio = prop - cur + log_prior_prop - priors.log_kernel_scale(a) + extra_prop - extra_log_prior(spec)?
        + (a_prop / a).ln();
    let accepted = accept(rng, log_ratio);
    if accepted {
        *spec = spec_prop;
        guides.clear();
        for ((g, p), b) in proposal.into_iter().zip(bridges.iter_mut()) {
            guides.push(g);
            b.path = p;
            b.target_cache = None;
        }
    }
    Ok(accepted)
}

// ---------------------------------------------------------------------------
// Algorithm 4

/// `q0 -> log rho~_i(0, (q0, 0)) + log Psi_i(GP((q0, 0), W_i))` for one shape.
pub struct TemplateShapeTarget<'a> {
    pub spec: &'a ModelSpec,
    pub guide: &'a Guide,
    pub wiener: &'a WienerPath,
}

impl Objective for TemplateShapeTarget<'_> {
    type Extra = GuidedPath;
    fn eval<T: Scalar>(&self, q0: &[T]) -> Result<(T, GuidedPath)> {
        let mut x0: Vec<T> = q0.to_vec();
        x0.extend(std::iter::repeat(T::zero()).take(q0.len()));
        let log_rho = self.guide.tables.initial_knot().log_rho(&x0);
        let run = run_guided(self.spec, &self.guide.aux, &self.guide.tables, &x0, self.wiener)?;
        Ok((log_rho + run.log_psi, run.path))
    }
}

/// Per-shape values, gradients and paths of the template log target (prior excluded).
pub fn template_log_target_terms(
    spec: &ModelSpec,
    guides: &[Guide],
    wieners: &[&WienerPath],
    q0: &[f64],
) -> Result<Vec<(f64, Vec<f64>, GuidedPath)>> {
    guides
        .par_iter()
        .zip(wieners.par_iter())
        .map(|(guide, w)| reverse_gradient(&TemplateShapeTarget { spec, guide, wiener: w }, q0))
        .collect()
}

/// Value and gradient of the template log target summed over shapes (prior excluded).
pub fn template_log_target(
    spec: &ModelSpec,
    guides: &[Guide],
    wieners: &[&WienerPath],
    q0: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let terms = template_log_target_terms(spec, guides, wieners, q0)?;
    Ok(sum_terms(terms.iter().map(|(v, g, _)| (*v, g.as_slice())), q0.len()))
}

fn sum_terms<'a>(terms: impl Iterator<Item = (f64, &'a [f64])>, m: usize) -> (f64, Vec<f64>) {
    let mut val = 0.0;
    let mut grad = vec![0.0; m];
    for (v, g) in terms {
        val += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (val, grad)
}

/// `log N(y; mean, delta K)` given the Cholesky factor of `K`.
fn log_gaussian_scaled(chol: &crate::linalg::CholFactor, delta: f64, y: &[f64], mean: &[f64]) -> f64 {
    let r: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
    let s = chol.solve_lower(&r);
    let m = y.len() as f64;
    -0.5 * m * delta.ln() - 0.5 * chol.log_det - 0.5 * s.iter().map(|v| v * v).sum::<f64>() / delta
}

/// Gram-preconditioned Langevin update of the template `q0` (momenta fixed at zero).
pub fn update_template_rmmala(
    spec: &ModelSpec,
    guides: &[Guide],
    bridges: &mut [Bridge],
    q0: &mut LandmarkConfig,
    priors: &Priors,
    delta: f64,
    rng: &mut StreamRng,
) -> Result<bool> {
    let m = q0.as_slice().len();
    let xi = normals(rng, m);
    // refresh stale per-shape caches
    let stale: Vec<usize> = (0..bridges.len()).filter(|&i| bridges[i].target_cache.is_none()).collect();
    if !stale.is_empty() {
        let sg: Vec<Guide> = stale.iter().map(|&i| guides[i].clone()).collect();
        let ws: Vec<&WienerPath> = stale.iter().map(|&i| &bridges[i].wiener).collect();
        let terms = template_log_target_terms(spec, &sg, &ws, q0.as_slice())?;
        for (&i, (v, g, _)) in stale.iter().zip(terms) {
            bridges[i].target_cache = Some((v, g));
        }
    }
    let (cur_val, cur_grad) = sum_terms(
        bridges.iter().map(|b| {
            let (v, g) = b.target_cache.as_ref().expect("cache filled above");
            (*v, g.as_slice())
        }),
        m,
    );
    let gram = gram_matrix(&spec.kernel, q0)?;
    let kg = &gram.matrix * nalgebra::DVector::from_column_slice(&cur_grad);
    let noise = gram.chol.mul_lower(&xi);
    let sd = delta.sqrt();
    let mean_fwd: Vec<f64> = (0..m).map(|i| q0.as_slice()[i] + 0.5 * delta * kg[i]).collect();
    let prop: Vec<f64> = (0..m).map(|i| mean_fwd[i] + sd * noise[i]).collect();

    let evaluated = (|| -> Result<_> {
        let q_prop = LandmarkConfig::with_scale(spec.d, prop.clone(), spec.kernel.a)?;
        let gram_prop = gram_matrix(&spec.kernel, &q_prop)?;
        let ws: Vec<&WienerPath> = bridges.iter().map(|b| &b.wiener).collect();
        let terms = template_log_target_terms(spec, guides, &ws, &prop)?;
        Ok((q_prop, gram_prop, terms))
    })();
    let Some((q_prop, gram_prop, terms)) = reject_numerical(evaluated)? else {
        let _: f64 = rng.random();
        return Ok(false);
    };
    let (prop_val, prop_grad) = sum_terms(terms.iter().map(|(v, g, _)| (*v, g.as_slice())), m);
    let kg_prop = &gram_prop.matrix * nalgebra::DVector::from_column_slice(&prop_grad);
    let mean_bwd: Vec<f64> = (0..m).map(|i| prop[i] + 0.5 * delta * kg_prop[i]).collect();
    let log_q_fwd = log_gaussian_scaled(&gram.chol, delta, &prop, &mean_fwd);
    let log_q_bwd = log_gaussian_scaled(&gram_prop.chol, delta, q0.as_slice(), &mean_bwd);
    let log_ratio = prop_val - cur_val + priors.log_positions(&prop) - priors.log_positions(q0.as_slice()) + log_q_bwd
        - log_q_fwd;
    let accepted = accept(rng, log_ratio);
    if accepted {
        *q0 = q_prop;
        for (b, (v, g, path)) in bridges.iter_mut().zip(terms) {
            b.path = path;
            b.target_cache = Some((v, g));
        }
    }
    Ok(accepted)
}
