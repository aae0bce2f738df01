//! Gibbs samplers for landmark matching and template estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LandmarkConfig;
use crate::guiding::{GuidedPath, ObservationScheme, TimeGrid};
use crate::inference::moves::{
    build_guide, update_bridge_pcn, update_momenta_mala, update_template_rmmala, update_theta, Bridge, Guide,
};
use crate::inference::priors::Priors;
use crate::inference::rng::{stream, Purpose};
use crate::inference::wiener::WienerPath;
use crate::models::ModelSpec;

/// Step sizes of the moves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tuning {
    /// Crank–Nicolson memory `eta` in `[0, 1]`.
    pub eta: f64,
    pub delta_mala: f64,
    pub delta_rmmala: f64,
    pub sigma_theta: f64,
    /// Adapt the step sizes towards 50% acceptance during the first 20% of
    /// the iterations, then freeze them.
    pub adapt: bool,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning { eta: 0.9, delta_mala: 0.01, delta_rmmala: 0.001, sigma_theta: 0.1, adapt: false }
    }
}

impl Tuning {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        for (name, v) in [
            ("delta_mala", self.delta_mala),
            ("delta_rmmala", self.delta_rmmala),
            ("sigma_theta", self.sigma_theta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSettings {
    pub iterations: usize,
    pub save_every: usize,
    pub seed: u64,
    pub fix_theta: bool,
    pub tuning: Tuning,
    pub priors: Priors,
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.save_every == 0 {
            return Err(Error::Config("iterations and save_every must be at least 1".into()));
        }
        self.tuning.validate()?;
        self.priors.validate()
    }
}

/// Proposal and acceptance counts of one move type.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcceptanceStats {
    pub name: &'static str,
    pub proposed: u64,
    pub accepted: u64,
}

impl AcceptanceStats {
    fn new(name: &'static str) -> Self {
        AcceptanceStats { name, proposed: 0, accepted: 0 }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Kernel scale and total `log Psi` after one sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaRecord {
    pub iter: usize,
    pub a: f64,
    pub log_psi: f64,
}

#[derive(Clone, Debug)]
pub struct SavedBridge {
    pub iter: usize,
    pub p0: Vec<f64>,
    pub path: GuidedPath,
}

#[derive(Clone, Debug)]
pub struct MatchingOutput {
    pub saved: Vec<SavedBridge>,
    pub theta: Vec<ThetaRecord>,
    pub acceptance: Vec<AcceptanceStats>,
    pub final_tuning: Tuning,
}

#[derive(Clone, Debug)]
pub struct TemplateOutput {
    /// `(iteration, template positions)` for saved sweeps, starting with the initial value.
    pub templates: Vec<(usize, Vec<f64>)>,
    pub theta: Vec<ThetaRecord>,
    pub acceptance: Vec<AcceptanceStats>,
    pub final_tuning: Tuning,
}

const ADAPT_BATCH: usize = 50;
const ADAPT_TARGET: f64 = 0.5;

/// Batch-wise Robbins–Monro adaptation of the step sizes on a log scale.
struct Adapter {
    end: usize,
    batch: Vec<(u64, u64)>,
    rounds: usize,
}

impl Adapter {
    fn new(settings: &ChainSettings, moves: usize) -> Self {
        let end = if settings.tuning.adapt { settings.iterations / 5 } else { 0 };
        Adapter { end, batch: vec![(0, 0); moves], rounds: 0 }
    }

    fn record(&mut self, slot: usize, proposed: u64, accepted: u64) {
        self.batch[slot].0 += proposed;
        self.batch[slot].1 += accepted;
    }

    /// After sweep `iter`, returns per-slot log-scale adjustments when a batch completes.
    fn step(&mut self, iter: usize) -> Option<Vec<f64>> {
        if iter > self.end || iter % ADAPT_BATCH != 0 {
            return None;
        }
        self.rounds += 1;
        let gain = (1.0 / (self.rounds as f64).sqrt()).min(0.5);
        let adj = self
            .batch
            .iter()
            .map(|&(p, a)| if p == 0 { 0.0 } else { gain * (a as f64 / p as f64 - ADAPT_TARGET) })
            .collect();
        self.batch.iter_mut().for_each(|b| *b = (0, 0));
        Some(adj)
    }
}

/// Larger `adj` means bigger moves: `eta` shrinks, the step sizes grow.
fn adapt_eta(eta: f64, adj: f64) -> f64 {
    let rho = (1.0 - eta * eta).max(1e-12).sqrt();
    let rho = (rho * adj.exp()).min(1.0);
    (1.0 - rho * rho).max(0.0).sqrt()
}

fn check_observation(spec: &ModelSpec, obs: &ObservationScheme) -> Result<()> {
    if obs.v_t.len() != spec.n * spec.d || obs.lt.ncols() != spec.state_dim() {
        return Err(Error::Dimension(format!(
            "observation of length {} does not fit {} landmarks in dimension {}",
            obs.v_t.len(),
            spec.n,
            spec.d
        )));
    }
    Ok(())
}

/// Samples `(W, p0, a)` given the initial positions `q0` and the observation at `T`.
///
/// Each sweep runs the bridge update, the momentum update and, unless the
/// kernel scale is fixed, the kernel-scale update.
pub fn run_matching(
    spec: &ModelSpec,
    grid: &TimeGrid,
    obs: &ObservationScheme,
    q0: &LandmarkConfig,
    settings: &ChainSettings,
) -> Result<MatchingOutput> {
    settings.validate()?;
    check_observation(spec, obs)?;
    if q0.n() != spec.n || q0.d() != spec.d {
        return Err(Error::Dimension("initial and final configurations differ in size".into()));
    }
    let mut spec = spec.clone();
    let mut tuning = settings.tuning;
    let seed = settings.seed;
    let m = spec.n * spec.d;
    let mut p0 = vec![0.0; m];
    let x0 = |p0: &[f64]| -> Vec<f64> {
        let mut x = q0.as_slice().to_vec();
        x.extend_from_slice(p0);
        x
    };
    let mut guides = vec![build_guide(&spec, obs, grid)?];
    let w = WienerPath::sample(&mut stream(seed, Purpose::InitialWiener, 0, 0), grid, spec.wiener_dim());
    let mut bridges = vec![Bridge::new(&spec, &guides[0], &x0(&p0), w)?];
    let observations = std::slice::from_ref(obs);

    let mut stats = vec![
        AcceptanceStats::new("bridge_pcn"),
        AcceptanceStats::new("momenta_mala"),
        AcceptanceStats::new("theta"),
    ];
    let mut adapter = Adapter::new(settings, 3);
    let mut saved = vec![SavedBridge { iter: 0, p0: p0.clone(), path: bridges[0].path.clone() }];
    let mut theta = Vec::with_capacity(settings.iterations + 1);
    theta.push(ThetaRecord { iter: 0, a: spec.kernel.a, log_psi: bridges[0].log_psi() });

    for s in 1..=settings.iterations as u64 {
        let iter = s as usize;
        let acc = update_bridge_pcn(
            &spec,
            &guides[0],
            &x0(&p0),
            &mut bridges[0],
            tuning.eta,
            &mut stream(seed, Purpose::Bridge, 0, s),
        )?;
        stats[0].record(acc);
        adapter.record(0, 1, acc as u64);

        let acc = update_momenta_mala(
            &spec,
            &guides[0],
            q0,
            &mut p0,
            &mut bridges[0],
            &settings.priors,
            tuning.delta_mala,
            &mut stream(seed, Purpose::Momenta, 0, s),
        )?;
        stats[1].record(acc);
        adapter.record(1, 1, acc as u64);

        if !settings.fix_theta {
            let priors = settings.priors;
            let p_cur = p0.clone();
            let acc = update_theta(
                &mut spec,
                grid,
                observations,
                &mut guides,
                &mut bridges,
                &x0(&p0),
                &settings.priors,
                tuning.sigma_theta,
                |sp: &ModelSpec| priors.log_momenta(&sp.kernel, q0, &p_cur),
                &mut stream(seed, Purpose::Theta, 0, s),
            )?;
            stats[2].record(acc);
            adapter.record(2, 1, acc as u64);
        }

        if let Some(adj) = adapter.step(iter) {
            tuning.eta = adapt_eta(tuning.eta, adj[0]);
            tuning.delta_mala *= (2.0 * adj[1]).exp();
            tuning.sigma_theta *= adj[2].exp();
        }

        theta.push(ThetaRecord { iter, a: spec.kernel.a, log_psi: bridges[0].log_psi() });
        if iter % settings.save_every == 0 {
            saved.push(SavedBridge { iter, p0: p0.clone(), path: bridges[0].path.clone() });
        }
    }
    Ok(MatchingOutput { saved, theta, acceptance: stats, final_tuning: tuning })
}

/// Samples `(W_1..W_I, a, q0)` given `I` observed shapes, with zero initial momenta.
///
/// Each sweep updates every shape's bridge (in parallel, each with its own
/// random stream), then the kernel scale unless fixed, then the template.
pub fn run_template(
    spec: &ModelSpec,
    grid: &TimeGrid,
    observations: &[ObservationScheme],
    q0_init: &LandmarkConfig,
    settings: &ChainSettings,
) -> Result<TemplateOutput> {
    settings.validate()?;
    if observations.is_empty() {
        return Err(Error::Config("template estimation needs at least one shape".into()));
    }
    for obs in observations {
        check_observation(spec, obs)?;
    }
    if q0_init.n() != spec.n || q0_init.d() != spec.d {
        return Err(Error::Dimension("template initialisation differs in size from the shapes".into()));
    }
    let mut spec = spec.clone();
    let mut tuning = settings.tuning;
    let seed = settings.seed;
    let m = spec.n * spec.d;
    let mut q0 = q0_init.clone();
    let x0 = |q: &LandmarkConfig| -> Vec<f64> {
        let mut x = q.as_slice().to_vec();
        x.extend(std::iter::repeat(0.0).take(m));
        x
    };
    let mut guides: Vec<Guide> = observations
        .par_iter()
        .map(|obs| build_guide(&spec, obs, grid))
        .collect::<Result<_>>()?;
    let start = x0(&q0);
    let mut bridges: Vec<Bridge> = guides
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let w = WienerPath::sample(&mut stream(seed, Purpose::InitialWiener, i as u64, 0), grid, spec.wiener_dim());
            Bridge::new(&spec, g, &start, w)
        })
        .collect::<Result<_>>()?;

    let mut stats = vec![
        AcceptanceStats::new("bridge_pcn"),
        AcceptanceStats::new("theta"),
        AcceptanceStats::new("template_rmmala"),
    ];
    let mut adapter = Adapter::new(settings, 3);
    let total_psi = |b: &[Bridge]| b.iter().map(|b| b.log_psi()).sum::<f64>();
    let mut templates = vec![(0, q0.as_slice().to_vec())];
    let mut theta = Vec::with_capacity(settings.iterations + 1);
    theta.push(ThetaRecord { iter: 0, a: spec.kernel.a, log_psi: total_psi(&bridges) });

    for s in 1..=settings.iterations as u64 {
        let iter = s as usize;
        let x = x0(&q0);
        let eta = tuning.eta;
        let results: Vec<bool> = bridges
            .par_iter_mut()
            .zip(guides.par_iter())
            .enumerate()
            .map(|(i, (b, g))| update_bridge_pcn(&spec, g, &x, b, eta, &mut stream(seed, Purpose::Bridge, i as u64, s)))
            .collect::<Result<_>>()?;
        let n_acc = results.iter().filter(|a| **a).count() as u64;
        stats[0].proposed += results.len() as u64;
        stats[0].accepted += n_acc;
        adapter.record(0, results.len() as u64, n_acc);

        if !settings.fix_theta {
            let acc = update_theta(
                &mut spec,
                grid,
                observations,
                &mut guides,
                &mut bridges,
                &x,
                &settings.priors,
                tuning.sigma_theta,
                |_: &ModelSpec| Ok(0.0),
                &mut stream(seed, Purpose::Theta, 0, s),
            )?;
            stats[1].record(acc);
            adapter.record(1, 1, acc as u64);
        }

        let acc = update_template_rmmala(
            &spec,
            &guides,
            &mut bridges,
            &mut q0,
            &settings.priors,
            tuning.delta_rmmala,
            &mut stream(seed, Purpose::Template, 0, s),
        )?;
        stats[2].record(acc);
        adapter.record(2, 1, acc as u64);

        if let Some(adj) = adapter.step(iter) {
            tuning.eta = adapt_eta(tuning.eta, adj[0]);
            tuning.sigma_theta *= adj[1].exp();
            tuning.delta_rmmala *= (2.0 * adj[2]).exp();
        }

        theta.push(ThetaRecord { iter, a: spec.kernel.a, log_psi: total_psi(&bridges) });
        if iter % settings.save_every == 0 {
            templates.push((iter, q0.as_slice().to_vec()));
        }
    }
    Ok(TemplateOutput { templates, theta, acceptance: stats, final_tuning: tuning })
}
