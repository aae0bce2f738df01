//! Command-line drivers: forward simulation, landmark matching and template estimation.
//!
//! Every run writes `run_meta.json`, the fully resolved configuration, which
//! reproduces the run exactly when passed back as `--config`.

pub mod config;
pub mod io;

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::LandmarkConfig;
use crate::guiding::{make_grid, ObservationScheme, TimeGrid};
use crate::inference::rng::{stream, Purpose};
use crate::inference::{run_matching, run_template, AcceptanceStats, ThetaRecord, WienerPath};
use crate::models::ModelSpec;

pub use config::{Mode, RunConfig, ShapeSource, TemplateInit};
use io::{fmt, write_shapes, Shape, Table};

pub const RUN_META: &str = "run_meta.json";

/// Euler–Maruyama on the Itô form of the model; returns all states, `(K + 1) x 2nd`.
pub fn simulate_path(spec: &ModelSpec, x0: &[f64], grid: &TimeGrid, w: &WienerPath) -> Result<Vec<f64>> {
    let nn = spec.state_dim();
    if x0.len() != nn || w.dim() != spec.wiener_dim() || w.steps() != grid.steps() {
        return Err(Error::Dimension("initial state or Wiener path does not fit the model".into()));
    }
    let mut states = Vec::with_capacity((grid.steps() + 1) * nn);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for k in 0..grid.steps() {
        let dt = grid.dt(k);
        let c = spec.coefficients(&x);
        let b = c.drift();
        let noise = c.sigma_times(w.increment(k));
        let next: Vec<f64> = (0..nn).map(|i| x[i] + b[i] * dt + noise[i]).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        states.extend_from_slice(&next);
        x = next;
    }
    Ok(states)
}

/// Uniform grid with mesh close to `h` on `[0, T]`.
pub fn uniform_grid(t_end: f64, h: f64) -> Result<TimeGrid> {
    if !(h > 0.0) || h > t_end {
        return Err(Error::Config(format!("mesh width must lie in (0, T], got {h}")));
    }
    let k = ((t_end / h).round() as usize).max(1);
    let mut knots: Vec<f64> = (0..=k).map(|i| t_end * i as f64 / k as f64).collect();
    knots[k] = t_end;
    TimeGrid::from_knots(knots)
}

fn write_meta(out: &Path, cfg: &RunConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg)?;
    std::fs::write(out.join(RUN_META), text + "\n")?;
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_theta(out: &Path, theta: &[ThetaRecord]) -> Result<()> {
    let mut t = Table::create(&out.join("theta.csv"), &["iter", "a", "logPsi"])?;
    for r in theta {
        t.row(&[r.iter.to_string(), fmt(r.a), fmt(r.log_psi)])?;
    }
    t.finish()
}

fn write_acceptance(out: &Path, stats: &[AcceptanceStats]) -> Result<()> {
    let mut t = Table::create(&out.join("acceptance.csv"), &["move", "proposed", "accepted", "rate"])?;
    for s in stats {
        t.row(&[s.name.to_string(), s.proposed.to_string(), s.accepted.to_string(), fmt(s.rate())])?;
    }
    t.finish()
}

/// Simulates trajectories from the initial configuration and writes the
/// noisy final positions as a shape file (`shapes.csv`), the initial
/// configuration (`initial.csv`) and optionally full trajectories.
pub fn simulate_forward(mut cfg: RunConfig, out: &Path) -> Result<Vec<Shape>> {
    let q0 = cfg
        .initial
        .as_ref()
        .ok_or_else(|| Error::Config("simulation needs an 'initial' configuration".into()))?
        .load_one()?;
    let (n, d) = (q0.n(), q0.d());
    let p0 = cfg.momenta.clone().unwrap_or_else(|| vec![0.0; n * d]);
    if p0.len() != n * d {
        return Err(Error::Config(format!("momenta must have {} entries, got {}", n * d, p0.len())));
    }
    let spec = cfg.build_model(n, d, &[&q0])?;
    let grid = uniform_grid(cfg.t_end, cfg.h)?;
    let seed = cfg.seed();
    let mut x0 = q0.as_slice().to_vec();
    x0.extend_from_slice(&p0);
    prepare_out(out)?;
    let mut shapes = Vec::with_capacity(cfg.trajectories);
    let mut traj = if cfg.write_trajectories {
        Some(Table::create(&out.join("trajectories.csv"), &["trajectory", "time", "landmark", "coord", "q", "p"])?)
    } else {
        None
    };
    let m = n * d;
    for i in 0..cfg.trajectories as u64 {
        let w = WienerPath::sample(&mut stream(seed, Purpose::Simulate, i, 0), &grid, spec.wiener_dim());
        let states = simulate_path(&spec, &x0, &grid, &w)?;
        let last = &states[states.len() - 2 * m..];
        let mut rng = stream(seed, Purpose::ObservationNoise, i, 0);
        let v: Vec<f64> = last[..m]
            .iter()
            .map(|q| {
                let z: f64 = rng.sample(StandardNormal);
                q + cfg.eps * z
            })
            .collect();
        shapes.push(Shape { id: i, config: LandmarkConfig::new(d, v)? });
        if let Some(t) = traj.as_mut() {
            for (k, time) in grid.knots().iter().enumerate() {
                let s = &states[k * 2 * m..(k + 1) * 2 * m];
                for j in 0..m {
                    t.row(&[i.to_string(), fmt(*time), (j / d).to_string(), (j % d).to_string(), fmt(s[j]), fmt(s[m + j])])?;
                }
            }
        }
    }
    if let Some(t) = traj {
        t.finish()?;
    }
    write_shapes(&out.join("shapes.csv"), &shapes)?;
    write_shapes(&out.join("initial.csv"), &[Shape { id: 0, config: q0 }])?;
    if cfg.momenta.is_none() {
        cfg.momenta = Some(p0);
    }
    write_meta(out, &cfg)?;
    Ok(shapes)
}

/// Runs the matching sampler and writes bridges, momenta, theta and acceptance traces.
pub fn run_match_cli(mut cfg: RunConfig, out: &Path) -> Result<()> {
    let v0 = cfg
        .initial
        .as_ref()
        .ok_or_else(|| Error::Config("matching needs an 'initial' configuration".into()))?
        .load_one()?;
    let vt = cfg
        .target
        .as_ref()
        .ok_or_else(|| Error::Config("matching needs a 'target' configuration".into()))?
        .load_one()?;
    if v0.n() != vt.n() || v0.d() != vt.d() {
        return Err(Error::Dimension(format!(
            "initial configuration has {} landmarks in dimension {}, target has {} in {}",
            v0.n(),
            v0.d(),
            vt.n(),
            vt.d()
        )));
    }
    let (n, d) = (v0.n(), v0.d());
    let spec = cfg.build_model(n, d, &[&v0, &vt])?;
    let grid = make_grid(cfg.t_end, cfg.h)?;
    let mut obs = ObservationScheme::positions(n, d, vt.as_slice().to_vec(), cfg.eps)?;
    if let Some(s0) = cfg.sigma0 {
        obs = obs.with_initial_positions(v0.as_slice().to_vec(), s0)?;
    }
    let v0 = LandmarkConfig::with_scale(d, v0.into_vec(), cfg.a0)?;
    let result = run_matching(&spec, &grid, &obs, &v0, &cfg.settings())?;

    prepare_out(out)?;
    let m = n * d;
    let mut bridges = Table::create(&out.join("bridges.csv"), &["iter", "time", "landmark", "coord", "value"])?;
    let mut momenta = Table::create(&out.join("momenta.csv"), &["iter", "landmark", "coord", "time", "value"])?;
    let kk = grid.steps();
    for s in &result.saved {
        let it = s.iter.to_string();
        for (k, t) in grid.knots().iter().enumerate() {
            let st = s.path.state(k);
            for j in 0..m {
                bridges.row(&[it.clone(), fmt(*t), (j / d).to_string(), (j % d).to_string(), fmt(st[j])])?;
            }
        }
        for (k, t) in [(0, 0.0), (kk, cfg.t_end)] {
            let st = s.path.state(k);
            for j in 0..m {
                momenta.row(&[it.clone(), (j / d).to_string(), (j % d).to_string(), fmt(t), fmt(st[m + j])])?;
            }
        }
    }
    bridges.finish()?;
    momenta.finish()?;
    write_theta(out, &result.theta)?;
    write_acceptance(out, &result.acceptance)?;
    write_meta(out, &cfg)
}

/// Runs the template sampler and writes template, theta and acceptance traces.
pub fn run_template_cli(mut cfg: RunConfig, out: &Path) -> Result<()> {
    let shapes = cfg
        .shapes
        .as_ref()
        .ok_or_else(|| Error::Config("template estimation needs 'shapes'".into()))?
        .load_all()?;
    let first = &shapes[0].config;
    let (n, d) = (first.n(), first.d());
    if let Some(bad) = shapes.iter().find(|s| s.config.n() != n || s.config.d() != d) {
        return Err(Error::Dimension(format!(
            "shape {} has {} landmarks in dimension {}, expected {n} in {d}",
            bad.id,
            bad.config.n(),
            bad.config.d()
        )));
    }
    let pick = |id: u64| -> Result<LandmarkConfig> {
        shapes
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.config.clone())
            .ok_or_else(|| Error::Config(format!("template initialisation refers to missing shape {id}")))
    };
    let q0 = match &cfg.template_init {
        TemplateInit::First => first.clone(),
        TemplateInit::Shape { id } => pick(*id)?,
        TemplateInit::Perturbed { id, rotate, stretch } => {
            let base = match id {
                Some(id) => pick(*id)?,
                None => first.clone(),
            };
            config::perturb(&base, *rotate, stretch)?
        }
        TemplateInit::Source { source } => source.load_one()?,
    };
    let cover: Vec<&LandmarkConfig> = shapes.iter().map(|s| &s.config).chain([&q0]).collect();
    let spec = cfg.build_model(n, d, &cover)?;
    let grid = make_grid(cfg.t_end, cfg.h)?;
    let observations = shapes
        .iter()
        .map(|s| ObservationScheme::positions(n, d, s.config.as_slice().to_vec(), cfg.eps))
        .collect::<Result<Vec<_>>>()?;
    let q0 = LandmarkConfig::with_scale(d, q0.into_vec(), cfg.a0)?;
    let result = run_template(&spec, &grid, &observations, &q0, &cfg.settings())?;

    prepare_out(out)?;
    let mut t = Table::create(&out.join("template.csv"), &["iter", "landmark", "coord", "value"])?;
    for (iter, q) in &result.templates {
        for (j, v) in q.iter().enumerate() {
            t.row(&[iter.to_string(), (j / d).to_string(), (j % d).to_string(), fmt(*v)])?;
        }
    }
    t.finish()?;
    write_theta(out, &result.theta)?;
    write_acceptance(out, &result.acceptance)?;
    write_meta(out, &cfg)
}

/// Loads the configuration at `config`, resolves it for `mode` and runs it.
pub fn run(mode: Mode, config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?.resolve(mode, seed)?;
    let out: PathBuf = out.to_path_buf();
    match mode {
        Mode::Simulate => simulate_forward(cfg, &out).map(|_| ()),
        Mode::Match => run_match_cli(cfg, &out),
        Mode::Template => run_template_cli(cfg, &out),
    }
}
