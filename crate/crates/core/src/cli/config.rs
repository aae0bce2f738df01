//! Run configuration: a single JSON document with every default materialised.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::io::{read_shapes, Shape};
use crate::error::{Error, Result};
use crate::geometry::{KernelParams, LandmarkConfig};
use crate::inference::{ChainSettings, Priors, Tuning};
use crate::models::{ModelSpec, ModelVariant, NoiseFieldGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Match,
    Template,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Match => "match",
            Mode::Template => "template",
        }
    }
}

/// Where landmark configurations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSource {
    /// Shape file; `shape` selects one id where a single configuration is needed.
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shape: Option<u64>,
    },
    /// Explicit coordinates, landmark-major.
    Points { d: usize, values: Vec<f64> },
    /// `n` points `center + (rx cos phi_k, ry sin phi_k)`, `phi_k = phase + 2 pi k / n`.
    Ellipse {
        n: usize,
        rx: f64,
        ry: f64,
        #[serde(default = "origin2")]
        center: [f64; 2],
        #[serde(default)]
        phase: f64,
    },
    Circle {
        n: usize,
        r: f64,
        #[serde(default = "origin2")]
        center: [f64; 2],
    },
}

fn origin2() -> [f64; 2] {
    [0.0, 0.0]
}

impl ShapeSource {
    /// All shapes of the source (generators yield one shape with id 0).
    pub fn load_all(&self) -> Result<Vec<Shape>> {
        let single = |config| Ok(vec![Shape { id: 0, config }]);
        match self {
            ShapeSource::File { path, shape } => {
                let all = read_shapes(path)?;
                match shape {
                    None => Ok(all),
                    Some(id) => Ok(vec![select(all, *id, path)?]),
                }
            }
            ShapeSource::Points { d, values } => {
                if *d == 0 || values.is_empty() || values.len() % d != 0 {
                    return Err(Error::Config(format!("{} point coordinates do not fit dimension {d}", values.len())));
                }
                single(LandmarkConfig::new(*d, values.clone())?)
            }
            ShapeSource::Ellipse { n, rx, ry, center, phase } => single(ellipse(*n, *rx, *ry, *center, *phase)?),
            ShapeSource::Circle { n, r, center } => single(ellipse(*n, *r, *r, *center, 0.0)?),
        }
    }

    /// One configuration: the selected (or first) shape.
    pub fn load_one(&self) -> Result<LandmarkConfig> {
        Ok(self.load_all()?.remove(0).config)
    }

    fn absolutise(&mut self, base: &Path) -> Result<()> {
        if let ShapeSource::File { path, .. } = self {
            let joined = if path.is_absolute() { path.clone() } else { base.join(&*path) };
            *path = std::fs::canonicalize(&joined)
                .map_err(|e| Error::Config(format!("shape file {}: {e}", joined.display())))?;
        }
        Ok(())
    }
}

fn select(all: Vec<Shape>, id: u64, path: &Path) -> Result<Shape> {
    all.into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Config(format!("shape {id} not found in {}", path.display())))
}

/// Landmarks on an axis-aligned ellipse.
pub fn ellipse(n: usize, rx: f64, ry: f64, center: [f64; 2], phase: f64) -> Result<LandmarkConfig> {
    if n == 0 || !(rx > 0.0) || !(ry > 0.0) || !center.iter().chain([&phase]).all(|v| v.is_finite()) {
        return Err(Error::Config(format!("invalid ellipse: n={n}, rx={rx}, ry={ry}")));
    }
    let q = (0..n)
        .flat_map(|k| {
            let phi = phase + TAU * k as f64 / n as f64;
            [center[0] + rx * phi.cos(), center[1] + ry * phi.sin()]
        })
        .collect();
    LandmarkConfig::new(2, q)
}

/// How the template chain is initialised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TemplateInit {
    /// The first observed shape.
    First,
    /// The observed shape with this id.
    Shape { id: u64 },
    /// An observed shape rotated by `rotate` radians and stretched per axis
    /// about its centroid.
    Perturbed {
        #[serde(default)]
        id: Option<u64>,
        #[serde(default)]
        rotate: f64,
        #[serde(default = "unit_stretch")]
        stretch: Vec<f64>,
    },
    /// An explicit configuration.
    Source { source: ShapeSource },
}

fn unit_stretch() -> Vec<f64> {
    vec![1.0, 1.0]
}

impl Default for TemplateInit {
    fn default() -> Self {
        TemplateInit::First
    }
}

/// Rotates (2D only) and stretches `q` about its centroid.
pub fn perturb(q: &LandmarkConfig, rotate: f64, stretch: &[f64]) -> Result<LandmarkConfig> {
    let (n, d) = (q.n(), q.d());
    if stretch.len() < d {
        return Err(Error::Config(format!("stretch needs {d} factors, got {}", stretch.len())));
    }
    if rotate != 0.0 && d != 2 {
        return Err(Error::Config("rotation is only defined in two dimensions".into()));
    }
    let mut c = vec![0.0; d];
    for i in 0..n {
        for a in 0..d {
            c[a] += q.landmark(i)[a] / n as f64;
        }
    }
    let (s, co) = rotate.sin_cos();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let y: Vec<f64> = (0..d).map(|a| q.landmark(i)[a] - c[a]).collect();
        let r = if d == 2 { vec![co * y[0] - s * y[1], s * y[0] + co * y[1]] } else { y };
        out.extend((0..d).map(|a| c[a] + stretch[a] * r[a]));
    }
    LandmarkConfig::new(d, out)
}

/// Explicit bounds of an auto-generated noise-field grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn d_t_end() -> f64 {
    1.0
}
fn d_h() -> f64 {
    0.01
}
fn d_eps() -> f64 {
    0.01
}
fn d_one() -> f64 {
    1.0
}
fn d_tau() -> f64 {
    0.5
}
fn d_iterations() -> usize {
    1000
}
fn d_save_every() -> usize {
    10
}
fn d_trajectories() -> usize {
    1
}
fn d_variant() -> ModelVariant {
    ModelVariant::Lagrangian
}
fn d_eta() -> f64 {
    Tuning::default().eta
}
fn d_delta_mala() -> f64 {
    Tuning::default().delta_mala
}
fn d_delta_rmmala() -> f64 {
    Tuning::default().delta_rmmala
}
fn d_sigma_theta() -> f64 {
    Tuning::default().sigma_theta
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: Option<u64>,

    #[serde(default = "d_variant")]
    pub model: ModelVariant,
    /// Kernel length-scale: fixed or initial value in inference, true value in simulation.
    #[serde(default = "d_one")]
    pub a0: f64,
    /// Additive noise level (`gamma / sqrt(n)` per landmark) or Eulerian field amplitude.
    #[serde(default = "d_one")]
    pub gamma: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default)]
    pub noise_centers: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noise_bounds: Option<GridBounds>,

    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_h")]
    pub h: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub sigma0: Option<f64>,

    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_delta_mala")]
    pub delta_mala: f64,
    #[serde(default = "d_delta_rmmala")]
    pub delta_rmmala: f64,
    #[serde(default = "d_sigma_theta")]
    pub sigma_theta: f64,
    #[serde(default)]
    pub adapt: bool,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_save_every")]
    pub save_every: usize,
    #[serde(default)]
    pub fix_theta: bool,

    /// Initial configuration (simulate, match).
    #[serde(default)]
    pub initial: Option<ShapeSource>,
    /// Observed final configuration (match).
    #[serde(default)]
    pub target: Option<ShapeSource>,
    /// Observed shapes (template).
    #[serde(default)]
    pub shapes: Option<ShapeSource>,
    #[serde(default)]
    pub template_init: TemplateInit,

    /// Initial momenta for simulation (default zero).
    #[serde(default)]
    pub momenta: Option<Vec<f64>>,
    #[serde(default = "d_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub write_trajectories: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read configuration {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        cfg.absolutise(&base)?;
        Ok(cfg)
    }

    /// Makes every file path absolute, resolving relative ones against `base`.
    pub fn absolutise(&mut self, base: &Path) -> Result<()> {
        for src in [&mut self.initial, &mut self.target, &mut self.shapes].into_iter().flatten() {
            src.absolutise(base)?;
        }
        if let TemplateInit::Source { source } = &mut self.template_init {
            source.absolutise(base)?;
        }
        Ok(())
    }

    /// Checks the mode against the command, applies the seed override and
    /// fills in defaults that depend on the model.
    pub fn resolve(mut self, mode: Mode, seed: Option<u64>) -> Result<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::Config(format!(
                    "configuration is for mode '{}' but '{}' was requested",
                    m.name(),
                    mode.name()
                )));
            }
        }
        self.mode = Some(mode);
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if self.seed.is_none() {
            return Err(Error::Config("a seed is required (config field 'seed' or --seed)".into()));
        }
        match self.model {
            ModelVariant::Langevin => {
                self.lambda = Some(self.lambda.unwrap_or(crate::models::DEFAULT_LANGEVIN_LAMBDA));
            }
            _ => {
                if self.lambda.is_some_and(|l| l != 0.0) {
                    return Err(Error::Config("lambda is only used by the langevin model".into()));
                }
                self.lambda = None;
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("a0", self.a0), ("tau", self.tau), ("t_end", self.t_end), ("h", self.h), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if let Some(s) = self.sigma0 {
            if !(s > 0.0) {
                return Err(Error::Config(format!("sigma0 must be positive, got {s}")));
            }
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectories must be at least 1".into()));
        }
        self.settings().validate()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn tuning(&self) -> Tuning {
        Tuning {
            eta: self.eta,
            delta_mala: self.delta_mala,
            delta_rmmala: self.delta_rmmala,
            sigma_theta: self.sigma_theta,
            adapt: self.adapt,
        }
    }

    pub fn settings(&self) -> ChainSettings {
        ChainSettings {
            iterations: self.iterations,
            save_every: self.save_every,
            seed: self.seed(),
            fix_theta: self.fix_theta,
            tuning: self.tuning(),
            priors: self.priors,
        }
    }

    /// Builds the model for `n` landmarks in dimension `d`.  Eulerian noise
    /// centers not given explicitly are generated to cover `cover` and are
    /// written back into the configuration.
    pub fn build_model(&mut self, n: usize, d: usize, cover: &[&LandmarkConfig]) -> Result<ModelSpec> {
        let kernel = KernelParams::new(self.a0, 1.0)?;
        match self.model {
            ModelVariant::Lagrangian => ModelSpec::lagrangian(n, d, kernel, self.gamma),
            ModelVariant::Langevin => ModelSpec::langevin(n, d, kernel, self.gamma, self.lambda),
            ModelVariant::Eulerian => {
                let gamma = vec![self.gamma; d];
                let grid = match (&self.noise_centers, &self.noise_bounds) {
                    (Some(c), _) => {
                        if c.iter().any(|p| p.len() != d) {
                            return Err(Error::Config(format!("noise centers must have {d} coordinates")));
                        }
                        NoiseFieldGrid::new(d, c.concat(), self.tau, gamma)?
                    }
                    (None, Some(b)) => NoiseFieldGrid::regular(&b.lo, &b.hi, self.tau, gamma)?,
                    (None, None) => NoiseFieldGrid::covering(cover, self.tau, gamma)?,
                };
                self.noise_centers = Some(grid.centers().chunks(d).map(|c| c.to_vec()).collect());
                self.noise_bounds = None;
                ModelSpec::eulerian(n, d, kernel, grid)
            }
        }
    }
}
