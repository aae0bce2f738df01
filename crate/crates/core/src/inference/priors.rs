//! Prior distributions of the kernel scale, the initial momenta and the template.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gram_matrix, KernelParams, LandmarkConfig};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    /// Pareto density `s a^{-2}` on `[s_min, inf)`: the factor `s`.
    pub pareto_scale: f64,
    /// Lower end `s_min` of the support of the kernel-scale prior.
    pub pareto_min: f64,
    /// Initial momenta `p0 ~ N(0, kappa_mom K(q0)^{-1})`.
    pub kappa_mom: f64,
    /// Template coordinates `q0 ~ N(0, kappa_pos)` independently.
    pub kappa_pos: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { pareto_scale: 0.1, pareto_min: 0.1, kappa_mom: 100.0, kappa_pos: 100.0 }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pareto_scale", self.pareto_scale),
            ("pareto_min", self.pareto_min),
            ("kappa_mom", self.kappa_mom),
            ("kappa_pos", self.kappa_pos),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `log p(a)`, `-inf` outside the support.
    pub fn log_kernel_scale(&self, a: f64) -> f64 {
        if a >= self.pareto_min && a.is_finite() {
            self.pareto_scale.ln() - 2.0 * a.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// `log N(p0; 0, kappa_mom K(q0)^{-1})` with `K` built from `kernel`.
    pub fn log_momenta(&self, kernel: &KernelParams, q0: &LandmarkConfig, p0: &[f64]) -> Result<f64> {
        let g = gram_matrix(kernel, q0)?;
        let m = p0.len() as f64;
        let kp = &g.matrix * nalgebra::DVector::from_column_slice(p0);
        let quad: f64 = kp.iter().zip(p0).map(|(a, b)| a * b).sum();
        Ok(-0.5 * m * (LOG_2PI + self.kappa_mom.ln()) + 0.5 * g.chol.log_det - 0.5 * quad / self.kappa_mom)
    }

    /// `log N(q0; 0, kappa_pos I)`.
    pub fn log_positions(&self, q0: &[f64]) -> f64 {
        let m = q0.len() as f64;
        let sq: f64 = q0.iter().map(|v| v * v).sum();
        -0.5 * m * (LOG_2PI + self.kappa_pos.ln()) - 0.5 * sq / self.kappa_pos
    }
}
