//! Discretised Wiener paths on a time grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::guiding::TimeGrid;

/// Increments `dW_k ~ N(0, dt_k I)` for each grid interval, stored `K x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    dim: usize,
    increments: Vec<f64>,
}

impl WienerPath {
    pub fn from_increments(dim: usize, increments: Vec<f64>) -> Self {
        assert!(dim > 0 && increments.len() % dim == 0, "increments do not form whole steps");
        WienerPath { dim, increments }
    }

    /// Identically zero path with `steps` intervals.
    pub fn zeros(dim: usize, steps: usize) -> Self {
        WienerPath { dim, increments: vec![0.0; dim * steps] }
    }

    /// Draws independent increments from the Wiener measure on `grid`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, grid: &TimeGrid, dim: usize) -> Self {
        let mut increments = Vec::with_capacity(grid.steps() * dim);
        for k in 0..grid.steps() {
            let s = grid.dt(k).sqrt();
            for _ in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                increments.push(s * z);
            }
        }
        WienerPath { dim, increments }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Preconditioned Crank–Nicolson proposal `eta W + sqrt(1 - eta^2) Z`.
    pub fn pcn(&self, eta: f64, fresh: &WienerPath) -> WienerPath {
        assert_eq!(self.increments.len(), fresh.increments.len());
        let s = (1.0 - eta * eta).max(0.0).sqrt();
        WienerPath {
            dim: self.dim,
            increments: self.increments.iter().zip(&fresh.increments).map(|(w, z)| eta * w + s * z).collect(),
        }
    }
}

/// Samples a Wiener path on `grid` with `dim` components.
pub fn sample_wiener<R: Rng + ?Sized>(rng: &mut R, grid: &TimeGrid, dim: usize) -> WienerPath {
    WienerPath::sample(rng, grid, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guiding::make_grid;
    use crate::inference::rng::{stream, Purpose};

    #[test]
    fn reproducible_and_correctly_scaled() {
        let grid = make_grid(1.0, 0.1).unwrap();
        let a = sample_wiener(&mut stream(3, Purpose::Test, 0, 0), &grid, 2);
        let b = sample_wiener(&mut stream(3, Purpose::Test, 0, 0), &grid, 2);
        assert_eq!(a, b);
        assert_eq!(a.steps(), 10);

        let mut rng = stream(4, Purpose::Test, 0, 0);
        let reps = 100_000;
        let (mut s2, mut tot2) = (0.0, 0.0);
        for _ in 0..reps {
            let w = sample_wiener(&mut rng, &grid, 1);
            let z = w.increment(3)[0] / grid.dt(3).sqrt();
            s2 += z * z;
            let total: f64 = w.increments().iter().sum();
            tot2 += total * total;
        }
        let var = s2 / reps as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
        let tv = tot2 / reps as f64;
        assert!((tv - 1.0).abs() < 3.0 * (2.0f64 / reps as f64).sqrt(), "{tv}");
    }

    #[test]
    fn pcn_endpoints() {
        let grid = make_grid(1.0, 0.25).unwrap();
        let w = sample_wiener(&mut stream(5, Purpose::Test, 0, 0), &grid, 3);
        let z = sample_wiener(&mut stream(5, Purpose::Test, 1, 0), &grid, 3);
        assert_eq!(w.pcn(1.0, &z), w);
        assert_eq!(w.pcn(0.0, &z), z);
    }
}
