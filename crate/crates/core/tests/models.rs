//! Properties of the landmark models and their auxiliary processes.

use nalgebra::DVector;
use proptest::prelude::*;

use bridgemark::geometry::{KernelParams, LandmarkConfig, PhaseState};
use bridgemark::models::{auxiliary_for, ModelSpec, NoiseFieldGrid};

fn config(d: usize, q: Vec<f64>) -> LandmarkConfig {
    LandmarkConfig::new(d, q).unwrap()
}

/// Landmarks spread on a line (d = 1) or a circle (d = 2), perturbed by `jitter`.
fn spread(n: usize, d: usize, jitter: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let phi = std::f64::consts::TAU * i as f64 / n as f64;
        let base = if d == 1 { vec![0.6 * i as f64] } else { vec![phi.cos(), phi.sin()] };
        for v in base {
            let k = out.len();
            out.push(v + 0.2 * jitter[k % jitter.len()]);
        }
    }
    out
}

fn models(n: usize, d: usize, q: &LandmarkConfig) -> Vec<ModelSpec> {
    let k = KernelParams::new(0.6, 1.0).unwrap();
    vec![
        ModelSpec::lagrangian(n, d, k, 0.4).unwrap(),
        ModelSpec::langevin(n, d, k, 0.4, Some(0.3)).unwrap(),
        ModelSpec::eulerian(n, d, k, NoiseFieldGrid::covering(&[q], 0.5, vec![0.3; d]).unwrap()).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// At any state whose positions equal the conditioning point, the
    /// position block of the diffusion matches the auxiliary one.  This is
    /// the condition under which the guided proposal is absolutely
    /// continuous with respect to the true bridge.
    #[test]
    fn matching_condition_holds_at_the_conditioning_point(
        n in 1usize..5,
        d in 1usize..3,
        jitter in prop::collection::vec(-1.0f64..1.0, 8),
        p in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let qt = config(d, spread(n, d, &jitter));
        let m = n * d;
        for spec in models(n, d, &qt) {
            let aux = auxiliary_for(&spec, &qt).unwrap();
            let x = PhaseState::new(qt.clone(), p[..m].to_vec()).unwrap();
            let sigma = spec.diffusion(1.0, &x);
            let a = &sigma * sigma.transpose();
            let qa = a.view((0, 0), (m, m)).into_owned();
            let qat = aux.atil.view((0, 0), (m, m)).into_owned();
            prop_assert!((&qa - &qat).norm() <= 1e-12 * (1.0 + qat.norm()), "{:?}: {} vs {}", spec.variant, qa, qat);
        }
    }

    /// The auxiliary drift agrees with the model drift in the position rows
    /// at the conditioning point, whatever the momentum.
    #[test]
    fn auxiliary_drift_agrees_in_position_rows(
        n in 1usize..5,
        d in 1usize..3,
        jitter in prop::collection::vec(-1.0f64..1.0, 8),
        p in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let qt = config(d, spread(n, d, &jitter));
        let m = n * d;
        for spec in models(n, d, &qt) {
            let aux = auxiliary_for(&spec, &qt).unwrap();
            let mut x = qt.as_slice().to_vec();
            x.extend_from_slice(&p[..m]);
            let b = spec.coefficients(&x).drift();
            let bt = aux.drift(&x);
            for i in 0..m {
                prop_assert!((b[i] - bt[i]).abs() <= 1e-12 * (1.0 + b[i].abs()), "{:?} row {i}: {} vs {}", spec.variant, b[i], bt[i]);
            }
        }
    }

    /// `sigma dW`, `a r` and the column accessor agree with the dense diffusion matrix.
    #[test]
    fn diffusion_products_match_dense_matrix(
        n in 1usize..4,
        d in 1usize..3,
        jitter in prop::collection::vec(-1.0f64..1.0, 6),
        p in prop::collection::vec(-2.0f64..2.0, 6),
        r in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let q = config(d, spread(n, d, &jitter));
        let m = n * d;
        for spec in models(n, d, &q) {
            let mut x = q.as_slice().to_vec();
            x.extend_from_slice(&p[..m]);
            let sigma = spec.diffusion(0.0, &PhaseState::from_flat(d, &x).unwrap());
            let c = spec.coefficients(&x);
            let jj = spec.wiener_dim();
            let dw: Vec<f64> = (0..jj).map(|l| r[l % r.len()] * 0.1).collect();
            let dense = &sigma * DVector::from_column_slice(&dw);
            let fast = c.sigma_times(&dw);
            let rv: Vec<f64> = (0..2 * m).map(|i| r[i % r.len()]).collect();
            let dense_ar = &sigma * (sigma.transpose() * DVector::from_column_slice(&rv));
            let fast_ar = c.a_times(&rv);
            for i in 0..2 * m {
                prop_assert!((dense[i] - fast[i]).abs() < 1e-12);
                prop_assert!((dense_ar[i] - fast_ar[i]).abs() < 1e-12 * (1.0 + dense_ar[i].abs()));
            }
            for l in 0..jj {
                let col = c.column(l);
                for i in 0..2 * m {
                    prop_assert_eq!(col[i], sigma[(i, l)]);
                }
            }
        }
    }
}

#[test]
fn langevin_without_damping_is_lagrangian() {
    let k = KernelParams::new(0.8, 1.0).unwrap();
    let lag = ModelSpec::lagrangian(3, 2, k, 0.5).unwrap();
    let lan = ModelSpec::langevin(3, 2, k, 0.5, Some(0.0)).unwrap();
    let x = vec![0.0, 0.0, 1.0, 0.2, -0.4, 0.9, 0.3, -0.1, 0.5, 0.5, -0.7, 0.2];
    assert_eq!(lag.coefficients(&x).drift(), lan.coefficients(&x).drift());
    let s = PhaseState::from_flat(2, &x).unwrap();
    assert_eq!(lag.diffusion(0.0, &s), lan.diffusion(0.0, &s));
}

#[test]
fn additive_models_need_no_ito_correction() {
    let k = KernelParams::new(0.8, 1.0).unwrap();
    let x = PhaseState::from_flat(1, &[0.0, 0.5, 1.0, -0.2, 0.3, 0.8]).unwrap();
    for spec in [ModelSpec::lagrangian(3, 1, k, 0.5).unwrap(), ModelSpec::langevin(3, 1, k, 0.5, None).unwrap()] {
        assert!(spec.strat_to_ito_correction(&x).iter().all(|v| *v == 0.0));
        assert!(spec.has_constant_diffusion());
    }
}

#[test]
fn eulerian_correction_vanishes_far_from_every_field() {
    let k = KernelParams::new(0.8, 1.0).unwrap();
    let fields = NoiseFieldGrid::new(2, vec![0.0, 0.0], 0.2, vec![1.0, 1.0]).unwrap();
    let spec = ModelSpec::eulerian(1, 2, k, fields).unwrap();
    let x = PhaseState::from_flat(2, &[30.0, -40.0, 1.0, 1.0]).unwrap();
    assert!(spec.strat_to_ito_correction(&x).iter().all(|v| v.abs() < 1e-300));
    assert!(!spec.has_constant_diffusion());
}
