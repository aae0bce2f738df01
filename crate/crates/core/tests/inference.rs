//! Metropolis–Hastings moves: cache coherence and invariant laws on linear toys.

use statrs::distribution::{ChiSquared, ContinuousCDF, Exp};

use bridgemark::geometry::{KernelParams, LandmarkConfig};
use bridgemark::guiding::{make_grid, run_guided, ObservationScheme, TimeGrid};
use bridgemark::inference::rng::{stream, Purpose};
use bridgemark::inference::{
    build_guide, run_template, template_log_target, update_bridge_pcn, update_momenta_mala, update_template_rmmala,
    update_theta, Bridge, ChainSettings, Guide, Priors, Tuning, WienerPath,
};
use bridgemark::models::{ModelSpec, NoiseFieldGrid};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Standard error of the mean of `f(x)` by batch means.
fn batch_se(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let batches = 40;
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().map(|x| f(*x)).sum::<f64>() / size as f64)
        .collect();
    (mean_var(&means).1 / batches as f64).sqrt()
}

fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// One landmark on the line: `dq = p dt`, `dp = gamma dW`, so `Psi = 1`.
fn linear_toy(gamma: f64, eps: f64, v: f64, h: f64) -> (ModelSpec, ObservationScheme, TimeGrid, Guide) {
    let spec = ModelSpec::lagrangian(1, 1, KernelParams::new(1.0, 1.0).unwrap(), gamma).unwrap();
    let obs = ObservationScheme::positions(1, 1, vec![v], eps).unwrap();
    let grid = make_grid(1.0, h).unwrap();
    let guide = build_guide(&spec, &obs, &grid).unwrap();
    (spec, obs, grid, guide)
}

fn eulerian_pair() -> (ModelSpec, Guide, LandmarkConfig) {
    let q0 = LandmarkConfig::new(2, vec![-0.5, 0.0, 0.3, 0.2]).unwrap();
    let qt = LandmarkConfig::new(2, vec![-0.4, 0.1, 0.4, 0.4]).unwrap();
    let fields = NoiseFieldGrid::covering(&[&q0, &qt], 0.5, vec![0.3, 0.3]).unwrap();
    let spec = ModelSpec::eulerian(2, 2, KernelParams::new(0.7, 1.0).unwrap(), fields).unwrap();
    let obs = ObservationScheme::positions(2, 2, qt.as_slice().to_vec(), 0.05).unwrap();
    let guide = build_guide(&spec, &obs, &make_grid(1.0, 0.05).unwrap()).unwrap();
    (spec, guide, q0)
}

fn x0_of(q: &[f64], p: &[f64]) -> Vec<f64> {
    let mut x = q.to_vec();
    x.extend_from_slice(p);
    x
}

#[test]
fn cached_paths_match_recomputation_after_every_move() {
    let (spec, guide, q0) = eulerian_pair();
    let grid = guide.tables.grid.clone();
    let mut p0 = vec![0.0; 4];
    let w = WienerPath::sample(&mut stream(1, Purpose::InitialWiener, 0, 0), &grid, spec.wiener_dim());
    let mut bridge = Bridge::new(&spec, &guide, &x0_of(q0.as_slice(), &p0), w).unwrap();
    let priors = Priors::default();
    let (mut acc_pcn, mut acc_mala) = (0, 0);
    for s in 0..60 {
        acc_pcn += update_bridge_pcn(&spec, &guide, &x0_of(q0.as_slice(), &p0), &mut bridge, 0.8, &mut stream(1, Purpose::Bridge, 0, s))
            .unwrap() as u32;
        acc_mala += update_momenta_mala(&spec, &guide, &q0, &mut p0, &mut bridge, &priors, 0.005, &mut stream(1, Purpose::Momenta, 0, s))
            .unwrap() as u32;
        let fresh = run_guided(&spec, &guide.aux, &guide.tables, &x0_of(q0.as_slice(), &p0), &bridge.wiener).unwrap();
        assert_eq!(fresh.path.log_psi, bridge.log_psi());
        assert_eq!(fresh.path.states, bridge.path.states);
    }
    assert!(acc_pcn > 0 && acc_mala > 0, "moves never accepted: {acc_pcn} {acc_mala}");
}

#[test]
fn template_and_theta_moves_keep_caches_coherent() {
    let (spec0, _, q_init) = eulerian_pair();
    let grid = make_grid(1.0, 0.05).unwrap();
    let targets = [vec![-0.4, 0.1, 0.4, 0.4], vec![-0.55, -0.05, 0.35, 0.1]];
    let observations: Vec<ObservationScheme> =
        targets.iter().map(|v| ObservationScheme::positions(2, 2, v.clone(), 0.05).unwrap()).collect();
    let mut spec = spec0.clone();
    let mut guides: Vec<Guide> = observations.iter().map(|o| build_guide(&spec, o, &grid).unwrap()).collect();
    let mut q0 = q_init.clone();
    let zeros = vec![0.0; 4];
    let mut bridges: Vec<Bridge> = guides
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let w = WienerPath::sample(&mut stream(2, Purpose::InitialWiener, i as u64, 0), &grid, spec.wiener_dim());
            Bridge::new(&spec, g, &x0_of(q0.as_slice(), &zeros), w).unwrap()
        })
        .collect();
    let priors = Priors::default();
    let (mut acc_theta, mut acc_tmpl) = (0, 0);
    for s in 0..40 {
        let x = x0_of(q0.as_slice(), &zeros);
        acc_theta += update_theta(
            &mut spec,
            &grid,
            &observations,
            &mut guides,
            &mut bridges,
            &x,
            &priors,
            0.1,
            |_: &ModelSpec| Ok(0.0),
            &mut stream(2, Purpose::Theta, 0, s),
        )
        .unwrap() as u32;
        acc_tmpl += update_template_rmmala(&spec, &guides, &mut bridges, &mut q0, &priors, 1e-4, &mut stream(2, Purpose::Template, 0, s))
            .unwrap() as u32;
        let x = x0_of(q0.as_slice(), &zeros);
        for (g, b) in guides.iter().zip(&bridges) {
            let fresh = run_guided(&spec, &g.aux, &g.tables, &x, &b.wiener).unwrap();
            assert_eq!(fresh.path.log_psi, b.log_psi());
            assert_eq!(fresh.path.states, b.path.states);
        }
        // guides always belong to the current kernel scale
        let rebuilt = build_guide(&spec, &observations[0], &grid).unwrap();
        assert_eq!(rebuilt.aux.btil, guides[0].aux.btil);
    }
    assert!(acc_theta > 0 && acc_tmpl > 0, "moves never accepted: {acc_theta} {acc_tmpl}");
    let ws: Vec<&WienerPath> = bridges.iter().map(|b| &b.wiener).collect();
    let (total, _) = template_log_target(&spec, &guides, &ws, q0.as_slice()).unwrap();
    let single: f64 = (0..2).map(|i| template_log_target(&spec, &guides[i..=i], &ws[i..=i], q0.as_slice()).unwrap().0).sum();
    assert!((total - single).abs() < 1e-9 * total.abs());
}

#[test]
fn crank_nicolson_with_unit_eta_keeps_the_path() {
    let (spec, guide, q0) = eulerian_pair();
    let x0 = x0_of(q0.as_slice(), &[0.1, 0.0, -0.1, 0.2]);
    let w = WienerPath::sample(&mut stream(3, Purpose::InitialWiener, 0, 0), &guide.tables.grid, spec.wiener_dim());
    let mut bridge = Bridge::new(&spec, &guide, &x0, w.clone()).unwrap();
    for s in 0..20 {
        assert!(update_bridge_pcn(&spec, &guide, &x0, &mut bridge, 1.0, &mut stream(3, Purpose::Bridge, 0, s)).unwrap());
    }
    assert_eq!(bridge.wiener, w);
}

#[test]
fn crank_nicolson_preserves_the_wiener_prior() {
    // Psi = 1 on the linear toy, so every proposal is accepted and the chain
    // of each normalised increment is a stationary AR(1) with N(0, 1) marginal.
    let (spec, _, grid, guide) = linear_toy(1.0, 0.1, 0.5, 0.05);
    let x0 = [0.0, 0.0];
    let w = WienerPath::sample(&mut stream(4, Purpose::InitialWiener, 0, 0), &grid, 1);
    let mut bridge = Bridge::new(&spec, &guide, &x0, w).unwrap();
    let iterations = 100_000u64;
    let thin = 50;
    let watched = [0, grid.steps() / 2, grid.steps() - 1];
    let mut draws = vec![Vec::new(); watched.len()];
    for s in 1..=iterations {
        let acc = update_bridge_pcn(&spec, &guide, &x0, &mut bridge, 0.9, &mut stream(4, Purpose::Bridge, 0, s)).unwrap();
        assert!(acc);
        if s % thin == 0 {
            for (d, &k) in draws.iter_mut().zip(&watched) {
                d.push(bridge.wiener.increment(k)[0] / grid.dt(k).sqrt());
            }
        }
    }
    for (d, k) in draws.iter().zip(watched) {
        let n = d.len() as f64;
        let stat: f64 = d.iter().map(|z| z * z).sum();
        let chi = ChiSquared::new(n).unwrap();
        let (lo, hi) = (chi.inverse_cdf(0.005), chi.inverse_cdf(0.995));
        assert!(lo < stat && stat < hi, "increment {k}: sum of squares {stat} outside [{lo}, {hi}]");
    }
}

#[test]
fn kernel_scale_chain_samples_the_prior_when_the_data_are_uninformative() {
    // With one landmark K(q) = k(0) = 1 for every a, so the likelihood does
    // not depend on a and the chain must reproduce the Pareto prior:
    // log(a / s_min) ~ Exp(1).
    let (spec0, obs, grid, guide) = linear_toy(1.0, 0.1, 0.5, 0.1);
    let priors = Priors::default();
    let x0 = [0.0, 0.3];
    let mut spec = spec0.with_kernel_scale(0.2).unwrap();
    let mut guides = vec![guide];
    let w = WienerPath::sample(&mut stream(5, Purpose::InitialWiener, 0, 0), &grid, 1);
    let mut bridges = vec![Bridge::new(&spec, &guides[0], &x0, w).unwrap()];
    let observations = [obs];
    let thin = 25;
    let mut draws = Vec::new();
    for s in 1..=50_000u64 {
        update_theta(
            &mut spec,
            &grid,
            &observations,
            &mut guides,
            &mut bridges,
            &x0,
            &priors,
            1.0,
            |_: &ModelSpec| Ok(0.0),
            &mut stream(5, Purpose::Theta, 0, s),
        )
        .unwrap();
        if s % thin == 0 {
            draws.push((spec.kernel.a / priors.pareto_min).ln());
        }
    }
    let exp = Exp::new(1.0).unwrap();
    let ks = ks_statistic(&draws, |x| exp.cdf(x));
    let crit = 1.6276 / (draws.len() as f64).sqrt();
    let (m, _) = mean_var(&draws);
    let se = batch_se(&draws, |x| x);
    assert!(ks < crit, "KS {ks} >= {crit}");
    assert!((m - 1.0).abs() < 4.0 * se, "mean {m} (se {se})");
}

#[test]
fn template_chain_matches_the_conjugate_posterior() {
    // One landmark, zero momentum: v | q0 ~ N(q0, gamma^2 T^3 / 3 + eps^2), q0 ~ N(0, kappa_pos).
    let (gamma, eps, v) = (1.0, 0.1, 0.8);
    let (spec, obs, grid, _) = linear_toy(gamma, eps, v, 0.05);
    let priors = Priors::default();
    let s2 = gamma * gamma / 3.0 + eps * eps;
    let post_var = 1.0 / (1.0 / priors.kappa_pos + 1.0 / s2);
    let post_mean = post_var * v / s2;
    let settings = ChainSettings {
        iterations: 40_000,
        save_every: 10,
        seed: 6,
        fix_theta: true,
        tuning: Tuning { delta_rmmala: post_var, ..Tuning::default() },
        priors,
    };
    let out = run_template(&spec, &grid, &[obs], &LandmarkConfig::new(1, vec![0.0]).unwrap(), &settings).unwrap();
    let draws: Vec<f64> = out.templates.iter().filter(|(i, _)| *i > 1000).map(|(_, q)| q[0]).collect();
    let (m, var) = mean_var(&draws);
    let se_m = batch_se(&draws, |x| x);
    let se_v = batch_se(&draws, |x| (x - m).powi(2));
    assert!((m - post_mean).abs() < 4.0 * se_m, "mean {m} vs {post_mean} (se {se_m})");
    assert!((var - post_var).abs() < 4.0 * se_v, "var {var} vs {post_var} (se {se_v})");
}

#[test]
fn failing_proposals_are_rejected_not_raised() {
    let (spec, guide, q0) = eulerian_pair();
    let mut p0 = vec![0.0; 4];
    let w = WienerPath::sample(&mut stream(7, Purpose::InitialWiener, 0, 0), &guide.tables.grid, spec.wiener_dim());
    let mut bridge = Bridge::new(&spec, &guide, &x0_of(q0.as_slice(), &p0), w).unwrap();
    let before = bridge.log_psi();
    for s in 0..5 {
        let acc = update_momenta_mala(&spec, &guide, &q0, &mut p0, &mut bridge, &Priors::default(), 1e12, &mut stream(7, Purpose::Momenta, 0, s))
            .unwrap();
        assert!(!acc);
    }
    assert_eq!(p0, vec![0.0; 4]);
    assert_eq!(bridge.log_psi(), before);
}
