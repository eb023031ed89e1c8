mod common;

use proptest::prelude::*;
use stochline::driver::{parse_driver_formulas, replicate_rng, sample_fbm, smooth_driver, uniform_mesh, DriverPath, FbmSampler, FbmSpec};

const SAMPLES: u64 = 10_000;

/// Endpoint values of `SAMPLES` one-dimensional paths, one vector per mesh node.
fn node_samples(spec: &FbmSpec) -> Vec<Vec<f64>> {
    let sampler = FbmSampler::new(spec).unwrap();
    let mut nodes = vec![Vec::with_capacity(SAMPLES as usize); spec.steps + 1];
    for i in 0..SAMPLES {
        let path = sampler.sample(&mut replicate_rng(spec.seed, i));
        for (k, v) in path.values().iter().enumerate() {
            nodes[k].push(v[0]);
        }
    }
    nodes
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample mean of `a·b` and its standard error.
fn product_moment(a: &[f64], b: &[f64]) -> (f64, f64) {
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let m = mean(&prods);
    let var = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (prods.len() - 1) as f64;
    (m, (var / prods.len() as f64).sqrt())
}

fn fbm_covariance(h: f64, s: f64, t: f64) -> f64 {
    0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
}

#[test]
fn brownian_covariance_is_min() {
    let spec = FbmSpec { hurst: 0.5, horizon: 1.0, steps: 8, seed: 101, dim: 1 };
    let nodes = node_samples(&spec);
    let times = uniform_mesh(1.0, 8);
    assert!(nodes[0].iter().all(|&v| v == 0.0));
    for (a, b) in [(1, 1), (2, 6), (4, 8), (3, 5), (8, 8)] {
        let (m, se) = product_moment(&nodes[a], &nodes[b]);
        let expect = times[a].min(times[b]);
        assert!((m - expect).abs() <= 3.0 * se, "Cov(B_{a}, B_{b}) = {m} vs {expect} ± {se}");
    }
}

#[test]
fn fractional_covariance_and_terminal_variance() {
    for (h, horizon) in [(0.75, 2.0), (0.35, 1.5)] {
        let spec = FbmSpec { hurst: h, horizon, steps: 6, seed: 202, dim: 1 };
        let nodes = node_samples(&spec);
        let times = uniform_mesh(horizon, 6);
        for (a, b) in [(2, 5), (6, 6), (1, 3)] {
            let (m, se) = product_moment(&nodes[a], &nodes[b]);
            let expect = fbm_covariance(h, times[a], times[b]);
            assert!((m - expect).abs() <= 3.0 * se, "H={h} ({a},{b}): {m} vs {expect} ± {se}");
        }
        let (var_t, se) = product_moment(&nodes[6], &nodes[6]);
        assert!((var_t - horizon.powf(2.0 * h)).abs() <= 3.0 * se);
    }
}

#[test]
fn single_step_is_one_gaussian_increment() {
    let spec = FbmSpec { hurst: 0.3, horizon: 1.5, steps: 1, seed: 303, dim: 1 };
    let nodes = node_samples(&spec);
    let (var, se) = product_moment(&nodes[1], &nodes[1]);
    assert!((var - 1.5f64.powf(0.6)).abs() <= 3.0 * se);
}

#[test]
fn self_similarity_of_increments() {
    // B_{ct}/c^H on [0, 1] has the law of B_t; compare increment variances per slot
    let h = 0.7;
    let c = 3.0;
    let base = node_samples(&FbmSpec { hurst: h, horizon: 1.0, steps: 4, seed: 404, dim: 1 });
    let scaled = node_samples(&FbmSpec { hurst: h, horizon: c, steps: 4, seed: 405, dim: 1 });
    let factor = c.powf(-h);
    for k in 0..4 {
        let inc_a: Vec<f64> = base[k + 1].iter().zip(&base[k]).map(|(b, a)| b - a).collect();
        let inc_b: Vec<f64> = scaled[k + 1].iter().zip(&scaled[k]).map(|(b, a)| (b - a) * factor).collect();
        let (va, sa) = product_moment(&inc_a, &inc_a);
        let (vb, sb) = product_moment(&inc_b, &inc_b);
        assert!((va - vb).abs() <= 3.0 * (sa * sa + sb * sb).sqrt(), "slot {k}: {va} vs {vb}");
        assert!((va - 0.25f64.powf(2.0 * h)).abs() <= 3.0 * sa);
    }
}

#[test]
fn increments_look_gaussian() {
    let nodes = node_samples(&FbmSpec { hurst: 0.75, horizon: 1.0, steps: 4, seed: 505, dim: 1 });
    let n = SAMPLES as f64;
    for k in 0..4 {
        let inc: Vec<f64> = nodes[k + 1].iter().zip(&nodes[k]).map(|(b, a)| b - a).collect();
        let m = mean(&inc);
        let m2 = inc.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let skew = inc.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / m2.powf(1.5);
        let kurt = inc.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n / (m2 * m2);
        assert!(skew.abs() <= 3.0 * (6.0 / n).sqrt(), "skew {skew}");
        assert!((kurt - 3.0).abs() <= 3.0 * (24.0 / n).sqrt(), "kurtosis {kurt}");
    }
}

#[test]
fn coordinates_are_independent() {
    let spec = FbmSpec { hurst: 0.5, horizon: 1.0, steps: 2, seed: 606, dim: 2 };
    let sampler = FbmSampler::new(&spec).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..SAMPLES {
        let p = sampler.sample(&mut replicate_rng(spec.seed, i));
        a.push(p.value(2)[0]);
        b.push(p.value(2)[1]);
    }
    let (m, se) = product_moment(&a, &b);
    assert!(m.abs() <= 3.0 * se);
}

#[test]
fn smooth_driver_examples() {
    let mesh = || uniform_mesh(1.0, 64);
    let loop_path = smooth_driver(&parse_driver_formulas(&["cos(2*pi*t) - 1", "sin(2*pi*t)"]).unwrap(), mesh()).unwrap();
    assert!(loop_path.value(64).iter().all(|v| v.abs() < 1e-12));
    let line = smooth_driver(&parse_driver_formulas(&["t", "2*t"]).unwrap(), mesh()).unwrap();
    for (t, v) in line.times().iter().zip(line.values()) {
        assert!((v[0] - t).abs() < 1e-15 && (v[1] - 2.0 * t).abs() < 1e-15);
    }
    let flat = smooth_driver(&parse_driver_formulas(&["0"]).unwrap(), mesh()).unwrap();
    assert!(flat.values().iter().all(|v| v[0] == 0.0));
    assert!(parse_driver_formulas(&["x"]).is_err());
    assert!(smooth_driver(&parse_driver_formulas(&["1 + t"]).unwrap(), mesh()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn same_seed_is_bitwise_identical(seed in any::<u64>(), h in 0.26f64..0.99, steps in 1usize..40) {
        let spec = FbmSpec { hurst: h, horizon: 1.0, steps, seed, dim: 2 };
        let a = sample_fbm(&spec).unwrap();
        let b = sample_fbm(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.values()[0].iter().all(|&v| v == 0.0));
        prop_assert!(a.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn shift_identities(seed in any::<u64>(), eps in -2.0f64..2.0) {
        let w = sample_fbm(&FbmSpec { hurst: 0.6, horizon: 1.0, steps: 32, seed, dim: 2 }).unwrap();
        let mut rng = common::rng(seed);
        let h = common::random_direction(&mut rng, 2, 1.0, 32);
        prop_assert_eq!(&w.shift(&h, 0.0).unwrap(), &w);
        let doubled = w.shift(&w, 1.0).unwrap();
        prop_assert!(doubled.values().iter().zip(w.values()).all(|(d, v)| d.iter().zip(v).all(|(a, b)| *a == 2.0 * b)));
        let shifted = w.shift(&h, eps).unwrap();
        let back = shifted.shift(&h, -eps).unwrap();
        // one rounding in each direction, relative to the shifted magnitude
        let ok = back.values().iter().flatten().zip(w.values().iter().flatten()).zip(shifted.values().iter().flatten())
            .all(|((a, b), s)| (a - b).abs() <= 1e-15 * s.abs().max(1.0));
        prop_assert!(ok);
        let other = DriverPath::zero(2, uniform_mesh(1.0, 16)).unwrap();
        prop_assert!(w.shift(&other, 1.0).is_err());
    }
}
