use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssmaxwell_core::kernel_quadrature::{
    build_quadrature, lambda_p, normalize_kernel, q_coefficient, q_coefficient_along, KernelProfile, KernelSpec,
};
use ssmaxwell_core::Error;

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[test]
fn circle_rule_is_uniform() {
    let q = build_quadrature(2, 64).unwrap();
    assert_eq!(q.len(), 64);
    assert!(q.weights().iter().all(|w| (w - 2.0 * PI / 64.0).abs() < 1e-15));
}

#[test]
fn sphere_rule_area_and_second_moment() {
    let q = build_quadrature(3, 16).unwrap();
    assert_eq!(q.len(), 16 * 32);
    assert!((q.total_weight() - 4.0 * PI).abs() < 1e-12);
    let mut m = [[0.0; 3]; 3];
    for (n, w) in q.nodes().iter().zip(q.weights()) {
        assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-14);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += w * n[i] * n[j] / (4.0 * PI);
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 / 3.0 } else { 0.0 };
            assert!((m[i][j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn bad_arguments_rejected() {
    assert!(matches!(build_quadrature(4, 8), Err(Error::UnsupportedDimension(4))));
    assert!(build_quadrature(3, 3).is_err());
    let q = build_quadrature(3, 8).unwrap();
    let zero = KernelSpec::unnormalized(3, KernelProfile::Bump { center: 5.0, width: 0.1 }).unwrap();
    assert!(matches!(normalize_kernel(zero, &q), Err(Error::Normalization(_))));
    let k = KernelSpec::isotropic(3, &q).unwrap();
    assert!(lambda_p(&k, &q, -0.5).is_err());
}

#[test]
fn constant_kernel_values() {
    let q3 = build_quadrature(3, 16).unwrap();
    let k3 = KernelSpec::isotropic(3, &q3).unwrap();
    assert!((k3.g(0.3) - 1.0 / (4.0 * PI)).abs() < 1e-14);
    let q2 = build_quadrature(2, 64).unwrap();
    let k2 = KernelSpec::isotropic(2, &q2).unwrap();
    assert!((k2.g(-0.7) - 1.0 / (2.0 * PI)).abs() < 1e-14);
}

#[test]
fn quadratic_profile_normalization_constant() {
    let q = build_quadrature(3, 16).unwrap();
    let prof = KernelProfile::Custom { name: "1+eta^2".into(), f: Arc::new(|e| 1.0 + e * e) };
    let k = KernelSpec::new(3, prof, &q).unwrap();
    let want = 1.0 / (4.0 * PI * (1.0 + 1.0 / 3.0));
    assert!((k.normalization_constant() - want).abs() < 1e-14);
    let again = normalize_kernel(k.clone(), &q).unwrap();
    assert!((again.normalization_constant() - want).abs() < 1e-14);
    for omega in [[1.0, 0.0, 0.0], unit([0.3, -0.8, 0.2]), unit([-1.0, 2.0, 0.5])] {
        assert!((k.integrate_fixed_nodes(&q, &omega) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn q_isotropic_values() {
    let q3 = build_quadrature(3, 16).unwrap();
    let k3 = KernelSpec::isotropic(3, &q3).unwrap();
    // (1/2)∫(1-s²)ds over [-1,1]
    let oracle3 = 0.5 * (2.0 - 2.0 / 3.0);
    assert!((q_coefficient(&k3, &q3) - oracle3).abs() < 1e-12);
    let q2 = build_quadrature(2, 64).unwrap();
    let k2 = KernelSpec::isotropic(2, &q2).unwrap();
    assert!((q_coefficient(&k2, &q2) - 0.5).abs() < 1e-12);
    let dirs = [[0.0, 0.0, 1.0], unit([0.2, 0.9, -0.4]), unit([1.0, 1.0, 1.0])];
    let vals: Vec<f64> = dirs.iter().map(|w| q_coefficient_along(&k3, &q3, w)).collect();
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 1e-10);
}

#[test]
fn narrow_bump_near_poles_has_small_q() {
    let q = build_quadrature(3, 64).unwrap();
    let prof = KernelProfile::Custom {
        name: "polar bumps".into(),
        f: Arc::new(|e: f64| {
            let x = (e.abs() - 0.995) / 0.005;
            if x.abs() < 1.0 {
                (1.0 - x * x).powi(2)
            } else {
                0.0
            }
        }),
    };
    let k = KernelSpec::new(3, prof, &q).unwrap();
    assert!(q_coefficient(&k, &q) < 0.01);
}

#[test]
fn lambda_closed_form_d3() {
    let q = build_quadrature(3, 16).unwrap();
    let k = KernelSpec::isotropic(3, &q).unwrap();
    // substitution u = (1±s)/2 gives 1 - 2∫₀¹u^{p/2}du
    let oracle = |p: f64| 1.0 - 4.0 / (p + 2.0);
    for p in [0.0, 2.0, 4.0, 6.0, 8.0] {
        assert!((lambda_p(&k, &q, p).unwrap() - oracle(p)).abs() < 1e-8, "p={p}");
    }
    // odd p: square-root endpoint behaviour limits Gauss-Legendre accuracy
    for p in [1.0, 3.0] {
        assert!((lambda_p(&k, &q, p).unwrap() - oracle(p)).abs() < 1e-3, "p={p}");
    }
}

#[test]
fn lambda_endpoints_and_monotonicity_for_general_kernels() {
    let q3 = build_quadrature(3, 24).unwrap();
    let q2 = build_quadrature(2, 128).unwrap();
    let kernels = vec![
        KernelSpec::new(3, KernelProfile::Bump { center: 0.2, width: 0.6 }, &q3).unwrap(),
        KernelSpec::new(3, KernelProfile::parse("isotropic").unwrap(), &q3).unwrap(),
        KernelSpec::new(2, KernelProfile::Bump { center: -0.1, width: 0.9 }, &q2).unwrap(),
    ];
    for k in &kernels {
        let q = if k.dim() == 3 { &q3 } else { &q2 };
        assert!((lambda_p(k, q, 0.0).unwrap() + 1.0).abs() < 1e-10);
        assert!(lambda_p(k, q, 2.0).unwrap().abs() < 1e-10);
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=32 {
            let l = lambda_p(k, q, 0.25 * j as f64).unwrap();
            assert!(l > prev);
            prev = l;
        }
    }
}

#[test]
fn isotropic_sampling_moments() {
    let q = build_quadrature(3, 16).unwrap();
    let k = KernelSpec::isotropic(3, &q).unwrap();
    let u = unit([0.3, 0.4, -0.2]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let v = k.sample_direction(&mut rng, &u);
        let c = v[0] * u[0] + v[1] * u[1] + v[2] * u[2];
        s1 += c;
        s2 += c * c;
        s4 += c.powi(4);
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let m2 = s2 / nf;
    // uniform cosine: variance 1/3, fourth moment 1/5
    assert!(mean.abs() < 3.0 * (1.0f64 / 3.0).sqrt() / nf.sqrt());
    let se2 = ((s4 / nf - m2 * m2) / nf).sqrt();
    assert!((m2 - 1.0 / 3.0).abs() < 3.0 * se2);
}

#[test]
fn one_sided_kernel_sampler_matches_cdf() {
    let q = build_quadrature(3, 32).unwrap();
    let prof = KernelProfile::Custom { name: "max(eta,0)".into(), f: Arc::new(|e: f64| e.max(0.0)) };
    let k = KernelSpec::new(3, prof, &q).unwrap();
    // direct integration: density ∝ max(s,0) in s, so CDF = s² on [0,1]
    let oracle = |s: f64| if s <= 0.0 { 0.0 } else { (s * s).min(1.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = [0.0, 1.0, 0.0];
    let n = 1_000_000;
    let mut xs: Vec<f64> = (0..n).map(|_| k.sample_direction(&mut rng, &u)[1]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = oracle(*x);
        ks = ks.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
    }
    assert!(ks <= 0.005, "KS distance {ks}");
    for s in [0.1, 0.5, 0.9] {
        assert!((k.sampler_cdf(s) - oracle(s)).abs() < 1e-4);
    }
}

#[test]
fn tabulated_kernel_from_csv() {
    let q = build_quadrature(3, 16).unwrap();
    let prof = KernelProfile::from_csv_str("eta,g\n-1,1\n1,1\n").unwrap();
    let k = KernelSpec::new(3, prof, &q).unwrap();
    assert!((q_coefficient(&k, &q) - 2.0 / 3.0).abs() < 1e-12);
}
