use num_complex::Complex64;
use ssmaxwell_core::kernel_quadrature::{build_quadrature, KernelProfile, KernelSpec};
use ssmaxwell_core::linalg::{DeformationMatrix, SymMatrix};
use ssmaxwell_core::spectral_field::{
    fit_decay_rate, fixed_point_profile, gamma_apply, hessian_at_origin, l_apply, semigroup_apply,
    stability_distance, stability_experiment, CharFnGrid, CollisionRule, Evolver, GridGeometry,
    ProfileOptions,
};

fn iso3() -> (KernelSpec, ssmaxwell_core::SphereQuadrature) {
    let q = build_quadrature(3, 12).unwrap();
    (KernelSpec::isotropic(3, &q).unwrap(), q)
}

fn aniso() -> SymMatrix {
    SymMatrix::from_rows(3, &[1.2, 0.1, 0.0, 0.1, 0.9, 0.05, 0.0, 0.05, 1.0]).unwrap()
}

#[test]
fn isotropic_gaussian_is_fixed_by_gamma() {
    let (k, q) = iso3();
    let rule = CollisionRule::new(&k, &q);
    let geom = GridGeometry::new(3, 16, 6.0).unwrap();
    let g = CharFnGrid::gaussian(geom, &SymMatrix::identity(3), 4.0).unwrap();
    let out = gamma_apply(&g, &rule).unwrap();
    let err = out
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-13, "err {err}");
}

#[test]
fn gaussian_interpolation_exact_with_base() {
    let geom = GridGeometry::new(3, 12, 5.0).unwrap();
    let b = aniso();
    let g = CharFnGrid::gaussian(geom, &b, 4.0).unwrap();
    for k in [
        [0.37, -1.1, 2.3],
        [0.01, 0.02, -0.015],
        [4.9, 4.9, -4.9],
        [7.0, 0.0, 1.0],
    ] {
        let want = (-0.5 * b.quad_form(&k)).exp();
        assert!((g.eval(&k).re - want).abs() < 1e-14);
    }
}

#[test]
fn interpolation_error_shrinks_quadratically() {
    let c = aniso();
    let f = |k: &[f64; 3]| {
        Complex64::new(
            (-0.5 * c.quad_form(k)).exp() * (0.4 * k[0] - 0.3 * k[2]).cos(),
            0.0,
        )
    };
    let probe = [[0.33, -0.71, 1.13], [1.9, 0.2, -0.45], [-0.05, 0.07, 0.03]];
    let mut errs = Vec::new();
    for n in [16, 32] {
        let geom = GridGeometry::new(3, n, 6.0).unwrap();
        let g = CharFnGrid::from_fn(geom, Some(c.clone()), 4.0, f).unwrap();
        errs.push(
            probe
                .iter()
                .map(|k| (g.eval(k) - f(k)).norm())
                .fold(0.0, f64::max),
        );
    }
    assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    assert!(errs[1] < 1e-3, "{errs:?}");
}

#[test]
fn l_of_constant_is_two() {
    let (k, q) = iso3();
    let rule = CollisionRule::new(&k, &q);
    let geom = GridGeometry::new(3, 8, 4.0).unwrap();
    let one = CharFnGrid::from_fn(geom, None, 0.0, |_| Complex64::new(1.0, 0.0)).unwrap();
    let out = l_apply(&one, &rule).unwrap();
    assert!(out
        .values()
        .iter()
        .all(|v| (v.re - 2.0).abs() < 1e-12 && v.im.abs() < 1e-15));
}

#[test]
fn semigroup_transports_gaussian() {
    let geom = GridGeometry::new(3, 12, 5.0).unwrap();
    let a = DeformationMatrix::shear(3, 0.3);
    let g = CharFnGrid::gaussian(geom, &SymMatrix::identity(3), 4.0).unwrap();
    let t = 0.7;
    let out = semigroup_apply(&g, &a, t).unwrap();
    let m = a.exp_padded(-t);
    for i in (0..geom.node_count()).step_by(37) {
        let k = geom.node(i);
        let mk = ssmaxwell_core::linalg::mat_vec(&m, &k);
        let want = (-t).exp() * (-0.5 * ssmaxwell_core::linalg::dot(&mk, &mk)).exp();
        assert!((out.values()[i].re - want).abs() < 1e-13);
    }
}

#[test]
fn gamma_preserves_hermitian_symmetry_for_asymmetric_kernel() {
    let q = build_quadrature(3, 10).unwrap();
    let k = KernelSpec::new(
        3,
        KernelProfile::Bump {
            center: 0.3,
            width: 0.5,
        },
        &q,
    )
    .unwrap();
    let rule = CollisionRule::new(&k, &q);
    let geom = GridGeometry::new(3, 10, 4.0).unwrap();
    let g = CharFnGrid::from_fn(geom, None, 0.0, |k| {
        Complex64::new(0.0, 0.5 * k[0] - 0.2 * k[1]).exp()
            * (-0.25 * ssmaxwell_core::linalg::dot(k, k)).exp()
    })
    .unwrap();
    let out = gamma_apply(&g, &rule).unwrap();
    assert!(out.hermitian_defect() < 1e-13);
    assert!(out.max_abs() <= 1.0 + 1e-12);
}

#[test]
fn binary_round_trip() {
    let geom = GridGeometry::new(2, 6, 3.0).unwrap();
    let g = CharFnGrid::gaussian(geom, &SymMatrix::identity(2), 2.0).unwrap();
    let mut buf = Vec::new();
    g.write_binary(&mut buf).unwrap();
    let back = CharFnGrid::read_binary(buf.as_slice()).unwrap();
    assert_eq!(back.values(), g.values());
    assert_eq!(back.base(), g.base());
    assert_eq!(back.weight_exponent(), 2.0);
}

#[test]
fn hessian_of_gaussian_without_base() {
    let b = aniso();
    let mut errs = Vec::new();
    for n in [16, 32] {
        let geom = GridGeometry::new(3, n, 6.0).unwrap();
        let g = CharFnGrid::gaussian(geom, &b, 4.0).unwrap().with_base(None, 4.0).unwrap();
        errs.push(hessian_at_origin(&g).unwrap().sub(&b).frobenius());
    }
    assert!(errs[1] < 1e-3, "{errs:?}");
    // halving h gains well beyond the 16x of a 4th-order stencil
    assert!(errs[1] < errs[0] / 32.0, "{errs:?}");
}

#[test]
fn hessian_is_exact_with_matching_base() {
    let geom = GridGeometry::new(3, 8, 4.0).unwrap();
    let g = CharFnGrid::gaussian(geom, &aniso(), 4.0).unwrap();
    assert!(hessian_at_origin(&g).unwrap().sub(&aniso()).frobenius() < 1e-14);
}

fn small_opts() -> ProfileOptions {
    let mut o = ProfileOptions::new(GridGeometry::new(3, 16, 4.0).unwrap());
    o.tol = 1e-9;
    o
}

#[test]
fn profile_without_deformation_is_the_gaussian() {
    let (k, q) = iso3();
    let res = fixed_point_profile(&DeformationMatrix::zeros(3), &k, &q, 4.0, &small_opts()).unwrap();
    assert!(res.beta.abs() < 1e-14);
    assert!(res.distances[0] < 1e-6, "{:?}", res.distances);
    let g = CharFnGrid::gaussian(*res.profile.geometry(), &SymMatrix::identity(3), 4.0).unwrap();
    assert!(stability_distance(&res.profile, &g, 4.0).unwrap() < 1e-6);
}

#[test]
fn profile_for_dilation_is_the_gaussian() {
    let (k, q) = iso3();
    let a = DeformationMatrix::scaled_identity(3, 0.01);
    let res = fixed_point_profile(&a, &k, &q, 4.0, &small_opts()).unwrap();
    assert!((res.beta + 0.01).abs() < 1e-12, "beta {}", res.beta);
    assert!(res.distances[0] < 1e-6, "{:?}", res.distances);
}

#[test]
fn shear_profile_has_hessian_n() {
    let (k, q) = iso3();
    let a = DeformationMatrix::shear(3, 0.01);
    let res = fixed_point_profile(&a, &k, &q, 4.0, &small_opts()).unwrap();
    assert!(res.final_distance < 1e-9);
    assert!(res.contraction_estimate <= res.theta + 0.05);
    let h = hessian_at_origin(&res.profile).unwrap();
    assert!(h.sub(&res.n).frobenius() < 1e-4, "{:e}", h.sub(&res.n).frobenius());
    res.profile.check_invariants(1e-6).unwrap();
}

#[test]
fn evolution_keeps_characteristic_function_invariants() {
    let (k, q) = iso3();
    let a = DeformationMatrix::shear(3, 0.01);
    let geom = GridGeometry::new(3, 12, 4.0).unwrap();
    let b = aniso();
    let u = [0.4, -0.2, 0.1];
    let c = b.sub(&SymMatrix::from_rows(3, &(0..9).map(|i| u[i / 3] * u[i % 3]).collect::<Vec<_>>()).unwrap());
    // shifted Gaussian times a cosine: complex-valued, Hermitian
    let g = CharFnGrid::from_fn(geom, Some(b), 4.0, |x| {
        let ph = 0.3 * x[0] - 0.1 * x[2];
        Complex64::from_polar((-0.5 * c.quad_form(x)).exp(), ph) * (u[0] * x[0] + u[1] * x[1] + u[2] * x[2]).cos()
    })
    .unwrap();
    let ev = Evolver::new(&k, &q, &a, 0.1).unwrap();
    ev.run(&g, 1.0, |_, s| s.check_invariants(1e-6)).unwrap();
}

#[test]
fn stability_from_the_profile_stays_put() {
    let (k, q) = iso3();
    let a = DeformationMatrix::shear(3, 0.01);
    let opts = small_opts();
    let prof = fixed_point_profile(&a, &k, &q, 4.0, &opts).unwrap();
    let rep = stability_experiment(&prof.profile, &a, &k, &q, 4.0, 1.0, 0.05, &opts).unwrap();
    assert!((rep.lambda - 1.0).abs() < 1e-10, "lambda {}", rep.lambda);
    assert!(rep.hessian_defect < 1e-4);
    let worst = rep.distances.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst:e}");
}

#[test]
fn decay_rate_of_an_exponential() {
    let t: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
    let d: Vec<f64> = t.iter().map(|t| 3e-2 * (-0.7 * t).exp()).collect();
    assert!((fit_decay_rate(&t, &d, 10.0) - 0.7).abs() < 1e-12);
}
