//! Stationary operator, self-similar profile solver, distances and the
//! stability experiment.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::evolve::Evolver;
use super::grid::{CharFnGrid, GridGeometry};
use super::operators::{gamma_apply, CollisionRule};
use crate::error::{Error, Result};
use crate::kernel_quadrature::{
    gauss_legendre, lambda_p, q_coefficient, KernelSpec, SphereQuadrature,
};
use crate::linalg::{dot, mat_vec, DeformationMatrix, SymMatrix, Vec3};
use crate::second_moments::{dominant_eigenpair, extract_lambda_scale};

/// max over nodes k ≠ 0 of |g1 - g2| / |k|^p.
pub fn fp_distance(g1: &CharFnGrid, g2: &CharFnGrid, p: f64) -> Result<f64> {
    g1.check_same_geometry(g2)?;
    let geom = g1.geometry();
    let o = geom.origin_index();
    let mut best = 0.0;
    for i in 0..geom.node_count() {
        if i == o {
            continue;
        }
        let k = geom.node(i);
        let r = dot(&k, &k).sqrt();
        let v = (g1.values()[i] - g2.values()[i]).norm() / r.powf(p);
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

/// ω(r) = max over the node shell |k| = r of |g1 - g2| / |k|^order, by increasing r.
pub fn tangency_defect(g1: &CharFnGrid, g2: &CharFnGrid, order: u32) -> Result<Vec<(f64, f64)>> {
    g1.check_same_geometry(g2)?;
    let geom = g1.geometry();
    let o = geom.origin_index();
    let mut shells: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for i in 0..geom.node_count() {
        if i == o {
            continue;
        }
        let k = geom.node(i);
        let r = dot(&k, &k).sqrt();
        let v = (g1.values()[i] - g2.values()[i]).norm() / r.powi(order as i32);
        let e = shells.entry(geom.shell(i)).or_insert(0.0);
        if v > *e {
            *e = v;
        }
    }
    let h = geom.spacing();
    Ok(shells
        .into_iter()
        .map(|(s, w)| (h * (s as f64).sqrt(), w))
        .collect())
}

/// Options for the stationary operator and the profile iteration.
#[derive(Clone, Debug, Serialize)]
pub struct ProfileOptions {
    pub geometry: GridGeometryDesc,
    pub tol: f64,
    pub max_iter: usize,
    pub t_max: f64,
    pub n_tau: usize,
}

/// Serializable grid description.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridGeometryDesc {
    pub dim: usize,
    pub n_axis: usize,
    pub r_max: f64,
}

impl From<GridGeometry> for GridGeometryDesc {
    fn from(g: GridGeometry) -> Self {
        GridGeometryDesc {
            dim: g.dim,
            n_axis: g.n_axis,
            r_max: g.r_max,
        }
    }
}

impl GridGeometryDesc {
    pub fn build(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.dim, self.n_axis, self.r_max)
    }
}

impl ProfileOptions {
    pub fn new(geometry: GridGeometry) -> Self {
        ProfileOptions {
            geometry: geometry.into(),
            tol: 1e-8,
            max_iter: 200,
            t_max: 40.0,
            n_tau: 64,
        }
    }
}

/// SΨ(k) = ∫₀^T e^{-τ} ΓΨ(e^{-τA_β}k) dτ + e^{-T} ΓΨ(e^{-TA_β}k), with the
/// τ-integral by Gauss-Legendre in u = e^{-τ}.
pub struct StationaryOperator {
    rule: CollisionRule,
    maps: Vec<[[f64; 3]; 3]>,
    weights: Vec<f64>,
}

impl StationaryOperator {
    pub fn new(rule: CollisionRule, a_beta: &DeformationMatrix, t_max: f64, n_tau: usize) -> Self {
        let (x, w) = gauss_legendre(n_tau);
        let lo = (-t_max).exp();
        let half = 0.5 * (1.0 - lo);
        let mut maps = Vec::with_capacity(n_tau + 1);
        let mut weights = Vec::with_capacity(n_tau + 1);
        for (xi, wi) in x.iter().zip(&w) {
            let u = lo + half * (xi + 1.0);
            maps.push(a_beta.exp_padded(u.ln()));
            weights.push(half * wi);
        }
        maps.push(a_beta.exp_padded(-t_max));
        weights.push(lo);
        StationaryOperator {
            rule,
            maps,
            weights,
        }
    }

    pub fn rule(&self) -> &CollisionRule {
        &self.rule
    }

    /// Applies S; the output keeps the base and weight exponent of `psi`.
    pub fn apply(&self, psi: &CharFnGrid) -> Result<CharFnGrid> {
        let g = gamma_apply(psi, &self.rule)?;
        let geom = *psi.geometry();
        let o = geom.origin_index();
        let values: Vec<Complex64> = (0..geom.node_count())
            .into_par_iter()
            .map(|i| {
                if i == o {
                    return Complex64::new(1.0, 0.0);
                }
                let k = geom.node(i);
                let mut acc = Complex64::new(0.0, 0.0);
                for (m, w) in self.maps.iter().zip(&self.weights) {
                    acc += g.eval(&mat_vec(m, &k)) * *w;
                }
                acc
            })
            .collect();
        CharFnGrid::from_values(geom, values, psi.base().cloned(), psi.weight_exponent())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileResult {
    #[serde(skip)]
    pub profile: CharFnGrid,
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: SymMatrix,
    pub iterations: usize,
    pub final_distance: f64,
    pub contraction_estimate: f64,
    pub theta: f64,
    pub distances: Vec<f64>,
}

/// Contraction factor θ = (1 - λ(p)) / (1 - p‖A‖).
pub fn contraction_factor(
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    p: f64,
    a: &DeformationMatrix,
) -> Result<f64> {
    let lam = lambda_p(kernel, quad, p)?;
    let den = 1.0 - p * a.norm();
    if den <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 - lam) / den)
}

/// Iterates Ψ ← SΨ from exp(-½N:k⊗k) until the F_p distance drops below tol.
pub fn fixed_point_profile(
    a: &DeformationMatrix,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    p: f64,
    opts: &ProfileOptions,
) -> Result<ProfileResult> {
    if !(p > 2.0 && p <= 4.0) {
        return Err(Error::InvalidArgument(format!(
            "profile solver needs p in (2,4], got {p}"
        )));
    }
    let geom = opts.geometry.build()?;
    if geom.dim != a.dim() || kernel.dim() != a.dim() {
        return Err(Error::GeometryMismatch(
            "dimension of grid, kernel and A differ".into(),
        ));
    }
    let q = q_coefficient(kernel, quad);
    let eig = dominant_eigenpair(a, q)?;
    let theta = contraction_factor(kernel, quad, p, a)?;
    if !(theta < 1.0) {
        return Err(Error::ContractionFailure(format!("theta = {theta} >= 1")));
    }
    let a_beta = a.shifted(eig.beta);
    let op = StationaryOperator::new(
        CollisionRule::new(kernel, quad),
        &a_beta,
        opts.t_max,
        opts.n_tau,
    );
    let mut psi = CharFnGrid::gaussian(geom, &eig.n, p)?;
    let mut distances = Vec::new();
    let mut bad = 0;
    let mut iterations = 0;
    let mut final_distance = f64::INFINITY;
    while iterations < opts.max_iter {
        let next = op.apply(&psi)?;
        let d = fp_distance(&next, &psi, p)?;
        iterations += 1;
        if let Some(prev) = distances.last() {
            if d >= *prev && *prev > 0.0 {
                bad += 1;
                if bad >= 3 {
                    return Err(Error::ContractionFailure(format!(
                        "distance ratio >= 1 for 3 consecutive iterations (d = {d:e})"
                    )));
                }
            } else {
                bad = 0;
            }
        }
        distances.push(d);
        psi = next;
        final_distance = d;
        if d < opts.tol {
            break;
        }
    }
    let contraction_estimate = contraction_from(&distances);
    Ok(ProfileResult {
        profile: psi,
        beta: eig.beta,
        n: eig.n,
        iterations,
        final_distance,
        contraction_estimate,
        theta,
        distances,
    })
}

/// Largest ratio d_{n+1}/d_n among iterates with d_n < 1e-3 (falls back to all).
pub fn contraction_from(d: &[f64]) -> f64 {
    let ratios: Vec<(f64, f64)> = d
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| (w[0], w[1] / w[0]))
        .collect();
    let late: Vec<f64> = ratios
        .iter()
        .filter(|(d0, _)| *d0 < 1e-3)
        .map(|x| x.1)
        .collect();
    let pick = if late.is_empty() {
        ratios.iter().map(|x| x.1).collect()
    } else {
        late
    };
    pick.into_iter().fold(0.0, f64::max)
}

/// Second-moment matrix -∂²φ(0), from central differences of the nodal
/// remainder φ - J along axis and diagonal node lines. Uses the 9-point
/// stencil (8th order) when the grid has room for it, else 5 points.
pub fn hessian_at_origin(grid: &CharFnGrid) -> Result<SymMatrix> {
    let geom = grid.geometry();
    let d = geom.dim;
    let h = geom.spacing();
    if geom.n_axis < 4 {
        return Err(Error::InvalidArgument(
            "grid too small for 5-point differences".into(),
        ));
    }
    let m = geom.points_per_axis() as i64;
    let c = (geom.n_axis / 2) as i64;
    let o = grid.value_at_origin();
    let bp = grid.base().map(|b| b.padded());
    let rem = |off: [i64; 3]| -> f64 {
        let mut idx = 0i64;
        let mut k = [0.0; 3];
        for j in 0..d {
            idx = idx * m + c + off[j];
            k[j] = off[j] as f64 * h;
        }
        let v = grid.values()[idx as usize];
        let j = match &bp {
            Some(b) => o * (-0.5 * super::grid::quad(b, &k)).exp(),
            None => Complex64::new(0.0, 0.0),
        };
        (v - j).re
    };
    let stencil: &[f64] = if geom.n_axis >= 8 {
        &[-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0]
    } else {
        &[-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0]
    };
    let second = |dir: [i64; 3]| -> f64 {
        let at = |s: i64| rem([dir[0] * s, dir[1] * s, dir[2] * s]);
        let len2: i64 = dir.iter().map(|x| x * x).sum();
        let mut acc = stencil[0] * at(0);
        for (s, w) in stencil.iter().enumerate().skip(1) {
            acc += w * (at(s as i64) + at(-(s as i64)));
        }
        acc / (h * h * len2 as f64)
    };
    let mut hm = nalgebra::DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = [0i64; 3];
        e[i] = 1;
        hm[(i, i)] = second(e);
        for j in i + 1..d {
            let mut p = [0i64; 3];
            let mut q = [0i64; 3];
            p[i] = 1;
            p[j] = 1;
            q[i] = 1;
            q[j] = -1;
            // directional second derivatives along unit (e_i ± e_j)/√2
            let v = 0.5 * (second(p) - second(q));
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    let base = grid
        .base()
        .map(|b| b.matrix().clone() * o.re)
        .unwrap_or_else(|| nalgebra::DMatrix::zeros(d, d));
    Ok(SymMatrix::symmetrized(base - hm))
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: SymMatrix,
    pub lambda: f64,
    pub b0: SymMatrix,
    /// Frobenius distance between `b0` and the finite-difference Hessian at 0.
    pub hessian_defect: f64,
    pub profile_iterations: usize,
    pub profile_distance: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub fitted_rate: f64,
}

/// D = max_{k≠0} |φ - ψ| / (|k|² + |k|^p).
pub fn stability_distance(phi: &CharFnGrid, psi: &CharFnGrid, p: f64) -> Result<f64> {
    phi.check_same_geometry(psi)?;
    let geom = phi.geometry();
    let o = geom.origin_index();
    let mut best = 0.0;
    for i in 0..geom.node_count() {
        if i == o {
            continue;
        }
        let k = geom.node(i);
        let r2 = dot(&k, &k);
        let v = (phi.values()[i] - psi.values()[i]).norm() / (r2 + r2.powf(0.5 * p));
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

/// Least-squares decay rate of `d` over times in [t_from, ∞).
pub fn fit_decay_rate(times: &[f64], d: &[f64], t_from: f64) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(d)
        .filter(|(t, v)| **t >= t_from && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    -sxy / sxx
}

/// Evolves `initial` in rescaled variables and records the distance to Ψ(λk).
/// B0 for λ is the base of `initial` when it has one, else its Hessian at 0.
pub fn stability_experiment(
    initial: &CharFnGrid,
    a: &DeformationMatrix,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    p: f64,
    horizon: f64,
    dt: f64,
    opts: &ProfileOptions,
) -> Result<StabilityReport> {
    let mut opts = opts.clone();
    opts.geometry = (*initial.geometry()).into();
    let prof = fixed_point_profile(a, kernel, quad, p, &opts)?;
    let q = q_coefficient(kernel, quad);
    let fd = hessian_at_origin(initial)?;
    let b0 = initial.base().cloned().unwrap_or_else(|| fd.clone());
    let hessian_defect = fd.sub(&b0).frobenius();
    let lambda = extract_lambda_scale(a, q, prof.beta, &prof.n, &b0)?;
    let geom = *initial.geometry();
    let target = CharFnGrid::from_fn(geom, Some(prof.n.scale(lambda * lambda)), p, |k: &Vec3| {
        prof.profile
            .eval(&[k[0] * lambda, k[1] * lambda, k[2] * lambda])
    })?;
    let a_beta = a.shifted(prof.beta);
    let steps = (horizon / dt - 1e-9).ceil().max(1.0);
    let ev = Evolver::new(kernel, quad, &a_beta, horizon / steps)?;
    let start = if initial.base().is_some() {
        initial.clone()
    } else {
        initial.with_base(Some(b0.clone()), p)?
    };
    let mut times = Vec::new();
    let mut distances = Vec::new();
    ev.run(&start, horizon, |t, g| {
        times.push(t);
        distances.push(stability_distance(g, &target, p)?);
        Ok(())
    })?;
    let fitted_rate = fit_decay_rate(&times, &distances, 0.5 * horizon);
    Ok(StabilityReport {
        beta: prof.beta,
        n: prof.n,
        lambda,
        b0,
        hessian_defect,
        profile_iterations: prof.iterations,
        profile_distance: prof.final_distance,
        times,
        distances,
        fitted_rate,
    })
}
