//! Moment polynomials Q_ℓ of the self-similar profile and the Hermite
//! construction of a density with prescribed moments.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel_quadrature::{
    build_quadrature, gauss_legendre, lambda_p, KernelSpec, SphereQuadrature,
};
use crate::linalg::{dot, DeformationMatrix, SymMatrix, Vec3};
use crate::spectral_field::CollisionRule;

pub type MultiIndex = [u32; 3];

/// Multi-indices of total degree ℓ in d variables, graded-lexicographic
/// (first exponent descending).
pub fn multi_indices(d: usize, l: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    match d {
        1 => out.push([l, 0, 0]),
        2 => {
            for a in (0..=l).rev() {
                out.push([a, l - a, 0]);
            }
        }
        3 => {
            for a in (0..=l).rev() {
                for b in (0..=l - a).rev() {
                    out.push([a, b, l - a - b]);
                }
            }
        }
        _ => panic!("unsupported dimension {d}"),
    }
    out
}

fn position(d: usize, l: u32, alpha: &MultiIndex) -> usize {
    multi_indices(d, l)
        .iter()
        .position(|a| a == alpha)
        .expect("multi-index of matching degree")
}

#[inline]
fn monomial(alpha: &MultiIndex, k: &Vec3) -> f64 {
    k[0].powi(alpha[0] as i32) * k[1].powi(alpha[1] as i32) * k[2].powi(alpha[2] as i32)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

fn multi_factorial(a: &MultiIndex) -> f64 {
    factorial(a[0]) * factorial(a[1]) * factorial(a[2])
}

/// Homogeneous polynomial of degree ℓ with complex coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct HomPoly {
    dim: usize,
    degree: u32,
    indices: Vec<MultiIndex>,
    coeffs: Vec<Complex64>,
}

impl HomPoly {
    pub fn zero(dim: usize, degree: u32) -> Self {
        let indices = multi_indices(dim, degree);
        let n = indices.len();
        HomPoly {
            dim,
            degree,
            indices,
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_coeffs(dim: usize, degree: u32, coeffs: Vec<Complex64>) -> Result<Self> {
        let indices = multi_indices(dim, degree);
        if coeffs.len() != indices.len() {
            return Err(Error::InvalidArgument(format!(
                "degree {degree} in d={dim} needs {} coefficients, got {}",
                indices.len(),
                coeffs.len()
            )));
        }
        Ok(HomPoly {
            dim,
            degree,
            indices,
            coeffs,
        })
    }

    pub fn from_real(dim: usize, degree: u32, coeffs: &[f64]) -> Result<Self> {
        HomPoly::from_coeffs(
            dim,
            degree,
            coeffs.iter().map(|c| Complex64::new(*c, 0.0)).collect(),
        )
    }

    /// -½ N:k⊗k.
    pub fn quadratic_form(n: &SymMatrix) -> Self {
        let d = n.dim();
        let mut p = HomPoly::zero(d, 2);
        for i in 0..d {
            for j in i..d {
                let mut a = [0u32; 3];
                a[i] += 1;
                a[j] += 1;
                let c = if i == j {
                    -0.5 * n.get(i, i)
                } else {
                    -n.get(i, j)
                };
                let pos = position(d, 2, &a);
                p.coeffs[pos] = Complex64::new(c, 0.0);
            }
        }
        p
    }

    /// c · |k|^{2j}.
    pub fn radial_power(dim: usize, j: u32, c: f64) -> Self {
        let mut p = HomPoly::zero(dim, 2 * j);
        for (pos, a) in p.indices.clone().iter().enumerate() {
            if a.iter().all(|x| x % 2 == 0) {
                let h = [a[0] / 2, a[1] / 2, a[2] / 2];
                let multinom = factorial(j) / multi_factorial(&h);
                p.coeffs[pos] = Complex64::new(c * multinom, 0.0);
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, k: &Vec3) -> Complex64 {
        poly_eval(self, k)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut p = self.clone();
        for c in p.coeffs.iter_mut() {
            *c *= s;
        }
        p
    }

    pub fn sub(&self, other: &HomPoly) -> Self {
        let mut p = self.clone();
        for (c, o) in p.coeffs.iter_mut().zip(&other.coeffs) {
            *c -= o;
        }
        p
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// sup_{|k|=1} |P(k)| by dense sampling with local refinement.
    pub fn sup_norm(&self) -> f64 {
        sup_norm_sampled(self.dim, &|k| self.eval(k).norm(), 4000)
    }

    pub fn to_json(&self) -> PolyJson {
        PolyJson {
            degree: self.degree,
            multi_indices: self
                .indices
                .iter()
                .map(|a| a[..self.dim].to_vec())
                .collect(),
            re: self.coeffs.iter().map(|c| c.re).collect(),
            im: self.coeffs.iter().map(|c| c.im).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PolyJson {
    pub degree: u32,
    pub multi_indices: Vec<Vec<u32>>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Σ_α c_α k^α.
pub fn poly_eval(p: &HomPoly, k: &Vec3) -> Complex64 {
    let l = p.degree as usize;
    let mut pw = [[1.0f64; 17]; 3];
    for j in 0..p.dim {
        for e in 1..=l.min(16) {
            pw[j][e] = pw[j][e - 1] * k[j];
        }
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, c) in p.indices.iter().zip(&p.coeffs) {
        let m = if l <= 16 {
            pw[0][a[0] as usize] * pw[1][a[1] as usize] * pw[2][a[2] as usize]
        } else {
            monomial(a, k)
        };
        acc += c * m;
    }
    acc
}

fn sphere_points(d: usize, n: usize) -> Vec<Vec3> {
    if d == 2 {
        return (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

fn normalize(v: &Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Maximizes `f` over the unit sphere: dense sampling, then coordinate
/// pattern search from the best few points.
fn sup_norm_sampled(d: usize, f: &dyn Fn(&Vec3) -> f64, n: usize) -> f64 {
    let pts = sphere_points(d, n);
    let mut vals: Vec<(f64, Vec3)> = pts.iter().map(|p| (f(p), *p)).collect();
    vals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut best = vals[0].0;
    for (v0, p0) in vals.iter().take(4) {
        let mut p = *p0;
        let mut v = *v0;
        let mut step = 0.05;
        while step > 1e-9 {
            let mut improved = false;
            for j in 0..d {
                for s in [-1.0, 1.0] {
                    let mut q = p;
                    q[j] += s * step;
                    let q = normalize(&q);
                    let fq = f(&q);
                    if fq > v {
                        v = fq;
                        p = q;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.max(v);
    }
    best
}

/// Random unit directions from a seeded stream.
fn random_directions(d: usize, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut v = [0.0; 3];
            for x in v.iter_mut().take(d) {
                *x = rng.sample(StandardNormal);
            }
            normalize(&v)
        })
        .collect()
}

/// Result of an evaluation-and-fit assembly.
#[derive(Clone, Debug)]
pub struct FittedOperator {
    /// Matrix in the monomial basis (columns: images of basis monomials).
    pub matrix: DMatrix<f64>,
    pub condition_number: f64,
    pub fit_residual: f64,
}

struct Fitter {
    indices: Vec<MultiIndex>,
    dirs: Vec<Vec3>,
    pinv: DMatrix<f64>,
    vander: DMatrix<f64>,
    cond: f64,
}

impl Fitter {
    fn new(d: usize, l: u32, n_samples: usize, seed: u64) -> Result<Self> {
        let indices = multi_indices(d, l);
        let m = indices.len();
        if n_samples < 2 * m {
            return Err(Error::InvalidArgument(format!(
                "n_samples {n_samples} < 2·dim H_ℓ = {}",
                2 * m
            )));
        }
        let dirs = random_directions(d, n_samples, seed);
        let mut v = DMatrix::zeros(n_samples, m);
        for (s, k) in dirs.iter().enumerate() {
            for (c, a) in indices.iter().enumerate() {
                v[(s, c)] = monomial(a, k);
            }
        }
        let svd = v.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let cond = smax / smin;
        if !(cond < 1e6) {
            return Err(Error::IllConditionedFit(format!(
                "recovery condition number {cond:e}"
            )));
        }
        let pinv = svd
            .pseudo_inverse(1e-14 * smax)
            .map_err(|e| Error::IllConditionedFit(e.to_string()))?;
        Ok(Fitter {
            indices,
            dirs,
            pinv,
            vander: v,
            cond,
        })
    }

    /// Fits samples y_s at the directions; returns (coefficients, relative residual).
    fn fit(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let c = &self.pinv * y;
        let r = (&self.vander * &c - y).amax();
        let scale = y.amax().max(1e-300);
        (c, r / scale)
    }
}

/// Matrix of L restricted to degree-ℓ homogeneous polynomials.
pub fn assemble_l_ell(
    d: usize,
    l: u32,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    n_samples: usize,
) -> Result<FittedOperator> {
    let rule = CollisionRule::new(kernel, quad);
    assemble_l_ell_rule(d, l, &rule, n_samples, 0x5eed_0000 + l as u64)
}

fn assemble_l_ell_rule(
    d: usize,
    l: u32,
    rule: &CollisionRule,
    n_samples: usize,
    seed: u64,
) -> Result<FittedOperator> {
    let f = Fitter::new(d, l, n_samples, seed)?;
    let m = f.indices.len();
    let mut mat = DMatrix::zeros(m, m);
    let mut worst: f64 = 0.0;
    for (c, a) in f.indices.iter().enumerate() {
        let y = DVector::from_iterator(
            f.dirs.len(),
            f.dirs.iter().map(|k| {
                rule.sum(k, |p, q| {
                    Complex64::new(monomial(a, p) + monomial(a, q), 0.0)
                })
                .re
            }),
        );
        let (coef, res) = f.fit(&y);
        worst = worst.max(res);
        mat.set_column(c, &coef);
    }
    Ok(FittedOperator {
        matrix: mat,
        condition_number: f.cond,
        fit_residual: worst,
    })
}

/// Exact matrix of P ↦ (A_β k)·∂ₖP on degree-ℓ polynomials.
pub fn assemble_drift(d: usize, l: u32, a_beta: &DeformationMatrix) -> DMatrix<f64> {
    let idx = multi_indices(d, l);
    let m = idx.len();
    let mut mat = DMatrix::zeros(m, m);
    for (c, a) in idx.iter().enumerate() {
        for j in 0..d {
            if a[j] == 0 {
                continue;
            }
            for q in 0..d {
                let coef = a[j] as f64 * a_beta.get(j, q);
                if coef == 0.0 {
                    continue;
                }
                let mut b = *a;
                b[j] -= 1;
                b[q] += 1;
                mat[(position(d, l, &b), c)] += coef;
            }
        }
    }
    mat
}

/// K_ℓ(k) evaluated directly at one point.
fn k_source_at(qs: &[HomPoly], l: u32, rule: &CollisionRule, k: &Vec3) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 2..l.saturating_sub(1) {
        let m = l - j;
        if m < 2 {
            continue;
        }
        let (qj, qm) = (&qs[(j - 2) as usize], &qs[(m - 2) as usize]);
        acc += rule.sum(k, |p, q| qj.eval(p) * qm.eval(q));
    }
    acc
}

/// K_ℓ = Σ_{j+m=ℓ, j,m≥2} ∫ g Q_j(k₊)Q_m(k₋) dn. `qs[i]` holds Q_{i+2}.
pub fn k_source(
    qs: &[HomPoly],
    l: u32,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    n_samples: usize,
) -> Result<HomPoly> {
    let rule = CollisionRule::new(kernel, quad);
    k_source_rule(qs, l, &rule, n_samples, 0x50c0_0000 + l as u64)
}

fn k_source_rule(
    qs: &[HomPoly],
    l: u32,
    rule: &CollisionRule,
    n_samples: usize,
    seed: u64,
) -> Result<HomPoly> {
    let d = rule.dim();
    if l < 4 {
        return Ok(HomPoly::zero(d, l));
    }
    if qs.len() < (l - 3) as usize {
        return Err(Error::InvalidArgument(format!(
            "k_source for ℓ={l} needs Q_2..Q_{}",
            l - 2
        )));
    }
    let f = Fitter::new(d, l, n_samples, seed)?;
    let vals: Vec<Complex64> = f.dirs.iter().map(|k| k_source_at(qs, l, rule, k)).collect();
    let (re, _) = f.fit(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.re),
    ));
    let (im, _) = f.fit(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.im),
    ));
    let coeffs = re
        .iter()
        .zip(im.iter())
        .map(|(a, b)| Complex64::new(*a, *b))
        .collect();
    HomPoly::from_coeffs(d, l, coeffs)
}

#[derive(Clone, Debug, Serialize)]
pub struct HierarchyLevel {
    pub degree: u32,
    pub residual: f64,
    pub source_norm: f64,
    pub condition_number: f64,
    pub fit_condition_number: f64,
    pub resolvent_norm: f64,
    pub resolvent_bound: f64,
}

#[derive(Clone, Debug)]
pub struct HierarchyResult {
    /// Q_2..Q_M.
    pub q: Vec<HomPoly>,
    pub levels: Vec<HierarchyLevel>,
}

impl HierarchyResult {
    pub fn get(&self, l: u32) -> Option<&HomPoly> {
        self.q.get((l as usize).checked_sub(2)?)
    }
}

fn solve_complex(s: &DMatrix<f64>, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let lu = s.clone().lu();
    let re = DVector::from_iterator(rhs.len(), rhs.iter().map(|c| c.re));
    let im = DVector::from_iterator(rhs.len(), rhs.iter().map(|c| c.im));
    let xr = lu
        .solve(&re)
        .ok_or_else(|| Error::SingularSystem("LU solve failed".into()))?;
    let xi = lu
        .solve(&im)
        .ok_or_else(|| Error::SingularSystem("LU solve failed".into()))?;
    Ok(xr
        .iter()
        .zip(xi.iter())
        .map(|(a, b)| Complex64::new(*a, *b))
        .collect())
}

/// Estimates the ‖·‖_ℓ operator norm of `m` over random polynomials.
fn sampled_operator_norm(d: usize, l: u32, m: &DMatrix<f64>, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.nrows();
    let mut best: f64 = 0.0;
    for t in 0..trials {
        let v: Vec<f64> = if t < n {
            (0..n).map(|i| if i == t { 1.0 } else { 0.0 }).collect()
        } else {
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        };
        let x = DVector::from_vec(v);
        let y = m * &x;
        let px = HomPoly::from_real(d, l, x.as_slice()).expect("sizes match");
        let py = HomPoly::from_real(d, l, y.as_slice()).expect("sizes match");
        let nx = sup_norm_sampled(d, &|k| px.eval(k).norm(), 600);
        let ny = sup_norm_sampled(d, &|k| py.eval(k).norm(), 600);
        if nx > 0.0 {
            best = best.max(ny / nx);
        }
    }
    best
}

/// Solves (I - L_ℓ + (A_β k)·∂ₖ) Q_ℓ = K_ℓ for ℓ = 3..M with Q_2 = -½N:k⊗k.
pub fn solve_hierarchy(
    a: &DeformationMatrix,
    beta: f64,
    n: &SymMatrix,
    m_max: u32,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
) -> Result<HierarchyResult> {
    let d = a.dim();
    if !(2..=8).contains(&m_max) {
        return Err(Error::InvalidArgument(format!(
            "M must lie in 2..=8, got {m_max}"
        )));
    }
    let rule = CollisionRule::new(kernel, quad);
    let a_beta = a.shifted(beta);
    let mut qs = vec![HomPoly::quadratic_form(n)];
    let mut levels = Vec::new();
    for l in 3..=m_max {
        let dim_h = multi_indices(d, l).len();
        let ns = 4 * dim_h;
        let lmat = assemble_l_ell_rule(d, l, &rule, ns, 0x5eed_0000 + l as u64)?;
        let drift = assemble_drift(d, l, &a_beta);
        let sys = DMatrix::identity(dim_h, dim_h) - &lmat.matrix + drift;
        let sv = sys.clone().singular_values();
        let cond = sv.max() / sv.min();
        if !(sv.min() > 1e-12 * sv.max()) {
            return Err(Error::SingularSystem(format!(
                "ℓ={l}: condition number {cond:e}"
            )));
        }
        let k = k_source_rule(&qs, l, &rule, ns, 0x50c0_0000 + l as u64)?;
        let sol = solve_complex(&sys, k.coeffs())?;
        let ql = HomPoly::from_coeffs(d, l, sol)?;
        // independent residual at fresh directions, by direct quadrature
        let check = random_directions(d, 50, 0xc4ec_0000 + l as u64);
        let mut res: f64 = 0.0;
        for kk in &check {
            let lq = rule.sum(kk, |p, q| ql.eval(p) + ql.eval(q));
            let ak = crate::linalg::mat_vec(&crate::linalg::padded(a_beta.matrix()), kk);
            let dq = directional_derivative(&ql, kk, &ak);
            let lhs = ql.eval(kk) - lq + dq;
            let rhs = k_source_at(&qs, l, &rule, kk);
            res = res.max((lhs - rhs).norm());
        }
        let knorm = k.sup_norm();
        let inv = sys
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem(format!("ℓ={l}")))?;
        let resolvent_norm = sampled_operator_norm(d, l, &inv, 60, 0x0e50_0000 + l as u64);
        let lam = lambda_p(kernel, quad, l as f64)?;
        levels.push(HierarchyLevel {
            degree: l,
            residual: res,
            source_norm: knorm,
            condition_number: cond,
            fit_condition_number: lmat.condition_number,
            resolvent_norm,
            resolvent_bound: 2.0 / lam.abs(),
        });
        qs.push(ql);
    }
    Ok(HierarchyResult { q: qs, levels })
}

/// ∇P(k)·v computed exactly from the coefficients.
pub fn directional_derivative(p: &HomPoly, k: &Vec3, v: &Vec3) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, c) in p.indices.iter().zip(&p.coeffs) {
        for j in 0..p.dim {
            if a[j] == 0 {
                continue;
            }
            let mut b = *a;
            b[j] -= 1;
            acc += c * (a[j] as f64 * monomial(&b, k) * v[j]);
        }
    }
    acc
}

/// Gaussian baseline Q̄_ℓ of e^{-|k|²}: (-1)^j |k|^{2j}/j! for ℓ = 2j, zero for odd ℓ.
pub fn gaussian_baseline(d: usize, l: u32) -> HomPoly {
    if l % 2 == 1 {
        return HomPoly::zero(d, l);
    }
    let j = l / 2;
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    HomPoly::radial_power(d, j, sign / factorial(j))
}

#[derive(Clone, Debug, Serialize)]
pub struct BaselineReport {
    /// (ℓ, ‖(I - L_ℓ)Q̄_ℓ - K̄_ℓ‖_ℓ, ‖K̄_ℓ‖_ℓ)
    pub levels: Vec<(u32, f64, f64)>,
}

/// Checks (I - L_ℓ)Q̄_ℓ = K̄_ℓ for ℓ = 3..M by direct quadrature.
pub fn gaussian_baseline_check(
    m_max: u32,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
) -> Result<BaselineReport> {
    let d = kernel.dim();
    let rule = CollisionRule::new(kernel, quad);
    let qbar: Vec<HomPoly> = (2..=m_max).map(|l| gaussian_baseline(d, l)).collect();
    let mut levels = Vec::new();
    for l in 3..=m_max {
        let q = &qbar[(l - 2) as usize];
        let resid = |k: &Vec3| -> f64 {
            let lq = rule.sum(k, |p, r| q.eval(p) + q.eval(r));
            (q.eval(k) - lq - k_source_at(&qbar, l, &rule, k)).norm()
        };
        let res = sup_norm_sampled(d, &resid, 600);
        let kn = sup_norm_sampled(d, &|k: &Vec3| k_source_at(&qbar, l, &rule, k).norm(), 600);
        levels.push((l, res, kn));
    }
    Ok(BaselineReport { levels })
}

/// Empirical C_ℓ with sup_α|c_α| ≤ C_ℓ‖P‖_ℓ over 10⁴ random polynomials
/// (random sparsity pattern, Gaussian coefficients on the support).
pub fn norm_equivalence_constant(d: usize, l: u32, seed: u64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = multi_indices(d, l);
    let m = idx.len();
    let mut best: f64 = 0.0;
    let pts = sphere_points(d, 400);
    for t in 0..10_000 {
        let support = 1 + (t % m);
        let mut c = vec![Complex64::new(0.0, 0.0); m];
        for _ in 0..support {
            let i = rng.random_range(0..m);
            c[i] = Complex64::new(rng.sample(StandardNormal), 0.0);
        }
        let p = HomPoly::from_coeffs(d, l, c).expect("sizes match");
        let cmax = p.max_coeff();
        if cmax == 0.0 {
            continue;
        }
        // cheap screen, exact refinement only for candidates
        let coarse = pts.iter().map(|k| p.eval(k).norm()).fold(0.0, f64::max);
        if cmax / coarse <= best {
            continue;
        }
        let s = p.sup_norm();
        best = best.max(cmax / s);
    }
    best
}

/// Probabilists' Hermite polynomial He_n coefficients (ascending powers).
fn hermite_e(n: u32) -> Vec<f64> {
    let mut h0 = vec![1.0];
    if n == 0 {
        return h0;
    }
    let mut h1 = vec![0.0, 1.0];
    for k in 1..n {
        // He_{k+1} = x He_k - k He_{k-1}
        let mut h2 = vec![0.0; (k + 2) as usize];
        for (i, c) in h1.iter().enumerate() {
            h2[i + 1] += c;
        }
        for (i, c) in h0.iter().enumerate() {
            h2[i] -= k as f64 * c;
        }
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Orthonormal Hermite family for N(0, 2I): H_α(v) = Π He_{α_j}(v_j/√2)/√(α_j!).
#[derive(Clone, Debug)]
pub struct HermiteFamily {
    pub dim: usize,
    pub indices: Vec<MultiIndex>,
    one_d: Vec<Vec<f64>>,
}

impl HermiteFamily {
    pub fn new(dim: usize, m_max: u32) -> Self {
        let indices: Vec<MultiIndex> = (0..=m_max).flat_map(|l| multi_indices(dim, l)).collect();
        let one_d = (0..=m_max)
            .map(|n| {
                let s = factorial(n).sqrt();
                hermite_e(n)
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c / s / std::f64::consts::SQRT_2.powi(i as i32))
                    .collect()
            })
            .collect();
        HermiteFamily {
            dim,
            indices,
            one_d,
        }
    }

    pub fn eval(&self, i: usize, v: &Vec3) -> f64 {
        let a = &self.indices[i];
        let mut out = 1.0;
        for j in 0..self.dim {
            let c = &self.one_d[a[j] as usize];
            let mut s = 0.0;
            for ci in c.iter().rev() {
                s = s * v[j] + ci;
            }
            out *= s;
        }
        out
    }

    /// Coefficients of H_α in the monomials v^β, |β| ≤ |α|, as (β-position, value).
    fn monomial_expansion(&self, i: usize) -> Vec<(usize, f64)> {
        let a = &self.indices[i];
        let mut terms: Vec<(MultiIndex, f64)> = vec![([0, 0, 0], 1.0)];
        for j in 0..self.dim {
            let c = &self.one_d[a[j] as usize];
            let mut next = Vec::new();
            for (b, v) in &terms {
                for (p, cp) in c.iter().enumerate() {
                    if *cp == 0.0 {
                        continue;
                    }
                    let mut nb = *b;
                    nb[j] += p as u32;
                    next.push((nb, v * cp));
                }
            }
            terms = next;
        }
        terms
            .into_iter()
            .map(|(b, v)| {
                (
                    self.indices
                        .iter()
                        .position(|x| *x == b)
                        .expect("lower degree index"),
                    v,
                )
            })
            .collect()
    }

    /// P_α(m) = E[H_α] for a moment vector m indexed like `indices`.
    pub fn project_moments(&self, m: &[f64]) -> Vec<f64> {
        (0..self.indices.len())
            .map(|i| {
                self.monomial_expansion(i)
                    .iter()
                    .map(|(p, c)| c * m[*p])
                    .sum()
            })
            .collect()
    }
}

/// Moments E[v^α] of N(0, 2I).
pub fn gaussian_moments(indices: &[MultiIndex]) -> Vec<f64> {
    indices
        .iter()
        .map(|a| {
            a.iter()
                .map(|&e| {
                    if e % 2 == 1 {
                        0.0
                    } else {
                        // (e-1)!! · 2^{e/2}
                        let mut df = 1.0;
                        let mut k = e as i64 - 1;
                        while k > 1 {
                            df *= k as f64;
                            k -= 2;
                        }
                        df * 2f64.powi(e as i32 / 2)
                    }
                })
                .product()
        })
        .collect()
}

/// Ball quadrature: radial Gauss-Legendre on [0, R] × sphere rule, with the
/// N(0,2I) density folded into the weights.
fn ball_rule(
    d: usize,
    r: f64,
    n_radial: usize,
    sphere_res: usize,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let (x, w) = gauss_legendre(n_radial);
    let sq = build_quadrature(d, sphere_res)?;
    let nodes = sq.nodes();
    let norm = (4.0 * std::f64::consts::PI).powf(d as f64 / 2.0);
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for (xi, wi) in x.iter().zip(&w) {
        let rr = 0.5 * r * (xi + 1.0);
        let wr = 0.5 * r * wi * rr.powi(d as i32 - 1) * (-rr * rr / 4.0).exp() / norm;
        for (n, wn) in nodes.iter().zip(sq.weights()) {
            pts.push([n[0] * rr, n[1] * rr, n[2] * rr]);
            wts.push(wr * wn);
        }
    }
    Ok((pts, wts))
}

/// J_{αβ;R} = ∫_{|v|≤R} H_α H_β f_g dv.
pub fn hermite_gram(fam: &HermiteFamily, r: f64) -> Result<DMatrix<f64>> {
    let (pts, wts) = ball_rule(fam.dim, r, 96, 24)?;
    let n = fam.indices.len();
    let mut j = DMatrix::zeros(n, n);
    let mut hv = vec![0.0; n];
    for (p, w) in pts.iter().zip(&wts) {
        for (i, h) in hv.iter_mut().enumerate() {
            *h = fam.eval(i, p);
        }
        for a in 0..n {
            let wa = w * hv[a];
            for b in a..n {
                j[(a, b)] += wa * hv[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            j[(a, b)] = j[(b, a)];
        }
    }
    Ok(j)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompatibleDensity {
    pub dim: usize,
    pub radius: f64,
    pub multi_indices: Vec<Vec<u32>>,
    pub xi: Vec<f64>,
    pub target_moments: Vec<f64>,
    pub realized_moments: Vec<f64>,
    pub gram_condition: f64,
    pub min_factor: f64,
    #[serde(skip)]
    family: Option<HermiteFamily>,
}

impl CompatibleDensity {
    /// f(v) = f_g(v)(1 + Σ ξ_β H_β(v) 1_{|v|≤R}).
    pub fn density(&self, v: &Vec3) -> f64 {
        let d = self.dim;
        let r2 = dot(v, v);
        let fg = (-r2 / 4.0).exp() / (4.0 * std::f64::consts::PI).powf(d as f64 / 2.0);
        fg * self.factor(v)
    }

    pub fn factor(&self, v: &Vec3) -> f64 {
        let fam = self
            .family
            .as_ref()
            .expect("density built by construct_compatible_density");
        if dot(v, v) > self.radius * self.radius {
            return 1.0;
        }
        1.0 + self
            .xi
            .iter()
            .enumerate()
            .map(|(i, x)| x * fam.eval(i, v))
            .sum::<f64>()
    }

    pub fn max_moment_error(&self) -> f64 {
        self.target_moments
            .iter()
            .zip(&self.realized_moments)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Moments m_α (|α| ≤ M) encoded by Q_ℓ(k) = (-i)^ℓ Σ m_α k^α/α!, with m_0 = 1
/// and vanishing first moments. `qs[i]` holds Q_{i+2}.
pub fn moments_from_polys(
    d: usize,
    qs: &[HomPoly],
    m_max: u32,
) -> Result<(Vec<MultiIndex>, Vec<f64>)> {
    let indices: Vec<MultiIndex> = (0..=m_max).flat_map(|l| multi_indices(d, l)).collect();
    let mut m = vec![0.0; indices.len()];
    m[0] = 1.0;
    for l in 2..=m_max {
        let q = qs
            .get((l - 2) as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("missing Q_{l}")))?;
        let il = Complex64::i().powu(l);
        for (a, c) in q.indices().iter().zip(q.coeffs()) {
            let v = c * il * multi_factorial(a);
            let scale = c.norm().max(1.0);
            if v.im.abs() > 1e-8 * scale {
                return Err(Error::InvalidArgument(format!(
                    "moment {a:?} is not real: {v}"
                )));
            }
            let pos = indices.iter().position(|x| x == a).expect("index present");
            m[pos] = v.re;
        }
    }
    Ok((indices, m))
}

/// Builds f = f_g(1 + Σ ξ_β H̃_{β,R}) whose moments up to order M equal those of `qs`.
pub fn construct_compatible_density(
    qs: &[HomPoly],
    m_max: u32,
    radius: f64,
) -> Result<CompatibleDensity> {
    let d = qs
        .first()
        .map(|q| q.dim())
        .ok_or_else(|| Error::InvalidArgument("empty Q list".into()))?;
    let (indices, target) = moments_from_polys(d, qs, m_max)?;
    let fam = HermiteFamily::new(d, m_max);
    let j = hermite_gram(&fam, radius)?;
    let sv = j.clone().singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < 1e6) {
        return Err(Error::SingularGram(format!(
            "Gram condition number {cond:e}"
        )));
    }
    let gm = gaussian_moments(&indices);
    let p_target = fam.project_moments(&target);
    let p_gauss = fam.project_moments(&gm);
    let rhs = DVector::from_iterator(
        p_target.len(),
        p_target.iter().zip(&p_gauss).map(|(a, b)| a - b),
    );
    let xi = j
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularGram("solve failed".into()))?;
    // realized moments: Gaussian moments plus truncated corrections on the ball
    let (pts, wts) = ball_rule(d, radius, 96, 24)?;
    let mut realized = gm.clone();
    let mut min_factor = f64::INFINITY;
    for (p, w) in pts.iter().zip(&wts) {
        let pert: f64 = xi.iter().enumerate().map(|(i, x)| x * fam.eval(i, p)).sum();
        min_factor = min_factor.min(1.0 + pert);
        for (a, r) in indices.iter().zip(realized.iter_mut()) {
            *r += w * pert * monomial(a, p);
        }
    }
    // nonnegativity on a Cartesian check grid inside the ball
    let nchk: usize = if d == 3 { 41 } else { 201 };
    let hchk = 2.0 * radius / (nchk - 1) as f64;
    let total = nchk.pow(d as u32);
    for idx in 0..total {
        let mut v = [0.0; 3];
        let mut rest = idx;
        for x in v.iter_mut().take(d) {
            *x = -radius + hchk * (rest % nchk) as f64;
            rest /= nchk;
        }
        if dot(&v, &v) > radius * radius {
            continue;
        }
        let pert: f64 = xi
            .iter()
            .enumerate()
            .map(|(i, x)| x * fam.eval(i, &v))
            .sum();
        min_factor = min_factor.min(1.0 + pert);
    }
    let out = CompatibleDensity {
        dim: d,
        radius,
        multi_indices: indices.iter().map(|a| a[..d].to_vec()).collect(),
        xi: xi.iter().copied().collect(),
        target_moments: target,
        realized_moments: realized,
        gram_condition: cond,
        min_factor,
        family: Some(fam),
    };
    if min_factor < 0.0 {
        return Err(Error::NegativeDensity(format!(
            "min of 1 + Σξ H̃ = {min_factor:e}"
        )));
    }
    Ok(out)
}
