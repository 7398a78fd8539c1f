//! Collision operators Γ and L and the transport semigroup on grids.

use num_complex::Complex64;
use rayon::prelude::*;

use super::grid::CharFnGrid;
use crate::error::Result;
use crate::kernel_quadrature::{q_coefficient, Frame, KernelSpec, SphereQuadrature};
use crate::linalg::{dot, mat_vec, DeformationMatrix, SymMatrix, Vec3};
use crate::second_moments::relaxation_rate;

/// Kernel-weighted quadrature ready for pole-aligned collision sums.
#[derive(Clone, Debug)]
pub struct CollisionRule {
    dim: usize,
    local: Vec<Vec3>,
    weights: Vec<f64>,
    q: f64,
    // antipodal pairs merged, present when W(n) = W(-n) for every node
    paired: Option<(Vec<Vec3>, Vec<f64>)>,
}

impl CollisionRule {
    pub fn new(kernel: &KernelSpec, quad: &SphereQuadrature) -> Self {
        let w = kernel.weighted(quad);
        let mut local = Vec::new();
        let mut weights = Vec::new();
        for (l, wi) in quad.local().iter().zip(w) {
            if wi != 0.0 {
                local.push(*l);
                weights.push(wi);
            }
        }
        let paired = pair_antipodes(&local, &weights);
        CollisionRule {
            dim: kernel.dim(),
            local,
            weights,
            q: q_coefficient(kernel, quad),
            paired,
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Σ_i W_i f(k₊,i, k₋,i) for k ≠ 0.
    #[inline]
    pub fn sum<F: FnMut(&Vec3, &Vec3) -> Complex64>(&self, k: &Vec3, mut f: F) -> Complex64 {
        let r = dot(k, k).sqrt();
        let khat = [k[0] / r, k[1] / r, k[2] / r];
        let frame = Frame::new(self.dim, &khat);
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, w) in self.local.iter().zip(&self.weights) {
            let n = frame.place(l);
            let kp = [
                0.5 * (k[0] + r * n[0]),
                0.5 * (k[1] + r * n[1]),
                0.5 * (k[2] + r * n[2]),
            ];
            let km = [k[0] - kp[0], k[1] - kp[1], k[2] - kp[2]];
            acc += f(&kp, &km) * *w;
        }
        acc
    }

    /// Same as `sum` for f symmetric in its two arguments; uses half the
    /// nodes when the weighted rule is antipodally symmetric.
    #[inline]
    pub fn sum_symmetric<F: FnMut(&Vec3, &Vec3) -> Complex64>(&self, k: &Vec3, mut f: F) -> Complex64 {
        let Some((local, weights)) = &self.paired else {
            return self.sum(k, f);
        };
        let r = dot(k, k).sqrt();
        let khat = [k[0] / r, k[1] / r, k[2] / r];
        let frame = Frame::new(self.dim, &khat);
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, w) in local.iter().zip(weights) {
            let n = frame.place(l);
            let kp = [0.5 * (k[0] + r * n[0]), 0.5 * (k[1] + r * n[1]), 0.5 * (k[2] + r * n[2])];
            let km = [k[0] - kp[0], k[1] - kp[1], k[2] - kp[2]];
            acc += f(&kp, &km) * *w;
        }
        acc
    }

    /// Base matrix of Γ applied to a Gaussian with matrix B: B - c(B - TrB/d I).
    pub fn gamma_base(&self, b: &SymMatrix) -> SymMatrix {
        b.sub(&b.deviator().scale(relaxation_rate(self.q, b.dim())))
    }
}

fn pair_antipodes(local: &[Vec3], weights: &[f64]) -> Option<(Vec<Vec3>, Vec<f64>)> {
    let n = local.len();
    let mut partner = vec![usize::MAX; n];
    for i in 0..n {
        if partner[i] != usize::MAX {
            continue;
        }
        let a = local[i];
        let j = (0..n).find(|&j| {
            j != i
                && partner[j] == usize::MAX
                && (0..3).all(|c| (local[j][c] + a[c]).abs() < 1e-12)
        })?;
        if (weights[i] - weights[j]).abs() > 1e-14 * weights[i].abs().max(weights[j].abs()) {
            return None;
        }
        partner[i] = j;
        partner[j] = i;
    }
    let mut l = Vec::with_capacity(n / 2);
    let mut w = Vec::with_capacity(n / 2);
    for i in 0..n {
        if i < partner[i] {
            l.push(local[i]);
            w.push(weights[i] + weights[partner[i]]);
        }
    }
    Some((l, w))
}

/// Evaluates `node_value(k)` on every node (origin gets `origin`), computing
/// only one node of each ±k pair when the input is Hermitian.
fn node_parallel<F>(grid: &CharFnGrid, hermitian: bool, origin: Complex64, f: F) -> Vec<Complex64>
where
    F: Fn(&Vec3) -> Complex64 + Sync,
{
    let g = *grid.geometry();
    let n = g.node_count();
    let o = g.origin_index();
    if hermitian {
        let half: Vec<Complex64> = (0..o).into_par_iter().map(|i| f(&g.node(i))).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (i, v) in half.iter().enumerate() {
            out[i] = *v;
            out[g.mirror(i)] = v.conj();
        }
        out[o] = origin;
        out
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| if i == o { origin } else { f(&g.node(i)) })
            .collect()
    }
}

fn is_hermitian(grid: &CharFnGrid) -> bool {
    let scale = grid.max_abs().max(1e-300);
    grid.hermitian_defect() <= 1e-14 * scale
}

/// (Γφ)(k) = Σ W_i φ(k₊)φ(k₋); Γφ(0) = φ(0)².
pub fn gamma_apply(grid: &CharFnGrid, rule: &CollisionRule) -> Result<CharFnGrid> {
    let o = grid.value_at_origin();
    let values = node_parallel(grid, is_hermitian(grid), o * o, |k| {
        rule.sum_symmetric(k, |a, b| grid.eval(a) * grid.eval(b))
    });
    let base = grid.base().map(|b| rule.gamma_base(b));
    CharFnGrid::from_values(*grid.geometry(), values, base, grid.weight_exponent())
}

/// (Lψ)(k) = Σ W_i [ψ(k₊) + ψ(k₋)]; Lψ(0) = 2ψ(0). Output has no base.
pub fn l_apply(grid: &CharFnGrid, rule: &CollisionRule) -> Result<CharFnGrid> {
    let o = grid.value_at_origin();
    let values = node_parallel(grid, is_hermitian(grid), o * 2.0, |k| {
        rule.sum_symmetric(k, |a, b| grid.eval(a) + grid.eval(b))
    });
    CharFnGrid::from_values(*grid.geometry(), values, None, grid.weight_exponent())
}

/// (E(t)φ)(k) = e^{-t} φ(e^{-tA}k). The base B becomes MᵀBM with M = e^{-tA}.
pub fn semigroup_apply(grid: &CharFnGrid, a: &DeformationMatrix, t: f64) -> Result<CharFnGrid> {
    semigroup_scaled(grid, a, t, (-t).exp())
}

/// φ(e^{-tA}k) scaled by `factor`.
pub(crate) fn semigroup_scaled(
    grid: &CharFnGrid,
    a: &DeformationMatrix,
    t: f64,
    factor: f64,
) -> Result<CharFnGrid> {
    let em = a.exp_padded(-t);
    let base = grid.base().map(|b| transport_base(b, a, t));
    let values = (0..grid.values().len())
        .into_par_iter()
        .map(|i| grid.eval(&mat_vec(&em, &grid.geometry().node(i))) * factor)
        .collect();
    CharFnGrid::from_values(*grid.geometry(), values, base, grid.weight_exponent())
}

/// MᵀBM with M = e^{-tA}.
pub fn transport_base(b: &SymMatrix, a: &DeformationMatrix, t: f64) -> SymMatrix {
    let m = crate::linalg::expm(&(a.matrix() * (-t)));
    SymMatrix::symmetrized(m.transpose() * b.matrix() * m)
}

/// Convenience wrappers taking the kernel and quadrature directly.
pub fn gamma_apply_with(
    grid: &CharFnGrid,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
) -> Result<CharFnGrid> {
    gamma_apply(grid, &CollisionRule::new(kernel, quad))
}

pub fn l_apply_with(
    grid: &CharFnGrid,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
) -> Result<CharFnGrid> {
    l_apply(grid, &CollisionRule::new(kernel, quad))
}

/// Γ applied pointwise to an analytic function (no grid), for consistency checks.
pub fn gamma_pointwise<F: Fn(&Vec3) -> Complex64>(
    rule: &CollisionRule,
    phi: F,
    k: &Vec3,
) -> Complex64 {
    if dot(k, k) == 0.0 {
        let o = phi(k);
        return o * o;
    }
    rule.sum(k, |a, b| phi(a) * phi(b))
}
