//! Sampled characteristic functions on a Cartesian k-grid.
//!
//! Values are interpolated as `J(x) + |x|^p · I[ρ](x)` where
//! `J(x) = φ(0)·exp(-½ B:x⊗x)` is the Gaussian base (zero when no base is set),
//! `ρ_i = (φ_i - J(k_i)) / |k_i|^p` are nodal remainder ratios and `I` is
//! multilinear interpolation. The scheme is exact at nodes, exact for the base
//! Gaussian and for `c|k|^p`, and linear with nonnegative weights in the
//! nodal values.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, SymMatrix, Vec3};

/// Grid layout: `n_axis` cells per axis on `[-r_max, r_max]`, i.e.
/// `n_axis + 1` nodes per axis with spacing `2 r_max / n_axis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub dim: usize,
    pub n_axis: usize,
    pub r_max: f64,
}

impl GridGeometry {
    pub fn new(dim: usize, n_axis: usize, r_max: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDimension(dim));
        }
        if n_axis < 2 || n_axis % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_axis must be even and >= 2, got {n_axis}"
            )));
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "r_max must be positive, got {r_max}"
            )));
        }
        Ok(GridGeometry { dim, n_axis, r_max })
    }

    /// Defaults: R = 8 with 64 cells (d = 3) or 128 cells (d = 2).
    pub fn default_for(dim: usize) -> Result<Self> {
        GridGeometry::new(dim, if dim == 2 { 128 } else { 64 }, 8.0)
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.r_max / self.n_axis as f64
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.n_axis + 1
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis().pow(self.dim as u32)
    }

    pub fn origin_index(&self) -> usize {
        (self.node_count() - 1) / 2
    }

    /// Multi-index of a node (row-major, last axis fastest).
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let m = self.points_per_axis();
        if self.dim == 3 {
            [idx / (m * m), (idx / m) % m, idx % m]
        } else {
            [idx / m, idx % m, 0]
        }
    }

    #[inline]
    pub fn node(&self, idx: usize) -> Vec3 {
        let h = self.spacing();
        let mi = self.multi_index(idx);
        let mut k = [0.0; 3];
        for j in 0..self.dim {
            k[j] = -self.r_max + h * mi[j] as f64;
        }
        k
    }

    /// Index of the node `-k`.
    #[inline]
    pub fn mirror(&self, idx: usize) -> usize {
        self.node_count() - 1 - idx
    }

    /// Squared radius in units of h², an integer labelling node shells.
    pub fn shell(&self, idx: usize) -> u64 {
        let c = self.n_axis / 2;
        let mi = self.multi_index(idx);
        (0..self.dim)
            .map(|j| (mi[j] as i64 - c as i64).pow(2) as u64)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct CharFnGrid {
    geom: GridGeometry,
    values: Vec<Complex64>,
    base: Option<SymMatrix>,
    weight_exponent: f64,
    base_pad: [[f64; 3]; 3],
    ratios: Vec<Complex64>,
    origin_value: Complex64,
}

impl CharFnGrid {
    /// Builds a grid from nodal values. `base` is the Gaussian tail matrix
    /// B_tail (None: no base); `weight_exponent` is p in the remainder weight.
    pub fn from_values(
        geom: GridGeometry,
        values: Vec<Complex64>,
        base: Option<SymMatrix>,
        weight_exponent: f64,
    ) -> Result<Self> {
        if values.len() != geom.node_count() {
            return Err(Error::GeometryMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                geom.node_count()
            )));
        }
        if let Some(b) = &base {
            if b.dim() != geom.dim {
                return Err(Error::GeometryMismatch("base matrix dimension".into()));
            }
        }
        if !(weight_exponent >= 0.0) {
            return Err(Error::InvalidArgument(
                "weight exponent must be >= 0".into(),
            ));
        }
        let base_pad = base.as_ref().map(|b| b.padded()).unwrap_or([[0.0; 3]; 3]);
        let origin_value = values[geom.origin_index()];
        let mut g = CharFnGrid {
            geom,
            values,
            base,
            weight_exponent,
            base_pad,
            ratios: Vec::new(),
            origin_value,
        };
        g.ratios = g.compute_ratios();
        Ok(g)
    }

    /// Samples `f` at every node.
    pub fn from_fn<F>(
        geom: GridGeometry,
        base: Option<SymMatrix>,
        weight_exponent: f64,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&Vec3) -> Complex64 + Sync,
    {
        let values = (0..geom.node_count())
            .into_par_iter()
            .map(|i| f(&geom.node(i)))
            .collect();
        CharFnGrid::from_values(geom, values, base, weight_exponent)
    }

    /// exp(-½ B:k⊗k) with base B, weight exponent p.
    pub fn gaussian(geom: GridGeometry, b: &SymMatrix, p: f64) -> Result<Self> {
        let bp = b.padded();
        CharFnGrid::from_fn(geom, Some(b.clone()), p, |k| {
            Complex64::new((-0.5 * quad(&bp, k)).exp(), 0.0)
        })
    }

    fn compute_ratios(&self) -> Vec<Complex64> {
        let o = self.geom.origin_index();
        (0..self.values.len())
            .into_par_iter()
            .map(|i| {
                let k = self.geom.node(i);
                let r2 = dot(&k, &k);
                let rem = self.values[i] - self.base_value(&k);
                if i == o {
                    if self.weight_exponent == 0.0 {
                        rem
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                } else {
                    rem / self.weight(r2)
                }
            })
            .collect()
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn dim(&self) -> usize {
        self.geom.dim
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn base(&self) -> Option<&SymMatrix> {
        self.base.as_ref()
    }

    pub fn weight_exponent(&self) -> f64 {
        self.weight_exponent
    }

    pub fn value_at_origin(&self) -> Complex64 {
        self.origin_value
    }

    /// Same values, different base or weight exponent.
    pub fn with_base(&self, base: Option<SymMatrix>, weight_exponent: f64) -> Result<Self> {
        CharFnGrid::from_values(self.geom, self.values.clone(), base, weight_exponent)
    }

    /// Same layout and base with the origin value replaced.
    pub fn pinned_origin(mut self, v: Complex64) -> Result<Self> {
        let o = self.geom.origin_index();
        self.values[o] = v;
        CharFnGrid::from_values(self.geom, self.values, self.base, self.weight_exponent)
    }

    #[inline]
    fn weight(&self, r2: f64) -> f64 {
        let p = self.weight_exponent;
        if p == 0.0 {
            1.0
        } else if p == 4.0 {
            r2 * r2
        } else if p == 2.0 {
            r2
        } else {
            r2.powf(0.5 * p)
        }
    }

    #[inline]
    fn base_value(&self, x: &Vec3) -> Complex64 {
        if self.base.is_none() {
            return Complex64::new(0.0, 0.0);
        }
        self.origin_value * (-0.5 * quad(&self.base_pad, x)).exp()
    }

    /// Interpolated value at any k.
    pub fn eval(&self, x: &Vec3) -> Complex64 {
        let r2 = dot(x, x);
        if r2 == 0.0 {
            return self.origin_value;
        }
        let r = self.geom.r_max;
        let mut xb = *x;
        for j in 0..self.geom.dim {
            xb[j] = xb[j].clamp(-r, r);
        }
        self.base_value(x) + self.ratio_at(&xb, true) * self.weight(r2)
    }

    /// Multilinear interpolation of the ratios; when `fix_origin`, the origin
    /// ratio is replaced by the ratio interpolated at radius 1.01·√d·h along x.
    #[inline]
    fn ratio_at(&self, x: &Vec3, fix_origin: bool) -> Complex64 {
        let g = &self.geom;
        let n = g.n_axis;
        let inv_h = n as f64 / (2.0 * g.r_max);
        let c = n / 2;
        let mut base_idx = [0usize; 3];
        let mut t = [0.0; 3];
        let mut near_origin = true;
        for j in 0..g.dim {
            let u = (x[j] + g.r_max) * inv_h;
            let i = u.floor().clamp(0.0, (n - 1) as f64);
            base_idx[j] = i as usize;
            t[j] = (u - i).clamp(0.0, 1.0);
            near_origin &= base_idx[j] == c || base_idx[j] + 1 == c;
        }
        if near_origin && fix_origin && self.weight_exponent > 0.0 {
            return self.ratio_near_origin(x, &base_idx, &t);
        }
        let m = g.points_per_axis();
        let r = &self.ratios;
        if g.dim == 3 {
            let i0 = (base_idx[0] * m + base_idx[1]) * m + base_idx[2];
            let (s0, s1) = (m * m, m);
            let c00 = r[i0] * (1.0 - t[2]) + r[i0 + 1] * t[2];
            let c01 = r[i0 + s1] * (1.0 - t[2]) + r[i0 + s1 + 1] * t[2];
            let c10 = r[i0 + s0] * (1.0 - t[2]) + r[i0 + s0 + 1] * t[2];
            let c11 = r[i0 + s0 + s1] * (1.0 - t[2]) + r[i0 + s0 + s1 + 1] * t[2];
            let c0 = c00 * (1.0 - t[1]) + c01 * t[1];
            let c1 = c10 * (1.0 - t[1]) + c11 * t[1];
            c0 * (1.0 - t[0]) + c1 * t[0]
        } else {
            let i0 = base_idx[0] * m + base_idx[1];
            let c0 = r[i0] * (1.0 - t[1]) + r[i0 + 1] * t[1];
            let c1 = r[i0 + m] * (1.0 - t[1]) + r[i0 + m + 1] * t[1];
            c0 * (1.0 - t[0]) + c1 * t[0]
        }
    }

    fn ratio_near_origin(&self, x: &Vec3, base_idx: &[usize; 3], t: &[f64; 3]) -> Complex64 {
        let g = &self.geom;
        let m = g.points_per_axis();
        let c = g.n_axis / 2;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut origin_w = 0.0;
        for corner in 0..1usize << g.dim {
            let mut w = 1.0;
            let mut idx = 0usize;
            let mut is_origin = true;
            for j in 0..g.dim {
                let bit = (corner >> j) & 1;
                let ij = base_idx[j] + bit;
                w *= if bit == 1 { t[j] } else { 1.0 - t[j] };
                idx = idx * m + ij;
                is_origin &= ij == c;
            }
            if w == 0.0 {
                continue;
            }
            if is_origin {
                origin_w = w;
            } else {
                acc += self.ratios[idx] * w;
            }
        }
        if origin_w > 0.0 {
            let rt = 1.01 * (g.dim as f64).sqrt() * g.spacing();
            let nx = dot(x, x).sqrt();
            let y = [x[0] / nx * rt, x[1] / nx * rt, x[2] / nx * rt];
            acc += self.ratio_at(&y, false) * origin_w;
        }
        acc
    }

    /// Node-wise map producing a new grid with the given base.
    pub fn map<F>(&self, base: Option<SymMatrix>, weight_exponent: f64, f: F) -> Result<Self>
    where
        F: Fn(&Vec3, Complex64) -> Complex64 + Sync,
    {
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|i| f(&self.geom.node(i), self.values[i]))
            .collect();
        CharFnGrid::from_values(self.geom, values, base, weight_exponent)
    }

    /// a·self + b·other with the base blended so that the second-order part
    /// of the combination matches: B = (a o₁ B₁ + b o₂ B₂) / (a o₁ + b o₂).
    pub fn lin_comb_blended(&self, a: f64, other: &CharFnGrid, b: f64) -> Result<Self> {
        let base = match (&self.base, &other.base) {
            (Some(b1), Some(b2)) => {
                let w1 = a * self.origin_value.re;
                let w2 = b * other.origin_value.re;
                let o = w1 + w2;
                if o.abs() > 1e-12 {
                    Some(b1.scale(w1 / o).add(&b2.scale(w2 / o)))
                } else {
                    Some(b1.clone())
                }
            }
            (Some(b1), None) => Some(b1.clone()),
            (None, Some(b2)) => Some(b2.clone()),
            (None, None) => None,
        };
        self.lin_comb(a, other, b, base)
    }

    /// a·self + b·other with the given base.
    pub fn lin_comb(
        &self,
        a: f64,
        other: &CharFnGrid,
        b: f64,
        base: Option<SymMatrix>,
    ) -> Result<Self> {
        self.check_same_geometry(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x * a + y * b)
            .collect();
        CharFnGrid::from_values(self.geom, values, base, self.weight_exponent)
    }

    /// Node-wise |self - other| as a base-free grid.
    pub fn abs_diff(&self, other: &CharFnGrid, weight_exponent: f64) -> Result<Self> {
        self.check_same_geometry(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| Complex64::new((x - y).norm(), 0.0))
            .collect();
        CharFnGrid::from_values(self.geom, values, None, weight_exponent)
    }

    pub fn check_same_geometry(&self, other: &CharFnGrid) -> Result<()> {
        if self.geom != other.geom {
            return Err(Error::GeometryMismatch(format!(
                "{:?} vs {:?}",
                self.geom, other.geom
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// max_k |φ(-k) - conj φ(k)|.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.values.len())
            .map(|i| (self.values[self.geom.mirror(i)] - self.values[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Checks the characteristic-function invariants with tolerance `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let o = self.origin_value;
        if (o - Complex64::new(1.0, 0.0)).norm() > tol {
            return Err(Error::InvariantViolation(format!("value at origin {o}")));
        }
        let m = self.max_abs();
        if m > 1.0 + tol {
            return Err(Error::InvariantViolation(format!("max |phi| = {m}")));
        }
        let h = self.hermitian_defect();
        if h > tol {
            return Err(Error::InvariantViolation(format!("Hermitian defect {h:e}")));
        }
        Ok(())
    }

    /// Values along `dir` (unit vector) at radii `0, dr, ..., r_end`.
    pub fn radial_slice(&self, dir: &Vec3, r_end: f64, n_points: usize) -> Vec<(f64, Complex64)> {
        (0..n_points)
            .map(|i| {
                let r = if n_points > 1 {
                    r_end * i as f64 / (n_points - 1) as f64
                } else {
                    0.0
                };
                (r, self.eval(&[dir[0] * r, dir[1] * r, dir[2] * r]))
            })
            .collect()
    }

    /// Writes the binary container (little endian):
    /// magic `CFGRID01`, d (u64), n_axis (u64), R_max (f64), B_tail (d·d f64,
    /// row-major, NaN when absent), weight exponent (f64), then interleaved
    /// re/im f64 per node in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.geom.dim;
        w.write_all(MAGIC)?;
        w.write_all(&(d as u64).to_le_bytes())?;
        w.write_all(&(self.geom.n_axis as u64).to_le_bytes())?;
        w.write_all(&self.geom.r_max.to_le_bytes())?;
        for i in 0..d {
            for j in 0..d {
                let v = self.base.as_ref().map(|b| b.get(i, j)).unwrap_or(f64::NAN);
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&self.weight_exponent.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a grid container".into()));
        }
        let d = read_u64(&mut r)? as usize;
        let n_axis = read_u64(&mut r)? as usize;
        let r_max = read_f64(&mut r)?;
        let geom = GridGeometry::new(d, n_axis, r_max)?;
        let mut b = Vec::with_capacity(d * d);
        for _ in 0..d * d {
            b.push(read_f64(&mut r)?);
        }
        let base = if b.iter().all(|x| x.is_nan()) {
            None
        } else {
            Some(SymMatrix::from_rows(d, &b)?)
        };
        let p = read_f64(&mut r)?;
        let mut values = Vec::with_capacity(geom.node_count());
        for _ in 0..geom.node_count() {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            values.push(Complex64::new(re, im));
        }
        CharFnGrid::from_values(geom, values, base, p)
    }
}

const MAGIC: &[u8; 8] = b"CFGRID01";

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[inline]
pub(crate) fn quad(b: &[[f64; 3]; 3], k: &Vec3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        s += k[i] * (b[i][0] * k[0] + b[i][1] * k[1] + b[i][2] * k[2]);
    }
    s
}

/// Free-function form of [`CharFnGrid::eval`].
pub fn eval_interp(grid: &CharFnGrid, k: &Vec3) -> Complex64 {
    grid.eval(k)
}
