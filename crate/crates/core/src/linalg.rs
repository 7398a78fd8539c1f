//! Small dense linear algebra: symmetric matrices, deformation matrices and
//! the matrix exponential.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A vector in R^d stored with three slots; unused slots are zero when d = 2.
pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Converts a slice of length d into a padded vector.
pub fn vec3(v: &[f64]) -> Vec3 {
    let mut out = [0.0; 3];
    out[..v.len()].copy_from_slice(v);
    out
}

/// Real symmetric d x d matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries; asymmetry above 1e-12 (relative) is an error.
    pub fn from_rows(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {d}x{d} matrix, got {}",
                d * d,
                entries.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(d, d, entries))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidArgument("matrix is not square".into()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "matrix not symmetric (defect {asym:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Returns (m + m^T)/2 without checks.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let s = (&m + m.transpose()) * 0.5;
        SymMatrix { m: s }
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = DMatrix::zeros(d, d);
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = *v;
        }
        SymMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix { m: &self.m * s }
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix {
            m: &self.m + &other.m,
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix {
            m: &self.m - &other.m,
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.m.norm()
    }

    /// B : k (x) k for a padded vector.
    #[inline]
    pub fn quad_form(&self, k: &Vec3) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            let mut r = 0.0;
            for j in 0..d {
                r += self.m[(i, j)] * k[j];
            }
            s += k[i] * r;
        }
        s
    }

    /// Dense copy as a fixed 3x3 array (zero padded), for hot loops.
    pub fn padded(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                out[i][j] = self.m[(i, j)];
            }
        }
        out
    }

    /// Deviatoric part B - Tr(B)/d I.
    pub fn deviator(&self) -> Self {
        let d = self.dim();
        let t = self.trace() / d as f64;
        SymMatrix {
            m: &self.m - DMatrix::identity(d, d) * t,
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.m.clone().cholesky().is_some()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m.clone().symmetric_eigen().eigenvalues.min()
    }

    /// Lower Cholesky-type square root valid for semidefinite input
    /// (via the symmetric eigendecomposition).
    pub fn sqrt_factor(&self) -> Result<DMatrix<f64>> {
        let eig = self.m.clone().symmetric_eigen();
        let tol = 1e-12 * self.m.amax().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -tol) {
            return Err(Error::NotPositiveDefinite(format!(
                "matrix has eigenvalue {:e}",
                eig.eigenvalues.min()
            )));
        }
        let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
    }

    /// Upper-triangle coordinates with off-diagonal entries weighted by sqrt(2).
    pub fn to_weighted_vec(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                let w = if i == j {
                    1.0
                } else {
                    std::f64::consts::SQRT_2
                };
                out.push(self.m[(i, j)] * w);
            }
        }
        out
    }

    pub fn from_weighted_vec(d: usize, v: &[f64]) -> Self {
        let mut m = DMatrix::zeros(d, d);
        let mut c = 0;
        for i in 0..d {
            for j in i..d {
                let w = if i == j {
                    1.0
                } else {
                    std::f64::consts::FRAC_1_SQRT_2
                };
                m[(i, j)] = v[c] * w;
                m[(j, i)] = v[c] * w;
                c += 1;
            }
        }
        SymMatrix { m }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.m.row(i).iter().copied().collect())
            .collect()
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        SymMatrix::from_rows(n, &flat).map_err(serde::de::Error::custom)
    }
}

/// Real d x d deformation matrix A (not necessarily symmetric).
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMatrix {
    m: DMatrix<f64>,
}

impl DeformationMatrix {
    pub fn from_rows(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {d}x{d} matrix, got {}",
                d * d,
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(DeformationMatrix {
            m: DMatrix::from_row_slice(d, d, entries),
        })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "deformation matrix must be square");
        DeformationMatrix { m }
    }

    pub fn zeros(d: usize) -> Self {
        DeformationMatrix {
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn scaled_identity(d: usize, a: f64) -> Self {
        DeformationMatrix {
            m: DMatrix::identity(d, d) * a,
        }
    }

    /// Simple shear with the single entry A[0][1] = k.
    pub fn shear(d: usize, k: f64) -> Self {
        let mut m = DMatrix::zeros(d, d);
        m[(0, 1)] = k;
        DeformationMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Operator 2-norm sup_{|k|=1} |Ak|.
    pub fn norm(&self) -> f64 {
        self.m.clone().singular_values().max()
    }

    /// A + beta I.
    pub fn shifted(&self, beta: f64) -> Self {
        let d = self.dim();
        DeformationMatrix {
            m: &self.m + DMatrix::identity(d, d) * beta,
        }
    }

    pub fn transpose(&self) -> Self {
        DeformationMatrix {
            m: self.m.transpose(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        DeformationMatrix { m: &self.m * s }
    }

    /// exp(t A) as a padded 3x3 array.
    pub fn exp_padded(&self, t: f64) -> [[f64; 3]; 3] {
        padded(&expm(&(&self.m * t)))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.m.row(i).iter().copied().collect())
            .collect()
    }
}

impl Serialize for DeformationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DeformationMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom(
                "deformation matrix must be square",
            ));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        DeformationMatrix::from_rows(n, &flat).map_err(serde::de::Error::custom)
    }
}

pub fn padded(m: &DMatrix<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

#[inline]
pub fn mat_vec(m: &[[f64; 3]; 3], v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with the [13/13] Pade approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let norm1 = (0..n).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    let theta13 = 5.371920351148152;
    let s = if norm1 > theta13 {
        (norm1 / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}
