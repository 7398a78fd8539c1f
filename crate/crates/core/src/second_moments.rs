//! Second-moment matrix dynamics: the linear generator on symmetric matrices,
//! its dominant eigenpair (2β, N), exact time evolution and the scale λ².

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{expm, DeformationMatrix, SymMatrix};

/// Relaxation rate of the traceless part, qd/(2(d-1)).
pub fn relaxation_rate(q: f64, d: usize) -> f64 {
    q * d as f64 / (2.0 * (d as f64 - 1.0))
}

/// G(B) = -(B A_β + (B A_β)^T) - c (B - Tr(B)/d I).
pub fn apply_generator(a: &DeformationMatrix, q: f64, beta_shift: f64, b: &SymMatrix) -> SymMatrix {
    let d = b.dim();
    let ab = a.shifted(beta_shift);
    let ba = b.matrix() * ab.matrix();
    let drift = &ba + ba.transpose();
    let c = relaxation_rate(q, d);
    let dev = b.deviator();
    SymMatrix::symmetrized(-drift - dev.matrix() * c)
}

/// Dense matrix of G in √2-weighted upper-triangle coordinates.
pub fn vectorize_generator(a: &DeformationMatrix, q: f64, beta_shift: f64) -> DMatrix<f64> {
    let d = a.dim();
    let m = d * (d + 1) / 2;
    let mut g = DMatrix::zeros(m, m);
    for c in 0..m {
        let mut e = vec![0.0; m];
        e[c] = 1.0;
        let b = SymMatrix::from_weighted_vec(d, &e);
        let gb = apply_generator(a, q, beta_shift, &b).to_weighted_vec();
        for r in 0..m {
            g[(r, c)] = gb[r];
        }
    }
    g
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenPair {
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: SymMatrix,
    pub spectral_gap: f64,
    pub residual: f64,
}

/// Frobenius norm of 2βN + (NA + (NA)^T) + c(N - Tr(N)/d I).
pub fn eigen_residual(a: &DeformationMatrix, q: f64, beta: f64, n: &SymMatrix) -> f64 {
    let g = apply_generator(a, q, 0.0, n);
    g.sub(&n.scale(2.0 * beta)).frobenius()
}

/// True when ‖A‖ exceeds the default warning threshold 0.05·q.
pub fn outside_perturbative_gate(a: &DeformationMatrix, q: f64) -> bool {
    a.norm() > 0.05 * q
}

/// All eigenvalues of the vectorized generator, sorted by decreasing real part.
pub fn generator_spectrum(a: &DeformationMatrix, q: f64, beta_shift: f64) -> Vec<Complex<f64>> {
    let g = vectorize_generator(a, q, beta_shift);
    let mut ev: Vec<Complex<f64>> = g.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap()
            .then(y.im.partial_cmp(&x.im).unwrap())
    });
    ev
}

fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (imin, _) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
            );
    vt.row(imin).transpose()
}

/// Dominant eigenpair of the second-moment generator.
pub fn dominant_eigenpair(a: &DeformationMatrix, q: f64) -> Result<EigenPair> {
    let d = a.dim();
    if !(q > 0.0 && q <= 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "q must lie in (0,1], got {q}"
        )));
    }
    let g = vectorize_generator(a, q, 0.0);
    let ev = generator_spectrum(a, q, 0.0);
    let top = ev[0];
    let scale = g.amax().max(1.0);
    if top.im.abs() > 1e-12 * scale {
        return Err(Error::DominanceViolation(format!(
            "top eigenvalue {top} is complex"
        )));
    }
    let gap = if ev.len() > 1 {
        top.re - ev[1].re
    } else {
        f64::INFINITY
    };
    if !(gap > 1e-9) {
        return Err(Error::DominanceViolation(format!(
            "spectral gap {gap:e} below 1e-9"
        )));
    }
    let mu = top.re;
    let m = ev.len();
    let shifted = &g - DMatrix::identity(m, m) * mu;
    let v = null_vector(&shifted);
    let mut n = SymMatrix::from_weighted_vec(d, v.as_slice());
    let f = n.frobenius();
    let mut s = (d as f64).sqrt() / f;
    if n.trace() < 0.0 {
        s = -s;
    }
    n = n.scale(s);
    if !n.is_positive_definite() {
        return Err(Error::NotPositiveDefinite(format!(
            "normalized eigenvector has minimum eigenvalue {:e}",
            n.min_eigenvalue()
        )));
    }
    let beta = 0.5 * mu;
    let residual = eigen_residual(a, q, beta, &n);
    Ok(EigenPair {
        beta,
        n,
        spectral_gap: gap,
        residual,
    })
}

/// Second-moment matrices at the requested times.
#[derive(Clone, Debug, Serialize)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub matrices: Vec<SymMatrix>,
}

/// Exact solution B(t) = exp(t G_β) B0 of the (rescaled) second-moment ODE.
pub fn evolve_b(
    a: &DeformationMatrix,
    q: f64,
    beta: f64,
    b0: &SymMatrix,
    t_grid: &[f64],
) -> Result<MomentTrajectory> {
    let d = b0.dim();
    if b0.min_eigenvalue() < -1e-12 * b0.matrix().amax().max(1.0) {
        return Err(Error::NotPositiveDefinite(
            "initial second-moment matrix is not PSD".into(),
        ));
    }
    let g = vectorize_generator(a, q, beta);
    let v0 = DVector::from_vec(b0.to_weighted_vec());
    let matrices = t_grid
        .iter()
        .map(|&t| {
            let v = expm(&(&g * t)) * &v0;
            SymMatrix::from_weighted_vec(d, v.as_slice())
        })
        .collect();
    Ok(MomentTrajectory {
        times: t_grid.to_vec(),
        matrices,
    })
}

/// Propagator exp(h G_β) in weighted coordinates.
pub fn moment_propagator(a: &DeformationMatrix, q: f64, beta: f64, h: f64) -> DMatrix<f64> {
    expm(&(vectorize_generator(a, q, beta) * h))
}

/// λ ≥ 0 with λ² the coefficient of B0 along N in the generator eigenbasis.
pub fn extract_lambda_scale(
    a: &DeformationMatrix,
    q: f64,
    beta: f64,
    n: &SymMatrix,
    b0: &SymMatrix,
) -> Result<f64> {
    let g = vectorize_generator(a, q, 0.0);
    let m = g.nrows();
    let shifted = (&g - DMatrix::identity(m, m) * (2.0 * beta)).transpose();
    let left = null_vector(&shifted);
    let nv = DVector::from_vec(n.to_weighted_vec());
    let bv = DVector::from_vec(b0.to_weighted_vec());
    let denom = left.dot(&nv);
    if denom.abs() < 1e-12 {
        return Err(Error::DominanceViolation(
            "left eigenvector orthogonal to N".into(),
        ));
    }
    let l2 = left.dot(&bv) / denom;
    Ok(l2.max(0.0).sqrt())
}

/// Smallest singular value of M ↦ (1+2β)M + MA + (MA)^T on all d×d matrices.
pub fn homogeneous_min_singular_value(a: &DeformationMatrix, beta: f64) -> f64 {
    let d = a.dim();
    let am = a.matrix();
    let mut sys = DMatrix::zeros(d * d, d * d);
    for c in 0..d * d {
        let mut m = DMatrix::zeros(d, d);
        m[(c / d, c % d)] = 1.0;
        let ma = &m * am;
        let out = &m * (1.0 + 2.0 * beta) + &ma + ma.transpose();
        for r in 0..d * d {
            sys[(r, c)] = out[(r / d, r % d)];
        }
    }
    sys.singular_values().min()
}
