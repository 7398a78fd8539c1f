//! Collision kernels, sphere quadratures and the scalar functionals q and λ(p).
//!
//! Quadrature nodes are stored in local coordinates `(s, t1, t2)` relative to a
//! pole: `n = s·pole + t1·e1 + t2·e2` with `(pole, e1, e2)` orthonormal. Every
//! collision integral weights the node by `g(pole·n) = g(s)`, so aligning the
//! pole with k̂ makes the kernel factor exact for any profile.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Vec3};

const TABLE_SIZE: usize = 4096;

/// Product rule on S^{d-1}.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    dim: usize,
    resolution: usize,
    local: Vec<Vec3>,
    weights: Vec<f64>,
}

/// Builds the Gauss-Legendre (polar) x trapezoid (azimuth) rule in d = 3, or
/// the uniform circle rule in d = 2.
pub fn build_quadrature(d: usize, resolution: usize) -> Result<SphereQuadrature> {
    if resolution < 4 {
        return Err(Error::InvalidArgument(format!(
            "quadrature resolution {resolution} < 4"
        )));
    }
    match d {
        2 => {
            let w = 2.0 * PI / resolution as f64;
            let local = (0..resolution)
                .map(|j| {
                    let th = 2.0 * PI * j as f64 / resolution as f64;
                    [th.cos(), th.sin(), 0.0]
                })
                .collect();
            Ok(SphereQuadrature {
                dim: 2,
                resolution,
                local,
                weights: vec![w; resolution],
            })
        }
        3 => {
            let (xs, ws) = gauss_legendre(resolution);
            let naz = 2 * resolution;
            let daz = 2.0 * PI / naz as f64;
            let mut local = Vec::with_capacity(resolution * naz);
            let mut weights = Vec::with_capacity(resolution * naz);
            for (s, w) in xs.iter().zip(&ws) {
                let st = (1.0 - s * s).max(0.0).sqrt();
                for b in 0..naz {
                    let ph = daz * b as f64;
                    local.push([*s, st * ph.cos(), st * ph.sin()]);
                    weights.push(w * daz);
                }
            }
            Ok(SphereQuadrature {
                dim: 3,
                resolution,
                local,
                weights,
            })
        }
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

impl SphereQuadrature {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Local coordinates `(s, t1, t2)` of every node.
    pub fn local(&self) -> &[Vec3] {
        &self.local
    }

    /// Nodes in the canonical frame (pole e_3 in d = 3, e_1 in d = 2).
    pub fn nodes(&self) -> Vec<Vec3> {
        let f = Frame::new(self.dim, &canonical_pole(self.dim));
        self.local.iter().map(|l| f.place(l)).collect()
    }

    /// Total weight; equals |S^{d-1}|.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn canonical_pole(d: usize) -> Vec3 {
    if d == 3 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    }
}

/// Orthonormal frame with a prescribed pole.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub pole: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Frame {
    /// `pole` must be a unit vector.
    pub fn new(d: usize, pole: &Vec3) -> Frame {
        if d == 2 {
            return Frame {
                pole: *pole,
                e1: [-pole[1], pole[0], 0.0],
                e2: [0.0; 3],
            };
        }
        let a = pole;
        let mut j = 0;
        for i in 1..3 {
            if a[i].abs() < a[j].abs() {
                j = i;
            }
        }
        let mut t = [0.0; 3];
        t[j] = 1.0;
        let c = cross(a, &t);
        let nc = norm(&c);
        let e1 = [c[0] / nc, c[1] / nc, c[2] / nc];
        let e2 = cross(a, &e1);
        Frame { pole: *a, e1, e2 }
    }

    #[inline]
    pub fn place(&self, l: &Vec3) -> Vec3 {
        [
            l[0] * self.pole[0] + l[1] * self.e1[0] + l[2] * self.e2[0],
            l[0] * self.pole[1] + l[1] * self.e1[1] + l[2] * self.e2[1],
            l[0] * self.pole[2] + l[1] * self.e1[2] + l[2] * self.e2[2],
        ]
    }
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton on the three-term recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Unnormalized angular profile η ↦ profile(η) on [-1, 1].
#[derive(Clone)]
pub enum KernelProfile {
    /// Constant profile.
    Isotropic,
    /// `(1 - ((η - center)/width)^2)^2` on `|η - center| < width`, zero elsewhere.
    Bump { center: f64, width: f64 },
    /// Piecewise linear through `(eta, value)` pairs sorted by eta.
    Tabulated { eta: Vec<f64>, value: Vec<f64> },
    /// Arbitrary callback.
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for KernelProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.describe())
    }
}

impl KernelProfile {
    pub fn eval(&self, eta: f64) -> f64 {
        match self {
            KernelProfile::Isotropic => 1.0,
            KernelProfile::Bump { center, width } => {
                let x = (eta - center) / width;
                if x.abs() < 1.0 {
                    let y = 1.0 - x * x;
                    y * y
                } else {
                    0.0
                }
            }
            KernelProfile::Tabulated { eta: xs, value } => {
                if eta <= xs[0] {
                    return value[0];
                }
                let n = xs.len();
                if eta >= xs[n - 1] {
                    return value[n - 1];
                }
                let i = xs.partition_point(|&x| x <= eta) - 1;
                let t = (eta - xs[i]) / (xs[i + 1] - xs[i]);
                value[i] * (1.0 - t) + value[i + 1] * t
            }
            KernelProfile::Custom { f, .. } => f(eta),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            KernelProfile::Isotropic => "isotropic".into(),
            KernelProfile::Bump { center, width } => format!("bump({center},{width})"),
            KernelProfile::Tabulated { eta, .. } => format!("tabulated({} points)", eta.len()),
            KernelProfile::Custom { name, .. } => name.clone(),
        }
    }

    /// Parses `"isotropic"` or `"bump(center,width)"`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "isotropic" {
            return Ok(KernelProfile::Isotropic);
        }
        if let Some(args) = t.strip_prefix("bump(").and_then(|r| r.strip_suffix(')')) {
            let parts: Vec<&str> = args.split(',').collect();
            if parts.len() == 2 {
                let c: f64 = parts[0].trim().parse().map_err(|_| bad_kernel(s))?;
                let w: f64 = parts[1].trim().parse().map_err(|_| bad_kernel(s))?;
                if w > 0.0 && c.is_finite() {
                    return Ok(KernelProfile::Bump {
                        center: c,
                        width: w,
                    });
                }
            }
        }
        Err(bad_kernel(s))
    }

    /// Reads a two-column CSV `eta,value` (a header line is skipped when non-numeric).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut eta = Vec::new();
        let mut value = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Format(format!(
                    "line {}: expected 2 columns",
                    ln + 1
                )));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    eta.push(a);
                    value.push(b);
                }
                _ if ln == 0 => continue,
                _ => return Err(Error::Format(format!("line {}: not numeric", ln + 1))),
            }
        }
        if eta.len() < 2 {
            return Err(Error::Format(
                "tabulated kernel needs at least 2 rows".into(),
            ));
        }
        if eta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format(
                "tabulated kernel eta must be strictly increasing".into(),
            ));
        }
        if value.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format(
                "tabulated kernel values must be finite and >= 0".into(),
            ));
        }
        Ok(KernelProfile::Tabulated { eta, value })
    }
}

fn bad_kernel(s: &str) -> Error {
    Error::InvalidArgument(format!(
        "unknown kernel '{s}' (use isotropic or bump(center,width))"
    ))
}

/// Normalized collision kernel g on [-1, 1] in dimension d.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    dim: usize,
    profile: KernelProfile,
    normalization_constant: f64,
    sampler: Option<Arc<InverseCdf>>,
}

impl KernelSpec {
    /// Unnormalized spec (constant 1); call [`normalize_kernel`] before use.
    pub fn unnormalized(d: usize, profile: KernelProfile) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        Ok(KernelSpec {
            dim: d,
            profile,
            normalization_constant: 1.0,
            sampler: None,
        })
    }

    /// Builds and normalizes against `quad`.
    pub fn new(d: usize, profile: KernelProfile, quad: &SphereQuadrature) -> Result<Self> {
        normalize_kernel(KernelSpec::unnormalized(d, profile)?, quad)
    }

    pub fn isotropic(d: usize, quad: &SphereQuadrature) -> Result<Self> {
        KernelSpec::new(d, KernelProfile::Isotropic, quad)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    pub fn normalization_constant(&self) -> f64 {
        self.normalization_constant
    }

    pub fn is_normalized(&self) -> bool {
        self.sampler.is_some()
    }

    /// g(η).
    #[inline]
    pub fn g(&self, eta: f64) -> f64 {
        self.normalization_constant * self.profile.eval(eta)
    }

    /// Node weights `w_i g(s_i)` of `quad` for a pole-aligned integral.
    pub fn weighted(&self, quad: &SphereQuadrature) -> Vec<f64> {
        quad.local
            .iter()
            .zip(&quad.weights)
            .map(|(l, w)| w * self.g(l[0]))
            .collect()
    }

    /// ∫ g(ω·n) dn with the rule's canonical node set (not pole-aligned).
    pub fn integrate_fixed_nodes(&self, quad: &SphereQuadrature, omega: &Vec3) -> f64 {
        quad.nodes()
            .iter()
            .zip(&quad.weights)
            .map(|(n, w)| w * self.g(dot(omega, n)))
            .sum()
    }

    /// Draws n with density g(û·n) on the sphere. `u_hat` must be a unit vector.
    pub fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R, u_hat: &Vec3) -> Vec3 {
        let table = self
            .sampler
            .as_ref()
            .expect("kernel must be normalized before sampling");
        let x = table.invert(rng.random::<f64>());
        let frame = Frame::new(self.dim, u_hat);
        if self.dim == 3 {
            let s = x.clamp(-1.0, 1.0);
            let st = (1.0 - s * s).max(0.0).sqrt();
            let ph = 2.0 * PI * rng.random::<f64>();
            frame.place(&[s, st * ph.cos(), st * ph.sin()])
        } else {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            frame.place(&[x.cos(), sign * x.sin(), 0.0])
        }
    }

    /// Uniform direction on the sphere (fallback for zero relative velocity).
    pub fn uniform_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec3 {
        let ph = 2.0 * PI * rng.random::<f64>();
        if d == 2 {
            [ph.cos(), ph.sin(), 0.0]
        } else {
            let s = 2.0 * rng.random::<f64>() - 1.0;
            let st = (1.0 - s * s).max(0.0).sqrt();
            [st * ph.cos(), st * ph.sin(), s]
        }
    }

    /// Cumulative distribution of the polar variable used by the sampler
    /// (the cosine s in d = 3, the angle θ ∈ [0, π] in d = 2).
    pub fn sampler_cdf(&self, x: f64) -> f64 {
        self.sampler.as_ref().expect("normalized kernel").cdf(x)
    }
}

/// Normalizes so that ∫ g(e·n) dn = 1; idempotent.
pub fn normalize_kernel(spec: KernelSpec, quad: &SphereQuadrature) -> Result<KernelSpec> {
    if quad.dim != spec.dim {
        return Err(Error::InvalidArgument(format!(
            "kernel dimension {} does not match quadrature dimension {}",
            spec.dim, quad.dim
        )));
    }
    let mut sum = 0.0;
    for (l, w) in quad.local.iter().zip(&quad.weights) {
        let v = spec.profile.eval(l[0]);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Normalization(format!(
                "profile value {v} at eta={}",
                l[0]
            )));
        }
        sum += w * v;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::Normalization(format!(
            "quadrature sum {sum} is zero or non-finite"
        )));
    }
    let sampler = InverseCdf::build(spec.dim, &spec.profile)?;
    Ok(KernelSpec {
        dim: spec.dim,
        profile: spec.profile,
        normalization_constant: 1.0 / sum,
        sampler: Some(Arc::new(sampler)),
    })
}

/// q = ∫ g(k̂·n)(1 - (k̂·n)^2) dn.
pub fn q_coefficient(spec: &KernelSpec, quad: &SphereQuadrature) -> f64 {
    quad.local
        .iter()
        .zip(&quad.weights)
        .map(|(l, w)| w * spec.g(l[0]) * (1.0 - l[0] * l[0]))
        .sum()
}

/// q evaluated with the canonical node set along an arbitrary direction.
pub fn q_coefficient_along(spec: &KernelSpec, quad: &SphereQuadrature, omega: &Vec3) -> f64 {
    quad.nodes()
        .iter()
        .zip(&quad.weights)
        .map(|(n, w)| {
            let s = dot(omega, n);
            w * spec.g(s) * (1.0 - s * s)
        })
        .sum()
}

/// λ(p) = ∫ g(s)[1 - ((1+s)/2)^{p/2} - ((1-s)/2)^{p/2}] dn.
pub fn lambda_p(spec: &KernelSpec, quad: &SphereQuadrature, p: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_p needs p >= 0, got {p}"
        )));
    }
    let h = 0.5 * p;
    Ok(quad
        .local
        .iter()
        .zip(&quad.weights)
        .map(|(l, w)| {
            let s = l[0];
            let a = (0.5 * (1.0 + s)).max(0.0);
            let b = (0.5 * (1.0 - s)).max(0.0);
            w * spec.g(s) * (1.0 - a.powf(h) - b.powf(h))
        })
        .sum())
}

/// Inverse CDF of the polar variable, tabulated on 4096 points with monotone
/// cubic (Fritsch-Carlson) interpolation of x(F).
#[derive(Debug)]
struct InverseCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    knots_f: Vec<f64>,
    knots_x: Vec<f64>,
    slopes: Vec<f64>,
}

impl InverseCdf {
    fn build(d: usize, profile: &KernelProfile) -> Result<Self> {
        let (lo, hi) = if d == 3 { (-1.0, 1.0) } else { (0.0, PI) };
        let n = TABLE_SIZE;
        let xs: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let dens: Vec<f64> = xs
            .iter()
            .map(|&x| {
                if d == 3 {
                    profile.eval(x)
                } else {
                    profile.eval(x.cos())
                }
            })
            .collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
        }
        let total = cdf[n - 1];
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Normalization(
                "sampler table has zero or non-finite mass".into(),
            ));
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        // Knots for x(F): drop flat stretches so F is strictly increasing.
        let mut knots_f = vec![0.0];
        let mut knots_x = vec![xs[0]];
        for i in 1..n {
            if cdf[i] <= 0.0 {
                knots_x[0] = xs[i];
                continue;
            }
            if cdf[i] > *knots_f.last().unwrap() {
                knots_f.push(cdf[i]);
                knots_x.push(xs[i]);
            }
        }
        let slopes = pchip_slopes(&knots_f, &knots_x);
        Ok(InverseCdf {
            xs,
            cdf,
            knots_f,
            knots_x,
            slopes,
        })
    }

    fn invert(&self, u: f64) -> f64 {
        let f = &self.knots_f;
        let n = f.len();
        if u <= f[0] {
            return self.knots_x[0];
        }
        if u >= f[n - 1] {
            return self.knots_x[n - 1];
        }
        let i = f.partition_point(|&v| v <= u) - 1;
        hermite_segment(
            f[i],
            f[i + 1],
            self.knots_x[i],
            self.knots_x[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
            u,
        )
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.cdf[i] * (1.0 - t) + self.cdf[i + 1] * t
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let delta: Vec<f64> = (0..n - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m
}

#[inline]
fn hermite_segment(x0: f64, x1: f64, y0: f64, y1: f64, m0: f64, m1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * m1
}
