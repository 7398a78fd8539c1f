//! Direct simulation Monte Carlo for the homoenergetic Maxwell-molecule
//! equation: free drift dv/dt = -Av alternated with binary collisions at unit
//! rate per particle.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel_quadrature::{KernelSpec, SphereQuadrature};
use crate::linalg::{dot, mat_vec, DeformationMatrix, SymMatrix, Vec3};
use crate::moment_hierarchy::{multi_indices, MultiIndex};

pub const N_BATCHES: usize = 16;

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub velocities: Vec<Vec3>,
    pub seed: u64,
    pub step: u64,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn momentum(&self) -> Vec3 {
        let mut s = [0.0; 3];
        for v in &self.velocities {
            for j in 0..3 {
                s[j] += v[j];
            }
        }
        s
    }

    pub fn energy(&self) -> f64 {
        self.velocities.iter().map(|v| dot(v, v)).sum()
    }
}

/// Mean, covariance and fourth central moments with batch-means standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct MomentEstimate {
    pub t: f64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Covariance ∫(v-U)⊗(v-U) f.
    pub covariance: SymMatrix,
    pub covariance_se: SymMatrix,
    pub fourth_indices: Vec<Vec<u32>>,
    pub fourth: Vec<f64>,
    pub fourth_se: Vec<f64>,
    /// Tr(covariance) of each particle batch.
    pub batch_traces: Vec<f64>,
}

impl MomentEstimate {
    /// 2 × covariance.
    pub fn b_doubled(&self) -> SymMatrix {
        self.covariance.scale(2.0)
    }
}

/// Gaussian ensemble with mean `u` and covariance `cov`.
pub fn init_gaussian(n_p: usize, u: &[f64], cov: &SymMatrix, seed: u64) -> Result<ParticleEnsemble> {
    let d = cov.dim();
    if u.len() != d {
        return Err(Error::GeometryMismatch(format!("mean has {} entries, covariance is {d}x{d}", u.len())));
    }
    if n_p == 0 || n_p % 2 != 0 {
        return Err(Error::InvalidArgument(format!("particle count must be even and positive, got {n_p}")));
    }
    let l = cov.sqrt_factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let velocities = (0..n_p)
        .map(|_| {
            let mut z = [0.0; 3];
            for x in z.iter_mut().take(d) {
                *x = rng.sample(StandardNormal);
            }
            let mut v = [0.0; 3];
            for i in 0..d {
                v[i] = u[i] + (0..d).map(|j| l[(i, j)] * z[j]).sum::<f64>();
            }
            v
        })
        .collect();
    Ok(ParticleEnsemble { dim: d, velocities, seed, step: 0, time: 0.0 })
}

/// v ← e^{-A dt} v.
pub fn drift_step(ens: &mut ParticleEnsemble, a: &DeformationMatrix, dt: f64) {
    let m = a.exp_padded(-dt);
    ens.velocities.par_iter_mut().for_each(|v| *v = mat_vec(&m, v));
}

/// Post-collision velocities for direction n.
#[inline]
pub fn collide_pair(v: &Vec3, w: &Vec3, n: &Vec3) -> (Vec3, Vec3) {
    let u = [v[0] - w[0], v[1] - w[1], v[2] - w[2]];
    let r = dot(&u, &u).sqrt();
    let mut vp = [0.0; 3];
    let mut wp = [0.0; 3];
    for j in 0..3 {
        let s = v[j] + w[j];
        vp[j] = 0.5 * (s + r * n[j]);
        wp[j] = 0.5 * (s - r * n[j]);
    }
    (vp, wp)
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(b"dsmcstep");
    ChaCha8Rng::from_seed(key)
}

fn pair_direction(kernel: &KernelSpec, base: &ChaCha8Rng, idx: u64, v: &Vec3, w: &Vec3) -> Vec3 {
    let mut rng = base.clone();
    rng.set_stream(idx + 1);
    let d = kernel.dim();
    let u = [v[0] - w[0], v[1] - w[1], v[2] - w[2]];
    let r = dot(&u, &u).sqrt();
    if r == 0.0 || !r.is_finite() {
        return KernelSpec::uniform_direction(d, &mut rng);
    }
    kernel.sample_direction(&mut rng, &[u[0] / r, u[1] / r, u[2] / r])
}

/// One collision step: Poisson(N dt/2) uniformly drawn pairs, processed in
/// disjoint parallel batches plus a serial pass for conflicting pairs.
pub fn collide_step(
    ens: &mut ParticleEnsemble,
    kernel: &KernelSpec,
    _quad: &SphereQuadrature,
    dt: f64,
) -> Result<()> {
    if !(dt > 0.0 && dt <= 0.2) {
        return Err(Error::InvalidArgument(format!("collision dt must lie in (0, 0.2], got {dt}")));
    }
    let n = ens.len();
    let base = step_rng(ens.seed, ens.step);
    let mut draw = base.clone();
    draw.set_stream(0);
    let mean = n as f64 * dt / 2.0;
    let count = Poisson::new(mean).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut draw) as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let i = draw.random_range(0..n);
        let mut j = draw.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        pairs.push((i, j));
    }
    let mut used = vec![false; n];
    let mut parallel = Vec::with_capacity(count);
    let mut deferred = Vec::new();
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        if !used[i] && !used[j] {
            parallel.push((idx, i, j));
        } else {
            deferred.push((idx, i, j));
        }
        used[i] = true;
        used[j] = true;
    }
    let vel = &ens.velocities;
    let updates: Vec<(usize, usize, Vec3, Vec3)> = parallel
        .par_iter()
        .map(|&(idx, i, j)| {
            let nd = pair_direction(kernel, &base, idx as u64, &vel[i], &vel[j]);
            let (a, b) = collide_pair(&vel[i], &vel[j], &nd);
            (i, j, a, b)
        })
        .collect();
    for (i, j, a, b) in updates {
        ens.velocities[i] = a;
        ens.velocities[j] = b;
    }
    for (idx, i, j) in deferred {
        let nd = pair_direction(kernel, &base, idx as u64, &ens.velocities[i], &ens.velocities[j]);
        let (a, b) = collide_pair(&ens.velocities[i], &ens.velocities[j], &nd);
        ens.velocities[i] = a;
        ens.velocities[j] = b;
    }
    ens.step += 1;
    Ok(())
}

struct RawMoments {
    mean: Vec3,
    cov: [[f64; 3]; 3],
    fourth: Vec<f64>,
}

fn raw_moments(vs: &[Vec3], d: usize, idx4: &[MultiIndex]) -> RawMoments {
    let n = vs.len() as f64;
    let mut mean = [0.0; 3];
    for v in vs {
        for j in 0..d {
            mean[j] += v[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = [[0.0; 3]; 3];
    let mut fourth = vec![0.0; idx4.len()];
    for v in vs {
        let c = [v[0] - mean[0], v[1] - mean[1], v[2] - mean[2]];
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j];
            }
        }
        for (f, a) in fourth.iter_mut().zip(idx4) {
            *f += c[0].powi(a[0] as i32) * c[1].powi(a[1] as i32) * c[2].powi(a[2] as i32);
        }
    }
    for row in cov.iter_mut() {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    for f in fourth.iter_mut() {
        *f /= n;
    }
    RawMoments { mean, cov, fourth }
}

fn batch_se(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Moments of the ensemble; standard errors from 16 contiguous particle batches.
pub fn estimate_moments(ens: &ParticleEnsemble) -> MomentEstimate {
    let d = ens.dim;
    let idx4 = multi_indices(d, 4);
    let all = raw_moments(&ens.velocities, d, &idx4);
    let chunk = ens.len().div_ceil(N_BATCHES);
    let batches: Vec<RawMoments> = ens.velocities.chunks(chunk).map(|c| raw_moments(c, d, &idx4)).collect();
    let mut cov = DMatrix::zeros(d, d);
    let mut cov_se = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] = all.cov[i][j];
            cov_se[(i, j)] = batch_se(&batches.iter().map(|b| b.cov[i][j]).collect::<Vec<_>>());
        }
    }
    let mean_se = (0..d).map(|j| batch_se(&batches.iter().map(|b| b.mean[j]).collect::<Vec<_>>())).collect();
    let fourth_se = (0..idx4.len())
        .map(|k| batch_se(&batches.iter().map(|b| b.fourth[k]).collect::<Vec<_>>()))
        .collect();
    MomentEstimate {
        t: ens.time,
        mean: all.mean[..d].to_vec(),
        mean_se,
        covariance: SymMatrix::symmetrized(cov),
        covariance_se: SymMatrix::symmetrized(cov_se),
        fourth_indices: idx4.iter().map(|a| a[..d].to_vec()).collect(),
        fourth: all.fourth,
        fourth_se,
        batch_traces: batches.iter().map(|b| (0..d).map(|j| b.cov[j][j]).sum()).collect(),
    }
}

/// Strang splitting (half drift, collide, half drift) up to `t_final`,
/// recording estimates at t = 0 and every `record_every` steps.
pub fn run(
    ens: &mut ParticleEnsemble,
    a: &DeformationMatrix,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    t_final: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<MomentEstimate>> {
    if a.dim() != ens.dim || kernel.dim() != ens.dim {
        return Err(Error::GeometryMismatch("dimension of A, kernel and ensemble differ".into()));
    }
    if !(t_final >= 0.0) {
        return Err(Error::InvalidArgument(format!("t_final must be >= 0, got {t_final}")));
    }
    let steps = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if steps > 0 { t_final / steps as f64 } else { dt };
    let record_every = record_every.max(1);
    let t0 = ens.time;
    let mut out = vec![estimate_moments(ens)];
    for s in 0..steps {
        drift_step(ens, a, 0.5 * h);
        collide_step(ens, kernel, quad, h)?;
        drift_step(ens, a, 0.5 * h);
        ens.time = t0 + (s + 1) as f64 * h;
        if (s + 1) % record_every == 0 || s + 1 == steps {
            out.push(estimate_moments(ens));
        }
    }
    Ok(out)
}

/// Least-squares slope of log Tr(covariance) over t ≥ t_from, with a
/// standard error from the per-batch slopes.
pub fn log_trace_slope(series: &[MomentEstimate], t_from: f64) -> (f64, f64) {
    let pts: Vec<&MomentEstimate> = series.iter().filter(|e| e.t >= t_from).collect();
    let ts: Vec<f64> = pts.iter().map(|e| e.t).collect();
    let slope = |ys: &[f64]| -> f64 {
        let n = ts.len() as f64;
        let mt = ts.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
        let sxx: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
        sxy / sxx
    };
    let total: Vec<f64> = pts.iter().map(|e| e.covariance.trace().ln()).collect();
    let nb = pts.first().map(|e| e.batch_traces.len()).unwrap_or(0);
    let per_batch: Vec<f64> = (0..nb)
        .map(|b| slope(&pts.iter().map(|e| e.batch_traces[b].ln()).collect::<Vec<_>>()))
        .collect();
    (slope(&total), batch_se(&per_batch))
}
