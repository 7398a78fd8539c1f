use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use ssmaxwell_core::dsmc_oracle::{init_gaussian, run};
use ssmaxwell_core::moment_hierarchy::{construct_compatible_density, solve_hierarchy, HierarchyResult};
use ssmaxwell_core::second_moments::{outside_perturbative_gate, relaxation_rate};
use ssmaxwell_core::spectral_field::{fixed_point_profile, stability_experiment, CharFnGrid, ProfileOptions};
use ssmaxwell_core::{
    dominant_eigenpair, evolve_b, extract_lambda_scale, lambda_p, q_coefficient, Complex64, DeformationMatrix,
    EigenPair, Error, KernelSpec, Result, SphereQuadrature, SymMatrix,
};

use crate::config::Config;
use crate::output::{print_json, write_csv, write_json};

fn upper_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect()
}

fn eigenpair(cfg: &Config, k: &KernelSpec, q: &SphereQuadrature) -> Result<(DeformationMatrix, f64, EigenPair)> {
    let a = cfg.matrix()?;
    let qc = q_coefficient(k, q);
    if outside_perturbative_gate(&a, qc) {
        eprintln!("warning: ‖A‖ = {:.3e} exceeds 0.05·q = {:.3e}", a.norm(), 0.05 * qc);
    }
    let e = dominant_eigenpair(&a, qc)?;
    if !(e.residual <= 1e-10) {
        return Err(Error::InvariantViolation(format!("eigen residual {:e}", e.residual)));
    }
    Ok((a, qc, e))
}

pub fn lambda(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let ps = cfg.p_values.clone().unwrap_or_else(|| vec![0.0, 2.0, 4.0]);
    let rows = ps.iter().map(|&p| Ok(vec![p, lambda_p(&k, &q, p)?])).collect::<Result<Vec<_>>>()?;
    let path = out.join("lambda.csv");
    write_csv(&path, &["p".into(), "lambda".into()], &rows)?;
    let _ = std::io::stdout().write_all(&std::fs::read(&path)?);
    Ok(())
}

pub fn qcoef(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let d = cfg.dim()?;
    let qc = q_coefficient(&k, &q);
    let v = json!({
        "dim": d,
        "kernel": k.profile().describe(),
        "q": qc,
        "relaxation_rate": relaxation_rate(qc, d),
    });
    write_json(&out.join("qcoef.json"), &v)?;
    print_json(&v)
}

pub fn eigen(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let (_, _, e) = eigenpair(cfg, &k, &q)?;
    write_json(&out.join("eigen.json"), &e)?;
    print_json(&e)
}

pub fn secmom(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let d = cfg.dim()?;
    let (a, qc, e) = eigenpair(cfg, &k, &q)?;
    let b0 = cfg.b0()?.unwrap_or_else(|| SymMatrix::identity(d));
    let times = match &cfg.times {
        Some(t) => t.clone(),
        None => {
            let tf = cfg.t_final.unwrap_or(10.0);
            (0..=20).map(|i| tf * i as f64 / 20.0).collect()
        }
    };
    let traj = evolve_b(&a, qc, 0.0, &b0, &times)?;
    let pairs = upper_pairs(d);
    let mut header = vec!["t".to_string()];
    header.extend(pairs.iter().map(|(i, j)| format!("b_{}{}", i + 1, j + 1)));
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.matrices)
        .map(|(t, b)| std::iter::once(*t).chain(pairs.iter().map(|(i, j)| b.get(*i, *j))).collect())
        .collect();
    write_csv(&out.join("secmom.csv"), &header, &rows)?;
    let lam = extract_lambda_scale(&a, qc, e.beta, &e.n, &b0)?;
    let v = json!({ "beta": e.beta, "N": e.n, "lambda": lam, "B0": b0 });
    write_json(&out.join("secmom.json"), &v)?;
    print_json(&v)
}

fn profile_options(cfg: &Config) -> Result<ProfileOptions> {
    let mut opts = ProfileOptions::new(cfg.geometry()?);
    opts.tol = cfg.tol.unwrap_or(opts.tol);
    opts.t_max = cfg.t_max.unwrap_or(opts.t_max);
    opts.n_tau = cfg.n_tau.unwrap_or(opts.n_tau);
    opts.max_iter = cfg.max_iter.unwrap_or(opts.max_iter);
    Ok(opts)
}

fn radial_csv(path: &Path, g: &CharFnGrid) -> Result<()> {
    let r = g.geometry().r_max;
    let rows: Vec<Vec<f64>> =
        g.radial_slice(&[1.0, 0.0, 0.0], r, 201).into_iter().map(|(r, v)| vec![r, v.re, v.im]).collect();
    write_csv(path, &["r".into(), "re".into(), "im".into()], &rows)
}

pub fn profile(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let a = cfg.matrix()?;
    let opts = profile_options(cfg)?;
    let p = cfg.p.unwrap_or(4.0);
    let res = fixed_point_profile(&a, &k, &q, p, &opts)?;
    res.profile.write_binary(std::io::BufWriter::new(std::fs::File::create(out.join("profile.bin"))?))?;
    radial_csv(&out.join("profile_slice.csv"), &res.profile)?;
    write_json(&out.join("profile.json"), &res)?;
    print_json(&json!({
        "beta": res.beta,
        "N": res.n,
        "iterations": res.iterations,
        "final_distance": res.final_distance,
        "contraction_estimate": res.contraction_estimate,
        "theta": res.theta,
    }))?;
    if !(res.final_distance < opts.tol) {
        return Err(Error::InvariantViolation(format!(
            "profile distance {:e} above tol {:e} after {} iterations",
            res.final_distance, opts.tol, res.iterations
        )));
    }
    Ok(())
}

pub fn stability(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let (a, _, e) = eigenpair(cfg, &k, &q)?;
    let d = cfg.dim()?;
    let geom = cfg.geometry()?;
    let p = cfg.p.unwrap_or(4.0);
    let b0 = cfg.b0()?.unwrap_or_else(|| e.n.clone());
    let u = cfg.vector(&cfg.modulation, "modulation")?;
    let uu: Vec<f64> = (0..d * d).map(|i| u[i / d] * u[i % d]).collect();
    let c = b0.sub(&SymMatrix::from_rows(d, &uu)?);
    if !c.is_positive_definite() {
        return Err(Error::NotPositiveDefinite("B0 - UUᵀ must be positive definite".into()));
    }
    let init = CharFnGrid::from_fn(geom, Some(b0.clone()), p, |x| {
        let phase: f64 = (0..d).map(|j| u[j] * x[j]).sum();
        Complex64::new((-0.5 * c.quad_form(x)).exp() * phase.cos(), 0.0)
    })?;
    let opts = profile_options(cfg)?;
    let horizon = cfg.t_final.unwrap_or(40.0);
    let dt = cfg.dt.unwrap_or(0.05);
    let rep = stability_experiment(&init, &a, &k, &q, p, horizon, dt, &opts)?;
    let rows: Vec<Vec<f64>> = rep.times.iter().zip(&rep.distances).map(|(t, d)| vec![*t, *d]).collect();
    write_csv(&out.join("stability.csv"), &["t".into(), "D".into()], &rows)?;
    write_json(&out.join("stability.json"), &rep)?;
    print_json(&json!({
        "beta": rep.beta,
        "lambda": rep.lambda,
        "profile_distance": rep.profile_distance,
        "final_D": rep.distances.last(),
        "fitted_rate": rep.fitted_rate,
    }))
}

fn hierarchy_for(cfg: &Config, n_scale: f64) -> Result<(EigenPair, HierarchyResult)> {
    let (k, q) = cfg.kernel()?;
    let (a, _, e) = eigenpair(cfg, &k, &q)?;
    let m = cfg.m_max.unwrap_or(4);
    let h = solve_hierarchy(&a, e.beta, &e.n.scale(n_scale), m, &k, &q)?;
    for l in &h.levels {
        if !(l.residual <= 1e-8 * l.source_norm + 1e-13) {
            return Err(Error::InvariantViolation(format!(
                "hierarchy residual {:e} at ℓ={} (‖K‖ = {:e})",
                l.residual, l.degree, l.source_norm
            )));
        }
    }
    Ok((e, h))
}

#[derive(Serialize)]
struct HierarchyOut<'a> {
    beta: f64,
    #[serde(rename = "N")]
    n: &'a SymMatrix,
    levels: &'a [ssmaxwell_core::moment_hierarchy::HierarchyLevel],
    polynomials: Vec<ssmaxwell_core::moment_hierarchy::PolyJson>,
}

pub fn hierarchy(cfg: &Config, out: &Path) -> Result<()> {
    let (e, h) = hierarchy_for(cfg, 1.0)?;
    println!("{:>3} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}", "l", "residual", "|K|", "cond", "fit_cond", "|R|", "bound");
    for l in &h.levels {
        println!(
            "{:>3} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.4} {:>12.4}",
            l.degree,
            l.residual,
            l.source_norm,
            l.condition_number,
            l.fit_condition_number,
            l.resolvent_norm,
            l.resolvent_bound
        );
    }
    let v = HierarchyOut {
        beta: e.beta,
        n: &e.n,
        levels: &h.levels,
        polynomials: h.q.iter().map(|p| p.to_json()).collect(),
    };
    write_json(&out.join("hierarchy.json"), &v)
}

pub fn density(cfg: &Config, out: &Path) -> Result<()> {
    // the Hermite reference is e^{-|k|²}, i.e. covariance 2I, so N is doubled
    let (_, h) = hierarchy_for(cfg, 2.0)?;
    let m = cfg.m_max.unwrap_or(4);
    let r = cfg.radius.unwrap_or(10.0);
    let dens = construct_compatible_density(&h.q, m, r)?;
    write_json(&out.join("density.json"), &dens)?;
    let rows: Vec<Vec<f64>> = (0..=200)
        .map(|i| {
            let v = -r + 2.0 * r * i as f64 / 200.0;
            vec![v, dens.density(&[v, 0.0, 0.0])]
        })
        .collect();
    write_csv(&out.join("density_slice.csv"), &["v1".into(), "f".into()], &rows)?;
    let err = dens.max_moment_error();
    print_json(&json!({
        "xi_max": dens.xi.iter().fold(0.0f64, |a, x| a.max(x.abs())),
        "gram_condition": dens.gram_condition,
        "min_factor": dens.min_factor,
        "max_moment_error": err,
    }))?;
    if !(err <= 1e-6) {
        return Err(Error::InvariantViolation(format!("realized moments off by {err:e}")));
    }
    Ok(())
}

pub fn dsmc(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let d = cfg.dim()?;
    let a = cfg.matrix()?;
    let b0 = cfg.b0()?.unwrap_or_else(|| SymMatrix::identity(d));
    let u0 = cfg.vector(&cfg.u0, "u0")?;
    let n = cfg.particles.unwrap_or(100_000);
    let mut ens = init_gaussian(n, &u0, &b0, cfg.seed.unwrap_or(1))?;
    let series = run(
        &mut ens,
        &a,
        &k,
        &q,
        cfg.t_final.unwrap_or(5.0),
        cfg.dt.unwrap_or(0.05),
        cfg.record_every.unwrap_or(20),
    )?;
    let pairs = upper_pairs(d);
    let first = &series[0];
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("u_{j}")));
    header.extend((1..=d).map(|j| format!("u_{j}_se")));
    header.extend(pairs.iter().map(|(i, j)| format!("cov_{}{}", i + 1, j + 1)));
    header.extend(pairs.iter().map(|(i, j)| format!("cov_{}{}_se", i + 1, j + 1)));
    header.extend(pairs.iter().map(|(i, j)| format!("b_{}{}", i + 1, j + 1)));
    let tags: Vec<String> = first.fourth_indices.iter().map(|a| a.iter().map(|x| x.to_string()).collect()).collect();
    header.extend(tags.iter().map(|t| format!("m4_{t}")));
    header.extend(tags.iter().map(|t| format!("m4_{t}_se")));
    let rows: Vec<Vec<f64>> = series
        .iter()
        .map(|m| {
            let mut r = vec![m.t];
            r.extend(&m.mean);
            r.extend(&m.mean_se);
            r.extend(pairs.iter().map(|(i, j)| m.covariance.get(*i, *j)));
            r.extend(pairs.iter().map(|(i, j)| m.covariance_se.get(*i, *j)));
            r.extend(pairs.iter().map(|(i, j)| 2.0 * m.covariance.get(*i, *j)));
            r.extend(&m.fourth);
            r.extend(&m.fourth_se);
            r
        })
        .collect();
    write_csv(&out.join("dsmc.csv"), &header, &rows)?;
    let last = series.last().expect("at least the initial record");
    print_json(&json!({
        "particles": n,
        "t": last.t,
        "mean": last.mean,
        "covariance": last.covariance,
        "b_doubled": last.b_doubled(),
    }))
}

pub fn report(cfg: &Config, out: &Path) -> Result<()> {
    let (k, q) = cfg.kernel()?;
    let d = cfg.dim()?;
    let (a, qc, e) = eigenpair(cfg, &k, &q)?;
    let b0 = cfg.b0()?.unwrap_or_else(|| SymMatrix::identity(d));
    let u = cfg.vector(&cfg.u0, "u0")?;
    let lam = extract_lambda_scale(&a, qc, e.beta, &e.n, &b0)?;
    let v = json!({
        "beta": e.beta,
        "N": e.n,
        "spectral_gap": e.spectral_gap,
        "eigen_residual": e.residual,
        "lambda": lam,
        "lambda_squared": lam * lam,
        "U": u,
        "B0_covariance": b0,
        "b0_doubled": b0.scale(2.0),
        "dirac_mass": lam == 0.0,
        "rescaling": "v -> exp(beta t) v + exp(-t A^T) U",
        "A": a,
    });
    write_json(&out.join("report.json"), &v)?;
    print_json(&v)
}
