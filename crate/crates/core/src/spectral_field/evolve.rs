//! Mild-form time stepping of ∂ₜφ + (Ak)·∂ₖφ + φ = N[φ] on grids, with
//! N = Γ (nonlinear equation) or N = L (linear comparison equation).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::grid::CharFnGrid;
use super::operators::{gamma_apply, l_apply, semigroup_apply, semigroup_scaled, CollisionRule};
use crate::error::{Error, Result};
use crate::kernel_quadrature::{KernelSpec, SphereQuadrature};
use crate::linalg::{DeformationMatrix, SymMatrix};
use crate::second_moments::moment_propagator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stepper {
    /// Fourth-order integrating-factor Runge-Kutta (Lawson) on the Duhamel form.
    #[default]
    Lawson4,
    /// Two-stage exponential time differencing (predictor + trapezoid corrector).
    Etd2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Nonlinearity {
    Gamma,
    Linear,
}

/// Stateful stepper for one equation; tracks the Gaussian base B(t) through
/// the exact second-moment flow when the initial grid carries a base.
pub struct Evolver {
    rule: CollisionRule,
    a: DeformationMatrix,
    dt: f64,
    stepper: Stepper,
    kind: Nonlinearity,
    prop_full: DMatrix<f64>,
    check_tol: f64,
}

impl Evolver {
    /// Nonlinear evolution with deformation (already shifted) `a`.
    pub fn new(
        kernel: &KernelSpec,
        quad: &SphereQuadrature,
        a: &DeformationMatrix,
        dt: f64,
    ) -> Result<Self> {
        Evolver::build(CollisionRule::new(kernel, quad), a, dt, Nonlinearity::Gamma)
    }

    /// Linear comparison equation ∂ₜu + (Ak)·∂ₖu + u = Lu.
    pub fn linear(
        kernel: &KernelSpec,
        quad: &SphereQuadrature,
        a: &DeformationMatrix,
        dt: f64,
    ) -> Result<Self> {
        Evolver::build(
            CollisionRule::new(kernel, quad),
            a,
            dt,
            Nonlinearity::Linear,
        )
    }

    fn build(
        rule: CollisionRule,
        a: &DeformationMatrix,
        dt: f64,
        kind: Nonlinearity,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt <= 0.1 + 1e-15) {
            return Err(Error::InvalidArgument(format!(
                "dt must lie in (0, 0.1], got {dt}"
            )));
        }
        let q = rule.q();
        Ok(Evolver {
            prop_full: moment_propagator(a, q, 0.0, dt),
            rule,
            a: a.clone(),
            dt,
            stepper: Stepper::default(),
            kind,
            check_tol: 1e-6,
        })
    }

    pub fn with_stepper(mut self, s: Stepper) -> Self {
        self.stepper = s;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn rule(&self) -> &CollisionRule {
        &self.rule
    }

    fn op(&self, g: &CharFnGrid) -> Result<CharFnGrid> {
        match self.kind {
            Nonlinearity::Gamma => gamma_apply(g, &self.rule),
            Nonlinearity::Linear => l_apply(g, &self.rule),
        }
    }

    fn propagate(&self, b: Option<&SymMatrix>) -> Option<SymMatrix> {
        b.map(|b| {
            let v = &self.prop_full * DVector::from_vec(b.to_weighted_vec());
            SymMatrix::from_weighted_vec(b.dim(), v.as_slice())
        })
    }

    /// One step of size dt.
    pub fn step(&self, u: &CharFnGrid) -> Result<CharFnGrid> {
        let h = self.dt;
        let b0 = u.base().cloned();
        let b1 = self.propagate(b0.as_ref());
        let a = &self.a;
        let out = match self.stepper {
            Stepper::Lawson4 => {
                let n1 = self.op(u)?;
                let u2 = semigroup_apply(&u.lin_comb_blended(1.0, &n1, 0.5 * h)?, a, 0.5 * h)?;
                let n2 = self.op(&u2)?;
                let eu_half = semigroup_apply(u, a, 0.5 * h)?;
                let u3 = eu_half.lin_comb_blended(1.0, &n2, 0.5 * h)?;
                let n3 = self.op(&u3)?;
                let eu_full = semigroup_apply(u, a, h)?;
                let en3 = semigroup_apply(&n3, a, 0.5 * h)?;
                let u4 = eu_full.lin_comb_blended(1.0, &en3, h)?;
                let n4 = self.op(&u4)?;
                let en1 = semigroup_apply(&n1, a, h)?;
                let en23 = semigroup_apply(&n2.lin_comb_blended(1.0, &n3, 1.0)?, a, 0.5 * h)?;
                let values: Vec<Complex64> = (0..u.values().len())
                    .map(|i| {
                        eu_full.values()[i]
                            + (en1.values()[i] + en23.values()[i] * 2.0 + n4.values()[i]) * (h / 6.0)
                    })
                    .collect();
                CharFnGrid::from_values(*u.geometry(), values, b1, u.weight_exponent())?
            }
            Stepper::Etd2 => {
                let e = (-h).exp();
                let w0 = 1.0 - (1.0 - e) / h;
                let w1 = (1.0 - e) / h - e;
                let gn = self.op(u)?;
                let eu = semigroup_apply(u, a, h)?;
                let gn_mid = semigroup_scaled(&gn, a, 0.5 * h, 1.0)?;
                let pred = eu.lin_comb_blended(1.0, &gn_mid, 1.0 - e)?;
                let gp = self.op(&pred)?;
                let gn_end = semigroup_scaled(&gn, a, h, 1.0)?;
                let values: Vec<Complex64> = (0..u.values().len())
                    .map(|i| eu.values()[i] + gp.values()[i] * w0 + gn_end.values()[i] * w1)
                    .collect();
                CharFnGrid::from_values(*u.geometry(), values, b1, u.weight_exponent())?
            }
        };
        self.finish(out)
    }

    fn finish(&self, g: CharFnGrid) -> Result<CharFnGrid> {
        let geom = *g.geometry();
        let base = g.base().cloned();
        let p = g.weight_exponent();
        let mut v = g.into_values();
        for i in 0..geom.origin_index() {
            let j = geom.mirror(i);
            let s = (v[i] + v[j].conj()) * 0.5;
            v[i] = s;
            v[j] = s.conj();
        }
        let o = geom.origin_index();
        v[o] = Complex64::new(v[o].re, 0.0);
        if self.kind == Nonlinearity::Gamma {
            v[o] = Complex64::new(1.0, 0.0);
            let out = CharFnGrid::from_values(geom, v, base, p)?;
            let m = out.max_abs();
            if m > 1.0 + self.check_tol {
                return Err(Error::InvariantViolation(format!(
                    "max |phi| = {m} after step"
                )));
            }
            Ok(out)
        } else {
            CharFnGrid::from_values(geom, v, base, p)
        }
    }

    /// Advances to `t_final`, calling `observe(t, grid)` at t = 0 and after every step.
    pub fn run<F>(&self, initial: &CharFnGrid, t_final: f64, mut observe: F) -> Result<CharFnGrid>
    where
        F: FnMut(f64, &CharFnGrid) -> Result<()>,
    {
        let steps = (t_final / self.dt - 1e-9).ceil().max(0.0) as usize;
        let mut u = initial.clone();
        observe(0.0, &u)?;
        for s in 0..steps {
            u = self.step(&u)?;
            observe((s + 1) as f64 * self.dt, &u)?;
        }
        Ok(u)
    }
}

fn steps_and_dt(t_final: f64, dt: f64) -> Result<f64> {
    if !(t_final >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t_final must be >= 0, got {t_final}"
        )));
    }
    if t_final == 0.0 {
        return Ok(dt);
    }
    let n = (t_final / dt - 1e-9).ceil().max(1.0);
    Ok(t_final / n)
}

/// Solves the nonlinear equation with (shifted) deformation `a_beta` up to `t_final`.
pub fn evolve(
    initial: &CharFnGrid,
    a_beta: &DeformationMatrix,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    t_final: f64,
    dt: f64,
) -> Result<CharFnGrid> {
    if dt > 0.1 + 1e-15 {
        return Err(Error::InvalidArgument(format!(
            "dt must be <= 0.1, got {dt}"
        )));
    }
    initial.check_invariants(1e-9)?;
    let dt = steps_and_dt(t_final, dt)?;
    Evolver::new(kernel, quad, a_beta, dt)?.run(initial, t_final, |_, _| Ok(()))
}

/// Solves the linear comparison equation from a nonnegative datum.
pub fn evolve_linear_bound(
    y0: &CharFnGrid,
    a: &DeformationMatrix,
    kernel: &KernelSpec,
    quad: &SphereQuadrature,
    t: f64,
    dt: f64,
) -> Result<CharFnGrid> {
    if y0.values().iter().any(|v| v.re < 0.0 || v.im != 0.0) {
        return Err(Error::InvalidArgument(
            "linear bound needs a real nonnegative datum".into(),
        ));
    }
    let dt = steps_and_dt(t, dt)?;
    let y0 = y0.with_base(None, y0.weight_exponent())?;
    Evolver::linear(kernel, quad, a, dt)?.run(&y0, t, |_, _| Ok(()))
}
