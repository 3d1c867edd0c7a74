//! Nonnegatively constrained convex quadratic programs,
//! `min xᵀHx - 2gᵀx + c  s.t. x >= 0`, by a Mehrotra predictor-corrector
//! interior-point method.

use nalgebra::DVector;

use super::linalg::solve_spd;
use super::quadratic::QuadraticForm;
use super::SolverSettings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `‖x - P(x - ∇F(x))‖∞` of the scaled problem, relative to `1 + |F|`.
    pub projected_gradient: f64,
}

/// Problem data normalized so that `F(0) = 1` (when `c > 0`) and the mean
/// Hessian diagonal is one. Positive rescaling of the objective leaves the
/// normalized data bit-identical.
pub(crate) struct Scaling {
    pub objective: f64,
    pub fluence: f64,
}

impl Scaling {
    pub fn for_forms(forms: &[&QuadraticForm]) -> Self {
        let c = forms.iter().map(|f| f.c).fold(0.0, f64::max);
        let diag = forms
            .iter()
            .map(|f| f.h.diagonal().iter().sum::<f64>() / f.dim() as f64)
            .fold(0.0, f64::max);
        let objective = if c > 0.0 { c } else { 1.0 };
        let fluence = if diag > 0.0 { (objective / diag).sqrt() } else { 1.0 };
        Self { objective, fluence }
    }

    pub fn apply(&self, f: &QuadraticForm) -> QuadraticForm {
        let xi = self.fluence;
        QuadraticForm {
            h: &f.h * (xi * xi / self.objective),
            g: &f.g * (xi / self.objective),
            c: f.c / self.objective,
        }
    }
}

pub fn solve_nonneg_qp(form: &QuadraticForm, settings: &SolverSettings) -> Result<QpSolution> {
    let n = form.dim();
    if form.g.iter().all(|&g| g <= 0.0) {
        // F(x) - F(0) = xᵀHx - 2gᵀx >= 0 on the nonnegative orthant.
        return Ok(QpSolution {
            x: DVector::zeros(n),
            objective: form.c,
            iterations: 0,
            projected_gradient: 0.0,
        });
    }
    let scaling = Scaling::for_forms(&[form]);
    let sf = scaling.apply(form);
    let q = &sf.h * 2.0;
    let lin = &sf.g * -2.0;
    let tol = settings.tolerance;

    let mut x = DVector::from_element(n, 1.0);
    let mut z = DVector::from_element(n, 1.0);
    let lin_norm = lin.amax();
    for iter in 0..settings.max_iterations {
        let grad = &q * &x + &lin;
        let rd = &grad - &z;
        let mu = x.dot(&z) / n as f64;
        let obj = sf.value(&x);
        if rd.amax() <= tol * (1.0 + lin_norm) && mu * n as f64 <= tol * (1.0 + obj.abs()) {
            return Ok(finish(&sf, &scaling, form, x, iter));
        }
        let mut k = q.clone();
        for i in 0..n {
            k[(i, i)] += z[i] / x[i];
        }
        // Predictor.
        let rc_aff = x.component_mul(&z);
        let rhs = -&rd - rc_aff.component_div(&x);
        let dx_aff = solve_spd(&k, &rhs)?;
        let dz_aff = (-&rc_aff - z.component_mul(&dx_aff)).component_div(&x);
        let a_aff = max_step(&x, &dx_aff).min(max_step(&z, &dz_aff));
        let mu_aff = (&x + &dx_aff * a_aff).dot(&(&z + &dz_aff * a_aff)) / n as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        // Corrector.
        let rc = rc_aff + dx_aff.component_mul(&dz_aff) - DVector::from_element(n, sigma * mu);
        let rhs = -&rd - rc.component_div(&x);
        let dx = solve_spd(&k, &rhs)?;
        let dz = (-&rc - z.component_mul(&dx)).component_div(&x);
        let step = (0.99 * max_step(&x, &dx).min(max_step(&z, &dz))).min(1.0);
        x += &dx * step;
        z += &dz * step;
        if !x.iter().chain(z.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical("QP iterate diverged".into()));
        }
    }
    let grad = &q * &x + &lin;
    Err(Error::NotConverged {
        iterations: settings.max_iterations,
        gap: x.dot(&z),
        dual_residual: (&grad - &z).amax(),
    })
}

fn finish(
    sf: &QuadraticForm,
    scaling: &Scaling,
    form: &QuadraticForm,
    y: DVector<f64>,
    iterations: usize,
) -> QpSolution {
    let grad = sf.gradient(&y);
    let pg = y
        .iter()
        .zip(grad.iter())
        .map(|(&x, &g)| (x - (x - g).max(0.0)).abs())
        .fold(0.0, f64::max);
    let obj_scaled = sf.value(&y);
    let x = y * scaling.fluence;
    QpSolution {
        objective: form.value(&x),
        x,
        iterations,
        projected_gradient: pg / (1.0 + obj_scaled.abs()),
    }
}

/// Largest step keeping `v + a dv` nonnegative, capped at `1 / 0.99` so the damped step never exceeds 1.
pub(crate) fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&a, &d)| -a / d)
        .fold(1.0 / 0.99, f64::min)
}
