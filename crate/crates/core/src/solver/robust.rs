//! Robust CVaR planning.
//!
//! The nested minimax problem over systematic scenarios `s` (probabilities
//! `p`) and random-error spreads `u` (probabilities `p_σ`) is solved in its
//! dual form
//!
//! ```text
//! minimize    λ + (1/α) pᵀμ
//! subject to  λ + μ_s >= λ̄(s) + (1/α) p_σᵀ μ̄(s)       for all s
//!             λ̄(s) + μ̄_u(s) >= F_su(x)                 for all s, u
//!             μ >= 0, μ̄ >= 0, x >= 0
//! ```
//!
//! where `F_su` is the expected fraction objective (a convex quadratic). The
//! solver is a primal-dual interior-point method working on a normalized copy
//! of the problem.

use nalgebra::{DMatrix, DVector};

use super::cvar::{cvar_with_threshold, nested_cvar};
use super::linalg::factor_spd;
use super::qp::Scaling;
use super::quadratic::QuadraticForm;
use super::SolverSettings;
use crate::error::{invalid, Error, Result};

/// Dual-form iterates plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSolution {
    pub fluence: DVector<f64>,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub mu_bar: Vec<Vec<f64>>,
    /// `λ + (1/α) pᵀμ` at the returned point.
    pub objective: f64,
    /// `F_su(x)` at the returned fluence.
    pub scenario_values: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Surrogate duality gap relative to `1 + |objective|` (normalized units).
    pub gap: f64,
    /// Infinity norm of the dual residual relative to `1 + ‖c‖∞`.
    pub dual_residual: f64,
    /// Largest constraint violation in objective units (0 when strictly feasible).
    pub max_violation: f64,
}

impl RobustSolution {
    /// Nested CVaR of the scenario values at the returned fluence.
    pub fn nested_value(&self, p: &[f64], p_sigma: &[f64], alpha: f64) -> f64 {
        nested_cvar(&self.scenario_values, p, p_sigma, alpha)
    }
}

#[derive(Clone, Copy)]
struct Layout {
    n: usize,
    s: usize,
    u: usize,
}

impl Layout {
    fn lambda(&self) -> usize {
        self.n
    }
    fn mu(&self, s: usize) -> usize {
        self.n + 1 + s
    }
    fn lbar(&self, s: usize) -> usize {
        self.n + 1 + self.s + s
    }
    fn mubar(&self, s: usize, u: usize) -> usize {
        self.n + 1 + 2 * self.s + s * self.u + u
    }
    fn dim(&self) -> usize {
        self.n + 1 + 2 * self.s + self.s * self.u
    }
    fn constraints(&self) -> usize {
        self.n + 2 * self.s + 2 * self.s * self.u
    }
}

/// Per-family values of one kind (slacks, multipliers, ...), in the order
/// x-bounds, μ-bounds, μ̄-bounds, linking rows, scenario rows.
#[derive(Clone, Debug)]
struct Families {
    x: Vec<f64>,
    mu: Vec<f64>,
    mubar: Vec<f64>,
    link: Vec<f64>,
    scen: Vec<f64>,
}

impl Families {
    fn iter(&self) -> impl Iterator<Item = &f64> {
        self.x
            .iter()
            .chain(&self.mu)
            .chain(&self.mubar)
            .chain(&self.link)
            .chain(&self.scen)
    }

    fn map2(&self, other: &Families, f: impl Fn(f64, f64) -> f64) -> Families {
        let m = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
        Families {
            x: m(&self.x, &other.x),
            mu: m(&self.mu, &other.mu),
            mubar: m(&self.mubar, &other.mubar),
            link: m(&self.link, &other.link),
            scen: m(&self.scen, &other.scen),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Families {
        self.map2(self, |a, _| f(a))
    }

    fn dot(&self, other: &Families) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }
}

struct Problem<'a> {
    lay: Layout,
    forms: Vec<QuadraticForm>,
    p: &'a [f64],
    p_sigma: &'a [f64],
    inv_alpha: f64,
}

struct Point {
    z: DVector<f64>,
    grads: Vec<DVector<f64>>,
    slack: Families,
}

impl<'a> Problem<'a> {
    fn form(&self, s: usize, u: usize) -> &QuadraticForm {
        &self.forms[s * self.lay.u + u]
    }

    fn cost(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.lay.dim());
        c[self.lay.lambda()] = 1.0;
        for s in 0..self.lay.s {
            c[self.lay.mu(s)] = self.p[s] * self.inv_alpha;
        }
        c
    }

    fn evaluate(&self, z: DVector<f64>) -> Point {
        let l = self.lay;
        let y = z.rows(0, l.n).into_owned();
        let mut values = Vec::with_capacity(l.s * l.u);
        let mut grads = Vec::with_capacity(l.s * l.u);
        for f in &self.forms {
            values.push(f.value(&y));
            grads.push(f.gradient(&y));
        }
        let slack = self.slacks(&z, &values);
        Point { z, grads, slack }
    }

    fn slacks(&self, z: &DVector<f64>, values: &[f64]) -> Families {
        let l = self.lay;
        let x = (0..l.n).map(|b| z[b]).collect();
        let mu = (0..l.s).map(|s| z[l.mu(s)]).collect();
        let mubar = (0..l.s * l.u).map(|i| z[l.mubar(i / l.u, i % l.u)]).collect();
        let link = (0..l.s)
            .map(|s| {
                let inner: f64 = (0..l.u).map(|u| self.p_sigma[u] * z[l.mubar(s, u)]).sum();
                z[l.lambda()] + z[l.mu(s)] - z[l.lbar(s)] - self.inv_alpha * inner
            })
            .collect();
        let scen = (0..l.s * l.u)
            .map(|i| {
                let (s, u) = (i / l.u, i % l.u);
                z[l.lbar(s)] + z[l.mubar(s, u)] - values[i]
            })
            .collect();
        Families {
            x,
            mu,
            mubar,
            link,
            scen,
        }
    }

    /// `sum_i w_i ∇f_i` for constraints written as `f_i <= 0`.
    fn combine(&self, w: &Families, grads: &[DVector<f64>]) -> DVector<f64> {
        let l = self.lay;
        let mut out = DVector::zeros(l.dim());
        for b in 0..l.n {
            out[b] -= w.x[b];
        }
        for s in 0..l.s {
            out[l.mu(s)] -= w.mu[s];
            let k = w.link[s];
            out[l.lbar(s)] += k;
            out[l.lambda()] -= k;
            out[l.mu(s)] -= k;
            for u in 0..l.u {
                let i = s * l.u + u;
                out[l.mubar(s, u)] += k * self.inv_alpha * self.p_sigma[u] - w.mubar[i];
                let ws = w.scen[i];
                if ws != 0.0 {
                    let mut xs = out.rows_mut(0, l.n);
                    xs.axpy(ws, &grads[i], 1.0);
                }
                out[l.lbar(s)] -= ws;
                out[l.mubar(s, u)] -= ws;
            }
        }
        out
    }

    /// `∇f_iᵀ Δz` for every constraint.
    fn directional(&self, dz: &DVector<f64>, grads: &[DVector<f64>]) -> Families {
        let l = self.lay;
        let dy = dz.rows(0, l.n);
        Families {
            x: (0..l.n).map(|b| -dz[b]).collect(),
            mu: (0..l.s).map(|s| -dz[l.mu(s)]).collect(),
            mubar: (0..l.s * l.u).map(|i| -dz[l.mubar(i / l.u, i % l.u)]).collect(),
            link: (0..l.s)
                .map(|s| {
                    let inner: f64 = (0..l.u).map(|u| self.p_sigma[u] * dz[l.mubar(s, u)]).sum();
                    dz[l.lbar(s)] + self.inv_alpha * inner - dz[l.lambda()] - dz[l.mu(s)]
                })
                .collect(),
            scen: (0..l.s * l.u)
                .map(|i| {
                    let (s, u) = (i / l.u, i % l.u);
                    grads[i].dot(&dy) - dz[l.lbar(s)] - dz[l.mubar(s, u)]
                })
                .collect(),
        }
    }

    fn kkt_matrix(&self, pt: &Point, nu: &Families) -> DMatrix<f64> {
        let l = self.lay;
        let d = nu.map2(&pt.slack, |a, b| a / b);
        let mut k = DMatrix::zeros(l.dim(), l.dim());
        for b in 0..l.n {
            k[(b, b)] += d.x[b];
        }
        for s in 0..l.s {
            k[(l.mu(s), l.mu(s))] += d.mu[s];
            // Linking row: ℓ = e_λ̄ + (p_σ/α) e_μ̄ - e_λ - e_μ.
            let mut idx: Vec<(usize, f64)> = vec![(l.lbar(s), 1.0), (l.lambda(), -1.0), (l.mu(s), -1.0)];
            for u in 0..l.u {
                idx.push((l.mubar(s, u), self.inv_alpha * self.p_sigma[u]));
            }
            for &(i, a) in &idx {
                for &(j, b) in &idx {
                    k[(i, j)] += d.link[s] * a * b;
                }
            }
            for u in 0..l.u {
                let i = s * l.u + u;
                let (lb, mb) = (l.lbar(s), l.mubar(s, u));
                k[(mb, mb)] += d.mubar[i];
                let w = d.scen[i];
                let g = &pt.grads[i];
                {
                    let mut kxx = k.view_mut((0, 0), (l.n, l.n));
                    let h = &self.form(s, u).h;
                    let c = 2.0 * nu.scen[i];
                    kxx.zip_apply(h, |a, b| *a += c * b);
                    kxx.ger(w, g, g, 1.0);
                }
                for b in 0..l.n {
                    let v = -w * g[b];
                    k[(b, lb)] += v;
                    k[(lb, b)] += v;
                    k[(b, mb)] += v;
                    k[(mb, b)] += v;
                }
                k[(lb, lb)] += w;
                k[(mb, mb)] += w;
                k[(lb, mb)] += w;
                k[(mb, lb)] += w;
            }
        }
        k
    }
}

/// Solves the dual CVaR program for scenario forms `forms[s][u]`.
pub fn solve_cvar_program(
    forms: &[Vec<QuadraticForm>],
    p: &[f64],
    p_sigma: &[f64],
    alpha: f64,
    settings: &SolverSettings,
) -> Result<RobustSolution> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if forms.is_empty() || forms.len() != p.len() || p_sigma.is_empty() {
        return Err(invalid("scenario forms do not match the scenario probabilities"));
    }
    if forms.iter().any(|row| row.len() != p_sigma.len()) {
        return Err(invalid("every systematic scenario needs one form per sigma scenario"));
    }
    let n = forms[0][0].dim();
    let flat: Vec<&QuadraticForm> = forms.iter().flatten().collect();
    let lay = Layout {
        n,
        s: p.len(),
        u: p_sigma.len(),
    };

    if flat.iter().all(|f| f.g.iter().all(|&g| g <= 0.0)) {
        // Every scenario objective is minimized over x >= 0 at x = 0.
        return Ok(complete(
            forms,
            DVector::zeros(n),
            p,
            p_sigma,
            alpha,
            Diagnostics::default(),
        ));
    }

    let scaling = Scaling::for_forms(&flat);
    let prob = Problem {
        lay,
        forms: flat.iter().map(|f| scaling.apply(f)).collect(),
        p,
        p_sigma,
        inv_alpha: 1.0 / alpha,
    };
    let c = prob.cost();
    let c_norm = c.amax();
    let m = lay.constraints() as f64;

    let mut pt = prob.evaluate(initial_point(&prob));
    let mut nu = pt.slack.map(|s| 1.0 / s);
    let tol = settings.tolerance;

    // Best iterate by max(gap, dual residual), used when progress stalls.
    let mut best: Option<(f64, Diagnostics, DVector<f64>)> = None;
    let mut failure = None;
    for iter in 0..=settings.max_iterations {
        let eta = nu.dot(&pt.slack);
        let r_dual = &c + prob.combine(&nu, &pt.grads);
        let obj = c.dot(&pt.z);
        let diag = Diagnostics {
            iterations: iter,
            gap: eta / (1.0 + obj.abs()),
            dual_residual: r_dual.amax() / (1.0 + c_norm),
            max_violation: 0.0,
        };
        let merit = diag.gap.max(diag.dual_residual);
        if merit <= tol {
            return Ok(unscale(&prob, &pt.z, forms, &scaling, p, p_sigma, alpha, diag));
        }
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, diag, pt.z.clone()));
        }
        if iter == settings.max_iterations {
            break;
        }
        match pd_step(&prob, &pt, &nu, &r_dual, eta / m) {
            Ok((dz, dnu, step)) => {
                log::trace!(
                    "cvar ipm {iter}: gap {:.3e} dual {:.3e} step {step:.3e}",
                    diag.gap,
                    diag.dual_residual
                );
                nu = nu.map2(&dnu, |v, d| v + step * d);
                pt = prob.evaluate(&pt.z + &dz * step);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let (merit, diag, z) = best.expect("at least one iterate");
    if merit <= settings.acceptable_tolerance {
        log::debug!("cvar ipm stopped at acceptable accuracy {merit:.3e}");
        return Ok(unscale(&prob, &z, forms, &scaling, p, p_sigma, alpha, diag));
    }
    Err(failure.unwrap_or(Error::NotConverged {
        iterations: settings.max_iterations,
        gap: diag.gap,
        dual_residual: diag.dual_residual,
    }))
}

/// One Mehrotra predictor-corrector step; returns `(Δz, Δν, step length)`.
fn pd_step(
    prob: &Problem,
    pt: &Point,
    nu: &Families,
    r_dual: &DVector<f64>,
    mu_avg: f64,
) -> Result<(DVector<f64>, Families, f64)> {
    let n = prob.lay.n;
    let m = prob.lay.constraints() as f64;
    let chol = factor_spd(&prob.kkt_matrix(pt, nu))?;
    // Newton direction for the complementarity residual `r`:
    // Δν_i = (ν_i ∇f_iᵀΔz - r_i) / s_i.
    let direction = |r: &Families| {
        let rhs = -r_dual + prob.combine(&r.map2(&pt.slack, |r, s| r / s), &pt.grads);
        let dz = chol.solve(&rhs);
        let dfd = prob.directional(&dz, &pt.grads);
        let dnu = nu
            .map2(&dfd, |n, d| n * d)
            .map2(r, |a, r| a - r)
            .map2(&pt.slack, |a, s| a / s);
        let dy = dz.rows(0, n).into_owned();
        let curv: Vec<f64> = prob.forms.iter().map(|f| dy.dot(&(&f.h * &dy))).collect();
        (dz, dfd, dnu, curv)
    };
    let max_step = |dfd: &Families, dnu: &Families, curv: &[f64]| {
        let dual = nu
            .iter()
            .zip(dnu.iter())
            .filter(|(_, &d)| d < 0.0)
            .map(|(&v, &d)| -v / d)
            .fold(f64::INFINITY, f64::min);
        dual.min(primal_max_step(&pt.slack, dfd, curv))
    };

    // Predictor.
    let (_, dfd_a, dnu_a, curv_a) = direction(&nu.map2(&pt.slack, |n, s| n * s));
    let a_aff = max_step(&dfd_a, &dnu_a, &curv_a).min(1.0);
    let mut slack_aff = pt.slack.map2(&dfd_a, |s, d| s - a_aff * d);
    for (v, q) in slack_aff.scen.iter_mut().zip(&curv_a) {
        *v -= a_aff * a_aff * q;
    }
    let mu_aff = nu.map2(&dnu_a, |v, d| v + a_aff * d).dot(&slack_aff) / m;
    let sigma = (mu_aff / mu_avg).powi(3).clamp(0.0, 1.0);

    // Corrector with the second-order terms of the predictor.
    let mut r = nu.map2(&pt.slack, |n, s| n * s - sigma * mu_avg);
    r = r.map2(&dnu_a.map2(&dfd_a, |a, b| a * b), |r, x| r - x);
    for ((ri, n), q) in r.scen.iter_mut().zip(&nu.scen).zip(&curv_a) {
        *ri -= n * q;
    }
    let (dz, dfd, dnu, curv) = direction(&r);
    let step = (0.99 * max_step(&dfd, &dnu, &curv)).min(1.0);
    if !(step > 1e-14) || !dz.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("interior-point step length collapsed".into()));
    }
    Ok((dz, dnu, step))
}

/// Largest `a` keeping every slack `s - a d - a^2 c` positive (`c = 0`
/// except for the scenario rows).
fn primal_max_step(slack: &Families, dfd: &Families, curv: &[f64]) -> f64 {
    let linear = |s: f64, d: f64| if d > 0.0 { s / d } else { f64::INFINITY };
    let mut a = f64::INFINITY;
    for (s, d) in [
        (&slack.x, &dfd.x),
        (&slack.mu, &dfd.mu),
        (&slack.mubar, &dfd.mubar),
        (&slack.link, &dfd.link),
    ] {
        for (&si, &di) in s.iter().zip(d.iter()) {
            a = a.min(linear(si, di));
        }
    }
    for ((&si, &di), &ci) in slack.scen.iter().zip(&dfd.scen).zip(curv) {
        let root = if ci > 0.0 {
            2.0 * si / (di + (di * di + 4.0 * ci * si).sqrt())
        } else {
            linear(si, di)
        };
        a = a.min(root);
    }
    a
}

fn initial_point(prob: &Problem) -> DVector<f64> {
    let l = prob.lay;
    let mut z = DVector::zeros(l.dim());
    for b in 0..l.n {
        z[b] = 0.1;
    }
    let y = z.rows(0, l.n).into_owned();
    let mut top = f64::NEG_INFINITY;
    for s in 0..l.s {
        let worst = (0..l.u)
            .map(|u| prob.form(s, u).value(&y))
            .fold(f64::NEG_INFINITY, f64::max);
        z[l.lbar(s)] = worst + 1.0;
        z[l.mu(s)] = 1.0;
        for u in 0..l.u {
            z[l.mubar(s, u)] = 1.0;
        }
        let inner: f64 = prob.p_sigma.iter().sum::<f64>() * prob.inv_alpha;
        top = top.max(z[l.lbar(s)] + inner - 1.0);
    }
    z[l.lambda()] = top + 1.0;
    z
}

#[allow(clippy::too_many_arguments)]
fn unscale(
    prob: &Problem,
    z: &DVector<f64>,
    forms: &[Vec<QuadraticForm>],
    scaling: &Scaling,
    p: &[f64],
    p_sigma: &[f64],
    alpha: f64,
    mut diag: Diagnostics,
) -> RobustSolution {
    let l = prob.lay;
    let k = scaling.objective;
    let fluence = z.rows(0, l.n).into_owned() * scaling.fluence;
    let scenario_values: Vec<Vec<f64>> = forms
        .iter()
        .map(|row| row.iter().map(|f| f.value(&fluence)).collect())
        .collect();
    let lambda = z[l.lambda()] * k;
    let mu: Vec<f64> = (0..l.s).map(|s| z[l.mu(s)] * k).collect();
    let lambda_bar: Vec<f64> = (0..l.s).map(|s| z[l.lbar(s)] * k).collect();
    let mu_bar: Vec<Vec<f64>> = (0..l.s)
        .map(|s| (0..l.u).map(|u| z[l.mubar(s, u)] * k).collect())
        .collect();
    let objective = lambda + mu.iter().zip(p).map(|(m, q)| m * q).sum::<f64>() / alpha;
    let mut viol: f64 = 0.0;
    for s in 0..l.s {
        let inner: f64 = mu_bar[s].iter().zip(p_sigma).map(|(m, q)| m * q).sum::<f64>() / alpha;
        viol = viol.max(lambda_bar[s] + inner - lambda - mu[s]);
        for u in 0..l.u {
            viol = viol.max(scenario_values[s][u] - lambda_bar[s] - mu_bar[s][u]);
        }
    }
    diag.max_violation = viol.max(0.0);
    RobustSolution {
        fluence,
        lambda,
        mu,
        lambda_bar,
        mu_bar,
        objective,
        scenario_values,
        diagnostics: diag,
    }
}

/// Builds the tight auxiliary completion at a fixed fluence:
/// `λ̄(s)` and `λ` are the value-at-risk thresholds of each CVaR level.
fn complete(
    forms: &[Vec<QuadraticForm>],
    fluence: DVector<f64>,
    p: &[f64],
    p_sigma: &[f64],
    alpha: f64,
    diagnostics: Diagnostics,
) -> RobustSolution {
    let scenario_values: Vec<Vec<f64>> = forms
        .iter()
        .map(|row| row.iter().map(|f| f.value(&fluence)).collect())
        .collect();
    let mut lambda_bar = Vec::with_capacity(p.len());
    let mut mu_bar = Vec::with_capacity(p.len());
    let mut inner = Vec::with_capacity(p.len());
    for row in &scenario_values {
        let (cv, var) = cvar_with_threshold(row, p_sigma, alpha);
        lambda_bar.push(var);
        mu_bar.push(row.iter().map(|v| (v - var).max(0.0)).collect());
        inner.push(cv);
    }
    let (objective, lambda) = cvar_with_threshold(&inner, p, alpha);
    let mu = inner.iter().map(|v| (v - lambda).max(0.0)).collect();
    RobustSolution {
        fluence,
        lambda,
        mu,
        lambda_bar,
        mu_bar,
        objective,
        scenario_values,
        diagnostics,
    }
}
