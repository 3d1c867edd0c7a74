//! Quadratic forms of the (expected) objective in the fluence variables.
//!
//! For a systematic shift `s` and random-error spread `σ_u` the expected
//! objective over `N` i.i.d. fractions is exactly
//! `F(x) = xᵀ H x - 2 gᵀ x + c` with
//! `H = (1 - 1/N) MᵀΩM + (1/N) Σ_t q_t A_{s+t}ᵀ Ω A_{s+t}` and `M = Σ_t q_t A_{s+t}`,
//! where `Ω` holds the collapsed per-voxel weights.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::objective::{random_error_scenarios, ObjectiveSpec, VoxelPenalty};
use crate::phantom::Phantom;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.h * x)) - 2.0 * self.g.dot(x) + self.c
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.h * x - &self.g) * 2.0
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Probability-weighted combination of forms.
    pub fn mixture(forms: &[&QuadraticForm], weights: &[f64]) -> QuadraticForm {
        let n = forms[0].dim();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let mut c = 0.0;
        for (f, &w) in forms.iter().zip(weights) {
            h += &f.h * w;
            g += &f.g * w;
            c += w * f.c;
        }
        QuadraticForm { h, g, c }
    }
}

struct ShiftTerms {
    /// Dose operator at this shift.
    a: DMatrix<f64>,
    /// `AᵀΩA`.
    gram: DMatrix<f64>,
    /// `Aᵀh`.
    lin: DVector<f64>,
}

/// Builds scenario quadratic forms for one phantom and objective.
///
/// Per-shift Gram matrices are cached for shifts on the voxel grid, which
/// is where every discretized scenario lives. The cache is shared across
/// threads; cached values do not depend on evaluation order.
pub struct ScenarioForms {
    phantom: Arc<Phantom>,
    spec: ObjectiveSpec,
    penalty: VoxelPenalty,
    sqrt_omega: DVector<f64>,
    cache: Mutex<HashMap<i64, Arc<ShiftTerms>>>,
}

impl std::fmt::Debug for ScenarioForms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioForms")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl ScenarioForms {
    pub fn new(phantom: Arc<Phantom>, spec: ObjectiveSpec) -> Self {
        let penalty = spec.voxel_penalty(&phantom);
        let sqrt_omega = DVector::from_iterator(penalty.omega.len(), penalty.omega.iter().map(|w| w.sqrt()));
        Self {
            phantom,
            spec,
            penalty,
            sqrt_omega,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn phantom(&self) -> &Arc<Phantom> {
        &self.phantom
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn num_beamlets(&self) -> usize {
        self.phantom.operator().num_beamlets()
    }

    fn compute_terms(&self, shift: f64) -> ShiftTerms {
        let a = self.phantom.operator().matrix(shift);
        let mut wa = a.clone();
        for (mut row, &s) in wa.row_iter_mut().zip(self.sqrt_omega.iter()) {
            row *= s;
        }
        let gram = wa.tr_mul(&wa);
        let lin = a.tr_mul(&DVector::from_column_slice(&self.penalty.linear));
        ShiftTerms { a, gram, lin }
    }

    fn terms(&self, shift: f64) -> Arc<ShiftTerms> {
        let h = self.phantom.grid().spacing();
        let k = (shift / h).round();
        if (k * h - shift).abs() > 1e-9 * h {
            return Arc::new(self.compute_terms(shift));
        }
        let key = k as i64;
        if let Some(t) = self.cache.lock().expect("cache lock").get(&key) {
            return Arc::clone(t);
        }
        let t = Arc::new(self.compute_terms(k * h));
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&t));
        t
    }

    /// Objective of the unshifted plan dose, `F(x) = f(A x)`.
    pub fn static_form(&self, shift: f64) -> QuadraticForm {
        let t = self.terms(shift);
        QuadraticForm {
            h: t.gram.clone(),
            g: t.lin.clone(),
            c: self.penalty.constant,
        }
    }

    /// Expected objective under systematic shift `systematic` and
    /// per-fraction random errors `N(0, sigma_u^2)` over `fractions` fractions.
    pub fn expected_form(&self, systematic: f64, sigma_u: f64, fractions: usize) -> Result<QuadraticForm> {
        let set = random_error_scenarios(&self.phantom, sigma_u)?;
        if set.len() == 1 {
            return Ok(self.static_form(systematic + set.shifts()[0]));
        }
        let inv_n = 1.0 / fractions.max(1) as f64;
        let nb = self.num_beamlets();
        let nv = self.phantom.grid().len();
        let mut m = DMatrix::zeros(nv, nb);
        let mut gram = DMatrix::zeros(nb, nb);
        let mut g = DVector::zeros(nb);
        for (t, q) in set.iter() {
            let terms = self.terms(systematic + t);
            m += &terms.a * q;
            gram += &terms.gram * q;
            g += &terms.lin * q;
        }
        for (mut row, &s) in m.row_iter_mut().zip(self.sqrt_omega.iter()) {
            row *= s;
        }
        let mut h = m.tr_mul(&m) * (1.0 - inv_n);
        h += gram * inv_n;
        Ok(QuadraticForm {
            h,
            g,
            c: self.penalty.constant,
        })
    }
}
