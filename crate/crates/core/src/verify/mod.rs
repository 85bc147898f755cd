//! Executable checks for every quantitative inequality the certification
//! relies on.
//!
//! Exact checks evaluate an inequality on many random instances and count
//! violations. Statistical checks compare a Monte Carlo mean over coupled
//! replicas with a bound on an expectation and pass when
//! `mean ≤ bound + 3·SE`. Replicas run in parallel but are reduced in replica
//! order, so reports are bitwise reproducible for any thread count.

mod exact;
mod minimize;
mod statistical;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use exact::{
    check_bias_bounds, check_contraction, check_gaussian_indistinguishability_1d, check_gradient_finite_differences,
    check_loss_certificates, check_projection_nonexpansive, check_quadratic_growth, contraction_factor,
};
pub use minimize::{minimize, Minimum, MinimumSource};
pub use statistical::{
    check_biased_descent, check_coupled_divergence, check_end_to_end_sensitivity, check_same_loss_contraction,
    check_sgd_convergence, MIN_REPLICAS,
};

/// Default number of random instances per exact check.
pub const EXACT_TRIALS: usize = 10_000;

/// Relative slack for floating-point rounding in exact inequalities.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Exact,
    Statistical,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub kind: CheckKind,
    pub instances: u64,
    pub violations: u64,
    /// Smallest `bound − observed` over all instances (or time points).
    pub worst_margin: f64,
    pub mc_mean: Option<f64>,
    pub mc_se: Option<f64>,
    pub bound: Option<f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn summary_line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        match (self.mc_mean, self.mc_se, self.bound) {
            (Some(m), Some(se), Some(b)) => format!(
                "{status} {} [{} replicas] mean {m:.6e} ± {se:.2e} vs bound {b:.6e}",
                self.name, self.instances
            ),
            _ => format!(
                "{status} {} [{} instances] violations {} worst margin {:.3e}",
                self.name, self.instances, self.violations, self.worst_margin
            ),
        }
    }

    pub(crate) fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Running tally for an exact check.
pub(crate) struct Tally {
    name: String,
    instances: u64,
    violations: u64,
    worst_margin: f64,
}

impl Tally {
    pub(crate) fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), instances: 0, violations: 0, worst_margin: f64::INFINITY }
    }

    /// Records `observed ≤ bound`, allowing rounding slack relative to `scale`.
    pub(crate) fn le(&mut self, observed: f64, bound: f64, scale: f64) {
        self.instances += 1;
        let margin = bound - observed;
        if margin.is_nan() || margin < -EXACT_TOLERANCE * (1.0 + scale.abs()) {
            self.violations += 1;
        }
        if margin.is_nan() {
            self.worst_margin = f64::NEG_INFINITY;
        } else {
            self.worst_margin = self.worst_margin.min(margin);
        }
    }

    pub(crate) fn finish(self) -> CheckReport {
        CheckReport {
            name: self.name,
            kind: CheckKind::Exact,
            instances: self.instances,
            violations: self.violations,
            worst_margin: if self.instances == 0 { 0.0 } else { self.worst_margin },
            mc_mean: None,
            mc_se: None,
            bound: None,
            pass: self.violations == 0,
            extra: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

/// Sample mean and standard error, summed in the given order.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_counts_violations() {
        let mut t = Tally::new("x");
        t.le(1.0, 2.0, 2.0);
        t.le(2.0 + 1e-12, 2.0, 2.0);
        assert_eq!(t.violations, 0);
        t.le(3.0, 2.0, 2.0);
        let r = t.finish();
        assert_eq!((r.instances, r.violations, r.pass), (3, 1, false));
        assert_eq!(r.worst_margin, -1.0);
    }

    #[test]
    fn mean_se_basic() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
