use serde::{Deserialize, Serialize};

use crate::data_engine::{empirical_loss, full_gradient};
use crate::error::{Error, Result};
use crate::model_zoo::{LossFamily, LossSpec, Sample};
use crate::vector::{axpy, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimumSource {
    ClosedForm,
    /// Deterministic gradient descent run to `‖∇𝓛‖ ≤ 1e-10`.
    NumericOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub source: MinimumSource,
}

const GRAD_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 1_000_000;

/// Global minimizer of the empirical loss. Only strongly convex families have
/// one that is attained and unique.
pub fn minimize(samples: &[Sample], spec: &LossSpec) -> Result<Minimum> {
    if samples.is_empty() {
        return Err(Error::config("cannot minimize over an empty dataset"));
    }
    let d = spec.dimension;
    let mut mean = vec![0.0; d];
    for z in samples {
        axpy(1.0 / samples.len() as f64, &z.x, &mut mean);
    }
    match spec.family {
        LossFamily::Quadratic => {
            let value = empirical_loss(samples, spec, &mean);
            Ok(Minimum { theta: mean, value, grad_norm: 0.0, source: MinimumSource::ClosedForm })
        }
        LossFamily::RidgeLogistic { .. } => {
            let step = 1.0 / spec.smoothness;
            let mut theta = vec![0.0; d];
            for _ in 0..MAX_ITERS {
                let g = full_gradient(samples, spec, &theta);
                let gn = norm(&g);
                if gn <= GRAD_TOL {
                    let value = empirical_loss(samples, spec, &theta);
                    return Ok(Minimum { theta, value, grad_norm: gn, source: MinimumSource::NumericOracle });
                }
                axpy(-step, &g, &mut theta);
            }
            Err(Error::certification("minimizer did not reach the gradient tolerance"))
        }
        LossFamily::Logistic | LossFamily::SmoothNonconvex => Err(Error::certification(format!(
            "no certified minimum for the {} family",
            spec.family.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_engine::Dataset;
    use crate::model_zoo::certified_constants;

    #[test]
    fn ridge_minimum_is_stationary() {
        let f = LossFamily::RidgeLogistic { lambda: 0.1 };
        let ds = Dataset::synthetic(&f, 50, 3, 1.0, 4).unwrap();
        let spec = certified_constants(f, 3, 1.0, None, &[0.0; 3]).unwrap();
        let m = minimize(ds.samples(), &spec).unwrap();
        assert!(m.grad_norm <= 1e-10);
        assert_eq!(m.source, MinimumSource::NumericOracle);
    }

    #[test]
    fn quadratic_minimum_is_mean() {
        let f = LossFamily::Quadratic;
        let ds = Dataset::new(vec![Sample::point(vec![0.0]), Sample::point(vec![1.0])], &f, 1, 1.0).unwrap();
        let spec = certified_constants(f, 1, 1.0, None, &[0.0]).unwrap();
        let m = minimize(ds.samples(), &spec).unwrap();
        assert_eq!(m.theta, vec![0.5]);
        assert_eq!(m.value, 0.125);
    }

    #[test]
    fn logistic_has_no_certified_minimum() {
        let f = LossFamily::Logistic;
        let ds = Dataset::synthetic(&f, 10, 2, 1.0, 4).unwrap();
        let spec = certified_constants(f, 2, 1.0, None, &[0.0; 2]).unwrap();
        assert!(minimize(ds.samples(), &spec).is_err());
    }
}
