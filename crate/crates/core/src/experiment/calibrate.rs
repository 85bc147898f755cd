use serde::{Deserialize, Serialize};

use super::{CalibrateInput, Overrides, OUTPUT_FORMAT_VERSION};
use crate::certify::{
    calibrate_noise, d2d_training_horizon, k_for_sigma, sigma_psgd_r2d, sigma_sgd_d2d, sigma_sgd_r2d, tail_radius,
    FormulaVariant, Method, Moment, PrivacyBudget, Regime, SensitivityBound,
};
use crate::error::{Error, Result};

/// Certified constants supplied directly instead of derived from a loss family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(rename = "L")]
    pub smoothness: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(rename = "G", default)]
    pub grad_bound: Option<f64>,
    #[serde(rename = "B", default)]
    pub noise_b: f64,
    #[serde(rename = "C", default)]
    pub noise_c: f64,
    #[serde(default)]
    pub loss_at_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateRequest {
    pub method: Method,
    /// Required for rewinding methods; descent is always strongly convex.
    #[serde(default)]
    pub regime: Option<Regime>,
    pub constants: Constants,
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    /// Optional for descent, where it defaults to the certified horizon.
    #[serde(rename = "T", default)]
    pub t: Option<u64>,
    /// Either `K` or `sigma_target` (strongly convex projected SGD) is required.
    #[serde(rename = "K", default)]
    pub k: Option<u64>,
    #[serde(default)]
    pub sigma_target: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub variant: FormulaVariant,
}

/// Output of `calibrate`. Key names are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub format_version: u32,
    pub method: Method,
    pub regime: Regime,
    pub variant: FormulaVariant,
    pub moment: Moment,
    pub sensitivity: f64,
    pub noise_std: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// The guarantee is `(epsilon, guarantee_delta)` with `guarantee_delta = 2·delta`.
    pub guarantee_delta: f64,
    /// Radius exceeded with probability at most `delta`.
    pub tail_radius: f64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "T")]
    pub t: u64,
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub constants: Constants,
    pub warnings: Vec<String>,
}

impl Calibration {
    #[allow(clippy::too_many_arguments)]
    fn build(
        bound: &SensitivityBound,
        budget: &PrivacyBudget,
        k: u64,
        t: u64,
        n: usize,
        m: usize,
        eta: f64,
        constants: Constants,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let noise = calibrate_noise(bound, budget)?;
        Ok(Self {
            format_version: OUTPUT_FORMAT_VERSION,
            method: bound.method,
            regime: bound.regime,
            variant: bound.variant,
            moment: bound.moment,
            sensitivity: bound.sigma,
            noise_std: noise.std,
            epsilon: budget.epsilon,
            delta: budget.delta,
            guarantee_delta: 2.0 * budget.delta,
            tail_radius: tail_radius(bound, budget.delta),
            k,
            t,
            n,
            m,
            eta,
            constants,
            warnings,
        })
    }
}

fn calibrate_request(req: &CalibrateRequest, overrides: &Overrides) -> Result<Calibration> {
    let budget = PrivacyBudget::new(req.epsilon, req.delta)?;
    let variant = overrides.variant.unwrap_or(req.variant);
    let c = &req.constants;
    let mut warnings = Vec::new();
    let regime = match (req.method, req.regime) {
        (Method::SgdD2d, None | Some(Regime::StronglyConvex)) => Regime::StronglyConvex,
        (Method::SgdD2d, Some(_)) => {
            return Err(Error::certification("descent-to-delete is certified for strongly convex losses only"))
        }
        (_, Some(r)) => r,
        (_, None) => return Err(Error::config("regime is required for rewinding methods")),
    };
    let grad_bound = || {
        c.grad_bound
            .ok_or_else(|| Error::config("constants.G is required for projected SGD"))
    };
    let (bound, k, t) = match req.method {
        Method::PsgdR2d => {
            let t = req.t.ok_or_else(|| Error::config("T is required for rewinding methods"))?;
            let g = grad_bound()?;
            let k = match (req.k, req.sigma_target) {
                (Some(k), None) => k,
                (None, Some(target)) => {
                    if regime != Regime::StronglyConvex {
                        return Err(Error::config("sigma_target planning needs the strongly convex regime"));
                    }
                    let k = k_for_sigma(target, req.eta, c.mu, g, req.n, req.m, t, variant)?;
                    if k == 0 {
                        warnings.push(format!("sigma_target {target} is met without unlearning steps; K = 0"));
                    }
                    k
                }
                _ => return Err(Error::config("give exactly one of K and sigma_target")),
            };
            (sigma_psgd_r2d(regime, req.eta, c.smoothness, c.mu, g, req.n, req.m, t, k, variant)?, k, t)
        }
        Method::SgdR2d => {
            let t = req.t.ok_or_else(|| Error::config("T is required for rewinding methods"))?;
            let k = req.k.ok_or_else(|| Error::config("K is required"))?;
            let b = sigma_sgd_r2d(
                regime,
                req.eta,
                c.smoothness,
                c.mu,
                c.noise_b,
                c.noise_c,
                c.loss_at_init,
                req.n,
                req.m,
                t,
                k,
                variant,
            )?;
            (b, k, t)
        }
        Method::SgdD2d => {
            let k = req.k.ok_or_else(|| Error::config("K is required"))?;
            let b = sigma_sgd_d2d(req.eta, c.smoothness, c.mu, c.noise_b, c.noise_c, req.n, req.m, k)?;
            let h = d2d_training_horizon(k, req.eta, c.mu, c.noise_b, c.noise_c, c.loss_at_init)?;
            warnings.extend(h.warning.clone());
            let t = match req.t {
                Some(t) if t < h.t => {
                    return Err(Error::certification(format!(
                        "descent-to-delete needs at least T = {} training steps, got {t}",
                        h.t
                    )))
                }
                Some(t) => t,
                None => h.t,
            };
            (b, k, t)
        }
    };
    Calibration::build(&bound, &budget, k, t, req.n, req.m, req.eta, c.clone(), warnings)
}

/// Sensitivity, noise scale and iteration plan; runs no trajectories.
pub fn cmd_calibrate(input: &CalibrateInput, overrides: &Overrides) -> Result<Calibration> {
    match input {
        CalibrateInput::Request(req) => calibrate_request(req, overrides),
        CalibrateInput::Experiment(cfg) => {
            let mut cfg = (**cfg).clone();
            overrides.apply(&mut cfg);
            let p = cfg.prepare()?;
            let s = &p.spec;
            let constants = Constants {
                smoothness: s.smoothness,
                mu: s.strong_convexity,
                grad_bound: s.grad_bound.is_finite().then_some(s.grad_bound),
                noise_b: s.noise_b,
                noise_c: s.noise_c,
                loss_at_init: s.loss_at_init,
            };
            Calibration::build(
                &p.bound,
                &cfg.privacy,
                p.run.k,
                p.run.t,
                p.dataset.len(),
                p.request.m(),
                p.run.eta,
                constants,
                p.warnings.clone(),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::reference;

    #[test]
    fn convex_request_matches_closed_form() {
        let c = cmd_calibrate(&CalibrateInput::Request(reference::calibrate_convex()), &Overrides::default()).unwrap();
        assert!((c.sensitivity - 0.04).abs() < 1e-12);
        assert!((c.noise_std - 12.43).abs() < 0.005);
        assert_eq!(c.guarantee_delta, 0.02);
    }

    #[test]
    fn k_equals_t_gives_zero() {
        let mut req = reference::calibrate_convex();
        req.k = Some(100);
        let c = cmd_calibrate(&CalibrateInput::Request(req), &Overrides::default()).unwrap();
        assert_eq!((c.sensitivity, c.noise_std), (0.0, 0.0));
    }

    #[test]
    fn d2d_fraction_violation_names_condition() {
        let mut cfg = reference::sgd_d2d_quadratic();
        cfg.unlearn = crate::data_engine::Selection::FirstM { m: 20 };
        let e = cmd_calibrate(&CalibrateInput::Experiment(Box::new(cfg)), &Overrides::default()).unwrap_err();
        assert!(matches!(e, Error::Certification(_)));
        assert!(e.to_string().contains("1/(6B+1)"), "{e}");
    }

    #[test]
    fn sigma_target_plans_k() {
        let mut req = reference::calibrate_convex();
        req.regime = Some(Regime::StronglyConvex);
        req.constants.mu = 1.0;
        req.eta = 0.1;
        req.m = 10;
        req.t = Some(200);
        req.k = None;
        req.sigma_target = Some(0.01);
        req.variant = FormulaVariant::Main;
        let c = cmd_calibrate(&CalibrateInput::Request(req), &Overrides::default()).unwrap();
        assert_eq!(c.k, 14);
        assert!(c.sensitivity <= 0.01 + 1e-9);
    }

    #[test]
    fn json_keys_are_stable() {
        let c = cmd_calibrate(&CalibrateInput::Request(reference::calibrate_convex()), &Overrides::default()).unwrap();
        let v = serde_json::to_value(&c).unwrap();
        for key in [
            "format_version",
            "method",
            "regime",
            "variant",
            "moment",
            "sensitivity",
            "noise_std",
            "epsilon",
            "delta",
            "guarantee_delta",
            "tail_radius",
            "K",
            "T",
            "warnings",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
