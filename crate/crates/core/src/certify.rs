//! Closed-form sensitivity bounds, relaxed-Gaussian noise calibration,
//! iteration-count planning and ABC noise constants.
//!
//! Every function here is a pure map from certified constants to numbers.
//! Preconditions on the step size and deletion fraction are checked up front
//! and reported as [`Error::Certification`]; a bound is never returned for
//! inputs outside its admissible range.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data_engine::{CouplingStream, Role};
use crate::error::{Error, Result};
pub use crate::model_zoo::ConvexityClass as Regime;
use crate::model_zoo::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    /// Bound on `E‖θ′_T − θ″_K‖`.
    First,
    /// Bound on `(E‖θ′_T − θ″_K‖²)^{1/2}`.
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PsgdR2d,
    SgdR2d,
    SgdD2d,
}

impl Method {
    pub fn is_r2d(self) -> bool {
        !matches!(self, Method::SgdD2d)
    }

    pub fn projected(self) -> bool {
        matches!(self, Method::PsgdR2d)
    }

    pub fn moment(self) -> Moment {
        match self {
            Method::SgdD2d => Moment::Second,
            _ => Moment::First,
        }
    }
}

/// Which strongly convex denominator to use. The two differ by the bounded
/// factor `μ/(1−γ) ∈ [1/η, 2/η]`; `Appendix` is the larger, conservative one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    Main,
    #[default]
    Appendix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = Self { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub sigma: f64,
    pub moment: Moment,
    pub regime: Regime,
    pub method: Method,
    pub variant: FormulaVariant,
    /// `√(1 − ημ)` for strongly convex bounds.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScale {
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    WithReplacement,
    WithoutReplacement,
}

/// `E‖g‖² ≤ 2A(𝓛 − 𝓛*) + B‖∇𝓛‖² + C` for a mini-batch gradient `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbcConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AbcConstants {
    /// Folds the loss-gap term into the gradient term with the PL inequality
    /// `𝓛 − 𝓛* ≤ ‖∇𝓛‖²/(2μ)`, giving `E‖g‖² ≤ (B + A/μ)‖∇𝓛‖² + C`.
    pub fn relative_noise_bound(&self, mu: f64) -> Result<(f64, f64)> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::certification(
                "folding the loss-gap term requires strong convexity (mu > 0)",
            ));
        }
        Ok((self.b + self.a / mu, self.c))
    }
}

pub fn abc_constants(
    smoothness: f64,
    b: usize,
    interp_const: f64,
    scheme: SamplingScheme,
    n: Option<usize>,
) -> Result<AbcConstants> {
    if b == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if !(smoothness >= 0.0 && smoothness.is_finite() && interp_const >= 0.0 && interp_const.is_finite()) {
        return Err(Error::config("smoothness and interpolation constant must be finite and nonnegative"));
    }
    let bf = b as f64;
    let (a, bb) = match scheme {
        SamplingScheme::WithReplacement => (smoothness / bf, 1.0 - 1.0 / bf),
        SamplingScheme::WithoutReplacement => {
            let n = n.ok_or_else(|| Error::config("sampling without replacement needs n"))?;
            if b > n {
                return Err(Error::config(format!("batch size {b} exceeds n = {n}")));
            }
            if n == 1 {
                (0.0, 1.0)
            } else {
                let nf = n as f64;
                ((nf - bf) * smoothness / (bf * (nf - 1.0)), nf * (bf - 1.0) / (bf * (nf - 1.0)))
            }
        }
    };
    Ok(AbcConstants { a, b: bb, c: 2.0 * a * interp_const })
}

// Relative slack when comparing a step size against its admissible maximum,
// so that e.g. η = μ/L² computed in floating point is accepted.
const ETA_SLACK: f64 = 1e-12;

fn ensure_eta_at_most(eta: f64, max: f64, what: &str) -> Result<()> {
    if eta > max * (1.0 + ETA_SLACK) {
        return Err(Error::certification(format!("step size eta = {eta} violates {what} (max {max})")));
    }
    Ok(())
}

fn check_common(eta: f64, smoothness: f64, n: usize, m: usize, t: u64, k: u64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config(format!("step size must be positive and finite, got {eta}")));
    }
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(Error::config(format!("smoothness must be positive and finite, got {smoothness}")));
    }
    if m == 0 || m >= n {
        return Err(Error::config(format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    if k > t {
        return Err(Error::config(format!("unlearning steps K = {k} exceed training steps T = {t}")));
    }
    Ok(())
}

fn check_regime(regime: Regime, eta: f64, smoothness: f64, mu: f64) -> Result<Option<f64>> {
    match regime {
        Regime::Nonconvex => Ok(None),
        Regime::Convex => {
            ensure_eta_at_most(eta, 2.0 / smoothness, "the convex condition eta <= 2/L")?;
            Ok(None)
        }
        Regime::StronglyConvex => {
            if !(mu > 0.0 && mu <= smoothness) {
                return Err(Error::certification(format!(
                    "strongly convex bound needs 0 < mu <= L, got mu = {mu}, L = {smoothness}"
                )));
            }
            ensure_eta_at_most(eta, mu / (smoothness * smoothness), "the strongly convex condition eta <= mu/L^2")?;
            Ok(Some((1.0 - eta * mu).max(0.0).sqrt()))
        }
    }
}

/// `q^K − q^T` for `K ≤ T`, accurate when the two powers are close.
fn power_gap(q: f64, k: u64, t: u64) -> f64 {
    if k == t {
        return 0.0;
    }
    if q <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let lq = q.ln();
    // q^K (1 − q^{T−K})
    -(k as f64 * lq).exp() * ((t - k) as f64 * lq).exp_m1()
}

/// `q^T − q^K` for `q ≥ 1`, `K ≤ T`.
fn growth_gap(q: f64, k: u64, t: u64) -> f64 {
    -power_gap(q, k, t)
}

fn finite_sigma(sigma: f64) -> Result<f64> {
    if sigma.is_finite() {
        Ok(sigma)
    } else {
        Err(Error::certification("sensitivity bound overflows; reduce T or the step size"))
    }
}

/// First-moment sensitivity of projected SGD with rewinding.
#[allow(clippy::too_many_arguments)]
pub fn sigma_psgd_r2d(
    regime: Regime,
    eta: f64,
    smoothness: f64,
    mu: f64,
    grad_bound: f64,
    n: usize,
    m: usize,
    t: u64,
    k: u64,
    variant: FormulaVariant,
) -> Result<SensitivityBound> {
    check_common(eta, smoothness, n, m, t, k)?;
    if !(grad_bound >= 0.0 && grad_bound.is_finite()) {
        return Err(Error::certification(
            "a finite gradient bound G is required; configure a projection set",
        ));
    }
    let gamma = check_regime(regime, eta, smoothness, mu)?;
    let (n, m) = (n as f64, m as f64);
    let sigma = match regime {
        Regime::Nonconvex => 2.0 * grad_bound * m * growth_gap(1.0 + eta * smoothness, k, t) / (n * smoothness),
        Regime::Convex => 2.0 * eta * grad_bound * m * (t - k) as f64 / n,
        Regime::StronglyConvex => {
            let g = gamma.expect("strongly convex regime yields gamma");
            let denom = match variant {
                FormulaVariant::Appendix => 1.0 - g,
                FormulaVariant::Main => mu,
            };
            2.0 * eta * grad_bound * m * power_gap(g, k, t) / (n * denom)
        }
    };
    Ok(SensitivityBound {
        sigma: finite_sigma(sigma)?,
        moment: Moment::First,
        regime,
        method: Method::PsgdR2d,
        variant,
        gamma,
    })
}

fn check_noise_constants(noise_b: f64, noise_c: f64, loss_at_init: f64) -> Result<()> {
    for (name, v) in [("B", noise_b), ("C", noise_c), ("loss at init", loss_at_init)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    Ok(())
}

fn ensure_eta_noise(eta: f64, noise_b: f64, smoothness: f64) -> Result<()> {
    if noise_b > 0.0 {
        ensure_eta_at_most(eta, 1.0 / (noise_b * smoothness), "the SGD condition eta <= 1/(B L)")?;
    }
    Ok(())
}

/// First-moment sensitivity of unprojected SGD with rewinding.
#[allow(clippy::too_many_arguments)]
pub fn sigma_sgd_r2d(
    regime: Regime,
    eta: f64,
    smoothness: f64,
    mu: f64,
    noise_b: f64,
    noise_c: f64,
    loss_at_init: f64,
    n: usize,
    m: usize,
    t: u64,
    k: u64,
    variant: FormulaVariant,
) -> Result<SensitivityBound> {
    check_common(eta, smoothness, n, m, t, k)?;
    check_noise_constants(noise_b, noise_c, loss_at_init)?;
    ensure_eta_noise(eta, noise_b, smoothness)?;
    let gamma = check_regime(regime, eta, smoothness, mu)?;
    let (nf, mf) = (n as f64, m as f64);
    let steps = (t - k) as f64;
    let bracket = (3.0
        * noise_b
        * (2.0 * loss_at_init / eta + smoothness * eta * noise_c * steps)
        * (3.0 * nf - mf)
        / (nf - mf)
        + 6.0 * noise_c * (4.0 * nf - 3.0 * mf) / (nf - mf))
        .sqrt();
    let prefactor = match regime {
        Regime::Nonconvex => growth_gap(1.0 + eta * smoothness, k, t) / smoothness,
        Regime::Convex => eta * steps,
        Regime::StronglyConvex => {
            let g = gamma.expect("strongly convex regime yields gamma");
            match variant {
                FormulaVariant::Main => power_gap(g, k, t) / mu,
                FormulaVariant::Appendix => eta * power_gap(g, k, t) / (1.0 - g),
            }
        }
    };
    let sigma = if prefactor == 0.0 { 0.0 } else { prefactor * bracket };
    Ok(SensitivityBound {
        sigma: finite_sigma(sigma)?,
        moment: Moment::First,
        regime,
        method: Method::SgdR2d,
        variant,
        gamma,
    })
}

fn check_d2d(eta: f64, smoothness: f64, mu: f64, noise_b: f64, noise_c: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config(format!("step size must be positive and finite, got {eta}")));
    }
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(Error::config("smoothness must be positive and finite"));
    }
    if !(mu > 0.0 && mu <= smoothness) {
        return Err(Error::certification(format!(
            "descent-to-delete needs a strongly convex loss (0 < mu <= L), got mu = {mu}"
        )));
    }
    if !(noise_b > 0.0 && noise_b.is_finite()) {
        return Err(Error::certification(format!(
            "descent-to-delete needs a positive relative noise constant B, got {noise_b}"
        )));
    }
    if !(noise_c >= 0.0 && noise_c.is_finite()) {
        return Err(Error::config("C must be finite and nonnegative"));
    }
    ensure_eta_noise(eta, noise_b, smoothness)
}

/// Checks the deletion-fraction condition `m/n < 1/(6B+1)`.
pub fn check_d2d_fraction(n: usize, m: usize, noise_b: f64) -> Result<()> {
    if m == 0 || m >= n {
        return Err(Error::config(format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    let limit = 1.0 / (6.0 * noise_b + 1.0);
    if (m as f64) / (n as f64) >= limit {
        return Err(Error::certification(format!(
            "deletion fraction m/n = {m}/{n} violates m/n < 1/(6B+1) = {limit:.6}"
        )));
    }
    Ok(())
}

/// Second-moment sensitivity of SGD with descent-based unlearning.
#[allow(clippy::too_many_arguments)]
pub fn sigma_sgd_d2d(
    eta: f64,
    smoothness: f64,
    mu: f64,
    noise_b: f64,
    noise_c: f64,
    n: usize,
    m: usize,
    k: u64,
) -> Result<SensitivityBound> {
    check_d2d(eta, smoothness, mu, noise_b, noise_c)?;
    check_d2d_fraction(n, m, noise_b)?;
    let a = 1.0 - eta * mu / 2.0;
    let ak = a.powf(k as f64);
    let sq = 5.0 * noise_c / (mu * mu * noise_b) * (ak * ak + 2.0 * ak)
        + 4.0 * smoothness * eta * noise_c / (mu * mu);
    Ok(SensitivityBound {
        sigma: finite_sigma(sq.sqrt())?,
        moment: Moment::Second,
        regime: Regime::StronglyConvex,
        method: Method::SgdD2d,
        variant: FormulaVariant::Appendix,
        gamma: None,
    })
}

/// Training length for descent-based unlearning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t: u64,
    /// Set when `ℓ₀` is already below the target neighborhood, so `T = K`.
    pub warning: Option<String>,
}

/// Ceiling that ignores floating-point noise just above an integer.
pub fn tolerant_ceil(x: f64) -> f64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil()
}

fn to_steps(x: f64) -> Result<u64> {
    if !(x.is_finite() && (0.0..1e15).contains(&x)) {
        return Err(Error::certification(format!("iteration count {x} is not representable")));
    }
    Ok(x as u64)
}

pub fn d2d_training_horizon(
    k: u64,
    eta: f64,
    mu: f64,
    noise_b: f64,
    noise_c: f64,
    loss_at_init: f64,
) -> Result<Horizon> {
    if !(eta > 0.0 && mu > 0.0 && eta * mu < 2.0) {
        return Err(Error::certification(format!(
            "horizon needs eta > 0, mu > 0 and eta*mu < 2, got eta = {eta}, mu = {mu}"
        )));
    }
    if !(noise_b > 0.0 && noise_b.is_finite()) {
        return Err(Error::certification("horizon needs a positive relative noise constant B"));
    }
    if !(noise_c > 0.0 && noise_c.is_finite()) {
        return Err(Error::certification(
            "horizon is unbounded when C = 0: the target neighborhood shrinks to the minimum",
        ));
    }
    if !(loss_at_init >= 0.0 && loss_at_init.is_finite()) {
        return Err(Error::config("loss at init must be finite and nonnegative"));
    }
    let target = 5.0 * noise_c / (4.0 * noise_b * mu);
    if loss_at_init <= target {
        return Ok(Horizon {
            t: k,
            warning: Some(format!(
                "loss at init {loss_at_init} is already within the target level {target}; using T = K"
            )),
        });
    }
    let rate = -(-eta * mu / 2.0).ln_1p();
    let extra = tolerant_ceil((loss_at_init.ln() - target.ln()) / rate);
    Ok(Horizon { t: k + to_steps(extra)?, warning: None })
}

/// Smallest `K` whose strongly convex first-moment bound is at most `target`.
/// Returns 0 when even `K = 0` meets the target.
#[allow(clippy::too_many_arguments)]
pub fn k_for_sigma(
    target: f64,
    eta: f64,
    mu: f64,
    grad_bound: f64,
    n: usize,
    m: usize,
    t: u64,
    variant: FormulaVariant,
) -> Result<u64> {
    if !(target >= 0.0 && target.is_finite()) {
        return Err(Error::config("target sensitivity must be finite and nonnegative"));
    }
    if !(eta > 0.0 && mu > 0.0 && eta * mu <= 1.0) {
        return Err(Error::certification(format!(
            "need eta > 0, mu > 0 and eta*mu <= 1, got eta = {eta}, mu = {mu}"
        )));
    }
    if !(grad_bound > 0.0 && grad_bound.is_finite()) {
        return Err(Error::certification("a positive finite gradient bound G is required"));
    }
    if m == 0 || m >= n {
        return Err(Error::config(format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    let gamma = (1.0 - eta * mu).sqrt();
    let scale = 2.0 * eta * grad_bound * m as f64 / n as f64;
    let denom = match variant {
        FormulaVariant::Main => mu,
        FormulaVariant::Appendix => 1.0 - gamma,
    };
    let cap = scale * power_gap(gamma, 0, t) / denom;
    if target >= cap {
        return Ok(0);
    }
    if gamma == 0.0 {
        // γ^K vanishes for every K ≥ 1.
        return Ok(1);
    }
    let arg = target * denom / scale + gamma.powf(t as f64);
    let k = tolerant_ceil(arg.ln() / gamma.ln()).max(0.0);
    Ok(to_steps(k)?.min(t))
}

/// The bound certifying `method` on a loss with constants `spec`.
///
/// For descent-based unlearning `t` must be at least the certified training
/// horizon; the horizon is returned alongside.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_for(
    method: Method,
    variant: FormulaVariant,
    spec: &LossSpec,
    eta: f64,
    n: usize,
    m: usize,
    t: u64,
    k: u64,
) -> Result<(SensitivityBound, Option<Horizon>)> {
    let regime = spec.convexity_class;
    let (l, mu) = (spec.smoothness, spec.strong_convexity);
    match method {
        Method::PsgdR2d => Ok((
            sigma_psgd_r2d(regime, eta, l, mu, spec.grad_bound, n, m, t, k, variant)?,
            None,
        )),
        Method::SgdR2d => Ok((
            sigma_sgd_r2d(regime, eta, l, mu, spec.noise_b, spec.noise_c, spec.loss_at_init, n, m, t, k, variant)?,
            None,
        )),
        Method::SgdD2d => {
            let bound = sigma_sgd_d2d(eta, l, mu, spec.noise_b, spec.noise_c, n, m, k)?;
            let horizon = d2d_training_horizon(k, eta, mu, spec.noise_b, spec.noise_c, spec.loss_at_init)?;
            if t < horizon.t {
                return Err(Error::certification(format!(
                    "descent-to-delete needs at least T = {} training steps, got {t}",
                    horizon.t
                )));
            }
            Ok((bound, Some(horizon)))
        }
    }
}

/// Noise standard deviation for an `(ε, 2δ)` guarantee.
pub fn calibrate_noise(bound: &SensitivityBound, budget: &PrivacyBudget) -> Result<NoiseScale> {
    budget.validate()?;
    if !(bound.sigma >= 0.0 && bound.sigma.is_finite()) {
        return Err(Error::config("sensitivity must be finite and nonnegative"));
    }
    let (eps, delta) = (budget.epsilon, budget.delta);
    let log_term = 2.0 * (1.25 / delta).ln();
    let std = match bound.moment {
        Moment::First => bound.sigma * log_term.sqrt() / (eps * delta),
        Moment::Second => bound.sigma / eps * (log_term / delta).sqrt(),
    };
    Ok(NoiseScale { std })
}

/// Sensitivity radius that holds with probability at least `1 − δ` by Markov.
pub fn tail_radius(bound: &SensitivityBound, delta: f64) -> f64 {
    match bound.moment {
        Moment::First => bound.sigma / delta,
        Moment::Second => bound.sigma / delta.sqrt(),
    }
}

/// `θ + ξ` with `ξ ~ N(0, σ² I)`, keyed by `(Noise, release)` on `stream`.
pub fn add_calibrated_noise(theta: &[f64], sigma: f64, stream: &CouplingStream, release: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("noise scale must be finite and nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(theta.to_vec());
    }
    let mut rng = stream.step_rng(Role::Noise, release);
    Ok(theta
        .iter()
        .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Worst-case `sup_S P[X∈S] − e^ε P[Y∈S]` for `X ~ N(0, σ²)`, `Y ~ N(Δ, σ²)`.
pub fn gaussian_privacy_curve(delta_mean: f64, sigma: f64, epsilon: f64) -> f64 {
    if delta_mean == 0.0 {
        return 0.0;
    }
    let a = delta_mean / (2.0 * sigma);
    let b = epsilon * sigma / delta_mean;
    std_normal_cdf(a - b) - epsilon.exp() * std_normal_cdf(-a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn psgd_examples() {
        let cv = sigma_psgd_r2d(Regime::Convex, 0.01, 1.0, 0.0, 1.0, 100, 5, 100, 60, FormulaVariant::Appendix).unwrap();
        assert!(rel(cv.sigma, 0.04) < 1e-12);
        let sc = sigma_psgd_r2d(Regime::StronglyConvex, 0.1, 1.0, 1.0, 1.0, 100, 10, 200, 50, FormulaVariant::Appendix)
            .unwrap();
        assert!((sc.sigma - 0.02797).abs() < 5e-6, "{}", sc.sigma);
        for regime in [Regime::Nonconvex, Regime::Convex, Regime::StronglyConvex] {
            let s = sigma_psgd_r2d(regime, 0.1, 1.0, 1.0, 1.0, 100, 10, 70, 70, FormulaVariant::Appendix).unwrap();
            assert_eq!(s.sigma, 0.0);
        }
    }

    #[test]
    fn psgd_rejects_out_of_range_step() {
        let e = sigma_psgd_r2d(Regime::Convex, 2.5, 1.0, 0.0, 1.0, 100, 5, 10, 5, FormulaVariant::Appendix);
        assert!(matches!(e, Err(Error::Certification(_))));
        let e = sigma_psgd_r2d(Regime::StronglyConvex, 0.3, 2.0, 1.0, 1.0, 100, 5, 10, 5, FormulaVariant::Appendix);
        assert!(matches!(e, Err(Error::Certification(_))));
        let e = sigma_psgd_r2d(Regime::Convex, 0.1, 1.0, 0.0, f64::INFINITY, 100, 5, 10, 5, FormulaVariant::Appendix);
        assert!(matches!(e, Err(Error::Certification(_))));
        assert!(sigma_psgd_r2d(Regime::Convex, 0.1, 1.0, 0.0, 1.0, 100, 5, 10, 11, FormulaVariant::Appendix).is_err());
    }

    #[test]
    fn sgd_r2d_examples() {
        let s = |c: f64, l0: f64, k: u64| {
            sigma_sgd_r2d(Regime::Convex, 0.01, 1.0, 0.0, 1.0, c, l0, 1000, 10, 200, k, FormulaVariant::Appendix)
                .unwrap()
                .sigma
        };
        assert_eq!(s(0.1, 1.0, 200), 0.0);
        assert_eq!(s(0.0, 0.0, 150), 0.0);
        // Independent transcription of the convex case.
        let (eta, l, b, c, l0, n, m, t, k) = (0.01f64, 1.0, 1.0, 0.1, 1.0, 1000.0, 10.0, 200.0, 150.0);
        let term1 = 3.0 * b * (2.0 / eta * l0 + l * eta * c * (t - k)) * ((3.0 * n - m) / (n - m));
        let term2 = 6.0 * ((4.0 * n - 3.0 * m) / (n - m)) * c;
        let oracle = eta * (t - k) * (term1 + term2).sqrt();
        assert!(rel(s(0.1, 1.0, 150), oracle) < 1e-12);
    }

    #[test]
    fn sgd_r2d_step_condition() {
        let e = sigma_sgd_r2d(Regime::Nonconvex, 0.6, 1.0, 0.0, 2.0, 0.1, 1.0, 100, 5, 10, 5, FormulaVariant::Appendix);
        assert!(matches!(e, Err(Error::Certification(_))));
    }

    #[test]
    fn d2d_examples() {
        assert_eq!(sigma_sgd_d2d(0.1, 1.0, 1.0, 1.0, 0.0, 100, 5, 50).unwrap().sigma, 0.0);
        let s = sigma_sgd_d2d(0.1, 1.0, 1.0, 1.0, 0.1, 100, 5, 50).unwrap();
        let a: f64 = 0.95;
        let oracle = (0.5 * (a.powi(100) + 2.0 * a.powi(50)) + 0.04).sqrt();
        assert!(rel(s.sigma, oracle) < 1e-12);
        let far = sigma_sgd_d2d(0.1, 1.0, 1.0, 1.0, 0.1, 100, 5, 100_000).unwrap();
        assert!(rel(far.sigma * far.sigma, 0.04) < 1e-12);
        // m/n = 1/7 is not strictly below 1/(6B+1).
        let e = sigma_sgd_d2d(0.1, 1.0, 1.0, 1.0, 0.1, 70, 10, 50);
        assert!(matches!(e, Err(Error::Certification(_))));
        let e = sigma_sgd_d2d(1.5, 1.0, 1.0, 1.0, 0.1, 100, 5, 50);
        assert!(matches!(e, Err(Error::Certification(_))));
    }

    #[test]
    fn horizon_examples() {
        let (eta, mu, b, c) = (0.1, 1.0, 1.0, 0.1);
        let target = 5.0 * c / (4.0 * b * mu);
        let h = d2d_training_horizon(20, eta, mu, b, c, target).unwrap();
        assert_eq!(h.t, 20);
        let l0 = target * (1.0f64 / 0.95).powi(10);
        assert_eq!(d2d_training_horizon(20, eta, mu, b, c, l0).unwrap(), Horizon { t: 30, warning: None });
        let h = d2d_training_horizon(20, eta, mu, b, c, 1.0).unwrap();
        let oracle = 20.0 + ((1.0f64.ln() - 0.125f64.ln()) / (1.0f64 / 0.95).ln()).ceil();
        assert_eq!(h.t as f64, oracle);
        assert!(d2d_training_horizon(20, eta, mu, b, c, 0.01).unwrap().warning.is_some());
        assert!(d2d_training_horizon(20, eta, mu, b, 0.0, 1.0).is_err());
    }

    #[test]
    fn worked_examples() {
        let (eta, mu, g, n, m) = (0.1, 1.0, 1.0, 100, 10);
        for variant in [FormulaVariant::Main, FormulaVariant::Appendix] {
            let cap = sigma_psgd_r2d(Regime::StronglyConvex, eta, 1.0, mu, g, n, m, 200, 0, variant).unwrap().sigma;
            assert_eq!(k_for_sigma(cap, eta, mu, g, n, m, 200, variant).unwrap(), 0);
            let k = k_for_sigma(0.01, eta, mu, g, n, m, 200, variant).unwrap();
            let back = sigma_psgd_r2d(Regime::StronglyConvex, eta, 1.0, mu, g, n, m, 200, k, variant).unwrap();
            assert!(back.sigma <= 0.01 + 1e-9);
            if k > 0 {
                let prev = sigma_psgd_r2d(Regime::StronglyConvex, eta, 1.0, mu, g, n, m, 200, k - 1, variant).unwrap();
                assert!(prev.sigma > 0.01);
            }
        }
        let ks: Vec<u64> = [50, 100, 200, 400, 800]
            .iter()
            .map(|&t| k_for_sigma(0.01, eta, mu, g, n, m, t, FormulaVariant::Main).unwrap())
            .collect();
        assert_eq!(ks, vec![11, 13, 14, 14, 14]);
        let gamma = 0.9f64.sqrt();
        let limit = ((n as f64) * mu * 0.01 / (2.0 * m as f64 * eta * g)).ln() / gamma.ln();
        assert_eq!(ks[4] as f64, limit.ceil());
    }

    #[test]
    fn calibration_examples() {
        let mut b = SensitivityBound {
            sigma: 0.04,
            moment: Moment::First,
            regime: Regime::Convex,
            method: Method::PsgdR2d,
            variant: FormulaVariant::Appendix,
            gamma: None,
        };
        let budget = PrivacyBudget::new(1.0, 0.01).unwrap();
        let s = calibrate_noise(&b, &budget).unwrap().std;
        assert!(rel(s, 4.0 * (2.0 * 125f64.ln()).sqrt()) < 1e-12);
        assert!((s - 12.43).abs() < 0.005);
        b.sigma = 1.0;
        b.moment = Moment::Second;
        let s = calibrate_noise(&b, &budget).unwrap().std;
        assert!(rel(s, (2.0 * 125f64.ln() / 0.01).sqrt()) < 1e-12);
        assert!((s - 31.075).abs() < 0.001);
        b.sigma = 0.0;
        assert_eq!(calibrate_noise(&b, &budget).unwrap().std, 0.0);
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(0.0, 0.1).is_err());
    }

    #[test]
    fn abc_examples() {
        let w = abc_constants(1.0, 1, 0.5, SamplingScheme::WithReplacement, None).unwrap();
        assert_eq!((w.a, w.b, w.c), (1.0, 0.0, 1.0));
        let full = abc_constants(2.0, 50, 0.3, SamplingScheme::WithoutReplacement, Some(50)).unwrap();
        assert_eq!((full.a, full.b, full.c), (0.0, 1.0, 0.0));
        for scheme in [SamplingScheme::WithReplacement, SamplingScheme::WithoutReplacement] {
            assert_eq!(abc_constants(1.0, 4, 0.0, scheme, Some(10)).unwrap().c, 0.0);
        }
        assert!(abc_constants(1.0, 0, 0.1, SamplingScheme::WithReplacement, None).is_err());
    }

    #[test]
    fn relative_noise_fold_is_tight_on_quadratic() {
        // Single-sample quadratic gradients: E‖θ − z‖² = ‖θ − z̄‖² + Var exactly,
        // so the coefficient on ‖∇𝓛‖² must be at least 1. Folding with A/μ gives
        // exactly 1; folding with A/(2μ) would give 1/2 and fail below.
        let pts = [[0.9, 0.1], [-0.4, 0.3], [0.2, -0.8], [-0.5, -0.5]];
        let n = pts.len() as f64;
        let mean = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        let var = pts.iter().map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2)).sum::<f64>() / n;
        // 𝓛* = Var/2 and every per-sample minimum is 0.
        let abc = abc_constants(1.0, 1, var / 2.0, SamplingScheme::WithReplacement, None).unwrap();
        let (b_eff, c_eff) = abc.relative_noise_bound(1.0).unwrap();
        assert_eq!(b_eff, 1.0);
        let theta = [3.0, -2.0];
        let lhs = pts.iter().map(|p| (theta[0] - p[0]).powi(2) + (theta[1] - p[1]).powi(2)).sum::<f64>() / n;
        let grad_sq = (theta[0] - mean[0]).powi(2) + (theta[1] - mean[1]).powi(2);
        assert!(lhs <= b_eff * grad_sq + c_eff + 1e-12);
        assert!(lhs > 0.5 * grad_sq + c_eff);
    }

    #[test]
    fn privacy_curve_basics() {
        assert_eq!(gaussian_privacy_curve(0.0, 1.0, 1.0), 0.0);
        let c1 = gaussian_privacy_curve(1.0, 1.0, 0.5);
        let c2 = gaussian_privacy_curve(1.0, 1.0, 1.0);
        assert!(c2 <= c1);
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let p = std_normal_cdf(1.959963984540054);
        // statrs erfc is accurate to about 1e-12 absolute here.
        assert!((p - 0.975).abs() < 5e-12, "{p}");
    }

    #[test]
    fn noise_moments() {
        let s = CouplingStream::new(99, 0);
        assert_eq!(add_calibrated_noise(&[1.0, 2.0], 0.0, &s, 0).unwrap(), vec![1.0, 2.0]);
        let n = 1_000_000;
        let xi = add_calibrated_noise(&vec![0.0; n], 2.0, &s, 3).unwrap();
        let mean = xi.iter().sum::<f64>() / n as f64;
        let var = xi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 * 2.0 / (n as f64).sqrt());
        assert!((var / 4.0 - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn sigma_nonincreasing_in_k(
            t in 1u64..400,
            frac in 0.0f64..1.0,
            eta_frac in 0.01f64..1.0,
            mu in 0.05f64..1.0,
            m in 1usize..50,
        ) {
            let k = ((t as f64) * frac) as u64;
            let l = 1.0;
            let eta = eta_frac * mu / (l * l);
            for regime in [Regime::Nonconvex, Regime::Convex, Regime::StronglyConvex] {
                for variant in [FormulaVariant::Main, FormulaVariant::Appendix] {
                    let s0 = sigma_psgd_r2d(regime, eta, l, mu, 1.0, 100, m, t, k, variant).unwrap().sigma;
                    let s1 = sigma_psgd_r2d(regime, eta, l, mu, 1.0, 100, m, t, k + 1, variant).unwrap().sigma;
                    prop_assert!(s1 <= s0 * (1.0 + 1e-12));
                    let r0 = sigma_sgd_r2d(regime, eta, l, mu, 1.0, 0.2, 1.0, 100, m, t, k, variant).unwrap().sigma;
                    let r1 = sigma_sgd_r2d(regime, eta, l, mu, 1.0, 0.2, 1.0, 100, m, t, k + 1, variant).unwrap().sigma;
                    prop_assert!(r1 <= r0 * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn regimes_are_ordered(
            t in 1u64..400,
            frac in 0.0f64..1.0,
            eta_frac in 0.01f64..1.0,
            mu in 0.05f64..1.0,
            g in 0.1f64..5.0,
        ) {
            let k = ((t as f64) * frac) as u64;
            let eta = eta_frac * mu;
            for variant in [FormulaVariant::Main, FormulaVariant::Appendix] {
                let s = |r| sigma_psgd_r2d(r, eta, 1.0, mu, g, 100, 10, t, k, variant).unwrap().sigma;
                let (sc, cv, nc) = (s(Regime::StronglyConvex), s(Regime::Convex), s(Regime::Nonconvex));
                prop_assert!(sc <= cv * (1.0 + 1e-12));
                prop_assert!(cv <= nc * (1.0 + 1e-12));
            }
        }

        #[test]
        fn sigma_target_round_trip(
            target in 1e-5f64..0.05,
            t in 1u64..2000,
            eta_frac in 0.01f64..1.0,
        ) {
            for variant in [FormulaVariant::Main, FormulaVariant::Appendix] {
                let k = k_for_sigma(target, eta_frac, 1.0, 1.0, 100, 10, t, variant).unwrap();
                let s = sigma_psgd_r2d(Regime::StronglyConvex, eta_frac, 1.0, 1.0, 1.0, 100, 10, t, k, variant).unwrap();
                prop_assert!(s.sigma <= target + 1e-9);
            }
        }

        #[test]
        fn calibration_is_linear(sigma in 0.0f64..10.0, eps in 0.05f64..5.0, delta in 1e-6f64..0.5) {
            let budget = PrivacyBudget::new(eps, delta).unwrap();
            for moment in [Moment::First, Moment::Second] {
                let mk = |s| SensitivityBound {
                    sigma: s, moment, regime: Regime::Convex, method: Method::PsgdR2d,
                    variant: FormulaVariant::Appendix, gamma: None,
                };
                let one = calibrate_noise(&mk(1.0), &budget).unwrap().std;
                let s = calibrate_noise(&mk(sigma), &budget).unwrap().std;
                prop_assert!((s - sigma * one).abs() <= 1e-12 * s.max(1e-300).max(sigma * one));
            }
        }

        #[test]
        fn calibrated_noise_covers_tail_radius(sigma in 1e-4f64..10.0, eps in 0.05f64..5.0, delta in 1e-6f64..0.5) {
            let budget = PrivacyBudget::new(eps, delta).unwrap();
            let b = SensitivityBound {
                sigma, moment: Moment::First, regime: Regime::Convex, method: Method::PsgdR2d,
                variant: FormulaVariant::Appendix, gamma: None,
            };
            let std = calibrate_noise(&b, &budget).unwrap().std;
            let radius = tail_radius(&b, delta);
            prop_assert!(std * (1.0 + 1e-12) >= radius * (2.0 * (1.25 / delta).ln()).sqrt() / eps);
        }
    }
}
