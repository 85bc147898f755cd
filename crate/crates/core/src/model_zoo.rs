//! Synthetic loss families with analytically certified constants.
//!
//! Every family is defined on a data domain that is a Euclidean ball of radius
//! `R_z` in feature space (plus a family-specific label set), so the smoothness,
//! strong convexity, gradient bound, loss-at-initialization and relative noise
//! constants all have closed forms. None of them is ever estimated from data:
//! the certification formulas must not depend on the dataset values.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::certify::{abc_constants, SamplingScheme};
use crate::error::{Error, Result};
use crate::vector::{axpy, dot, norm, norm_sq, sigmoid, softplus};

/// A single data point `z = (x, y)`.
///
/// For [`LossFamily::Quadratic`] only `x` is used and `y` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    pub fn point(x: Vec<f64>) -> Self {
        Self { x, y: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossFamily {
    /// `½‖θ − x‖²`
    Quadratic,
    /// `log(1 + exp(−y⟨x, θ⟩)) + (λ/2)‖θ‖²`, labels in {−1, +1}.
    RidgeLogistic { lambda: f64 },
    /// `log(1 + exp(−y⟨x, θ⟩))`, labels in {−1, +1}.
    Logistic,
    /// `½(s(⟨x, θ⟩) − y)²` with `s` the logistic link, labels in [0, 1].
    SmoothNonconvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityClass {
    StronglyConvex,
    Convex,
    Nonconvex,
}

impl ConvexityClass {
    /// Strength order: strongly convex > convex > nonconvex.
    fn rank(self) -> u8 {
        match self {
            ConvexityClass::StronglyConvex => 2,
            ConvexityClass::Convex => 1,
            ConvexityClass::Nonconvex => 0,
        }
    }

    /// True if a loss of class `self` also belongs to class `weaker`.
    pub fn implies(self, weaker: ConvexityClass) -> bool {
        self.rank() >= weaker.rank()
    }
}

/// Closed Euclidean ball onto which PSGD projects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSet {
    center: Vec<f64>,
    radius: f64,
}

impl ProjectionSet {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!(
                "projection radius must be positive and finite, got {radius}"
            )));
        }
        if center.is_empty() || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::config("projection center must be a finite, non-empty vector"));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(dimension: usize, radius: f64) -> Result<Self> {
        Self::new(vec![0.0; dimension], radius)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    /// Largest norm of any point in the ball.
    pub fn max_norm(&self) -> f64 {
        norm(&self.center) + self.radius
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        crate::vector::dist(theta, &self.center) <= self.radius * (1.0 + 1e-12)
    }

    /// Radial projection onto the ball, in place.
    pub fn project_in_place(&self, theta: &mut [f64]) {
        let r = crate::vector::dist(theta, &self.center);
        if r > self.radius {
            let s = self.radius / r;
            for (t, c) in theta.iter_mut().zip(&self.center) {
                *t = c + (*t - c) * s;
            }
        }
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        self.project_in_place(&mut out);
        out
    }
}

/// A loss family together with its certified constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    pub dimension: usize,
    /// Radius `R_z` of the data-domain ball.
    pub data_radius: f64,
    /// Per-sample gradient Lipschitz constant `L`.
    pub smoothness: f64,
    /// Per-sample strong convexity `μ` (0 when not strongly convex).
    pub strong_convexity: f64,
    pub convexity_class: ConvexityClass,
    /// Bound `G` on `‖∇ℓ(z; θ)‖` over the projection set. Infinite when no
    /// projection set was supplied and the family's gradient is unbounded.
    pub grad_bound: f64,
    /// Relative noise constants: `E_z‖∇ℓ(z;θ)‖² ≤ B‖∇𝓛(θ)‖² + C`.
    pub noise_b: f64,
    pub noise_c: f64,
    /// `ℓ₀ ≥ sup_z ℓ(z; θ₀)`.
    pub loss_at_init: f64,
    /// Upper bound on the interpolation constant `Δ^inf`.
    pub interp_const: f64,
}

impl LossFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LossFamily::Quadratic => "quadratic",
            LossFamily::RidgeLogistic { .. } => "ridge_logistic",
            LossFamily::Logistic => "logistic",
            LossFamily::SmoothNonconvex => "smooth_nonconvex",
        }
    }

    pub fn convexity_class(&self) -> ConvexityClass {
        match self {
            LossFamily::Quadratic | LossFamily::RidgeLogistic { .. } => {
                ConvexityClass::StronglyConvex
            }
            LossFamily::Logistic => ConvexityClass::Convex,
            LossFamily::SmoothNonconvex => ConvexityClass::Nonconvex,
        }
    }

    fn validate_params(&self) -> Result<()> {
        if let LossFamily::RidgeLogistic { lambda } = *self {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::config(format!(
                    "ridge_logistic requires lambda > 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }

    /// Loss without input validation; callers guarantee matching dimensions.
    pub fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        match *self {
            LossFamily::Quadratic => 0.5 * crate::vector::dist(theta, &z.x).powi(2),
            LossFamily::RidgeLogistic { lambda } => {
                softplus(-z.y * dot(&z.x, theta)) + 0.5 * lambda * norm_sq(theta)
            }
            LossFamily::Logistic => softplus(-z.y * dot(&z.x, theta)),
            LossFamily::SmoothNonconvex => {
                let r = sigmoid(dot(&z.x, theta)) - z.y;
                0.5 * r * r
            }
        }
    }

    /// `out += weight · ∇ℓ(z; θ)` without input validation.
    pub fn add_grad(&self, z: &Sample, theta: &[f64], weight: f64, out: &mut [f64]) {
        match *self {
            LossFamily::Quadratic => {
                for ((o, t), x) in out.iter_mut().zip(theta).zip(&z.x) {
                    *o += weight * (t - x);
                }
            }
            LossFamily::RidgeLogistic { lambda } => {
                let u = z.y * dot(&z.x, theta);
                axpy(-weight * z.y * sigmoid(-u), &z.x, out);
                axpy(weight * lambda, theta, out);
            }
            LossFamily::Logistic => {
                let u = z.y * dot(&z.x, theta);
                axpy(-weight * z.y * sigmoid(-u), &z.x, out);
            }
            LossFamily::SmoothNonconvex => {
                let p = sigmoid(dot(&z.x, theta));
                axpy(weight * (p - z.y) * p * (1.0 - p), &z.x, out);
            }
        }
    }

    pub fn grad(&self, z: &Sample, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.add_grad(z, theta, 1.0, &mut g);
        g
    }

    /// Draws a sample from the family's data domain: `x` uniform in the ball of
    /// radius `radius`, label from the family's label set.
    pub fn random_sample<R: Rng + ?Sized>(&self, rng: &mut R, dimension: usize, radius: f64) -> Sample {
        let x = uniform_in_ball(rng, dimension, radius);
        let y = match self {
            LossFamily::Quadratic => 0.0,
            LossFamily::RidgeLogistic { .. } | LossFamily::Logistic => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            LossFamily::SmoothNonconvex => rng.random::<f64>(),
        };
        Sample { x, y }
    }

    /// Checks that `z` lies in the data domain of radius `radius`.
    pub fn check_sample(&self, z: &Sample, dimension: usize, radius: f64) -> Result<()> {
        if z.x.len() != dimension {
            return Err(Error::domain(format!(
                "sample has dimension {}, expected {dimension}",
                z.x.len()
            )));
        }
        if !crate::vector::all_finite(&z.x) || !z.y.is_finite() {
            return Err(Error::domain("sample contains non-finite values"));
        }
        if norm(&z.x) > radius * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "sample norm {} exceeds data radius {radius}",
                norm(&z.x)
            )));
        }
        match self {
            LossFamily::RidgeLogistic { .. } | LossFamily::Logistic if z.y != 1.0 && z.y != -1.0 => {
                Err(Error::domain(format!("logistic label must be ±1, got {}", z.y)))
            }
            LossFamily::SmoothNonconvex if !(0.0..=1.0).contains(&z.y) => {
                Err(Error::domain(format!("nonconvex label must lie in [0, 1], got {}", z.y)))
            }
            _ => Ok(()),
        }
    }
}

/// Uniform draw from the closed ball of radius `radius` centered at the origin.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dimension: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
    let nv = norm(&v);
    if nv == 0.0 {
        return vec![0.0; dimension];
    }
    let r = radius * rng.random::<f64>().powf(1.0 / dimension as f64);
    crate::vector::scale(r / nv, &mut v);
    v
}

// Bound on |d²/du² ½(s(u) − y)²| for y ∈ [0, 1]: s'² + |s − y||s''| ≤ 1/16 + √3/18.
const NONCONVEX_CURVATURE: f64 = 1.0 / 16.0 + 0.096_225_044_864_937_63;

fn check_point(spec: &LossSpec, z: &Sample, theta: &[f64]) -> Result<()> {
    if theta.len() != spec.dimension {
        return Err(Error::domain(format!(
            "theta has dimension {}, expected {}",
            theta.len(),
            spec.dimension
        )));
    }
    if !crate::vector::all_finite(theta) {
        return Err(Error::domain("theta contains non-finite values"));
    }
    if z.x.len() != spec.dimension || !crate::vector::all_finite(&z.x) || !z.y.is_finite() {
        return Err(Error::domain("sample is non-finite or has the wrong dimension"));
    }
    Ok(())
}

/// `ℓ(z; θ)`, always nonnegative.
pub fn eval_loss(spec: &LossSpec, z: &Sample, theta: &[f64]) -> Result<f64> {
    check_point(spec, z, theta)?;
    Ok(spec.family.loss(z, theta))
}

/// Analytic gradient `∇ℓ(z; θ)`.
pub fn eval_grad(spec: &LossSpec, z: &Sample, theta: &[f64]) -> Result<Vec<f64>> {
    check_point(spec, z, theta)?;
    Ok(spec.family.grad(z, theta))
}

/// Derives the certified constants for `family` on the data domain of radius
/// `data_radius`, with gradient bound taken over `projection` when given.
pub fn certified_constants(
    family: LossFamily,
    dimension: usize,
    data_radius: f64,
    projection: Option<&ProjectionSet>,
    theta0: &[f64],
) -> Result<LossSpec> {
    family.validate_params()?;
    if dimension == 0 {
        return Err(Error::config("dimension must be at least 1"));
    }
    if !(data_radius > 0.0 && data_radius.is_finite()) {
        return Err(Error::config(format!(
            "data radius must be positive and finite, got {data_radius}"
        )));
    }
    if theta0.len() != dimension || !crate::vector::all_finite(theta0) {
        return Err(Error::config("theta0 must be a finite vector of the model dimension"));
    }
    if let Some(p) = projection {
        if p.dimension() != dimension {
            return Err(Error::config(format!(
                "projection set has dimension {}, expected {dimension}",
                p.dimension()
            )));
        }
    }

    let rz = data_radius;
    let t0 = norm(theta0);
    let rho = projection.map(ProjectionSet::max_norm);

    let (smoothness, mu, grad_bound, loss_at_init, interp_const) = match family {
        LossFamily::Quadratic => (
            1.0,
            1.0,
            rho.map_or(f64::INFINITY, |r| r + rz),
            0.5 * (t0 + rz).powi(2),
            // 𝓛* is half the empirical variance (≤ R_z²/2) and every ℓ_i* = 0.
            0.5 * rz * rz,
        ),
        LossFamily::RidgeLogistic { lambda } => (
            lambda + rz * rz / 4.0,
            lambda,
            rho.map_or(f64::INFINITY, |r| rz * sigmoid(rz * r) + lambda * r),
            softplus(rz * t0) + 0.5 * lambda * t0 * t0,
            // 𝓛* ≤ 𝓛(0) = log 2 and ℓ_i* ≥ 0.
            std::f64::consts::LN_2,
        ),
        LossFamily::Logistic => (
            rz * rz / 4.0,
            0.0,
            rho.map_or(rz, |r| rz * sigmoid(rz * r)),
            softplus(rz * t0),
            std::f64::consts::LN_2,
        ),
        LossFamily::SmoothNonconvex => (
            rz * rz * NONCONVEX_CURVATURE,
            0.0,
            rz / 4.0,
            0.5 * sigmoid(rz * t0).powi(2),
            0.5,
        ),
    };

    let (noise_b, noise_c) = match family {
        // Strongly convex: single-sample ABC constants, A-term absorbed by PL.
        LossFamily::Quadratic | LossFamily::RidgeLogistic { .. } => {
            let abc = abc_constants(smoothness, 1, interp_const, SamplingScheme::WithReplacement, None)?;
            abc.relative_noise_bound(mu)?
        }
        // Globally bounded gradients: E‖∇ℓ‖² ≤ sup‖∇ℓ‖².
        LossFamily::Logistic => (0.0, rz * rz),
        LossFamily::SmoothNonconvex => (0.0, rz * rz / 16.0),
    };

    let spec = LossSpec {
        family,
        dimension,
        data_radius,
        smoothness,
        strong_convexity: mu,
        convexity_class: family.convexity_class(),
        grad_bound,
        noise_b,
        noise_c,
        loss_at_init,
        interp_const,
    };
    spec.validate()?;
    Ok(spec)
}

impl LossSpec {
    /// Checks the structural invariants of the constants.
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::config("dimension must be at least 1"));
        }
        let finite_nonneg = [
            ("smoothness", self.smoothness),
            ("strong_convexity", self.strong_convexity),
            ("noise_b", self.noise_b),
            ("noise_c", self.noise_c),
            ("loss_at_init", self.loss_at_init),
            ("interp_const", self.interp_const),
        ];
        for (name, v) in finite_nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.grad_bound.is_nan() || self.grad_bound < 0.0 {
            return Err(Error::config("grad_bound must be nonnegative"));
        }
        if self.smoothness <= 0.0 {
            return Err(Error::config("smoothness must be positive"));
        }
        if self.strong_convexity > self.smoothness {
            return Err(Error::config("strong convexity cannot exceed smoothness"));
        }
        let sc = self.convexity_class == ConvexityClass::StronglyConvex;
        if sc != (self.strong_convexity > 0.0) {
            return Err(Error::config(
                "convexity class must be strongly_convex exactly when mu > 0",
            ));
        }
        Ok(())
    }

    pub fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        self.family.loss(z, theta)
    }

    pub fn grad(&self, z: &Sample, theta: &[f64]) -> Vec<f64> {
        self.family.grad(z, theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad(d: usize) -> LossSpec {
        certified_constants(LossFamily::Quadratic, d, 1.0, None, &vec![0.0; d]).unwrap()
    }

    #[test]
    fn quadratic_loss_examples() {
        let s = quad(2);
        assert_eq!(eval_loss(&s, &Sample::point(vec![0.0, 0.0]), &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(eval_loss(&s, &Sample::point(vec![1.0, 0.0]), &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn quadratic_grad_examples() {
        let s = quad(2);
        assert_eq!(eval_grad(&s, &Sample::point(vec![1.0, 0.0]), &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(eval_grad(&s, &Sample::point(vec![0.0, 0.0]), &[2.0, 0.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn non_finite_inputs_are_domain_errors() {
        let s = quad(2);
        let z = Sample::point(vec![0.0, 0.0]);
        assert!(matches!(eval_loss(&s, &z, &[f64::NAN, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(eval_grad(&s, &z, &[0.0, f64::INFINITY]), Err(Error::Domain(_))));
        let bad = Sample::point(vec![f64::NAN, 0.0]);
        assert!(matches!(eval_loss(&s, &bad, &[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(eval_loss(&s, &z, &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn ridge_logistic_matches_direct_transcription() {
        // Oracle: the textbook formula written out with exp/ln directly.
        let lambda = 0.1;
        let spec = certified_constants(LossFamily::RidgeLogistic { lambda }, 3, 1.0, None, &[0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z = spec.family.random_sample(&mut rng, 3, 1.0);
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let margin: f64 = z.y * (z.x[0] * theta[0] + z.x[1] * theta[1] + z.x[2] * theta[2]);
            let reg = theta.iter().map(|t| t * t).sum::<f64>() * lambda / 2.0;
            let oracle = (1.0 + (-margin).exp()).ln() + reg;
            let got = eval_loss(&spec, &z, &theta).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn certified_constants_examples() {
        let q = certified_constants(
            LossFamily::Quadratic,
            2,
            0.7,
            Some(&ProjectionSet::centered(2, 2.5).unwrap()),
            &[0.0, 0.0],
        )
        .unwrap();
        assert_eq!((q.smoothness, q.strong_convexity), (1.0, 1.0));
        assert!((q.grad_bound - 3.2).abs() < 1e-15);

        let r = certified_constants(LossFamily::RidgeLogistic { lambda: 0.1 }, 4, 1.0, None, &[0.0; 4]).unwrap();
        assert!((r.strong_convexity - 0.1).abs() < 1e-15);
        assert!((r.smoothness - 0.35).abs() < 1e-15);
    }

    #[test]
    fn invalid_family_parameters_are_config_errors() {
        for lambda in [0.0, -1.0, f64::NAN] {
            let e = certified_constants(LossFamily::RidgeLogistic { lambda }, 2, 1.0, None, &[0.0; 2]);
            assert!(matches!(e, Err(Error::Config(_))));
        }
        assert!(certified_constants(LossFamily::Quadratic, 0, 1.0, None, &[]).is_err());
        assert!(certified_constants(LossFamily::Quadratic, 2, 0.0, None, &[0.0; 2]).is_err());
    }

    #[test]
    fn every_family_satisfies_constant_invariants() {
        let ball = ProjectionSet::new(vec![0.3, -0.2, 0.1], 1.5).unwrap();
        for family in [
            LossFamily::Quadratic,
            LossFamily::RidgeLogistic { lambda: 0.05 },
            LossFamily::Logistic,
            LossFamily::SmoothNonconvex,
        ] {
            let s = certified_constants(family, 3, 2.0, Some(&ball), &[0.5, 0.5, 0.5]).unwrap();
            s.validate().unwrap();
            assert!(s.grad_bound.is_finite());
            assert!(s.strong_convexity <= s.smoothness);
        }
    }

    #[test]
    fn projection_is_radial() {
        let ball = ProjectionSet::centered(2, 1.0).unwrap();
        assert_eq!(ball.project(&[3.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(ball.project(&[0.3, 0.4]), vec![0.3, 0.4]);
        assert!(ProjectionSet::centered(2, 0.0).is_err());
    }

    #[test]
    fn sample_domain_checks() {
        let f = LossFamily::Logistic;
        assert!(f.check_sample(&Sample::new(vec![0.5, 0.0], 1.0), 2, 1.0).is_ok());
        assert!(f.check_sample(&Sample::new(vec![0.5, 0.0], 0.0), 2, 1.0).is_err());
        assert!(f.check_sample(&Sample::new(vec![2.0, 0.0], 1.0), 2, 1.0).is_err());
        let g = LossFamily::SmoothNonconvex;
        assert!(g.check_sample(&Sample::new(vec![0.0, 0.0], 1.5), 2, 1.0).is_err());
    }

    #[test]
    fn uniform_in_ball_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v = uniform_in_ball(&mut rng, 4, 2.0);
            assert!(norm(&v) <= 2.0 + 1e-12);
        }
    }
}
