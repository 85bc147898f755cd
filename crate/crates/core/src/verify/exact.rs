use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{minimize, CheckKind, CheckReport, Tally};
use crate::certify::{check_d2d_fraction, gaussian_privacy_curve};
use crate::data_engine::{
    chi_square_empirical, empirical_loss, full_gradient, mean_sq_grad_norm, Dataset, UnlearnRequest,
};
use crate::model_zoo::{uniform_in_ball, ConvexityClass, LossSpec, ProjectionSet, Sample};
use crate::vector::{axpy, dist, dot, norm, norm_sq, sub};

/// Radius of the region random parameters are drawn from.
const THETA_RADIUS: f64 = 4.0;

/// Random pair: independent half the time, a small perturbation otherwise.
fn theta_pair(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let a = uniform_in_ball(rng, d, THETA_RADIUS);
    let b = if rng.random_bool(0.5) {
        uniform_in_ball(rng, d, THETA_RADIUS)
    } else {
        let mut b = a.clone();
        let scale = 10f64.powf(rng.random_range(-6.0..0.0));
        axpy(1.0, &uniform_in_ball(rng, d, scale), &mut b);
        b
    };
    (a, b)
}

/// Per-step factor bounding `‖T(θ₁) − T(θ₂)‖ / ‖θ₁ − θ₂‖` for the class:
/// `1 + ηL`, `1`, or `√(1 − ημ)` (`NaN` when `ημ > 1`).
pub fn contraction_factor(spec: &LossSpec, eta: f64) -> f64 {
    match spec.convexity_class {
        ConvexityClass::Nonconvex => 1.0 + eta * spec.smoothness,
        ConvexityClass::Convex => 1.0,
        ConvexityClass::StronglyConvex => (1.0 - eta * spec.strong_convexity).sqrt(),
    }
}

fn gd_map(spec: &LossSpec, batch: &[Sample], theta: &[f64], eta: f64) -> Vec<f64> {
    let mut out = theta.to_vec();
    let mut g = vec![0.0; theta.len()];
    let w = 1.0 / batch.len() as f64;
    for z in batch {
        spec.family.add_grad(z, theta, w, &mut g);
    }
    axpy(-eta, &g, &mut out);
    out
}

/// Gradient-map contraction for single samples and batch averages.
///
/// The squared form `‖T(θ₁) − T(θ₂)‖² ≤ c²‖θ₁ − θ₂‖²` is compared, with
/// `c² = 1 − ημ` in the strongly convex case so that a step size with
/// `ημ > 1` is reported as violating rather than skipped.
pub fn check_contraction(spec: &LossSpec, eta: f64, trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dimension;
    let c2 = match spec.convexity_class {
        ConvexityClass::StronglyConvex => 1.0 - eta * spec.strong_convexity,
        _ => contraction_factor(spec, eta).powi(2),
    };
    let class = match spec.convexity_class {
        ConvexityClass::Nonconvex => "expansive",
        ConvexityClass::Convex => "nonexpansive",
        ConvexityClass::StronglyConvex => "contractive",
    };
    let mut tally = Tally::new(format!("contraction_{class}_{}", spec.family.name()));
    for trial in 0..trials {
        let b = if trial % 2 == 0 { 1 } else { rng.random_range(2..=16) };
        let batch: Vec<Sample> = (0..b).map(|_| spec.family.random_sample(&mut rng, d, spec.data_radius)).collect();
        let (t1, t2) = theta_pair(&mut rng, d);
        let lhs = norm_sq(&sub(&gd_map(spec, &batch, &t1, eta), &gd_map(spec, &batch, &t2, eta)));
        let base = norm_sq(&sub(&t1, &t2));
        tally.le(lhs, c2 * base, base);
    }
    let mut r = tally.finish();
    r.extra.insert("eta".into(), eta);
    r.extra.insert("factor_squared".into(), c2);
    r
}

pub fn check_projection_nonexpansive(dimension: usize, trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("projection_nonexpansive");
    for _ in 0..trials {
        let center = uniform_in_ball(&mut rng, dimension, 2.0);
        let radius = rng.random_range(0.1..3.0);
        let ball = ProjectionSet::new(center.clone(), radius).expect("valid random ball");
        let spread = rng.random_range(0.5..8.0);
        let mut u = uniform_in_ball(&mut rng, dimension, spread);
        let mut v = uniform_in_ball(&mut rng, dimension, spread);
        axpy(1.0, &center, &mut u);
        axpy(1.0, &center, &mut v);
        let before = dist(&u, &v);
        let after = dist(&ball.project(&u), &ball.project(&v));
        tally.le(after, before, before);
    }
    tally.finish()
}

/// Chi-square bias bound on every trial, and the relative bias bound when the
/// deletion fraction admits it.
pub fn check_bias_bounds(
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    trials: usize,
    seed: u64,
) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dimension;
    let (n, m) = (dataset.len(), request.m());
    let retained = match dataset.retain(request) {
        Ok(r) => r,
        Err(e) => {
            return vec![Tally::new("bias_chi_square").finish().with_note(format!("invalid request: {e}"))];
        }
    };
    let chi = chi_square_empirical(n, m).expect("request validated against dataset");
    let relative_ok = spec.noise_b > 0.0 && check_d2d_fraction(n, m, spec.noise_b).is_ok();
    let mut chi_tally = Tally::new(format!("bias_chi_square_{}", spec.family.name()));
    let mut rel_tally = Tally::new(format!("bias_relative_{}", spec.family.name()));
    for _ in 0..trials {
        let theta = uniform_in_ball(&mut rng, d, THETA_RADIUS);
        let g_full = full_gradient(dataset.samples(), spec, &theta);
        let g_ret = full_gradient(retained.samples(), spec, &theta);
        let bias_sq = norm_sq(&sub(&g_ret, &g_full));
        let chi_bound = chi * mean_sq_grad_norm(dataset.samples(), spec, &theta);
        chi_tally.le(bias_sq, chi_bound, chi_bound);
        if relative_ok {
            let rel_bound = 0.5 * norm_sq(&g_ret) + spec.noise_c / (4.0 * spec.noise_b);
            rel_tally.le(bias_sq, rel_bound, rel_bound);
        }
    }
    let mut out = vec![chi_tally.finish()];
    if relative_ok {
        out.push(rel_tally.finish());
    }
    out
}

/// `𝓛(θ) − 𝓛(θ*) ≥ (μ/2)‖θ − θ*‖²` at random `θ`.
pub fn check_quadratic_growth(spec: &LossSpec, dataset: &Dataset, trials: usize, seed: u64) -> CheckReport {
    let name = format!("quadratic_growth_{}", spec.family.name());
    let min = match minimize(dataset.samples(), spec) {
        Ok(m) => m,
        Err(e) => return Tally::new(name).finish().with_note(format!("skipped: {e}")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new(name);
    tally.le(0.0, empirical_loss(dataset.samples(), spec, &min.theta) - min.value, 0.0);
    for _ in 1..trials {
        let mut theta = min.theta.clone();
        let r = THETA_RADIUS * 10f64.powf(rng.random_range(-3.0..0.0));
        axpy(1.0, &uniform_in_ball(&mut rng, spec.dimension, r), &mut theta);
        let gap = empirical_loss(dataset.samples(), spec, &theta) - min.value;
        let lower = 0.5 * spec.strong_convexity * norm_sq(&sub(&theta, &min.theta));
        // Rounding in the loss values scales with their magnitude.
        tally.le(lower, gap, min.value.abs() + gap.abs());
    }
    let mut r = tally.finish();
    if matches!(min.source, super::MinimumSource::NumericOracle) {
        r = r.with_note("minimum from deterministic gradient descent to gradient norm 1e-10 (derived oracle)");
    }
    r
}

/// Smoothness, strong convexity, gradient bound, initial-loss bound and
/// relative-noise certificates of `spec`, each on `trials` random instances.
pub fn check_loss_certificates(
    spec: &LossSpec,
    projection: Option<&ProjectionSet>,
    theta0: &[f64],
    trials: usize,
    seed: u64,
) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dimension;
    let fam = spec.family.name();
    let mut smooth = Tally::new(format!("smoothness_certificate_{fam}"));
    let mut strong = Tally::new(format!("strong_convexity_certificate_{fam}"));
    let mut gbound = Tally::new(format!("gradient_bound_certificate_{fam}"));
    let mut init = Tally::new(format!("initial_loss_certificate_{fam}"));
    let mut noise = Tally::new(format!("relative_noise_certificate_{fam}"));
    for _ in 0..trials {
        let z = spec.family.random_sample(&mut rng, d, spec.data_radius);
        let (t1, t2) = theta_pair(&mut rng, d);
        let g1 = spec.grad(&z, &t1);
        let g2 = spec.grad(&z, &t2);
        let dt = sub(&t1, &t2);
        let dg = sub(&g1, &g2);
        let base = norm(&dt);
        smooth.le(norm(&dg), spec.smoothness * base, spec.smoothness * base);
        let inner = dot(&dg, &dt);
        strong.le(spec.strong_convexity * base * base, inner, inner.abs());

        let p = match projection {
            Some(ball) => {
                let mut th = uniform_in_ball(&mut rng, d, ball.radius());
                if rng.random_bool(0.25) {
                    let nr = norm(&th).max(f64::MIN_POSITIVE);
                    th.iter_mut().for_each(|v| *v *= ball.radius() / nr);
                }
                axpy(1.0, ball.center(), &mut th);
                Some(th)
            }
            None if spec.grad_bound.is_finite() => Some(uniform_in_ball(&mut rng, d, 1e3)),
            None => None,
        };
        if let Some(th) = p {
            let gn = norm(&spec.grad(&z, &th));
            gbound.le(gn, spec.grad_bound, spec.grad_bound);
        }

        let z0 = if rng.random_bool(0.5) {
            z.clone()
        } else {
            // Push the sample toward the worst case at the boundary.
            let mut w = z.clone();
            let nx = norm(&w.x).max(f64::MIN_POSITIVE);
            w.x.iter_mut().for_each(|v| *v *= spec.data_radius / nx);
            w
        };
        let l0 = spec.loss(&z0, theta0);
        init.le(l0, spec.loss_at_init, spec.loss_at_init);

        let n = rng.random_range(1..=12);
        let data: Vec<Sample> = (0..n).map(|_| spec.family.random_sample(&mut rng, d, spec.data_radius)).collect();
        let second = mean_sq_grad_norm(&data, spec, &t1);
        let full = norm_sq(&full_gradient(&data, spec, &t1));
        let rhs = spec.noise_b * full + spec.noise_c;
        noise.le(second, rhs, rhs);
    }
    let mut out = vec![smooth.finish()];
    // Nonconvex families certify no curvature lower bound.
    if spec.convexity_class != ConvexityClass::Nonconvex {
        out.push(strong.finish());
    }
    if gbound.instances > 0 {
        out.push(gbound.finish());
    }
    out.push(init.finish());
    out.push(noise.finish());
    out
}

/// Central finite differences with step `1e-5`; passes when every relative
/// error is below `1e-5`.
pub fn check_gradient_finite_differences(spec: &LossSpec, points: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dimension;
    let h = 1e-5;
    let tol = 1e-5;
    let mut instances = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut max_rel: f64 = 0.0;
    for _ in 0..points {
        let z = spec.family.random_sample(&mut rng, d, spec.data_radius);
        let theta = uniform_in_ball(&mut rng, d, 2.0);
        let g = spec.grad(&z, &theta);
        let mut fd = vec![0.0; d];
        for j in 0..d {
            let mut p = theta.clone();
            let mut q = theta.clone();
            p[j] += h;
            q[j] -= h;
            fd[j] = (spec.loss(&z, &p) - spec.loss(&z, &q)) / (2.0 * h);
        }
        let rel = dist(&fd, &g) / norm(&g).max(1e-6);
        instances += 1;
        max_rel = max_rel.max(rel);
        worst = worst.min(tol - rel);
        if rel.is_nan() || rel >= tol {
            violations += 1;
        }
    }
    let mut r = Tally::new(format!("gradient_finite_difference_{}", spec.family.name())).finish();
    r.instances = instances;
    r.violations = violations;
    r.worst_margin = worst;
    r.pass = violations == 0;
    r.extra.insert("max_relative_error".into(), max_rel);
    r
}

/// Exact worst-case privacy curve of two 1-d Gaussians `Δ` apart against `δ`.
pub fn check_gaussian_indistinguishability_1d(delta_mean: f64, sigma: f64, epsilon: f64, delta: f64) -> CheckReport {
    let curve = if delta_mean == 0.0 {
        0.0
    } else if sigma > 0.0 {
        gaussian_privacy_curve(delta_mean, sigma, epsilon)
    } else {
        // Point masses at distinct locations are perfectly distinguishable.
        1.0
    };
    let margin = delta - curve;
    let pass = curve <= delta;
    let mut r = CheckReport {
        name: "gaussian_indistinguishability_1d".into(),
        kind: CheckKind::Analytic,
        instances: 1,
        violations: u64::from(!pass),
        worst_margin: margin,
        mc_mean: None,
        mc_se: None,
        bound: Some(delta),
        pass,
        extra: Default::default(),
        notes: Vec::new(),
    };
    r.extra.insert("sensitivity".into(), delta_mean);
    r.extra.insert("noise_std".into(), sigma);
    r.extra.insert("epsilon".into(), epsilon);
    r.extra.insert("curve".into(), curve);
    r
}
