use serde::{Deserialize, Serialize};

use super::{reference, ExperimentConfig, Overrides, Prepared, OUTPUT_FORMAT_VERSION};
use crate::certify::{
    calibrate_noise, d2d_training_horizon, sigma_psgd_r2d, tail_radius, FormulaVariant, PrivacyBudget, Regime,
};
use crate::data_engine::{Dataset, Selection, UnlearnRequest};
use crate::error::{Error, Result};
use crate::model_zoo::{certified_constants, ConvexityClass, LossFamily, LossSpec, ProjectionSet};
use crate::verify::{
    check_bias_bounds, check_biased_descent, check_contraction, check_coupled_divergence,
    check_end_to_end_sensitivity, check_gaussian_indistinguishability_1d, check_gradient_finite_differences,
    check_loss_certificates, check_projection_nonexpansive, check_quadratic_growth, check_same_loss_contraction,
    check_sgd_convergence, CheckKind, CheckReport, EXACT_TRIALS, MIN_REPLICAS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Exact,
    Statistical,
    #[default]
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Suite::Exact),
            "statistical" => Ok(Suite::Statistical),
            "all" => Ok(Suite::All),
            other => Err(Error::config(format!("unknown suite {other:?} (expected exact, statistical or all)"))),
        }
    }

    fn exact(self) -> bool {
        matches!(self, Suite::Exact | Suite::All)
    }

    fn statistical(self) -> bool {
        matches!(self, Suite::Statistical | Suite::All)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub suite: Suite,
    pub replicas: usize,
    pub seed: u64,
    /// Random instances per exact check.
    pub trials: usize,
    /// Run the statistical checks on this experiment instead of the shipped references.
    pub config: Option<ExperimentConfig>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { suite: Suite::All, replicas: 200, seed: 1, trials: EXACT_TRIALS, config: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub suite: Suite,
    pub seed: u64,
    pub replicas: usize,
    pub checks: Vec<CheckReport>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

const DIM: usize = 5;
const BALL_RADIUS: f64 = 2.0;

fn zoo() -> [LossFamily; 4] {
    [
        LossFamily::Quadratic,
        LossFamily::RidgeLogistic { lambda: 0.5 },
        LossFamily::Logistic,
        LossFamily::SmoothNonconvex,
    ]
}

fn projected_spec(family: LossFamily) -> Result<(LossSpec, ProjectionSet, Vec<f64>)> {
    let ball = ProjectionSet::centered(DIM, BALL_RADIUS)?;
    let theta0 = vec![0.3; DIM];
    let spec = certified_constants(family, DIM, 1.0, Some(&ball), &theta0)?;
    Ok((spec, ball, theta0))
}

/// Largest step size the class's contraction argument admits.
fn admissible_eta(spec: &LossSpec) -> f64 {
    match spec.convexity_class {
        ConvexityClass::StronglyConvex => spec.strong_convexity / spec.smoothness.powi(2),
        ConvexityClass::Convex => 2.0 / spec.smoothness,
        ConvexityClass::Nonconvex => 1.0 / spec.smoothness,
    }
}

fn analytic(name: &str, pass: bool, note: String) -> CheckReport {
    CheckReport {
        name: name.into(),
        kind: CheckKind::Analytic,
        instances: 1,
        violations: u64::from(!pass),
        worst_margin: 0.0,
        mc_mean: None,
        mc_se: None,
        bound: None,
        pass,
        extra: Default::default(),
        notes: vec![note],
    }
}

/// Passes when `result` is a certification error.
fn expect_rejection<T>(name: &str, result: Result<T>) -> CheckReport {
    match result {
        Err(e @ Error::Certification(_)) => analytic(name, true, format!("rejected: {e}")),
        Err(e) => analytic(name, false, format!("rejected with the wrong error kind: {e}")),
        Ok(_) => analytic(name, false, "accepted an uncertifiable configuration".into()),
    }
}

fn exact_suite(opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    let trials = opts.trials;
    let seed = opts.seed;
    let mut out = Vec::new();
    for (i, family) in zoo().into_iter().enumerate() {
        let s = seed.wrapping_add(100 * i as u64);
        let (spec, ball, theta0) = projected_spec(family)?;
        out.push(check_contraction(&spec, admissible_eta(&spec), trials, s));
        out.extend(check_loss_certificates(&spec, Some(&ball), &theta0, trials, s + 1));
        out.push(check_gradient_finite_differences(&spec, trials.clamp(1, 1000), s + 2));
    }
    out.push(check_projection_nonexpansive(DIM, trials, seed.wrapping_add(1000)));

    for (i, family) in [LossFamily::Quadratic, LossFamily::RidgeLogistic { lambda: 0.5 }].into_iter().enumerate() {
        let s = seed.wrapping_add(2000 + 10 * i as u64);
        let ds = Dataset::synthetic(&family, 100, DIM, 1.0, 11)?;
        let spec = certified_constants(family, DIM, 1.0, None, &[0.0; DIM])?;
        out.extend(check_bias_bounds(&ds, &UnlearnRequest::first_m(100, 5)?, &spec, trials, s));
        out.extend(check_bias_bounds(&ds, &UnlearnRequest::random_seeded(100, 30, s)?, &spec, trials, s + 1));
        out.push(check_quadratic_growth(&spec, &ds, trials, s + 2));
    }

    // Calibrated noise against the exact Gaussian privacy curve at the tail radius.
    let mut calibrated: Vec<(String, f64, f64, PrivacyBudget)> = Vec::new();
    for (name, cfg) in reference::all() {
        let p = cfg.prepare()?;
        calibrated.push((name.into(), tail_radius(&p.bound, cfg.privacy.delta), p.noise.std, cfg.privacy));
    }
    let req = reference::calibrate_convex();
    let budget = PrivacyBudget::new(req.epsilon, req.delta)?;
    let bound = sigma_psgd_r2d(
        Regime::Convex,
        req.eta,
        req.constants.smoothness,
        0.0,
        req.constants.grad_bound.unwrap_or(1.0),
        req.n,
        req.m,
        req.t.unwrap_or(0),
        req.k.unwrap_or(0),
        FormulaVariant::Appendix,
    )?;
    calibrated.push(("calibrate_convex".into(), tail_radius(&bound, budget.delta), calibrate_noise(&bound, &budget)?.std, budget));
    for (name, radius, std, b) in calibrated {
        let mut r = check_gaussian_indistinguishability_1d(radius, std, b.epsilon, b.delta);
        r.name = format!("{}_{name}", r.name);
        out.push(r);
    }

    // Negative fixture: a step size outside the strongly convex range must be caught.
    let (quad, _, _) = projected_spec(LossFamily::Quadratic)?;
    let inner = check_contraction(&quad, 1.5, trials.min(1000), seed.wrapping_add(3000));
    let mut neg = analytic(
        "negative_fixture_oversized_step_detected",
        !inner.pass && inner.violations > 0,
        format!("contraction at eta = 1.5 reported {} violations", inner.violations),
    );
    neg.instances = inner.instances;
    out.push(neg);

    out.extend(precondition_checks()?);
    Ok(out)
}

/// Uncertifiable settings must be rejected before any trajectory runs.
fn precondition_checks() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();

    let mut cfg = reference::sgd_d2d_quadratic();
    cfg.unlearn = Selection::FirstM { m: 20 };
    out.push(expect_rejection("rejects_d2d_deletion_fraction", cfg.prepare()));

    let mut cfg = reference::psgd_convex();
    let l = cfg.prepare()?.spec.smoothness;
    cfg.run.eta = 2.5 / l;
    out.push(expect_rejection("rejects_convex_step_above_2_over_l", cfg.prepare()));

    let mut cfg = reference::psgd_strongly_convex();
    cfg.variant = FormulaVariant::Main;
    cfg.run.eta = 1.5;
    out.push(expect_rejection("rejects_strongly_convex_step_above_mu_over_l2", cfg.prepare()));

    let mut cfg = reference::sgd_d2d_quadratic();
    let p = cfg.prepare()?;
    cfg.run.t = Some(p.run.t - 1);
    out.push(expect_rejection("rejects_d2d_training_below_horizon", cfg.prepare()));

    let mut cfg = reference::sgd_r2d_ridge();
    let spec = cfg.prepare()?.spec;
    cfg.run.eta = 1.5 / (spec.smoothness * spec.noise_b);
    out.push(expect_rejection("rejects_sgd_step_above_1_over_lb", cfg.prepare()));

    out.push(expect_rejection(
        "rejects_zero_noise_constant_horizon",
        d2d_training_horizon(10, 0.1, 1.0, 1.0, 0.0, 1.0),
    ));

    let p = reference::psgd_strongly_convex().prepare()?;
    let few = check_coupled_divergence(&p.run, &p.dataset, &p.request, &p.spec, MIN_REPLICAS - 1);
    out.push(analytic(
        "rejects_too_few_replicas",
        matches!(few, Err(Error::Config(_))),
        format!("{} replicas", MIN_REPLICAS - 1),
    ));
    Ok(out)
}

fn prepare_with(cfg: &ExperimentConfig, seed: u64, replicas: usize) -> Result<Prepared> {
    let mut c = cfg.clone();
    Overrides { seed: Some(seed), replicas: Some(replicas), variant: None }.apply(&mut c);
    c.prepare()
}

fn tag(mut reports: Vec<CheckReport>, name: &str) -> Vec<CheckReport> {
    for r in &mut reports {
        r.name = format!("{}_{name}", r.name);
    }
    reports
}

fn experiment_checks(name: &str, p: &Prepared, replicas: usize) -> Result<Vec<CheckReport>> {
    let cfg = &p.config;
    let mut out = Vec::new();
    if cfg.run.method.projected() {
        out.push(check_coupled_divergence(&p.run, &p.dataset, &p.request, &p.spec, replicas)?);
    }
    out.extend(check_end_to_end_sensitivity(
        &p.run,
        &p.dataset,
        &p.request,
        &p.spec,
        cfg.run.method,
        cfg.variant,
        &cfg.privacy,
        replicas,
    )?);
    let same_loss_ok = cfg.run.method.is_r2d()
        && p.spec.convexity_class == ConvexityClass::StronglyConvex
        && p.run.eta <= p.spec.strong_convexity / p.spec.smoothness.powi(2);
    if same_loss_ok {
        out.push(check_same_loss_contraction(&p.run, &p.dataset, &p.request, &p.spec, replicas)?);
    }
    Ok(tag(out, name))
}

fn statistical_suite(opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    let replicas = opts.replicas;
    if replicas < MIN_REPLICAS {
        return Err(Error::config(format!(
            "statistical checks need at least {MIN_REPLICAS} replicas, got {replicas}"
        )));
    }
    let mut out = Vec::new();
    if let Some(cfg) = &opts.config {
        let p = prepare_with(cfg, opts.seed, replicas)?;
        let name = cfg.name.clone().unwrap_or_else(|| "config".into());
        return experiment_checks(&name, &p, replicas);
    }
    for (name, cfg) in reference::all() {
        let p = prepare_with(&cfg, opts.seed, replicas)?;
        out.extend(experiment_checks(name, &p, replicas)?);
    }

    // Plain SGD on the quadratic: convergence and biased descent toward the retained optimum.
    let mut cfg = reference::sgd_d2d_quadratic();
    cfg.unlearn = Selection::FirstM { m: 5 };
    cfg.run.t = Some(300);
    let p = prepare_with(&cfg, opts.seed, replicas)?;
    out.push(check_sgd_convergence(&p.run, &p.dataset, &p.spec, replicas)?);
    out.push(check_biased_descent(&p.run, &p.dataset, &p.request, &p.spec, replicas)?);

    let mut cfg = reference::sgd_r2d_ridge();
    cfg.run.t = Some(300);
    let p = prepare_with(&cfg, opts.seed, replicas)?;
    out.push(check_sgd_convergence(&p.run, &p.dataset, &p.spec, replicas)?);
    Ok(out)
}

/// Runs the selected suites. Check failures are reported, not returned as errors.
pub fn cmd_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.trials == 0 {
        return Err(Error::config("trials must be at least 1"));
    }
    let mut checks = Vec::new();
    if opts.suite.exact() {
        checks.extend(exact_suite(opts)?);
    }
    if opts.suite.statistical() {
        checks.extend(statistical_suite(opts)?);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        format_version: OUTPUT_FORMAT_VERSION,
        suite: opts.suite,
        seed: opts.seed,
        replicas: opts.replicas,
        checks,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_suite_passes_quickly() {
        let opts = VerifyOptions { suite: Suite::Exact, trials: 500, ..Default::default() };
        let r = cmd_verify(&opts).unwrap();
        let failed: Vec<String> = r.failures().map(|c| c.summary_line()).collect();
        assert!(r.pass, "{failed:#?}");
        assert!(r.checks.iter().any(|c| c.name == "negative_fixture_oversized_step_detected"));
    }

    #[test]
    fn statistical_needs_enough_replicas() {
        let opts = VerifyOptions { suite: Suite::Statistical, replicas: 10, ..Default::default() };
        assert!(matches!(cmd_verify(&opts), Err(Error::Config(_))));
    }

    #[test]
    fn suite_parse() {
        assert_eq!(Suite::parse("all").unwrap(), Suite::All);
        assert!(Suite::parse("some").is_err());
    }
}
