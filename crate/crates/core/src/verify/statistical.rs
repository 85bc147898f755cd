use rayon::prelude::*;

use super::{contraction_factor, mean_se, minimize, CheckKind, CheckReport, Tally};
use crate::certify::{
    check_d2d_fraction, sensitivity_for, tail_radius, FormulaVariant, Method, Moment, PrivacyBudget,
};
use crate::data_engine::{empirical_loss, CouplingStream, Dataset, UnlearnRequest};
use crate::error::{Error, Result};
use crate::model_zoo::{ConvexityClass, LossSpec};
use crate::sgd_engine::{run_learn, Algorithm, CoupledProblem, CoupledRun, Recording, RunConfig, TrajectoryRecord};
use crate::vector::dist;

/// Fewest replicas a statistical check accepts.
pub const MIN_REPLICAS: usize = 100;

fn ensure_replicas(replicas: usize) -> Result<()> {
    if replicas < MIN_REPLICAS {
        return Err(Error::config(format!(
            "statistical checks need at least {MIN_REPLICAS} replicas, got {replicas}"
        )));
    }
    Ok(())
}

fn statistical(name: impl Into<String>, instances: usize, mean: f64, se: f64, bound: f64) -> CheckReport {
    let pass = mean <= bound + 3.0 * se;
    CheckReport {
        name: name.into(),
        kind: CheckKind::Statistical,
        instances: instances as u64,
        violations: u64::from(!pass),
        worst_margin: bound - mean,
        mc_mean: Some(mean),
        mc_se: Some(se),
        bound: Some(bound),
        pass,
        extra: Default::default(),
        notes: Vec::new(),
    }
}

fn coupled_runs(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    replicas: usize,
) -> Result<Vec<CoupledRun>> {
    let problem = CoupledProblem::new(cfg, dataset, request, spec)?;
    (0..replicas as u64).into_par_iter().map(|r| problem.run(r)).collect()
}

fn learn_runs(cfg: &RunConfig, dataset: &Dataset, spec: &LossSpec, replicas: usize) -> Result<Vec<TrajectoryRecord>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| run_learn(cfg, dataset, spec, &CouplingStream::new(cfg.seed, r)))
        .collect()
}

fn plain(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.recording = Recording::default();
    c
}

/// `E‖θ_t − θ′_t‖ ≤ (2ηGm/n)·(1 − γ^t)/(1 − γ)` (or `·t` when `γ = 1`) at every `t`.
pub fn check_coupled_divergence(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    replicas: usize,
) -> Result<CheckReport> {
    ensure_replicas(replicas)?;
    if !cfg.projected() {
        return Err(Error::config("the coupled divergence bound applies to projected SGD"));
    }
    let (n, m) = (dataset.len(), request.m());
    // Validates the step size for the loss class.
    sensitivity_for(Method::PsgdR2d, FormulaVariant::Appendix, spec, cfg.eta, n, m, cfg.t, cfg.k)?;
    let runs = coupled_runs(&plain(cfg), dataset, request, spec, replicas)?;
    let gamma = contraction_factor(spec, cfg.eta);
    let scale = 2.0 * cfg.eta * spec.grad_bound * m as f64 / n as f64;
    let bound_at = |t: u64| {
        if gamma == 1.0 {
            scale * t as f64
        } else {
            scale * (1.0 - gamma.powf(t as f64)) / (1.0 - gamma)
        }
    };
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut worst_t = 0;
    let mut column = vec![0.0; replicas];
    let mut last = (0.0, 0.0, 0.0);
    for t in 0..=cfg.t {
        for (slot, run) in column.iter_mut().zip(&runs) {
            *slot = run.dist_train_retrain[t as usize];
        }
        let (mean, se) = mean_se(&column);
        let bound = bound_at(t);
        if mean > bound + 3.0 * se {
            violations += 1;
        }
        if bound - mean < worst {
            worst = bound - mean;
            worst_t = t;
        }
        last = (mean, se, bound);
    }
    let mut r = statistical("coupled_divergence", replicas, last.0, last.1, last.2);
    r.violations = violations;
    r.pass = violations == 0;
    r.worst_margin = worst;
    r.extra.insert("time_points".into(), (cfg.t + 1) as f64);
    r.extra.insert("worst_t".into(), worst_t as f64);
    Ok(r)
}

/// Monte Carlo `E‖θ′_T − θ″_K‖` (or its square for second-moment bounds)
/// against the certified Σ, plus the Markov tail at the budget's `δ`.
#[allow(clippy::too_many_arguments)]
pub fn check_end_to_end_sensitivity(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    method: Method,
    variant: FormulaVariant,
    budget: &PrivacyBudget,
    replicas: usize,
) -> Result<Vec<CheckReport>> {
    ensure_replicas(replicas)?;
    budget.validate()?;
    let expect_d2d = matches!(method, Method::SgdD2d);
    if expect_d2d != matches!(cfg.algorithm, Algorithm::D2d) || method.projected() != cfg.projected() {
        return Err(Error::config("run configuration does not match the requested method"));
    }
    let (n, m) = (dataset.len(), request.m());
    let (bound, _) = sensitivity_for(method, variant, spec, cfg.eta, n, m, cfg.t, cfg.k)?;
    let runs = coupled_runs(&plain(cfg), dataset, request, spec, replicas)?;
    let dists: Vec<f64> = runs.iter().map(|r| r.dist_final).collect();
    let sigma = bound.sigma;
    let main = match bound.moment {
        Moment::First => {
            let (mean, se) = mean_se(&dists);
            statistical("end_to_end_sensitivity", replicas, mean, se, sigma)
        }
        Moment::Second => {
            let sq: Vec<f64> = dists.iter().map(|d| d * d).collect();
            let (mean, se) = mean_se(&sq);
            statistical("end_to_end_sensitivity_second_moment", replicas, mean, se, sigma * sigma)
        }
    };
    let threshold = tail_radius(&bound, budget.delta);
    let exceed = dists.iter().filter(|&&d| d > threshold).count();
    let p = exceed as f64 / replicas as f64;
    let se = (p * (1.0 - p) / replicas as f64).sqrt();
    let mut tail = statistical("markov_tail", replicas, p, se, budget.delta);
    tail.extra.insert("threshold".into(), threshold);
    tail.extra.insert("exceedances".into(), exceed as f64);
    let mut main = main;
    main.extra.insert("sigma".into(), sigma);
    let max = dists.iter().copied().fold(0.0, f64::max);
    main.extra.insert("max_distance".into(), max);
    Ok(vec![main, tail])
}

/// `E Σ_{t<T} ‖∇𝓛(θ_t)‖² ≤ (2/η)(𝓛(θ₀) − 𝓛*) + LηCT` for plain SGD.
pub fn check_sgd_convergence(cfg: &RunConfig, dataset: &Dataset, spec: &LossSpec, replicas: usize) -> Result<CheckReport> {
    ensure_replicas(replicas)?;
    if cfg.projected() {
        return Err(Error::config("the convergence bound applies to unprojected SGD"));
    }
    if spec.noise_b > 0.0 && cfg.eta > 1.0 / (spec.smoothness * spec.noise_b) * (1.0 + 1e-12) {
        return Err(Error::certification(format!(
            "step size eta = {} violates eta <= 1/(L B) = {}",
            cfg.eta,
            1.0 / (spec.smoothness * spec.noise_b)
        )));
    }
    let min = minimize(dataset.samples(), spec)?;
    let mut c = plain(cfg);
    c.recording.diagnostics = true;
    let runs = learn_runs(&c, dataset, spec, replicas)?;
    let sums: Vec<f64> = runs
        .iter()
        .map(|r| r.diagnostics.iter().map(|d| d.grad_norm * d.grad_norm).sum())
        .collect();
    let (mean, se) = mean_se(&sums);
    let gap0 = (empirical_loss(dataset.samples(), spec, &cfg.theta0) - min.value).max(0.0);
    let bound = 2.0 / cfg.eta * gap0 + spec.smoothness * cfg.eta * spec.noise_c * cfg.t as f64;
    let mut r = statistical(format!("sgd_convergence_{}", spec.family.name()), replicas, mean, se, bound);
    if cfg.t == 0 {
        r.worst_margin = 0.0;
    }
    Ok(with_min_note(r, &min))
}

fn with_min_note(r: CheckReport, min: &super::Minimum) -> CheckReport {
    if matches!(min.source, super::MinimumSource::NumericOracle) {
        r.with_note("minimum from deterministic gradient descent to gradient norm 1e-10 (derived oracle)")
    } else {
        r
    }
}

/// SGD on the full loss, measured on the retained loss:
/// `E𝓛′(θ_T) − 𝓛′* ≤ (1 − ημ/2)^T (𝓛′(θ₀) − 𝓛′*) + C/(4Bμ) + LηC/μ`.
pub fn check_biased_descent(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    replicas: usize,
) -> Result<CheckReport> {
    ensure_replicas(replicas)?;
    if cfg.projected() {
        return Err(Error::config("the biased descent bound applies to unprojected SGD"));
    }
    let mu = spec.strong_convexity;
    if spec.convexity_class != ConvexityClass::StronglyConvex || spec.noise_b.is_nan() || spec.noise_b <= 0.0 {
        return Err(Error::certification("biased descent needs a strongly convex loss with B > 0"));
    }
    if cfg.eta > 1.0 / (spec.smoothness * spec.noise_b) * (1.0 + 1e-12) {
        return Err(Error::certification("step size violates eta <= 1/(L B)"));
    }
    check_d2d_fraction(dataset.len(), request.m(), spec.noise_b)?;
    let retained = dataset.retain(request)?;
    let min = minimize(retained.samples(), spec)?;
    let runs = learn_runs(&plain(cfg), dataset, spec, replicas)?;
    let gaps: Vec<f64> = runs
        .iter()
        .map(|r| empirical_loss(retained.samples(), spec, &r.final_iterate) - min.value)
        .collect();
    let (mean, se) = mean_se(&gaps);
    let (l, b, c, eta) = (spec.smoothness, spec.noise_b, spec.noise_c, cfg.eta);
    let gap0 = empirical_loss(retained.samples(), spec, &cfg.theta0) - min.value;
    let bound = (1.0 - eta * mu / 2.0).powf(cfg.t as f64) * gap0 + c / (4.0 * b * mu) + l * eta * c / mu;
    let r = statistical(format!("biased_descent_{}", spec.family.name()), replicas, mean, se, bound);
    Ok(with_min_note(r, &min))
}

/// Per replica: `‖θ′_{T−K+t} − θ″_t‖ ≤ γ^t ‖θ′_{T−K} − θ″_0‖` for every `t ≤ K`.
pub fn check_same_loss_contraction(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    replicas: usize,
) -> Result<CheckReport> {
    ensure_replicas(replicas)?;
    if cfg.algorithm != Algorithm::R2d || spec.convexity_class != ConvexityClass::StronglyConvex {
        return Err(Error::config("same-loss contraction applies to rewinding on a strongly convex loss"));
    }
    let mu = spec.strong_convexity;
    let l = spec.smoothness;
    if cfg.eta > mu / (l * l) * (1.0 + 1e-12) {
        return Err(Error::certification("step size violates eta <= mu/L^2"));
    }
    let gamma = (1.0 - cfg.eta * mu).sqrt();
    let mut c = plain(cfg);
    c.recording.iterate_stride = 1;
    let runs = coupled_runs(&c, dataset, request, spec, replicas)?;
    let start = cfg.t - cfg.k;
    let mut tally = Tally::new("same_loss_contraction");
    for run in &runs {
        let retrain = &run.retrain.iterates;
        let unlearn = &run.unlearn.iterates;
        let d0 = dist(&retrain[start as usize].1, &unlearn[0].1);
        for j in 0..=cfg.k {
            let d = dist(&retrain[(start + j) as usize].1, &unlearn[j as usize].1);
            let bound = gamma.powf(j as f64) * d0;
            tally.le(d, bound, d0);
        }
    }
    Ok(tally.finish())
}
