use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Overrides, Prepared};
use crate::certify::{k_for_sigma, Moment};
use crate::data_engine::Selection;
use crate::error::{Error, Result};
use crate::sgd_engine::{CoupledProblem, Recording};
use crate::verify::mean_se;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    T,
    Epsilon,
    M,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::T => "t",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::M => "m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(SweepAxis::K),
            "t" => Ok(SweepAxis::T),
            "epsilon" | "eps" => Ok(SweepAxis::Epsilon),
            "m" => Ok(SweepAxis::M),
            other => Err(Error::config(format!("unknown sweep axis {other:?} (expected k, t, epsilon or m)"))),
        }
    }

    fn default_values(self, cfg: &ExperimentConfig) -> Vec<f64> {
        match self {
            SweepAxis::K => {
                let t = cfg.run.t.unwrap_or(cfg.run.k) as f64;
                [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|f| (f * t).round()).collect()
            }
            SweepAxis::T => vec![50.0, 100.0, 200.0, 400.0, 800.0],
            SweepAxis::Epsilon => vec![0.1, 0.5, 1.0, 2.0, 5.0],
            SweepAxis::M => vec![1.0, 2.0, 5.0, 10.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Overrides the config's `sweep.axis`.
    pub axis: Option<SweepAxis>,
    /// Overrides the config's `sweep.values`.
    pub values: Option<Vec<f64>>,
    /// Also estimate `E‖θ′_T − θ″_K‖` by coupled Monte Carlo at every point.
    pub monte_carlo: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "K")]
    pub k: u64,
    pub moment: Moment,
    pub sensitivity: f64,
    pub noise_std: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub mc_replicas: usize,
    pub mc_mean_dist: Option<f64>,
    pub mc_se_dist: Option<f64>,
    pub mc_mean_sq_dist: Option<f64>,
    pub mc_se_sq_dist: Option<f64>,
}

fn as_steps(v: f64, what: &str) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as u64)
    } else {
        Err(Error::config(format!("{what} must be a nonnegative integer, got {v}")))
    }
}

fn with_m(sel: &Selection, m: usize) -> Result<Selection> {
    match sel {
        Selection::FirstM { .. } => Ok(Selection::FirstM { m }),
        Selection::RandomSeeded { seed, .. } => Ok(Selection::RandomSeeded { m, seed: *seed }),
        Selection::ExplicitIndices { .. } => Err(Error::config("cannot sweep m with explicit_indices selection")),
    }
}

/// The config at one sweep point, with `K` planned from `sigma_target` when set.
fn point(base: &ExperimentConfig, axis: SweepAxis, value: f64, sigma_target: Option<f64>) -> Result<Prepared> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::K => cfg.run.k = as_steps(value, "K")?,
        SweepAxis::T => cfg.run.t = Some(as_steps(value, "T")?),
        SweepAxis::Epsilon => cfg.privacy.epsilon = value,
        SweepAxis::M => cfg.unlearn = with_m(&cfg.unlearn, as_steps(value, "m")? as usize)?,
    }
    if let Some(target) = sigma_target {
        if !cfg.run.method.projected() {
            return Err(Error::config("sigma_target planning is available for projected SGD only"));
        }
        let t = cfg.run.t.ok_or_else(|| Error::config("run.t is required"))?;
        cfg.run.k = 0;
        let p = cfg.prepare()?;
        let s = &p.spec;
        cfg.run.k = k_for_sigma(target, p.run.eta, s.strong_convexity, s.grad_bound, p.dataset.len(), p.request.m(), t, cfg.variant)?;
    }
    cfg.prepare()
}

fn monte_carlo(p: &Prepared, replicas: usize) -> Result<(f64, f64, f64, f64)> {
    let mut run = p.run.clone();
    run.recording = Recording::default();
    let problem = CoupledProblem::new(&run, &p.dataset, &p.request, &p.spec)?;
    let results: Vec<Result<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| problem.run(r).map(|c| c.dist_final))
        .collect();
    let dists = results.into_iter().collect::<Result<Vec<_>>>()?;
    let sq: Vec<f64> = dists.iter().map(|d| d * d).collect();
    let (m1, s1) = mean_se(&dists);
    let (m2, s2) = mean_se(&sq);
    Ok((m1, s1, m2, s2))
}

/// Bound (and optionally Monte Carlo distance) along one axis. Writes
/// `sweep_<axis>.v1.csv` to `opts.out_dir`.
pub fn cmd_sweep(config: &ExperimentConfig, overrides: &Overrides, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    let mut cfg = config.clone();
    overrides.apply(&mut cfg);
    let section = cfg.sweep.clone();
    let axis = opts
        .axis
        .or(section.as_ref().map(|s| s.axis))
        .ok_or_else(|| Error::config("no sweep axis given"))?;
    let values = opts
        .values
        .clone()
        .or_else(|| section.as_ref().and_then(|s| s.values.clone()))
        .unwrap_or_else(|| axis.default_values(&cfg));
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let sigma_target = section.as_ref().and_then(|s| s.sigma_target);
    if sigma_target.is_some() && axis != SweepAxis::T {
        return Err(Error::config("sigma_target applies to the t axis only"));
    }
    let mc = opts.monte_carlo || section.as_ref().is_some_and(|s| s.monte_carlo);

    let mut rows = Vec::with_capacity(values.len());
    for &value in &values {
        let p = point(&cfg, axis, value, sigma_target)?;
        let (mean, se, mean_sq, se_sq) = if mc {
            let (a, b, c, d) = monte_carlo(&p, cfg.replicas)?;
            (Some(a), Some(b), Some(c), Some(d))
        } else {
            (None, None, None, None)
        };
        rows.push(SweepRow {
            axis,
            value,
            n: p.dataset.len(),
            m: p.request.m(),
            t: p.run.t,
            k: p.run.k,
            moment: p.bound.moment,
            sensitivity: p.bound.sigma,
            noise_std: p.noise.std,
            epsilon: p.config.privacy.epsilon,
            delta: p.config.privacy.delta,
            mc_replicas: if mc { cfg.replicas } else { 0 },
            mc_mean_dist: mean,
            mc_se_dist: se,
            mc_mean_sq_dist: mean_sq,
            mc_se_sq_dist: se_sq,
        });
    }

    fs::create_dir_all(&opts.out_dir)?;
    let mut w = csv::Writer::from_path(opts.out_dir.join(format!("sweep_{}.v1.csv", axis.name())))?;
    w.write_record([
        "axis",
        "value",
        "n",
        "m",
        "T",
        "K",
        "moment",
        "sensitivity",
        "noise_std",
        "epsilon",
        "delta",
        "mc_replicas",
        "mc_mean_dist",
        "mc_se_dist",
        "mc_mean_sq_dist",
        "mc_se_sq_dist",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        let moment = match r.moment {
            Moment::First => "first",
            Moment::Second => "second",
        };
        w.write_record([
            axis.name().to_string(),
            r.value.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.t.to_string(),
            r.k.to_string(),
            moment.to_string(),
            r.sensitivity.to_string(),
            r.noise_std.to_string(),
            r.epsilon.to_string(),
            r.delta.to_string(),
            r.mc_replicas.to_string(),
            opt(r.mc_mean_dist),
            opt(r.mc_se_dist),
            opt(r.mc_mean_sq_dist),
            opt(r.mc_se_sq_dist),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::reference;

    fn opts(dir: &std::path::Path) -> SweepOptions {
        SweepOptions { out_dir: dir.to_path_buf(), ..Default::default() }
    }

    #[test]
    fn planned_k_saturates() {
        let dir = tempfile::tempdir().unwrap();
        let rows = cmd_sweep(&reference::k_saturation_sweep(), &Overrides::default(), &opts(dir.path())).unwrap();
        let ks: Vec<u64> = rows.iter().map(|r| r.k).collect();
        // G = ρ + R_z = 3 on the radius-2 ball.
        assert_eq!(ks, vec![28, 34, 35, 35, 35]);
        assert!(rows.iter().all(|r| r.sensitivity <= 0.01 + 1e-12));
        assert!(dir.path().join("sweep_t.v1.csv").exists());
    }

    #[test]
    fn k_sweep_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let rows = cmd_sweep(&reference::psgd_strongly_convex(), &Overrides::default(), &SweepOptions {
            axis: Some(SweepAxis::K),
            ..opts(dir.path())
        })
        .unwrap();
        assert!(rows.windows(2).all(|w| w[1].sensitivity <= w[0].sensitivity));
        assert_eq!(rows.last().unwrap().sensitivity, 0.0);
    }

    #[test]
    fn epsilon_sweep_scales_noise_inversely() {
        let dir = tempfile::tempdir().unwrap();
        let rows = cmd_sweep(&reference::psgd_convex(), &Overrides::default(), &SweepOptions {
            axis: Some(SweepAxis::Epsilon),
            values: Some(vec![0.5, 1.0]),
            ..opts(dir.path())
        })
        .unwrap();
        assert!((rows[0].noise_std - 2.0 * rows[1].noise_std).abs() < 1e-12 * rows[0].noise_std);
    }

    #[test]
    fn axis_parse() {
        assert_eq!(SweepAxis::parse("T").unwrap(), SweepAxis::T);
        assert!(SweepAxis::parse("q").is_err());
        let a: SweepAxis = serde_json::from_str("\"epsilon\"").unwrap();
        assert_eq!(a, SweepAxis::Epsilon);
    }
}
