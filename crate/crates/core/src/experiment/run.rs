use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Overrides, Prepared, ReleaseMode, OUTPUT_FORMAT_VERSION};
use crate::certify::{add_calibrated_noise, FormulaVariant, Method, Moment};
use crate::data_engine::CouplingStream;
use crate::error::Result;
use crate::sgd_engine::{CoupledProblem, TrajectoryRecord};
use crate::verify::mean_se;

/// Noise keys on each replica's stream.
const RELEASE_TRAIN: u64 = 0;
const RELEASE_UNLEARN: u64 = 1;
const RELEASE_NOISY_CHECKPOINT: u64 = 2;
const RELEASE_RETRAIN: u64 = 3;

pub const TRAJECTORIES_FILE: &str = "trajectories.v1.jsonl";
pub const RELEASES_FILE: &str = "releases.v1.csv";
pub const DISTANCES_FILE: &str = "distances.v1.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Also run the retrain trajectory and record train/retrain distances.
    pub coupled: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub name: Option<String>,
    pub method: Method,
    pub variant: FormulaVariant,
    pub release_mode: ReleaseMode,
    pub certified: bool,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "K")]
    pub k: u64,
    pub b: usize,
    pub eta: f64,
    pub seed: u64,
    pub replicas: usize,
    pub coupled: bool,
    pub moment: Moment,
    pub sensitivity: f64,
    pub noise_std: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub guarantee_delta: f64,
    /// Monte Carlo `‖θ′_T − θ″_K‖` (first moment) or its square; coupled runs only.
    pub mc_mean: Option<f64>,
    pub mc_se: Option<f64>,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

struct ReplicaOutput {
    records: Vec<TrajectoryRecord>,
    releases: Vec<(&'static str, Vec<f64>)>,
    dist_train_retrain: Vec<f64>,
    dist_final: Option<f64>,
}

fn run_replica(p: &Prepared, problem: &CoupledProblem, replica: u64, coupled: bool) -> Result<ReplicaOutput> {
    let stream = CouplingStream::new(p.run.seed, replica);
    let std = p.noise.std;
    let (learn, retrain, dists) = if coupled {
        let run = problem.run(replica)?;
        (run.learn, Some(run.retrain), run.dist_train_retrain)
    } else {
        (problem.learn(replica)?, None, Vec::new())
    };
    let unlearn = match p.config.release_mode {
        ReleaseMode::NoiselessCheckpoint => problem.unlearn(&learn)?,
        ReleaseMode::NoisyRelease => {
            let mut noisy = learn.clone();
            if let Some(c) = &learn.checkpoint {
                noisy.checkpoint = Some(add_calibrated_noise(c, std, &stream, RELEASE_NOISY_CHECKPOINT)?);
            }
            problem.unlearn(&noisy)?
        }
    };
    let mut releases = vec![
        ("train", add_calibrated_noise(&learn.final_iterate, std, &stream, RELEASE_TRAIN)?),
        ("unlearn", add_calibrated_noise(&unlearn.final_iterate, std, &stream, RELEASE_UNLEARN)?),
    ];
    let dist_final = retrain.as_ref().map(|r| crate::vector::dist(&r.final_iterate, &unlearn.final_iterate));
    let mut records = vec![learn];
    if let Some(r) = retrain {
        releases.push(("retrain", add_calibrated_noise(&r.final_iterate, std, &stream, RELEASE_RETRAIN)?));
        records.push(r);
    }
    records.push(unlearn);
    Ok(ReplicaOutput { records, releases, dist_train_retrain: dists, dist_final })
}

fn distance_times(t: u64, stride: u64) -> Vec<u64> {
    let stride = stride.max(1);
    let mut times: Vec<u64> = (0..=t).step_by(stride as usize).collect();
    if times.last() != Some(&t) {
        times.push(t);
    }
    times
}

fn write_outputs(dir: &Path, p: &Prepared, outputs: &[ReplicaOutput], coupled: bool) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![TRAJECTORIES_FILE.to_string(), RELEASES_FILE.to_string()];

    let mut traj = BufWriter::new(File::create(dir.join(TRAJECTORIES_FILE))?);
    for out in outputs {
        for rec in &out.records {
            writeln!(traj, "{}", rec.to_json()?)?;
        }
    }
    traj.flush()?;

    let d = p.run.dimension;
    let mut rel = csv::Writer::from_path(dir.join(RELEASES_FILE))?;
    let mut header = vec!["replica".to_string(), "release".to_string()];
    header.extend((0..d).map(|i| format!("theta_{i}")));
    rel.write_record(&header)?;
    for (r, out) in outputs.iter().enumerate() {
        for (kind, theta) in &out.releases {
            let mut row = vec![r.to_string(), kind.to_string()];
            row.extend(theta.iter().map(f64::to_string));
            rel.write_record(&row)?;
        }
    }
    rel.flush()?;

    if coupled {
        files.push(DISTANCES_FILE.to_string());
        let mut w = csv::Writer::from_path(dir.join(DISTANCES_FILE))?;
        w.write_record(["replica", "t", "dist_train_retrain", "dist_final"])?;
        let times = distance_times(p.run.t, p.config.run.distance_stride);
        for (r, out) in outputs.iter().enumerate() {
            let last = out.dist_final.map(|v| v.to_string()).unwrap_or_default();
            for &t in &times {
                let fin = if t == p.run.t { last.as_str() } else { "" };
                w.write_record([r.to_string(), t.to_string(), out.dist_train_retrain[t as usize].to_string(), fin.into()])?;
            }
        }
        w.flush()?;
    }
    files.push(SUMMARY_FILE.to_string());
    Ok(files)
}

/// Runs every replica, then writes trajectories, noisy releases, optional
/// distances and a summary to `opts.out_dir`.
pub fn cmd_run(config: &ExperimentConfig, overrides: &Overrides, opts: &RunOptions) -> Result<RunSummary> {
    let mut cfg = config.clone();
    overrides.apply(&mut cfg);
    let p = cfg.prepare()?;
    let problem = CoupledProblem::new(&p.run, &p.dataset, &p.request, &p.spec)?;
    let results: Vec<Result<ReplicaOutput>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(&p, &problem, r, opts.coupled))
        .collect();
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let (mc_mean, mc_se) = if opts.coupled {
        let vals: Vec<f64> = outputs
            .iter()
            .filter_map(|o| o.dist_final)
            .map(|d| if p.bound.moment == Moment::Second { d * d } else { d })
            .collect();
        let (m, se) = mean_se(&vals);
        (Some(m), Some(se))
    } else {
        (None, None)
    };
    let files = write_outputs(&opts.out_dir, &p, &outputs, opts.coupled)?;
    let summary = RunSummary {
        format_version: OUTPUT_FORMAT_VERSION,
        name: cfg.name.clone(),
        method: cfg.run.method,
        variant: cfg.variant,
        release_mode: cfg.release_mode,
        certified: cfg.release_mode == ReleaseMode::NoiselessCheckpoint,
        n: p.dataset.len(),
        m: p.request.m(),
        t: p.run.t,
        k: p.run.k,
        b: p.run.b,
        eta: p.run.eta,
        seed: p.run.seed,
        replicas: cfg.replicas,
        coupled: opts.coupled,
        moment: p.bound.moment,
        sensitivity: p.bound.sigma,
        noise_std: p.noise.std,
        epsilon: cfg.privacy.epsilon,
        delta: cfg.privacy.delta,
        guarantee_delta: 2.0 * cfg.privacy.delta,
        mc_mean,
        mc_se,
        files,
        warnings: p.warnings.clone(),
    };
    fs::write(opts.out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::reference;

    #[test]
    fn distance_times_include_endpoints() {
        assert_eq!(distance_times(25, 10), vec![0, 10, 20, 25]);
        assert_eq!(distance_times(20, 10), vec![0, 10, 20]);
        assert_eq!(distance_times(3, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { coupled: true, out_dir: dir.path().to_path_buf() };
        let ov = Overrides { replicas: Some(3), ..Default::default() };
        let s = cmd_run(&reference::psgd_strongly_convex(), &ov, &opts).unwrap();
        assert_eq!(s.replicas, 3);
        for f in [TRAJECTORIES_FILE, RELEASES_FILE, DISTANCES_FILE, SUMMARY_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let lines = fs::read_to_string(dir.path().join(TRAJECTORIES_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 9);
        for line in lines.lines() {
            TrajectoryRecord::from_json(line).unwrap();
        }
    }

    #[test]
    fn noisy_release_is_flagged_uncertified() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = reference::psgd_convex();
        cfg.release_mode = ReleaseMode::NoisyRelease;
        cfg.replicas = 2;
        let s = cmd_run(&cfg, &Overrides::default(), &RunOptions { coupled: false, out_dir: dir.path().into() }).unwrap();
        assert!(!s.certified);
        assert!(s.warnings.iter().any(|w| w.contains("noisy_release")));
        assert!(!dir.path().join(DISTANCES_FILE).exists());
    }
}
