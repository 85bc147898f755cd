//! SGD / projected SGD trajectories for learning, coupled retraining and
//! rewind- or descent-based unlearning.
//!
//! Trajectories never add output noise; see [`crate::certify::add_calibrated_noise`].

use serde::{Deserialize, Serialize};

use crate::data_engine::{
    couple_batch, full_gradient, sample_batch, BatchDraw, CouplingStream, Dataset, Partition, Role, UnlearnRequest,
};
use crate::error::{Error, Result};
use crate::model_zoo::{LossSpec, ProjectionSet, Sample};
use crate::vector::{all_finite, dist, norm};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Rewind to the checkpoint `θ_{T−K}` and take `K` steps on the retained loss.
    R2d,
    /// Continue from `θ_T` with `K` steps on the retained loss.
    D2d,
}

/// What a trajectory record keeps besides its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Recording {
    /// Store every `stride`-th iterate (plus the last); 0 stores none.
    pub iterate_stride: u64,
    /// Per-step full-gradient norm and realized batch.
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub eta: f64,
    pub t: u64,
    pub k: u64,
    pub b: usize,
    pub dimension: usize,
    /// Projection set for PSGD; `None` runs plain SGD.
    pub projection: Option<ProjectionSet>,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub recording: Recording,
}

impl RunConfig {
    pub fn projected(&self) -> bool {
        self.projection.is_some()
    }

    /// Structural checks. Step-size admissibility is a certification concern
    /// and is checked where a bound is requested.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("step size must be finite and nonnegative, got {}", self.eta)));
        }
        if self.k > self.t {
            return Err(Error::config(format!("K = {} exceeds T = {}", self.k, self.t)));
        }
        if self.b == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.dimension == 0 || self.theta0.len() != self.dimension {
            return Err(Error::config(format!(
                "theta0 has dimension {}, expected {}",
                self.theta0.len(),
                self.dimension
            )));
        }
        if !all_finite(&self.theta0) {
            return Err(Error::config("theta0 must be finite"));
        }
        if let Some(p) = &self.projection {
            if p.dimension() != self.dimension {
                return Err(Error::config("projection set dimension does not match the model"));
            }
            if !p.contains(&self.theta0) {
                return Err(Error::config("theta0 must lie inside the projection set"));
            }
        }
        Ok(())
    }

    fn check_against(&self, dataset: &Dataset, spec: &LossSpec) -> Result<()> {
        self.validate()?;
        if dataset.dimension() != self.dimension || spec.dimension != self.dimension {
            return Err(Error::config("dataset, loss and run config dimensions differ"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Learn,
    Retrain,
    Unlearn,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Learn => "learn",
            TrajectoryKind::Retrain => "retrain",
            TrajectoryKind::Unlearn => "unlearn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    /// `‖∇𝓛(θ)‖` on the trajectory's own dataset, before the step.
    pub grad_norm: f64,
    /// Batch indices into the trajectory's own dataset.
    pub batch: Vec<usize>,
}

/// One trajectory. Serialized as JSON with the fields below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub format_version: u32,
    pub kind: TrajectoryKind,
    pub replica: u64,
    /// Global time index of the first iterate (`T−K` for rewinding, `T` for descent).
    pub start_step: u64,
    pub steps: u64,
    pub iterate_stride: u64,
    /// `(local step, θ)` pairs kept under the recording policy.
    pub iterates: Vec<(u64, Vec<f64>)>,
    /// Iterate handed to unlearning: `θ_{T−K}` for R2D, `θ_T` for D2D.
    pub checkpoint: Option<Vec<f64>>,
    pub checkpoint_step: Option<u64>,
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub final_iterate: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostic>,
}

impl TrajectoryRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: Self = serde_json::from_str(s)?;
        if rec.format_version != TRAJECTORY_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported trajectory format version {}",
                rec.format_version
            )));
        }
        Ok(rec)
    }
}

/// In-place (projected) SGD step; `grad` is scratch space of length d.
#[allow(clippy::too_many_arguments)]
fn step_in_place(
    theta: &mut [f64],
    grad: &mut [f64],
    batch: &[usize],
    samples: &[Sample],
    spec: &LossSpec,
    eta: f64,
    projection: Option<&ProjectionSet>,
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let w = 1.0 / batch.len() as f64;
    for &i in batch {
        spec.family.add_grad(&samples[i], theta, w, grad);
    }
    for (t, g) in theta.iter_mut().zip(grad.iter()) {
        *t -= eta * g;
    }
    if let Some(p) = projection {
        p.project_in_place(theta);
    }
}

fn check_iterate(theta: &[f64], kind: TrajectoryKind, step: u64) -> Result<()> {
    if !all_finite(theta) {
        return Err(Error::NumericDivergence {
            trajectory: kind.name().into(),
            step,
            detail: "non-finite iterate".into(),
        });
    }
    let nrm = norm(theta);
    if nrm > DIVERGENCE_NORM {
        return Err(Error::NumericDivergence {
            trajectory: kind.name().into(),
            step,
            detail: format!("iterate norm {nrm:.3e} exceeds {DIVERGENCE_NORM:.0e}"),
        });
    }
    Ok(())
}

fn check_batch(batch: &BatchDraw, samples: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    if let Some(&i) = batch.indices.iter().find(|&&i| i >= samples.len()) {
        return Err(Error::config(format!("batch index {i} out of range ({} samples)", samples.len())));
    }
    Ok(())
}

/// `θ − η · (1/b) Σ_{i∈batch} ∇ℓ(z_i; θ)`.
pub fn step_sgd(theta: &[f64], batch: &BatchDraw, samples: &[Sample], spec: &LossSpec, eta: f64) -> Result<Vec<f64>> {
    check_batch(batch, samples)?;
    let mut out = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    step_in_place(&mut out, &mut grad, &batch.indices, samples, spec, eta, None);
    check_iterate(&out, TrajectoryKind::Learn, 1)?;
    Ok(out)
}

/// [`step_sgd`] followed by projection onto `projection`.
pub fn step_psgd(
    theta: &[f64],
    batch: &BatchDraw,
    samples: &[Sample],
    spec: &LossSpec,
    eta: f64,
    projection: &ProjectionSet,
) -> Result<Vec<f64>> {
    check_batch(batch, samples)?;
    let mut out = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    step_in_place(&mut out, &mut grad, &batch.indices, samples, spec, eta, Some(projection));
    check_iterate(&out, TrajectoryKind::Learn, 1)?;
    Ok(out)
}

/// Accumulates one trajectory under a recording policy.
struct Recorder<'a> {
    rec: TrajectoryRecord,
    samples: &'a [Sample],
    spec: &'a LossSpec,
    recording: Recording,
}

impl<'a> Recorder<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: TrajectoryKind,
        replica: u64,
        start_step: u64,
        steps: u64,
        theta0: &[f64],
        samples: &'a [Sample],
        spec: &'a LossSpec,
        recording: Recording,
    ) -> Self {
        let mut rec = TrajectoryRecord {
            format_version: TRAJECTORY_FORMAT_VERSION,
            kind,
            replica,
            start_step,
            steps,
            iterate_stride: recording.iterate_stride,
            iterates: Vec::new(),
            checkpoint: None,
            checkpoint_step: None,
            initial: theta0.to_vec(),
            final_iterate: theta0.to_vec(),
            diagnostics: Vec::new(),
        };
        if recording.iterate_stride > 0 {
            rec.iterates.push((0, theta0.to_vec()));
        }
        Self { rec, samples, spec, recording }
    }

    fn before_step(&mut self, theta: &[f64], batch: &[usize]) {
        if self.recording.diagnostics {
            self.rec.diagnostics.push(StepDiagnostic {
                grad_norm: norm(&full_gradient(self.samples, self.spec, theta)),
                batch: batch.to_vec(),
            });
        }
    }

    fn after_step(&mut self, theta: &[f64], local_step: u64) {
        let s = self.recording.iterate_stride;
        if s > 0 && (local_step.is_multiple_of(s) || local_step == self.rec.steps) {
            self.rec.iterates.push((local_step, theta.to_vec()));
        }
    }

    fn finish(mut self, theta: Vec<f64>) -> TrajectoryRecord {
        self.rec.final_iterate = theta;
        self.rec
    }
}

/// Precomputed retained data and index maps for a (dataset, request) pair,
/// shared by every replica.
pub struct CoupledProblem<'a> {
    cfg: &'a RunConfig,
    dataset: &'a Dataset,
    spec: &'a LossSpec,
    retained: Dataset,
    partition: Partition,
}

/// The three coupled trajectories of one replica and their distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub learn: TrajectoryRecord,
    pub retrain: TrajectoryRecord,
    pub unlearn: TrajectoryRecord,
    /// `‖θ_t − θ′_t‖` for `t = 0..=T`.
    pub dist_train_retrain: Vec<f64>,
    /// `‖θ′_T − θ″_K‖`.
    pub dist_final: f64,
}

impl<'a> CoupledProblem<'a> {
    pub fn new(cfg: &'a RunConfig, dataset: &'a Dataset, request: &UnlearnRequest, spec: &'a LossSpec) -> Result<Self> {
        cfg.check_against(dataset, spec)?;
        let retained = dataset.retain(request)?;
        Ok(Self { cfg, dataset, spec, retained, partition: request.partition() })
    }

    pub fn retained(&self) -> &Dataset {
        &self.retained
    }

    fn stream(&self, replica: u64) -> CouplingStream {
        CouplingStream::new(self.cfg.seed, replica)
    }

    fn train_batch(&self, stream: &CouplingStream, t: u64) -> Result<BatchDraw> {
        sample_batch(stream, Role::Train, self.dataset.len(), self.cfg.b, t)
    }

    fn retrain_batch(&self, stream: &CouplingStream, t: u64) -> Result<BatchDraw> {
        couple_batch(&self.train_batch(stream, t)?, &self.partition, stream, t)
    }

    fn checkpoint_step(&self) -> u64 {
        checkpoint_step(self.cfg)
    }

    pub fn learn(&self, replica: u64) -> Result<TrajectoryRecord> {
        learn_impl(self.cfg, self.dataset, self.spec, &self.stream(replica))
    }

    pub fn retrain(&self, replica: u64) -> Result<TrajectoryRecord> {
        let stream = self.stream(replica);
        let cfg = self.cfg;
        let samples = self.retained.samples();
        let mut rec = Recorder::new(TrajectoryKind::Retrain, replica, 0, cfg.t, &cfg.theta0, samples, self.spec, cfg.recording);
        let mut theta = cfg.theta0.clone();
        let mut grad = vec![0.0; cfg.dimension];
        for t in 0..cfg.t {
            let batch = self.retrain_batch(&stream, t)?;
            rec.before_step(&theta, &batch.indices);
            step_in_place(&mut theta, &mut grad, &batch.indices, samples, self.spec, cfg.eta, cfg.projection.as_ref());
            check_iterate(&theta, TrajectoryKind::Retrain, t + 1)?;
            rec.after_step(&theta, t + 1);
        }
        Ok(rec.finish(theta))
    }

    pub fn unlearn(&self, learn: &TrajectoryRecord) -> Result<TrajectoryRecord> {
        let cfg = self.cfg;
        let ck = self.checkpoint_step();
        let start = match (&learn.checkpoint, learn.checkpoint_step) {
            (Some(c), Some(s)) if s == ck && learn.kind == TrajectoryKind::Learn => c.clone(),
            _ => return Err(Error::State("learn record has no matching checkpoint".into())),
        };
        let stream = self.stream(learn.replica);
        let samples = self.retained.samples();
        let mut rec = Recorder::new(TrajectoryKind::Unlearn, learn.replica, ck, cfg.k, &start, samples, self.spec, cfg.recording);
        let mut theta = start;
        let mut grad = vec![0.0; cfg.dimension];
        for j in 0..cfg.k {
            let batch = match cfg.algorithm {
                // Same batches as the retrain trajectory over its last K steps.
                Algorithm::R2d => self.retrain_batch(&stream, ck + j)?,
                Algorithm::D2d => sample_batch(&stream, Role::Unlearn, samples.len(), cfg.b, j)?,
            };
            rec.before_step(&theta, &batch.indices);
            step_in_place(&mut theta, &mut grad, &batch.indices, samples, self.spec, cfg.eta, cfg.projection.as_ref());
            check_iterate(&theta, TrajectoryKind::Unlearn, ck + j + 1)?;
            rec.after_step(&theta, j + 1);
        }
        Ok(rec.finish(theta))
    }

    /// Runs learn and retrain in lockstep (recording `‖θ_t − θ′_t‖`), then unlearns.
    pub fn run(&self, replica: u64) -> Result<CoupledRun> {
        let stream = self.stream(replica);
        let cfg = self.cfg;
        let full = self.dataset.samples();
        let kept = self.retained.samples();
        let proj = cfg.projection.as_ref();
        let mut lrec = Recorder::new(TrajectoryKind::Learn, replica, 0, cfg.t, &cfg.theta0, full, self.spec, cfg.recording);
        let mut rrec = Recorder::new(TrajectoryKind::Retrain, replica, 0, cfg.t, &cfg.theta0, kept, self.spec, cfg.recording);
        let mut theta = cfg.theta0.clone();
        let mut theta_r = cfg.theta0.clone();
        let mut grad = vec![0.0; cfg.dimension];
        let ck = self.checkpoint_step();
        let mut checkpoint = if ck == 0 { Some(theta.clone()) } else { None };
        let mut dists = Vec::with_capacity(cfg.t as usize + 1);
        dists.push(0.0);
        for t in 0..cfg.t {
            let batch = self.train_batch(&stream, t)?;
            let coupled = couple_batch(&batch, &self.partition, &stream, t)?;
            lrec.before_step(&theta, &batch.indices);
            rrec.before_step(&theta_r, &coupled.indices);
            step_in_place(&mut theta, &mut grad, &batch.indices, full, self.spec, cfg.eta, proj);
            check_iterate(&theta, TrajectoryKind::Learn, t + 1)?;
            step_in_place(&mut theta_r, &mut grad, &coupled.indices, kept, self.spec, cfg.eta, proj);
            check_iterate(&theta_r, TrajectoryKind::Retrain, t + 1)?;
            lrec.after_step(&theta, t + 1);
            rrec.after_step(&theta_r, t + 1);
            if t + 1 == ck {
                checkpoint = Some(theta.clone());
            }
            dists.push(dist(&theta, &theta_r));
        }
        let mut learn = lrec.finish(theta);
        learn.checkpoint = checkpoint;
        learn.checkpoint_step = Some(ck);
        let retrain = rrec.finish(theta_r);
        let unlearn = self.unlearn(&learn)?;
        let dist_final = dist(&retrain.final_iterate, &unlearn.final_iterate);
        Ok(CoupledRun { learn, retrain, unlearn, dist_train_retrain: dists, dist_final })
    }
}

fn checkpoint_step(cfg: &RunConfig) -> u64 {
    match cfg.algorithm {
        Algorithm::R2d => cfg.t - cfg.k,
        Algorithm::D2d => cfg.t,
    }
}

fn learn_impl(cfg: &RunConfig, dataset: &Dataset, spec: &LossSpec, stream: &CouplingStream) -> Result<TrajectoryRecord> {
    let samples = dataset.samples();
    let replica = stream.replica;
    let mut rec = Recorder::new(TrajectoryKind::Learn, replica, 0, cfg.t, &cfg.theta0, samples, spec, cfg.recording);
    let mut theta = cfg.theta0.clone();
    let mut grad = vec![0.0; cfg.dimension];
    let ck = checkpoint_step(cfg);
    let mut checkpoint = if ck == 0 { Some(theta.clone()) } else { None };
    for t in 0..cfg.t {
        let batch = sample_batch(stream, Role::Train, samples.len(), cfg.b, t)?;
        rec.before_step(&theta, &batch.indices);
        step_in_place(&mut theta, &mut grad, &batch.indices, samples, spec, cfg.eta, cfg.projection.as_ref());
        check_iterate(&theta, TrajectoryKind::Learn, t + 1)?;
        rec.after_step(&theta, t + 1);
        if t + 1 == ck {
            checkpoint = Some(theta.clone());
        }
    }
    let mut out = rec.finish(theta);
    out.checkpoint = checkpoint;
    out.checkpoint_step = Some(ck);
    Ok(out)
}

/// `T` steps on `𝓛_𝒟` from `θ₀`, keeping the unlearning checkpoint.
pub fn run_learn(cfg: &RunConfig, dataset: &Dataset, spec: &LossSpec, stream: &CouplingStream) -> Result<TrajectoryRecord> {
    cfg.check_against(dataset, spec)?;
    learn_impl(cfg, dataset, spec, stream)
}

/// `T` steps on `𝓛_{𝒟′}` from `θ₀`, batches coupled to [`run_learn`]'s.
pub fn run_retrain(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    stream: &CouplingStream,
) -> Result<TrajectoryRecord> {
    let mut c = cfg.clone();
    c.seed = stream.master_seed;
    CoupledProblem::new(&c, dataset, request, spec)?.retrain(stream.replica)
}

/// `K` unlearning steps on `𝓛_{𝒟′}` starting from `learn`'s checkpoint.
pub fn run_unlearn(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    stream: &CouplingStream,
    learn: &TrajectoryRecord,
) -> Result<TrajectoryRecord> {
    if learn.replica != stream.replica {
        return Err(Error::State("learn record belongs to a different replica".into()));
    }
    let mut c = cfg.clone();
    c.seed = stream.master_seed;
    CoupledProblem::new(&c, dataset, request, spec)?.unlearn(learn)
}

/// Learn, retrain and unlearn for one replica under `cfg.seed`.
pub fn run_coupled_triple(
    cfg: &RunConfig,
    dataset: &Dataset,
    request: &UnlearnRequest,
    spec: &LossSpec,
    replica: u64,
) -> Result<CoupledRun> {
    CoupledProblem::new(cfg, dataset, request, spec)?.run(replica)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{certified_constants, LossFamily};

    fn quad_setup(n: usize, d: usize) -> (Dataset, LossSpec) {
        let f = LossFamily::Quadratic;
        let ds = Dataset::synthetic(&f, n, d, 1.0, 5).unwrap();
        let spec = certified_constants(f, d, 1.0, None, &vec![0.0; d]).unwrap();
        (ds, spec)
    }

    fn cfg(d: usize, t: u64, k: u64, b: usize) -> RunConfig {
        RunConfig {
            eta: 0.1,
            t,
            k,
            b,
            dimension: d,
            projection: None,
            algorithm: Algorithm::R2d,
            seed: 17,
            theta0: vec![0.5; d],
            recording: Recording::default(),
        }
    }

    #[test]
    fn step_arithmetic() {
        // Quadratic gradient at θ with a single sample z is θ − z, so choose z
        // to realize the estimator (0.5, −0.5) at θ = (1, 1).
        let f = LossFamily::Quadratic;
        let spec = certified_constants(f, 2, 2.0, None, &[0.0; 2]).unwrap();
        let samples = vec![Sample::point(vec![0.5, 1.5])];
        let batch = BatchDraw { indices: vec![0] };
        let out = step_sgd(&[1.0, 1.0], &batch, &samples, &spec, 0.1).unwrap();
        assert!((out[0] - 0.95).abs() < 1e-15 && (out[1] - 1.05).abs() < 1e-15);
        assert_eq!(step_sgd(&[1.0, 1.0], &batch, &samples, &spec, 0.0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(step_sgd(&[0.5, 1.5], &batch, &samples, &spec, 0.3).unwrap(), vec![0.5, 1.5]);
    }

    #[test]
    fn psgd_projects() {
        let spec = certified_constants(LossFamily::Quadratic, 2, 4.0, None, &[0.0; 2]).unwrap();
        let ball = ProjectionSet::centered(2, 1.0).unwrap();
        let samples = vec![Sample::point(vec![3.0, 0.0])];
        let batch = BatchDraw { indices: vec![0] };
        assert_eq!(step_psgd(&[0.0, 0.0], &batch, &samples, &spec, 1.0, &ball).unwrap(), vec![1.0, 0.0]);
        let inside = step_psgd(&[0.0, 0.0], &batch, &samples, &spec, 0.1, &ball).unwrap();
        assert!((inside[0] - 0.3).abs() < 1e-15 && inside[1] == 0.0);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let f = LossFamily::Quadratic;
        let spec = certified_constants(f, 1, 1.0, None, &[0.0]).unwrap();
        let ds = Dataset::new(vec![Sample::point(vec![1.0]), Sample::point(vec![-1.0])], &f, 1, 1.0).unwrap();
        let mut c = cfg(1, 500, 0, 1);
        c.eta = 5.0;
        let e = run_learn(&c, &ds, &spec, &CouplingStream::new(1, 0)).unwrap_err();
        match e {
            Error::NumericDivergence { step, trajectory, .. } => {
                assert_eq!(trajectory, "learn");
                assert!(step > 1 && step <= 500);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn t_zero_and_determinism() {
        let (ds, spec) = quad_setup(20, 3);
        let s = CouplingStream::new(17, 2);
        let r0 = run_learn(&cfg(3, 0, 0, 4), &ds, &spec, &s).unwrap();
        assert_eq!(r0.final_iterate, vec![0.5; 3]);
        let c = cfg(3, 30, 10, 4);
        assert_eq!(run_learn(&c, &ds, &spec, &s).unwrap(), run_learn(&c, &ds, &spec, &s).unwrap());
    }

    #[test]
    fn full_batch_quadratic_follows_closed_form() {
        // With b = n the batch is still drawn with replacement, so use a
        // dataset of identical points: every batch gradient is exact.
        let f = LossFamily::Quadratic;
        let spec = certified_constants(f, 1, 1.0, None, &[0.0]).unwrap();
        let ds = Dataset::new(vec![Sample::point(vec![0.4]); 10], &f, 1, 1.0).unwrap();
        let mut c = cfg(1, 25, 0, 10);
        c.theta0 = vec![-1.0];
        c.recording.iterate_stride = 1;
        let r = run_learn(&c, &ds, &spec, &CouplingStream::new(3, 0)).unwrap();
        for (t, th) in &r.iterates {
            let oracle = 0.4 + (-1.0 - 0.4) * 0.9f64.powi(*t as i32);
            assert!((th[0] - oracle).abs() < 1e-12);
        }
        assert_eq!(r.iterates.len(), 26);
    }

    #[test]
    fn separate_runs_match_coupled_triple() {
        let (ds, spec) = quad_setup(30, 2);
        let req = UnlearnRequest::first_m(30, 4).unwrap();
        let mut c = cfg(2, 40, 15, 5);
        c.recording = Recording { iterate_stride: 5, diagnostics: true };
        let trip = run_coupled_triple(&c, &ds, &req, &spec, 9).unwrap();
        let s = CouplingStream::new(c.seed, 9);
        let learn = run_learn(&c, &ds, &spec, &s).unwrap();
        assert_eq!(learn, trip.learn);
        assert_eq!(run_retrain(&c, &ds, &req, &spec, &s).unwrap(), trip.retrain);
        assert_eq!(run_unlearn(&c, &ds, &req, &spec, &s, &learn).unwrap(), trip.unlearn);
        assert_eq!(trip.unlearn.initial, learn.checkpoint.clone().unwrap());
        let (_, ck_iter) = learn.iterates.iter().find(|(t, _)| *t == 25).unwrap();
        assert_eq!(Some(ck_iter), learn.checkpoint.as_ref());
        assert_eq!(trip.dist_train_retrain[0], 0.0);
        assert_eq!(trip.dist_train_retrain.len(), 41);
    }

    #[test]
    fn rewind_identities() {
        let (ds, spec) = quad_setup(30, 2);
        let req = UnlearnRequest::first_m(30, 3).unwrap();
        // K = T: the unlearn trajectory is the retrain trajectory.
        let trip = run_coupled_triple(&cfg(2, 20, 20, 4), &ds, &req, &spec, 0).unwrap();
        assert_eq!(trip.dist_final, 0.0);
        // K = 0: final equals θ_T.
        let trip = run_coupled_triple(&cfg(2, 20, 0, 4), &ds, &req, &spec, 0).unwrap();
        assert_eq!(trip.unlearn.final_iterate, trip.learn.final_iterate);
    }

    #[test]
    fn no_effect_request_gives_identical_trajectories() {
        // Removing a duplicate of a retained sample changes nothing when the
        // removed index is never drawn: pick T small and check the draws.
        let (ds, spec) = quad_setup(50, 2);
        let c = cfg(2, 3, 1, 1);
        let s = CouplingStream::new(c.seed, 0);
        let drawn: std::collections::BTreeSet<usize> = (0..3)
            .flat_map(|t| sample_batch(&s, Role::Train, 50, 1, t).unwrap().indices)
            .collect();
        let unused = (0..50).find(|i| !drawn.contains(i)).unwrap();
        let req = UnlearnRequest::new(vec![unused], 50).unwrap();
        let trip = run_coupled_triple(&c, &ds, &req, &spec, 0).unwrap();
        assert!(trip.dist_train_retrain.iter().all(|&d| d == 0.0));
        assert_eq!(trip.dist_final, 0.0);
        assert_eq!(trip.retrain.final_iterate, trip.learn.final_iterate);
    }

    #[test]
    fn d2d_starts_from_final_iterate() {
        let (ds, spec) = quad_setup(30, 2);
        let req = UnlearnRequest::first_m(30, 3).unwrap();
        let mut c = cfg(2, 20, 5, 4);
        c.algorithm = Algorithm::D2d;
        let trip = run_coupled_triple(&c, &ds, &req, &spec, 1).unwrap();
        assert_eq!(trip.unlearn.initial, trip.learn.final_iterate);
        assert_eq!(trip.unlearn.start_step, 20);
    }

    #[test]
    fn psgd_iterates_stay_in_ball() {
        let f = LossFamily::Logistic;
        let ds = Dataset::synthetic(&f, 40, 3, 1.0, 2).unwrap();
        let ball = ProjectionSet::centered(3, 0.5).unwrap();
        let spec = certified_constants(f, 3, 1.0, Some(&ball), &[0.0; 3]).unwrap();
        let req = UnlearnRequest::first_m(40, 4).unwrap();
        let mut c = cfg(3, 60, 20, 4);
        c.eta = 1.0;
        c.theta0 = vec![0.0; 3];
        c.projection = Some(ball.clone());
        c.recording.iterate_stride = 1;
        let trip = run_coupled_triple(&c, &ds, &req, &spec, 0).unwrap();
        for rec in [&trip.learn, &trip.retrain, &trip.unlearn] {
            assert!(rec.iterates.iter().all(|(_, th)| ball.contains(th)));
        }
    }

    #[test]
    fn missing_checkpoint_is_state_error() {
        let (ds, spec) = quad_setup(10, 1);
        let req = UnlearnRequest::first_m(10, 1).unwrap();
        let c = cfg(1, 5, 2, 2);
        let s = CouplingStream::new(c.seed, 0);
        let mut learn = run_learn(&c, &ds, &spec, &s).unwrap();
        learn.checkpoint = None;
        assert!(matches!(run_unlearn(&c, &ds, &req, &spec, &s, &learn), Err(Error::State(_))));
    }

    #[test]
    fn record_json_round_trip() {
        let (ds, spec) = quad_setup(10, 2);
        let mut c = cfg(2, 6, 2, 2);
        c.recording = Recording { iterate_stride: 2, diagnostics: true };
        let r = run_learn(&c, &ds, &spec, &CouplingStream::new(1, 0)).unwrap();
        let back = TrajectoryRecord::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.diagnostics.len(), 6);
    }
}
