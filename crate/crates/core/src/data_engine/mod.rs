//! Datasets, unlearning requests, batch sampling and exact full-gradient
//! quantities (losses, bias, chi-square divergence).

mod stream;

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_zoo::{uniform_in_ball, LossFamily, LossSpec, Sample};
use crate::vector::{dot, norm, sigmoid};

pub use stream::{couple_batch, sample_batch, BatchDraw, CouplingStream, Role};

/// An ordered list of samples inside the data-domain ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    dimension: usize,
    data_radius: f64,
}

impl Dataset {
    /// Validates every sample against the family's data domain.
    pub fn new(samples: Vec<Sample>, family: &LossFamily, dimension: usize, data_radius: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        for (i, z) in samples.iter().enumerate() {
            family
                .check_sample(z, dimension, data_radius)
                .map_err(|e| Error::config(format!("sample {i}: {e}")))?;
        }
        Ok(Self { samples, dimension, data_radius })
    }

    /// Loads one sample per row: `d` feature columns followed by a label column.
    /// The label column may be omitted for the quadratic family. A first row
    /// that does not parse as numbers is treated as a header.
    pub fn from_csv(path: &Path, family: &LossFamily, dimension: usize, data_radius: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut samples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let values: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match values {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => return Err(Error::config(format!("row {}: {e}", row + 1))),
            };
            let quadratic = matches!(family, LossFamily::Quadratic);
            let sample = if values.len() == dimension + 1 {
                Sample::new(values[..dimension].to_vec(), values[dimension])
            } else if quadratic && values.len() == dimension {
                Sample::point(values)
            } else {
                return Err(Error::config(format!(
                    "row {}: expected {} columns, found {}",
                    row + 1,
                    dimension + 1,
                    values.len()
                )));
            };
            samples.push(sample);
        }
        Self::new(samples, family, dimension, data_radius)
    }

    /// Seeded synthetic data. Features are uniform in the data ball; labels
    /// follow a planted model for the classification families.
    pub fn synthetic(family: &LossFamily, n: usize, dimension: usize, data_radius: f64, seed: u64) -> Result<Self> {
        if n == 0 || dimension == 0 {
            return Err(Error::config("synthetic dataset needs n >= 1 and d >= 1"));
        }
        if !(data_radius > 0.0 && data_radius.is_finite()) {
            return Err(Error::config("data radius must be positive and finite"));
        }
        let mut rng = CouplingStream::new(seed, 0).step_rng(Role::Synth, 0);
        let planted = uniform_in_ball(&mut rng, dimension, 1.0);
        let w: Vec<f64> = planted.iter().map(|v| v * 4.0 / data_radius).collect();
        let samples = (0..n)
            .map(|_| {
                let x = uniform_in_ball(&mut rng, dimension, data_radius);
                let p = sigmoid(dot(&w, &x));
                let y = match family {
                    LossFamily::Quadratic => 0.0,
                    LossFamily::RidgeLogistic { .. } | LossFamily::Logistic => {
                        if rng.random::<f64>() < p {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    LossFamily::SmoothNonconvex => (p + 0.1 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0),
                };
                Sample::new(x, y)
            })
            .collect();
        Self::new(samples, family, dimension, data_radius)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn data_radius(&self) -> f64 {
        self.data_radius
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// The retained dataset `𝒟′ = 𝒟 ∖ Z`, in original order.
    pub fn retain(&self, request: &UnlearnRequest) -> Result<Dataset> {
        request.check_against(self.len())?;
        let part = request.partition();
        Ok(Dataset {
            samples: part.retained.iter().map(|&i| self.samples[i].clone()).collect(),
            dimension: self.dimension,
            data_radius: self.data_radius,
        })
    }
}

/// How the `m` removed indices are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Selection {
    FirstM { m: usize },
    RandomSeeded { m: usize, seed: u64 },
    ExplicitIndices { indices: Vec<usize> },
}

impl Selection {
    pub fn resolve(&self, n: usize) -> Result<UnlearnRequest> {
        match self {
            Selection::FirstM { m } => UnlearnRequest::first_m(n, *m),
            Selection::RandomSeeded { m, seed } => UnlearnRequest::random_seeded(n, *m, *seed),
            Selection::ExplicitIndices { indices } => UnlearnRequest::new(indices.clone(), n),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Selection::FirstM { m } | Selection::RandomSeeded { m, .. } => *m,
            Selection::ExplicitIndices { indices } => indices.len(),
        }
    }
}

/// A set of `m` distinct indices to delete from a dataset of size `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    indices: Vec<usize>,
    n: usize,
}

/// Index bookkeeping for `𝒟′`: `retained[j]` is the original index of the
/// `j`-th retained sample and `position[i]` its inverse (`None` if removed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub retained: Vec<usize>,
    pub position: Vec<Option<usize>>,
}

impl UnlearnRequest {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        let before = indices.len();
        indices.dedup();
        if indices.len() != before {
            return Err(Error::config("unlearning request contains duplicate indices"));
        }
        let m = indices.len();
        if m == 0 {
            return Err(Error::config("unlearning request must remove at least one sample"));
        }
        if m >= n {
            return Err(Error::config(format!(
                "unlearning request must keep at least one sample (m = {m}, n = {n})"
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::config(format!("index {bad} out of range for n = {n}")));
        }
        Ok(Self { indices, n })
    }

    pub fn first_m(n: usize, m: usize) -> Result<Self> {
        Self::new((0..m).collect(), n)
    }

    pub fn random_seeded(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || m >= n {
            return Err(Error::config(format!("need 0 < m < n, got m = {m}, n = {n}")));
        }
        let mut rng = CouplingStream::new(seed, 0).step_rng(Role::Synth, 1);
        Self::new(index::sample(&mut rng, n, m).into_vec(), n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn check_against(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(Error::config(format!(
                "request built for n = {}, dataset has {n} samples",
                self.n
            )));
        }
        Ok(())
    }

    pub fn partition(&self) -> Partition {
        let mut position = vec![None; self.n];
        let mut retained = Vec::with_capacity(self.n - self.m());
        let mut removed = self.indices.iter().peekable();
        for (i, slot) in position.iter_mut().enumerate() {
            if removed.peek() == Some(&&i) {
                removed.next();
            } else {
                *slot = Some(retained.len());
                retained.push(i);
            }
        }
        Partition { retained, position }
    }
}

/// `∇𝓛(θ) = (1/n) Σ ∇ℓ(z_i; θ)`.
pub fn full_gradient(samples: &[Sample], spec: &LossSpec, theta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let w = 1.0 / samples.len() as f64;
    for z in samples {
        spec.family.add_grad(z, theta, w, &mut g);
    }
    g
}

/// `𝓛(θ) = (1/n) Σ ℓ(z_i; θ)`.
pub fn empirical_loss(samples: &[Sample], spec: &LossSpec, theta: &[f64]) -> f64 {
    samples.iter().map(|z| spec.family.loss(z, theta)).sum::<f64>() / samples.len() as f64
}

/// `∇𝓛_{𝒟′}(θ) − ∇𝓛_𝒟(θ)`, computed exactly.
pub fn unlearning_bias(dataset: &Dataset, request: &UnlearnRequest, spec: &LossSpec, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != dataset.dimension() || !crate::vector::all_finite(theta) {
        return Err(Error::domain("theta must be finite with the dataset dimension"));
    }
    let retained = dataset.retain(request)?;
    let g_full = full_gradient(dataset.samples(), spec, theta);
    let g_ret = full_gradient(retained.samples(), spec, theta);
    Ok(crate::vector::sub(&g_ret, &g_full))
}

/// Chi-square divergence `m/(n−m)` between the retained and full empirical
/// distributions.
pub fn chi_square_empirical(n: usize, m: usize) -> Result<f64> {
    if m == 0 || m >= n {
        return Err(Error::config(format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    Ok(m as f64 / (n - m) as f64)
}

/// Mean squared per-sample gradient norm over the dataset.
pub fn mean_sq_grad_norm(samples: &[Sample], spec: &LossSpec, theta: &[f64]) -> f64 {
    samples
        .iter()
        .map(|z| norm(&spec.family.grad(z, theta)).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}
