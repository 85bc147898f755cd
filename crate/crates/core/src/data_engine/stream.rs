//! Counter-based keyed randomness and the slot-wise batch coupling.
//!
//! Every random draw is a pure function of `(master_seed, replica, role, step,
//! slot)`. A key is expanded into a ChaCha8 seed, so identical keys reproduce
//! identical draws and different keys give independent streams, whatever order
//! replicas are scheduled in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Partition;
use crate::error::{Error, Result};

/// What a random draw is used for. Part of every stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Mini-batches of the learning trajectory on the full dataset.
    Train,
    /// Replacement draws for coupled retrain slots whose sample was removed.
    Retrain,
    /// Fresh mini-batches for descent-style unlearning on the retained data.
    Unlearn,
    /// Output perturbation noise.
    Noise,
    /// Synthetic data generation and random unlearning requests.
    Synth,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Train => 1,
            Role::Retrain => 2,
            Role::Unlearn => 3,
            Role::Noise => 4,
            Role::Synth => 5,
        }
    }
}

/// Whole-step keys use this slot so they never collide with per-slot keys.
const WHOLE_STEP: u64 = (1 << 56) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CouplingStream {
    pub master_seed: u64,
    pub replica: u64,
}

impl CouplingStream {
    pub fn new(master_seed: u64, replica: u64) -> Self {
        Self { master_seed, replica }
    }

    /// Generator for one `(role, step, slot)` key.
    pub fn rng(&self, role: Role, step: u64, slot: u64) -> ChaCha8Rng {
        debug_assert!(slot <= WHOLE_STEP);
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.replica.to_le_bytes());
        seed[16..24].copy_from_slice(&step.to_le_bytes());
        seed[24..].copy_from_slice(&((role.tag() << 56) | slot).to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Generator for a whole step; used where one stream feeds every slot in order.
    pub fn step_rng(&self, role: Role, step: u64) -> ChaCha8Rng {
        self.rng(role, step, WHOLE_STEP)
    }
}

/// Indices of one mini-batch, drawn with replacement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDraw {
    pub indices: Vec<usize>,
}

impl BatchDraw {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `b` i.i.d. uniform indices in `[0, source_size)`, keyed by `(role, t)`.
/// Slot `i` is the `i`-th draw of the step stream.
pub fn sample_batch(
    stream: &CouplingStream,
    role: Role,
    source_size: usize,
    b: usize,
    t: u64,
) -> Result<BatchDraw> {
    if b == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if source_size == 0 {
        return Err(Error::config("cannot sample a batch from an empty dataset"));
    }
    let mut rng = stream.step_rng(role, t);
    let indices = (0..b).map(|_| rng.random_range(0..source_size)).collect();
    Ok(BatchDraw { indices })
}

/// Maps a batch over the full dataset to a batch over the retained data.
///
/// Slot `i` keeps its sample when that sample is retained (re-indexed to its
/// position in the retained set); otherwise it is redrawn uniformly from the
/// retained set with the slot's own `(Retrain, t, i)` stream. The output is
/// exactly i.i.d. uniform over the retained data.
pub fn couple_batch(
    draw_full: &BatchDraw,
    partition: &Partition,
    stream: &CouplingStream,
    t: u64,
) -> Result<BatchDraw> {
    let n_retained = partition.retained.len();
    if n_retained == 0 {
        return Err(Error::config("unlearning request removes every sample"));
    }
    let mut indices = Vec::with_capacity(draw_full.len());
    for (slot, &i) in draw_full.indices.iter().enumerate() {
        let pos = match partition.position.get(i) {
            Some(Some(p)) => *p,
            Some(None) => stream
                .rng(Role::Retrain, t, slot as u64)
                .random_range(0..n_retained),
            None => {
                return Err(Error::config(format!(
                    "batch index {i} out of range for dataset of size {}",
                    partition.position.len()
                )))
            }
        };
        indices.push(pos);
    }
    Ok(BatchDraw { indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_engine::UnlearnRequest;

    /// Per-index counts within 4 binomial standard deviations, and the
    /// Pearson statistic below its 1e-6 upper quantile.
    fn assert_uniform(counts: &[u64], total: u64) {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let k = counts.len() as f64;
        let p = 1.0 / k;
        let mean = total as f64 * p;
        let sd = (total as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in counts {
            let dev = c as f64 - mean;
            assert!(dev.abs() <= 4.0 * sd, "count {c} vs expected {mean} (sd {sd})");
            chi2 += dev * dev / mean;
        }
        let crit = ChiSquared::new(k - 1.0).unwrap().inverse_cdf(1.0 - 1e-6);
        assert!(chi2 <= crit, "chi-square {chi2} above {crit}");
    }

    #[test]
    fn single_source_batch_is_all_zero() {
        let s = CouplingStream::new(1, 0);
        assert_eq!(sample_batch(&s, Role::Train, 1, 3, 0).unwrap().indices, vec![0, 0, 0]);
    }

    #[test]
    fn same_key_same_draw() {
        let s = CouplingStream::new(42, 7);
        let a = sample_batch(&s, Role::Train, 100, 16, 5).unwrap();
        let b = sample_batch(&s, Role::Train, 100, 16, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_batch(&s, Role::Train, 100, 16, 6).unwrap();
        assert_ne!(a, c);
        let d = sample_batch(&CouplingStream::new(42, 8), Role::Train, 100, 16, 5).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn invalid_batch_requests() {
        let s = CouplingStream::new(1, 0);
        assert!(matches!(sample_batch(&s, Role::Train, 10, 0, 0), Err(Error::Config(_))));
        assert!(matches!(sample_batch(&s, Role::Train, 0, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn sample_batch_is_uniform() {
        let n = 50;
        let mut counts = vec![0u64; n];
        let s = CouplingStream::new(2024, 0);
        let steps = 10_000u64;
        for t in 0..steps {
            for i in sample_batch(&s, Role::Train, n, 100, t).unwrap().indices {
                counts[i] += 1;
            }
        }
        assert_uniform(&counts, steps * 100);
    }

    #[test]
    fn coupling_keeps_retained_slots() {
        let req = UnlearnRequest::new(vec![8, 9], 10).unwrap();
        let part = req.partition();
        let s = CouplingStream::new(3, 0);
        let draw = BatchDraw { indices: vec![0, 3, 7, 1] };
        let coupled = couple_batch(&draw, &part, &s, 0).unwrap();
        assert_eq!(coupled, draw);
    }

    #[test]
    fn coupling_redraws_removed_slots() {
        let req = UnlearnRequest::new(vec![0, 1], 4).unwrap();
        let part = req.partition();
        let s = CouplingStream::new(3, 0);
        let draw = BatchDraw { indices: vec![0, 1, 0, 1, 0] };
        let coupled = couple_batch(&draw, &part, &s, 9).unwrap();
        assert!(coupled.indices.iter().all(|&i| i < 2));
    }

    #[test]
    fn coupled_marginal_is_uniform_and_disagreement_rate_is_m_over_n() {
        let (n, m) = (40usize, 8usize);
        let req = UnlearnRequest::new((0..m).map(|i| 3 * i + 1).collect(), n).unwrap();
        let part = req.partition();
        let s = CouplingStream::new(77, 1);
        let mut counts = vec![0u64; n - m];
        let mut differ = 0u64;
        let steps = 10_000u64;
        let b = 100;
        for t in 0..steps {
            let full = sample_batch(&s, Role::Train, n, b, t).unwrap();
            let coupled = couple_batch(&full, &part, &s, t).unwrap();
            for (&i, &j) in full.indices.iter().zip(&coupled.indices) {
                counts[j] += 1;
                if part.retained[j] != i {
                    differ += 1;
                }
            }
        }
        let total = steps * b as u64;
        assert_uniform(&counts, total);
        let p = m as f64 / n as f64;
        let sd = (total as f64 * p * (1.0 - p)).sqrt();
        assert!((differ as f64 - total as f64 * p).abs() <= 4.0 * sd);
    }
}
