use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::SampleId;
use crate::surrogate::mix_seed;

/// Where a minibatch sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// Cached on this owner shard.
    Shard(usize),
    /// Not cached: read from this bundle file.
    File(usize),
}

/// Move one sample to the shard that consumes it this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub sample: SampleId,
    pub from: Source,
    pub to: usize,
}

impl Transfer {
    /// True when the sample crosses between two different shards.
    pub fn is_remote(&self) -> bool {
        matches!(self.from, Source::Shard(s) if s != self.to)
    }
}

/// One epoch's seeded permutation, its minibatch slicing, and the transfer
/// lists realizing each minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub epoch: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub n_shards: usize,
    pub permutation: Vec<SampleId>,
    /// `transfers[step]`, ordered by consumer shard then minibatch position.
    pub transfers: Vec<Vec<Transfer>>,
}

impl EpochPlan {
    pub fn num_steps(&self) -> usize {
        self.permutation.len().div_ceil(self.batch_size)
    }

    /// Sample ids of minibatch `step`; the last one may be short.
    pub fn slice(&self, step: usize) -> &[SampleId] {
        let start = step * self.batch_size;
        let end = (start + self.batch_size).min(self.permutation.len());
        &self.permutation[start..end]
    }

    pub fn slices(&self) -> impl Iterator<Item = &[SampleId]> {
        self.permutation.chunks(self.batch_size)
    }

    /// Positions within minibatch `step` consumed by each shard.
    pub fn consumer_ranges(&self, step: usize) -> Vec<Range<usize>> {
        split_even(self.slice(step).len(), self.n_shards)
    }
}

/// Splits `n` items into `parts` contiguous ranges whose sizes differ by at
/// most one, larger ranges first.
pub fn split_even(n: usize, parts: usize) -> Vec<Range<usize>> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Seeded permutation of `ids` for one epoch.
pub fn epoch_permutation(ids: &[SampleId], seed: u64, epoch: u64) -> Vec<SampleId> {
    let mut perm = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));
    perm.shuffle(&mut rng);
    perm
}
