use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datastore::plan::{epoch_permutation, split_even};
use crate::datastore::{BundleCatalog, EpochPlan, SampleId, Source, Transfer};
use crate::error::{Error, Result};
use crate::synthdata::SampleRecord;

/// How a trainer ingests samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreMode {
    /// No cache: every minibatch sample is read from its file.
    None,
    /// Cache samples on first use.
    Dynamic,
    /// Load the whole partition before training.
    Preload,
}

impl std::str::FromStr for StoreMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(StoreMode::None),
            "dynamic" => Ok(StoreMode::Dynamic),
            "preload" => Ok(StoreMode::Preload),
            _ => Err(format!(
                "unknown data-store mode {s:?} (none|dynamic|preload)"
            )),
        }
    }
}

impl std::fmt::Display for StoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StoreMode::None => "none",
            StoreMode::Dynamic => "dynamic",
            StoreMode::Preload => "preload",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochCounters {
    pub epoch: u64,
    pub files_opened: u64,
    pub bytes_read: u64,
    pub samples_shuffled: u64,
}

/// File-access and shuffle accounting. All counters only grow.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessCounters {
    pub files_opened: u64,
    pub bytes_read: u64,
    /// Samples moved from an owner shard to a different consumer shard.
    pub samples_shuffled: u64,
    /// Opens per bundle file index.
    pub file_opens: Vec<u64>,
    /// Shards that opened each bundle file.
    pub file_openers: Vec<BTreeSet<usize>>,
    /// Deltas per completed epoch.
    pub per_epoch: Vec<EpochCounters>,
    mark: EpochCounters,
}

impl AccessCounters {
    fn new(files: usize) -> Self {
        Self {
            file_opens: vec![0; files],
            file_openers: vec![BTreeSet::new(); files],
            ..Default::default()
        }
    }

    fn record_open(&mut self, file: usize, shard: usize, bytes: u64) {
        self.files_opened += 1;
        self.bytes_read += bytes;
        self.file_opens[file] += 1;
        self.file_openers[file].insert(shard);
    }

    /// Opens/bytes/shuffles since the last epoch mark.
    pub fn since_mark(&self) -> EpochCounters {
        EpochCounters {
            epoch: self.mark.epoch,
            files_opened: self.files_opened - self.mark.files_opened,
            bytes_read: self.bytes_read - self.mark.bytes_read,
            samples_shuffled: self.samples_shuffled - self.mark.samples_shuffled,
        }
    }

    fn close_epoch(&mut self, next_epoch: u64) -> EpochCounters {
        let delta = self.since_mark();
        self.per_epoch.push(delta);
        self.mark = EpochCounters {
            epoch: next_epoch,
            files_opened: self.files_opened,
            bytes_read: self.bytes_read,
            samples_shuffled: self.samples_shuffled,
        };
        delta
    }
}

/// File index, bytes read, and the wanted samples it held.
type FileLoad = (usize, u64, Vec<(SampleId, SampleRecord)>);

/// The samples each consumer shard holds for one step.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub step: usize,
    pub parts: Vec<Vec<(SampleId, Arc<SampleRecord>)>>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.parts.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.parts.iter().flatten().map(|(id, _)| *id)
    }
}

type ShardCache = HashMap<SampleId, Arc<SampleRecord>>;

/// Owner-sharded in-memory cache over one trainer's data partition.
#[derive(Debug, Clone)]
pub struct DataStore {
    catalog: Arc<BundleCatalog>,
    mode: StoreMode,
    partition: Vec<SampleId>,
    shards: Vec<ShardCache>,
    owner: HashMap<SampleId, usize>,
    next_owner: usize,
    cached_bytes: u64,
    budget: Option<u64>,
    counters: AccessCounters,
}

impl DataStore {
    pub fn new(
        catalog: Arc<BundleCatalog>,
        partition: Vec<SampleId>,
        n_shards: usize,
        mode: StoreMode,
        budget_bytes: Option<u64>,
    ) -> Result<Self> {
        if n_shards == 0 {
            return Err(Error::Contract(
                "a data store needs at least one shard".into(),
            ));
        }
        for &id in &partition {
            catalog.locate(id)?;
        }
        let files = catalog.files().len();
        Ok(Self {
            catalog,
            mode,
            partition,
            shards: vec![ShardCache::new(); n_shards],
            owner: HashMap::new(),
            next_owner: 0,
            cached_bytes: 0,
            budget: budget_bytes,
            counters: AccessCounters::new(files),
        })
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn partition(&self) -> &[SampleId] {
        &self.partition
    }

    pub fn catalog(&self) -> &Arc<BundleCatalog> {
        &self.catalog
    }

    pub fn counters(&self) -> &AccessCounters {
        &self.counters
    }

    fn record_bytes(&self) -> u64 {
        self.catalog.stride() as u64
    }

    /// Bytes the whole partition occupies when cached.
    pub fn required_bytes(&self) -> u64 {
        self.partition.len() as u64 * self.record_bytes()
    }

    pub fn owner_of(&self, id: SampleId) -> Option<usize> {
        self.owner.get(&id).copied()
    }

    pub fn shard_ids(&self, shard: usize) -> BTreeSet<SampleId> {
        self.shards[shard].keys().copied().collect()
    }

    pub fn cached_ids(&self) -> BTreeSet<SampleId> {
        self.owner.keys().copied().collect()
    }

    pub fn cached_record(&self, id: SampleId) -> Option<&Arc<SampleRecord>> {
        self.owner_of(id).and_then(|s| self.shards[s].get(&id))
    }

    fn check_budget(&self, extra: u64) -> Result<()> {
        if let Some(b) = self.budget {
            if self.cached_bytes + extra > b {
                return Err(Error::Capacity {
                    required: self.cached_bytes + extra,
                    available: b,
                });
            }
        }
        Ok(())
    }

    /// Loads the whole partition. Files holding partition samples are dealt
    /// round-robin to shards in file order; each file is opened exactly once,
    /// by its shard, which caches the partition samples it contains.
    ///
    /// Fails without touching the store when the partition exceeds the
    /// memory budget.
    pub fn preload(&mut self) -> Result<()> {
        if self.mode != StoreMode::Preload {
            return Err(Error::Contract(format!(
                "preload called on a {} store",
                self.mode
            )));
        }
        let needed = self.required_bytes();
        if let Some(b) = self.budget {
            if needed > b {
                return Err(Error::Capacity {
                    required: needed,
                    available: b,
                });
            }
        }
        let mut wanted: Vec<BTreeSet<SampleId>> = vec![BTreeSet::new(); self.catalog.files().len()];
        for &id in &self.partition {
            let (f, _) = self.catalog.locate(id)?;
            wanted[f].insert(id);
        }
        let files: Vec<usize> = (0..wanted.len())
            .filter(|&f| !wanted[f].is_empty())
            .collect();
        let n = self.shards.len();
        let assignments: Vec<Vec<usize>> = (0..n)
            .map(|s| files.iter().copied().skip(s).step_by(n).collect())
            .collect();

        let catalog = &self.catalog;
        let load = |file_list: &Vec<usize>| -> Result<Vec<FileLoad>> {
            file_list
                .iter()
                .map(|&f| {
                    let (first, recs) = catalog.read_file(f)?;
                    let bytes = catalog.file_len(f);
                    let keep = recs
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| (first + i as u32, r))
                        .filter(|(id, _)| wanted[f].contains(id))
                        .collect();
                    Ok((f, bytes, keep))
                })
                .collect()
        };
        #[cfg(feature = "parallel")]
        let loaded: Vec<_> = {
            use rayon::prelude::*;
            assignments.par_iter().map(load).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let loaded: Vec<_> = assignments.iter().map(load).collect();

        let loaded = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        for (shard, files) in loaded.into_iter().enumerate() {
            for (f, bytes, recs) in files {
                self.counters.record_open(f, shard, bytes);
                for (id, r) in recs {
                    self.insert(shard, id, r);
                }
            }
        }
        Ok(())
    }

    fn insert(&mut self, shard: usize, id: SampleId, r: SampleRecord) {
        self.cached_bytes += self.record_bytes();
        self.owner.insert(id, shard);
        self.shards[shard].insert(id, Arc::new(r));
    }

    /// Returns a sample, reading its file on a cache miss. In dynamic mode a
    /// miss caches the record on the next round-robin owner shard; in `none`
    /// mode nothing is cached.
    pub fn fetch(&mut self, id: SampleId, reader: usize) -> Result<Arc<SampleRecord>> {
        if let Some(r) = self.cached_record(id) {
            return Ok(r.clone());
        }
        match self.mode {
            StoreMode::Preload => Err(Error::Contract(format!(
                "sample {id} is not in the preloaded partition"
            ))),
            StoreMode::None => {
                let (f, r) = self.catalog.read_one(id)?;
                self.counters.record_open(f, reader, self.record_bytes());
                Ok(Arc::new(r))
            }
            StoreMode::Dynamic => {
                self.check_budget(self.record_bytes())?;
                let (f, r) = self.catalog.read_one(id)?;
                self.counters.record_open(f, reader, self.record_bytes());
                let owner = self.next_owner % self.shards.len();
                self.next_owner += 1;
                self.insert(owner, id, r);
                Ok(self.shards[owner][&id].clone())
            }
        }
    }

    /// Single-sample fetch as used outside the minibatch path.
    pub fn dynamic_fetch(&mut self, id: SampleId) -> Result<Arc<SampleRecord>> {
        self.fetch(id, 0)
    }

    /// Seeded plan for one epoch over this store's partition.
    pub fn plan_epoch(&self, epoch: u64, seed: u64, batch_size: usize) -> Result<EpochPlan> {
        if batch_size == 0 {
            return Err(Error::Contract("batch_size must be >= 1".into()));
        }
        if self.partition.is_empty() {
            return Err(Error::Contract(
                "cannot plan an epoch over an empty partition".into(),
            ));
        }
        let permutation = epoch_permutation(&self.partition, seed, epoch);
        let n = self.shards.len();
        let transfers = permutation
            .chunks(batch_size)
            .map(|slice| {
                let mut t = Vec::with_capacity(slice.len());
                for (consumer, range) in split_even(slice.len(), n).into_iter().enumerate() {
                    for &id in &slice[range] {
                        let from = match (self.mode, self.owner_of(id)) {
                            (StoreMode::None, _) | (_, None) => {
                                Source::File(self.catalog.locate(id).map(|(f, _)| f).unwrap_or(0))
                            }
                            (_, Some(s)) => Source::Shard(s),
                        };
                        t.push(Transfer {
                            sample: id,
                            from,
                            to: consumer,
                        });
                    }
                }
                t
            })
            .collect();
        Ok(EpochPlan {
            epoch,
            seed,
            batch_size,
            n_shards: n,
            permutation,
            transfers,
        })
    }

    /// Executes the transfer list of `step`, delivering each consumer shard
    /// its part of the minibatch.
    pub fn shuffle_step(&mut self, plan: &EpochPlan, step: usize) -> Result<MiniBatch> {
        if step >= plan.num_steps() {
            return Err(Error::Contract(format!(
                "step {step} outside plan of {} steps",
                plan.num_steps()
            )));
        }
        if plan.n_shards != self.shards.len() {
            return Err(Error::Contract(
                "plan was made for a different shard count".into(),
            ));
        }
        let mut parts: Vec<Vec<(SampleId, Arc<SampleRecord>)>> =
            vec![Vec::new(); self.shards.len()];
        for t in &plan.transfers[step] {
            let rec =
                match t.from {
                    Source::Shard(s) => {
                        let r = self.shards[s].get(&t.sample).cloned().ok_or(
                            Error::StoreCorruption {
                                shard: s,
                                sample: t.sample,
                            },
                        )?;
                        if s != t.to {
                            self.counters.samples_shuffled += 1;
                        }
                        r
                    }
                    Source::File(_) => self.fetch(t.sample, t.to)?,
                };
            parts[t.to].push((t.sample, rec));
        }
        Ok(MiniBatch { step, parts })
    }

    /// Closes the accounting of the current epoch; returns its deltas.
    pub fn end_epoch(&mut self, next_epoch: u64) -> EpochCounters {
        self.counters.close_epoch(next_epoch)
    }

    /// Test hook: drop a cached sample without updating ownership.
    #[doc(hidden)]
    pub fn corrupt_evict(&mut self, id: SampleId) {
        if let Some(s) = self.owner_of(id) {
            self.shards[s].remove(&id);
        }
    }
}
