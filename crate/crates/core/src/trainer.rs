//! A trainer: `n_shards` workers jointly training one surrogate.
//!
//! Every shard holds a bit-identical replica of the model. Each step the
//! data store delivers a shard its slice of the minibatch; shards compute
//! gradients locally, the gradients are averaged (weighted by shard sample
//! count, in fixed shard order) and every replica applies the same update.
//! Per minibatch the discriminator is updated first, then the generator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::datastore::{BundleCatalog, DataStore, EpochPlan, MiniBatch, SampleId, StoreMode};
use crate::error::{Error, Result};
use crate::history::{EpochRecord, StepRecord};
use crate::nn::{DenseTensor, MlpParams, Real};
use crate::surrogate::{CycleGanModel, EvalMetric, GeneratorGrads, GeneratorLosses, Network};
use crate::synthdata::to_tensors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub trainer_id: usize,
    /// Data-parallel width.
    pub n_shards: usize,
    /// Total minibatch size across shards.
    pub batch_size: usize,
    pub store_mode: StoreMode,
    pub memory_budget_bytes: Option<u64>,
    /// Seeds the per-epoch shuffle plans.
    pub plan_seed: u64,
    /// Minibatches assembled ahead of consumption (0 or 1).
    pub prefetch_depth: usize,
    /// Numeric failures tolerated before the trainer aborts.
    pub abort_threshold: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            trainer_id: 0,
            n_shards: 4,
            batch_size: 128,
            store_mode: StoreMode::Preload,
            memory_budget_bytes: None,
            plan_seed: 0,
            prefetch_depth: 1,
            abort_threshold: 10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_shards == 0 {
            errs.push("shards must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be >= 1".to_string());
        }
        if self.prefetch_depth > 1 {
            errs.push("prefetch depth must be 0 or 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Weighted mean of per-shard gradient blobs, weights = shard sample counts.
/// Accumulates in f64 in shard order, so the result is independent of how
/// the shards were scheduled.
pub fn allreduce_gradients<T: Real>(
    shard_grads: &[&MlpParams<T>],
    shard_batch_sizes: &[usize],
) -> Result<MlpParams<T>> {
    if shard_grads.is_empty() || shard_grads.len() != shard_batch_sizes.len() {
        return Err(Error::Contract(format!(
            "allreduce over {} blobs with {} sizes",
            shard_grads.len(),
            shard_batch_sizes.len()
        )));
    }
    let widths = shard_grads[0].widths();
    if let Some(i) = shard_grads.iter().position(|g| g.widths() != widths) {
        return Err(Error::Contract(format!(
            "gradient manifest of shard {i} differs from shard 0"
        )));
    }
    let total: usize = shard_batch_sizes.iter().sum();
    if total == 0 {
        return Err(Error::Contract("allreduce with zero total samples".into()));
    }
    let mut acc = vec![0.0f64; shard_grads[0].len()];
    for (g, &n) in shard_grads.iter().zip(shard_batch_sizes) {
        if n == 0 {
            continue;
        }
        let w = n as f64 / total as f64;
        for (a, &v) in acc.iter_mut().zip(g.as_slice()) {
            *a += w * v.as_f64();
        }
    }
    MlpParams::unflatten(widths, acc.into_iter().map(T::lit).collect())
}

/// Minibatch source: the data store plus epoch bookkeeping.
#[derive(Debug)]
struct Feeder {
    store: DataStore,
    plan: Option<EpochPlan>,
    epoch: u64,
    step_in_epoch: usize,
    batch_size: usize,
    plan_seed: u64,
}

struct Fed {
    epoch: u64,
    batch: MiniBatch,
}

impl Feeder {
    fn next(&mut self) -> Result<Fed> {
        let exhausted = self
            .plan
            .as_ref()
            .is_none_or(|p| self.step_in_epoch >= p.num_steps());
        if exhausted {
            if self.plan.is_some() {
                self.epoch += 1;
                self.store.end_epoch(self.epoch);
            }
            self.plan = Some(
                self.store
                    .plan_epoch(self.epoch, self.plan_seed, self.batch_size)?,
            );
            self.step_in_epoch = 0;
        }
        let plan = self.plan.as_ref().unwrap();
        let batch = self.store.shuffle_step(plan, self.step_in_epoch)?;
        self.step_in_epoch += 1;
        Ok(Fed {
            epoch: self.epoch,
            batch,
        })
    }
}

/// State of one trainer.
pub struct Trainer {
    config: TrainerConfig,
    replicas: Vec<CycleGanModel<f32>>,
    feeder: Feeder,
    prefetched: Option<Fed>,
    step: u64,
    failures: usize,
    tournament: Option<(DenseTensor<f32>, DenseTensor<f32>)>,
    // consumption-side epoch timing
    timed_epoch: u64,
    epoch_seconds: f64,
    epoch_steps: usize,
    epoch_records: Vec<EpochRecord>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("id", &self.config.trainer_id)
            .field("step", &self.step)
            .field("epoch", &self.feeder.epoch)
            .finish()
    }
}

impl Trainer {
    /// Builds a trainer around `model` (whose autoencoder must already be
    /// frozen) training on `partition`. Preload-mode stores are populated
    /// here.
    pub fn new(
        config: TrainerConfig,
        model: CycleGanModel<f32>,
        catalog: Arc<BundleCatalog>,
        partition: Vec<SampleId>,
    ) -> Result<Self> {
        config.validate()?;
        if !model.is_autoencoder_frozen() {
            return Err(Error::Contract(
                "trainers start from a model with a frozen autoencoder".into(),
            ));
        }
        if catalog.dims() != model.dims() {
            return Err(Error::dim(
                "dataset vs model dims",
                format!("{:?}", model.dims()),
                format!("{:?}", catalog.dims()),
            ));
        }
        let mut store = DataStore::new(
            catalog,
            partition,
            config.n_shards,
            config.store_mode,
            config.memory_budget_bytes,
        )?;
        if config.store_mode == StoreMode::Preload {
            store.preload()?;
        }
        let replicas = vec![model; config.n_shards];
        Ok(Self {
            feeder: Feeder {
                store,
                plan: None,
                epoch: 0,
                step_in_epoch: 0,
                batch_size: config.batch_size,
                plan_seed: config.plan_seed,
            },
            config,
            replicas,
            prefetched: None,
            step: 0,
            failures: 0,
            tournament: None,
            timed_epoch: 0,
            epoch_seconds: 0.0,
            epoch_steps: 0,
            epoch_records: Vec::new(),
        })
    }

    pub fn id(&self) -> usize {
        self.config.trainer_id
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.feeder.epoch
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn store(&self) -> &DataStore {
        &self.feeder.store
    }

    /// The shard-0 replica; all replicas are identical between steps.
    pub fn model(&self) -> &CycleGanModel<f32> {
        &self.replicas[0]
    }

    pub fn replicas(&self) -> &[CycleGanModel<f32>] {
        &self.replicas
    }

    /// True when every replica holds bit-identical parameters.
    pub fn replicas_consistent(&self) -> bool {
        let first = &self.replicas[0];
        self.replicas[1..]
            .iter()
            .all(|r| Network::ALL.iter().all(|&n| r.blob(n) == first.blob(n)))
    }

    /// Applies `f` to every replica.
    pub fn for_each_replica(
        &mut self,
        mut f: impl FnMut(&mut CycleGanModel<f32>) -> Result<()>,
    ) -> Result<()> {
        self.replicas.iter_mut().try_for_each(&mut f)
    }

    pub fn set_tournament_slice(&mut self, x: DenseTensor<f32>, y: DenseTensor<f32>) {
        self.tournament = Some((x, y));
    }

    pub fn tournament_slice(&self) -> Option<(&DenseTensor<f32>, &DenseTensor<f32>)> {
        self.tournament.as_ref().map(|(x, y)| (x, y))
    }

    /// Scores `model` on this trainer's tournament slice.
    pub fn evaluate_on_tournament(&self, model: &CycleGanModel<f32>) -> Result<EvalMetric> {
        let (x, y) = self
            .tournament
            .as_ref()
            .ok_or_else(|| Error::Contract("trainer has no tournament slice".into()))?;
        model.evaluate(x, y)
    }

    /// Completed-epoch timing and I/O records, drained.
    pub fn take_epoch_records(&mut self) -> Vec<EpochRecord> {
        std::mem::take(&mut self.epoch_records)
    }

    /// Runs `n_steps` minibatch steps.
    pub fn train_steps(&mut self, n_steps: usize) -> Result<Vec<StepRecord>> {
        let mut out = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let started = Stopwatch::start();
            let fed = match self.prefetched.take() {
                Some(f) => f,
                None => self.feeder.next()?,
            };
            if fed.epoch != self.timed_epoch {
                self.close_timed_epoch(fed.epoch);
            }
            let prefetch = self.config.prefetch_depth > 0;
            let Self {
                replicas,
                feeder,
                config,
                ..
            } = self;
            let (computed, next) = overlap(
                || compute_step(replicas, &fed.batch, config.trainer_id),
                || prefetch.then(|| feeder.next()),
            );
            if let Some(next) = next {
                self.prefetched = Some(next?);
            }
            self.step += 1;
            let record = match computed {
                Ok(losses) => losses.into_record(self.config.trainer_id, self.step, fed.epoch),
                Err(Error::Numeric(_)) => {
                    self.failures += 1;
                    if self.failures > self.config.abort_threshold {
                        return Err(Error::NumericAbort {
                            trainer: self.config.trainer_id,
                            failures: self.failures,
                        });
                    }
                    StepRecord::skipped(self.config.trainer_id, self.step, fed.epoch)
                }
                Err(e) => return Err(e),
            };
            out.push(record);
            self.epoch_seconds += started.seconds();
            self.epoch_steps += 1;
        }
        Ok(out)
    }

    fn close_timed_epoch(&mut self, next: u64) {
        // the feeder closes store accounting when it plans the next epoch
        let counters = self
            .feeder
            .store
            .counters()
            .per_epoch
            .iter()
            .find(|c| c.epoch == self.timed_epoch)
            .copied()
            .unwrap_or_default();
        self.epoch_records.push(EpochRecord {
            trainer: self.config.trainer_id,
            epoch: self.timed_epoch,
            steps: self.epoch_steps,
            seconds: self.epoch_seconds,
            files_opened: counters.files_opened,
            bytes_read: counters.bytes_read,
            samples_shuffled: counters.samples_shuffled,
        });
        self.timed_epoch = next;
        self.epoch_seconds = 0.0;
        self.epoch_steps = 0;
    }
}

#[cfg(feature = "parallel")]
fn overlap<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn overlap<A, B>(a: impl FnOnce() -> A, b: impl FnOnce() -> B) -> (A, B) {
    let ra = a();
    (ra, b())
}

#[cfg(feature = "parallel")]
fn per_shard<I: Send, O: Send>(items: Vec<I>, f: impl Fn(I) -> O + Sync + Send) -> Vec<O> {
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn per_shard<I, O>(items: Vec<I>, f: impl Fn(I) -> O) -> Vec<O> {
    items.into_iter().map(f).collect()
}

/// Losses of one trainer step, averaged over shards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub generator: GeneratorLosses,
}

impl StepLosses {
    fn into_record(self, trainer: usize, step: u64, epoch: u64) -> StepRecord {
        StepRecord {
            trainer,
            step,
            epoch,
            skipped: false,
            d_loss: self.d_loss,
            g_total: self.generator.total,
            g_forward: self.generator.forward,
            g_adversarial: self.generator.adversarial,
            g_cycle: self.generator.cycle,
        }
    }
}

type ShardBatch = (DenseTensor<f32>, DenseTensor<f32>);

/// One data-parallel D-then-G update over all replicas.
pub fn compute_step(
    replicas: &mut [CycleGanModel<f32>],
    batch: &MiniBatch,
    _trainer: usize,
) -> Result<StepLosses> {
    let dims = *replicas[0].dims();
    let shards: Vec<Option<ShardBatch>> = batch
        .parts
        .iter()
        .map(|p| {
            (!p.is_empty()).then(|| {
                let recs: Vec<_> = p.iter().map(|(_, r)| r.clone()).collect();
                to_tensors(&recs, &dims)
            })
        })
        .collect();
    let sizes: Vec<usize> = batch.parts.iter().map(Vec::len).collect();
    data_parallel_step(replicas, &shards, &sizes)
}

/// D-then-G update given each shard's (inputs, outputs); `None` marks a
/// shard with no samples this step.
pub fn data_parallel_step(
    replicas: &mut [CycleGanModel<f32>],
    shards: &[Option<ShardBatch>],
    sizes: &[usize],
) -> Result<StepLosses> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Contract("empty minibatch".into()));
    }

    // discriminator
    let d_out = per_shard(replicas.iter().zip(shards).collect(), |(m, s)| {
        s.as_ref().map(|(x, y)| m.discriminator_grads(x, y))
    });
    let (d_grads, d_losses, d_sizes) = gather(d_out, sizes)?;
    let d_refs: Vec<&MlpParams<f32>> = d_grads.iter().collect();
    let d_avg = allreduce_gradients(&d_refs, &d_sizes)?;
    let d_loss = weighted_mean(&d_losses, &d_sizes);
    for r in replicas.iter_mut() {
        r.apply_discriminator(&d_avg)?;
    }

    // generator
    let g_out = per_shard(replicas.iter().zip(shards).collect(), |(m, s)| {
        s.as_ref().map(|(x, y)| m.generator_grads(x, y))
    });
    let (g_grads, g_losses, g_sizes) = gather(g_out, sizes)?;
    let f_refs: Vec<&MlpParams<f32>> = g_grads.iter().map(|g| &g.forward).collect();
    let i_refs: Vec<&MlpParams<f32>> = g_grads.iter().map(|g| &g.inverse).collect();
    let avg = GeneratorGrads {
        forward: allreduce_gradients(&f_refs, &g_sizes)?,
        inverse: allreduce_gradients(&i_refs, &g_sizes)?,
    };
    for r in replicas.iter_mut() {
        r.apply_generator(&avg)?;
    }
    let pick = |f: fn(&GeneratorLosses) -> f64| {
        weighted_mean(&g_losses.iter().map(f).collect::<Vec<_>>(), &g_sizes)
    };
    Ok(StepLosses {
        d_loss,
        generator: GeneratorLosses {
            total: pick(|l| l.total),
            forward: pick(|l| l.forward),
            adversarial: pick(|l| l.adversarial),
            cycle: pick(|l| l.cycle),
        },
    })
}

#[allow(clippy::type_complexity)]
fn gather<G, L>(
    out: Vec<Option<Result<(G, L)>>>,
    sizes: &[usize],
) -> Result<(Vec<G>, Vec<L>, Vec<usize>)> {
    let mut grads = Vec::new();
    let mut losses = Vec::new();
    let mut used = Vec::new();
    for (o, &n) in out.into_iter().zip(sizes) {
        if let Some(r) = o {
            let (g, l) = r?;
            grads.push(g);
            losses.push(l);
            used.push(n);
        }
    }
    Ok((grads, losses, used))
}

fn weighted_mean(values: &[f64], sizes: &[usize]) -> f64 {
    let total: usize = sizes.iter().sum();
    values
        .iter()
        .zip(sizes)
        .map(|(v, &n)| v * n as f64 / total as f64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(v: &[f32]) -> MlpParams<f32> {
        // widths [1, k-1]: (k-1) weights + (k-1) biases; pick widths to fit
        MlpParams::unflatten(&[1, v.len() / 2], v.to_vec()).unwrap()
    }

    #[test]
    fn allreduce_single_shard_is_identity() {
        let g = blob(&[1.5, -2.0]);
        assert_eq!(allreduce_gradients(&[&g], &[7]).unwrap(), g);
    }

    #[test]
    fn allreduce_equal_sizes_is_mean() {
        let a = blob(&[1.0, 1.0]);
        let b = blob(&[3.0, 5.0]);
        let r = allreduce_gradients(&[&a, &b], &[4, 4]).unwrap();
        assert_eq!(r.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn allreduce_weights_by_shard_size() {
        let a = blob(&[0.0, 4.0]);
        let b = blob(&[3.0, 0.0]);
        let r = allreduce_gradients(&[&a, &b], &[1, 3]).unwrap();
        assert_eq!(r.as_slice(), &[2.25, 1.0]);
    }

    #[test]
    fn allreduce_rejects_manifest_mismatch() {
        let a = blob(&[0.0, 4.0]);
        let b = MlpParams::unflatten(&[2, 1], vec![0.0; 3]).unwrap();
        assert!(matches!(
            allreduce_gradients(&[&a, &b], &[1, 1]),
            Err(Error::Contract(_))
        ));
    }
}
