//! LTFB tournaments and run orchestration.
//!
//! The dataset is split once into a shared validation slice and `k`
//! disjoint trainer partitions; each partition keeps a small held-out
//! tournament slice. Trainers train independently between rounds. At each
//! round barrier they are paired at random, swap forward/inverse generator
//! blobs, score local and incoming generators on their own tournament slice
//! and keep the better one. Discriminators stay put.
//!
//! K-independent training is the same runner with no rounds.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{split_even, BundleCatalog, SampleId};
use crate::error::{Error, Result};
use crate::history::{
    BlobTransfer, EvalRecord, RunHeader, RunHistory, TournamentEvent, Verdict, Winner,
    HISTORY_VERSION,
};
use crate::nn::DenseTensor;
use crate::surrogate::{
    mix_seed, pretrain_autoencoder, CycleGanModel, EvalMetric, Network, SurrogateConfig,
};
use crate::synthdata::to_tensors;
use crate::trainer::{Trainer, TrainerConfig};

/// Splits `ids` into `k` disjoint random parts whose sizes differ by at
/// most one.
pub fn partition_dataset(ids: &[SampleId], k: usize, seed: u64) -> Result<Vec<Vec<SampleId>>> {
    if k == 0 || k > ids.len() {
        return Err(Error::Contract(format!(
            "cannot split {} samples into {k} partitions",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(split_even(shuffled.len(), k)
        .into_iter()
        .map(|r| shuffled[r].to_vec())
        .collect())
}

/// Pairs of trainers meeting in one round, plus the odd one out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// Each pair is ordered `(low, high)`; pairs sorted by first member.
    pub pairs: Vec<(usize, usize)>,
    pub bye: Option<usize>,
}

impl Matching {
    /// Every trainer appears at most once and never with itself.
    pub fn is_valid(&self, k: usize) -> bool {
        let mut seen = vec![false; k];
        let members = self.pairs.iter().flat_map(|&(a, b)| [a, b]).chain(self.bye);
        for t in members {
            if t >= k || seen[t] {
                return false;
            }
            seen[t] = true;
        }
        self.pairs.iter().all(|(a, b)| a != b)
    }

    pub fn partner_of(&self, t: usize) -> Option<usize> {
        self.pairs.iter().find_map(|&(a, b)| match t {
            _ if t == a => Some(b),
            _ if t == b => Some(a),
            _ => None,
        })
    }
}

/// Uniform random perfect matching of `k` trainers for `round`; for odd `k`
/// one trainer sits the round out. `k < 2` gives an empty matching.
pub fn pair_trainers(k: usize, round: usize, seed: u64) -> Matching {
    if k < 2 {
        return Matching {
            pairs: Vec::new(),
            bye: (k == 1).then_some(0),
        };
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, round as u64)));
    let bye = (k % 2 == 1).then(|| order.pop().unwrap());
    let mut pairs: Vec<(usize, usize)> = order
        .chunks(2)
        .map(|p| (p[0].min(p[1]), p[0].max(p[1])))
        .collect();
    pairs.sort_unstable();
    Matching { pairs, bye }
}

/// Tournament rule: lower metric wins, ties keep local, a non-finite
/// candidate always loses.
pub fn choose_winner(local: f64, incoming: f64) -> Winner {
    match (local.is_finite(), incoming.is_finite()) {
        (_, false) => Winner::Local,
        (false, true) => Winner::Incoming,
        (true, true) if incoming < local => Winner::Incoming,
        _ => Winner::Local,
    }
}

/// Runs one round over `trainers` (indexed by trainer id). All trainers
/// must have taken the same number of steps.
pub fn tournament_round(
    trainers: &mut [Trainer],
    matching: &Matching,
    round: usize,
) -> Result<TournamentEvent> {
    let step = trainers.first().map(Trainer::step).unwrap_or(0);
    if let Some(t) = trainers.iter().find(|t| t.step() != step) {
        return Err(Error::Contract(format!(
            "round {round}: trainer {} is at step {}, others at {step}",
            t.id(),
            t.step()
        )));
    }
    if !matching.is_valid(trainers.len()) {
        return Err(Error::Contract(format!(
            "round {round}: invalid matching {matching:?}"
        )));
    }

    // Immutable snapshot of every generator before anyone adopts.
    let snapshot: Vec<(Vec<f32>, Vec<f32>, String, String)> = trainers
        .iter()
        .map(|t| {
            let m = t.model();
            (
                m.blob(Network::Forward).to_vec(),
                m.blob(Network::Inverse).to_vec(),
                m.blob_hash(Network::Forward),
                m.blob_hash(Network::Inverse),
            )
        })
        .collect();

    let mut verdicts = Vec::with_capacity(2 * matching.pairs.len());
    for &(a, b) in &matching.pairs {
        for (me, other) in [(a, b), (b, a)] {
            let (fwd, inv, f_hash, i_hash) = &snapshot[other];
            let trainer = &mut trainers[me];
            let local = trainer.evaluate_on_tournament(trainer.model())?.combined;
            let mut candidate = trainer.model().clone();
            candidate.set_generator(fwd, inv, true)?;
            let incoming = trainer.evaluate_on_tournament(&candidate)?.combined;
            let winner = choose_winner(local, incoming);
            if winner == Winner::Incoming {
                trainer.for_each_replica(|r| r.set_generator(fwd, inv, true))?;
            }
            let received = [(Network::Forward, f_hash), (Network::Inverse, i_hash)]
                .into_iter()
                .map(|(n, h)| BlobTransfer {
                    network: n.name().to_string(),
                    from_trainer: other,
                    to_trainer: me,
                    hash: h.clone(),
                })
                .collect();
            verdicts.push(Verdict {
                trainer: me,
                partner: other,
                local_metric: local,
                incoming_metric: incoming,
                winner,
                retained_metric: match winner {
                    Winner::Local => local,
                    Winner::Incoming => incoming,
                },
                local_forward_hash: snapshot[me].2.clone(),
                local_inverse_hash: snapshot[me].3.clone(),
                incoming_forward_hash: f_hash.clone(),
                incoming_inverse_hash: i_hash.clone(),
                discriminator_hash: trainer.model().blob_hash(Network::Discriminator),
                received,
            });
        }
    }
    Ok(TournamentEvent {
        round,
        step,
        pairs: matching.pairs.clone(),
        bye: matching.bye,
        verdicts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Single,
    Ltfb,
    KIndependent,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Single => "single",
            RunMode::Ltfb => "ltfb",
            RunMode::KIndependent => "k-independent",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(RunMode::Single),
            "ltfb" => Ok(RunMode::Ltfb),
            "k-independent" => Ok(RunMode::KIndependent),
            _ => Err(format!("unknown mode {s:?} (single|ltfb|k-independent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtfbConfig {
    pub k_trainers: usize,
    /// Steps between rounds; `None` never holds a round.
    pub tournament_interval: Option<u64>,
    pub pairing_seed: u64,
    /// Share of each trainer's partition held out for tournaments.
    pub tournament_fraction: f64,
    /// Share of the dataset held out as the shared validation slice.
    pub validation_fraction: f64,
    /// Per-trainer learning rates are `lr · exp(u)`, `u ~ U(-j, j)`.
    pub lr_jitter: f64,
    /// Validation evaluations every this many steps (besides the final one).
    pub eval_interval: Option<u64>,
}

impl Default for LtfbConfig {
    fn default() -> Self {
        Self {
            k_trainers: 4,
            tournament_interval: Some(100),
            pairing_seed: 0,
            tournament_fraction: 0.05,
            validation_fraction: 0.05,
            lr_jitter: 0.0,
            eval_interval: None,
        }
    }
}

/// Everything an orchestrated run needs besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub surrogate: SurrogateConfig,
    /// Template for every trainer; id and plan seed are set per trainer.
    pub trainer: TrainerConfig,
    pub ltfb: LtfbConfig,
    /// Steps each trainer takes.
    pub steps: u64,
    pub pretrain_steps: usize,
    /// Samples drawn from the training ids to pre-train the autoencoder.
    pub pretrain_pool: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Ltfb,
            surrogate: SurrogateConfig::default(),
            trainer: TrainerConfig::default(),
            ltfb: LtfbConfig::default(),
            steps: 1000,
            pretrain_steps: 500,
            pretrain_pool: 4096,
            seed: 0,
            config_hash: String::new(),
        }
    }
}

impl RunConfig {
    /// Trainer count after applying the mode (`single` forces one).
    pub fn trainers(&self) -> usize {
        match self.mode {
            RunMode::Single => 1,
            _ => self.ltfb.k_trainers,
        }
    }

    pub fn interval(&self) -> Option<u64> {
        match self.mode {
            RunMode::Ltfb => self.ltfb.tournament_interval,
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.trainers() == 0 {
            errs.push("trainers must be >= 1".to_string());
        }
        if self.ltfb.tournament_interval == Some(0) {
            errs.push("interval must be >= 1".to_string());
        }
        if self.ltfb.eval_interval == Some(0) {
            errs.push("eval_interval must be >= 1".to_string());
        }
        for (key, v) in [
            ("tournament_fraction", self.ltfb.tournament_fraction),
            ("validation_fraction", self.ltfb.validation_fraction),
        ] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("{key} must be in [0, 1), got {v}"));
            }
        }
        if !(self.ltfb.lr_jitter >= 0.0 && self.ltfb.lr_jitter.is_finite()) {
            errs.push("lr_jitter must be finite and >= 0".to_string());
        }
        if let Err(Error::Config(e)) = self.trainer.validate() {
            errs.extend(e);
        }
        if let Err(Error::Config(e)) = self.surrogate.dims.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// How the dataset is divided for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub validation: Vec<SampleId>,
    /// Per trainer: (training ids, tournament ids).
    pub trainers: Vec<(Vec<SampleId>, Vec<SampleId>)>,
}

impl DataSplit {
    pub fn new(ids: &[SampleId], k: usize, ltfb: &LtfbConfig, seed: u64) -> Result<Self> {
        let mut all = ids.to_vec();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5e1)));
        let n_val = (all.len() as f64 * ltfb.validation_fraction).round() as usize;
        let validation = all[..n_val].to_vec();
        let parts = partition_dataset(&all[n_val..], k, mix_seed(seed, 0x9a7))?;
        let trainers = parts
            .into_iter()
            .map(|p| {
                let n_t = (p.len() as f64 * ltfb.tournament_fraction).ceil() as usize;
                let n_t = n_t.min(p.len().saturating_sub(1));
                (p[n_t..].to_vec(), p[..n_t].to_vec())
            })
            .collect::<Vec<_>>();
        if let Some(i) = trainers.iter().position(|(t, _)| t.is_empty()) {
            return Err(Error::Contract(format!(
                "trainer {i} has no training samples"
            )));
        }
        Ok(Self {
            validation,
            trainers,
        })
    }

    pub fn training_ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.trainers.iter().flat_map(|(t, _)| t.iter().copied())
    }
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub history: RunHistory,
    /// Final model of each trainer (shard-0 replica).
    pub models: Vec<CycleGanModel<f32>>,
    pub best: usize,
    pub split: DataSplit,
}

impl RunOutcome {
    pub fn best_model(&self) -> &CycleGanModel<f32> {
        &self.models[self.best]
    }

    pub fn best_metric(&self) -> EvalMetric {
        self.history.final_metrics[self.best]
    }
}

/// A run that stopped early; the history recorded so far is kept.
#[derive(Debug)]
pub struct RunAborted {
    pub error: Error,
    pub history: Box<RunHistory>,
}

impl std::fmt::Display for RunAborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunAborted {}

impl From<Error> for RunAborted {
    fn from(error: Error) -> Self {
        Self {
            error,
            history: Box::default(),
        }
    }
}

/// Index of the smallest finite combined metric; ties go to the lower id.
pub fn select_best(metrics: &[EvalMetric]) -> Option<usize> {
    metrics
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_finite())
        .min_by(|(_, a), (_, b)| a.combined.total_cmp(&b.combined))
        .map(|(i, _)| i)
}

/// LTFB with the config's interval and trainer count.
pub fn run_ltfb(catalog: Arc<BundleCatalog>, config: &RunConfig) -> Result<RunOutcome, RunAborted> {
    let mut cfg = config.clone();
    cfg.mode = RunMode::Ltfb;
    run(catalog, &cfg)
}

/// K isolated trainers on the LTFB partitions; best final model wins.
pub fn run_k_independent(
    catalog: Arc<BundleCatalog>,
    config: &RunConfig,
) -> Result<RunOutcome, RunAborted> {
    let mut cfg = config.clone();
    cfg.mode = RunMode::KIndependent;
    run(catalog, &cfg)
}

fn load_tensors(
    catalog: &BundleCatalog,
    ids: &[SampleId],
) -> Result<(DenseTensor<f32>, DenseTensor<f32>)> {
    let recs = catalog.read_samples(ids)?;
    Ok(to_tensors(&recs, catalog.dims()))
}

#[cfg(feature = "parallel")]
fn each_trainer<O: Send>(
    trainers: &mut [Trainer],
    f: impl Fn(&mut Trainer) -> O + Sync + Send,
) -> Vec<O> {
    use rayon::prelude::*;
    trainers.par_iter_mut().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn each_trainer<O>(trainers: &mut [Trainer], f: impl Fn(&mut Trainer) -> O) -> Vec<O> {
    trainers.iter_mut().map(f).collect()
}

/// Runs the mode selected in `config`.
pub fn run(catalog: Arc<BundleCatalog>, config: &RunConfig) -> Result<RunOutcome, RunAborted> {
    config.validate()?;
    let k = config.trainers();
    if catalog.dims() != &config.surrogate.dims {
        return Err(Error::dim(
            "dataset vs config dims",
            format!("{:?}", config.surrogate.dims),
            format!("{:?}", catalog.dims()),
        )
        .into());
    }
    let ids: Vec<SampleId> = catalog.ids().collect();
    let split = DataSplit::new(&ids, k, &config.ltfb, config.seed)?;
    let (val_x, val_y) = if split.validation.is_empty() {
        return Err(Error::Contract("validation slice is empty".into()).into());
    } else {
        load_tensors(&catalog, &split.validation)?
    };

    // Autoencoder: trained once on a sample of the training ids, then shared.
    let mut pool: Vec<SampleId> = split.training_ids().collect();
    pool.sort_unstable();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xae)));
    pool.truncate(config.pretrain_pool.max(1));
    let (_, pool_y) = load_tensors(&catalog, &pool)?;
    let mut base_cfg = config.surrogate.clone();
    base_cfg.seed = mix_seed(config.seed, 0xa0);
    let mut base = CycleGanModel::<f32>::new(base_cfg)?;
    pretrain_autoencoder(
        &mut base,
        &pool_y,
        config.pretrain_steps,
        config.trainer.batch_size,
        mix_seed(config.seed, 0xa1),
    )?;
    drop(pool_y);

    let mut jitter = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x117));
    let mut trainers = Vec::with_capacity(k);
    for (t, (train_ids, tour_ids)) in split.trainers.iter().enumerate() {
        let mut scfg = config.surrogate.clone();
        scfg.seed = mix_seed(config.seed, 0x100 + t as u64);
        if config.ltfb.lr_jitter > 0.0 {
            let u: f64 = jitter.random_range(-config.ltfb.lr_jitter..=config.ltfb.lr_jitter);
            scfg.adam.lr *= u.exp();
        }
        let mut model = CycleGanModel::<f32>::new(scfg)?;
        model.adopt_autoencoder(&base)?;
        let tcfg = TrainerConfig {
            trainer_id: t,
            plan_seed: mix_seed(config.seed, 0x200 + t as u64),
            ..config.trainer.clone()
        };
        let mut trainer = Trainer::new(tcfg, model, catalog.clone(), train_ids.clone())?;
        if !tour_ids.is_empty() {
            let (x, y) = load_tensors(&catalog, tour_ids)?;
            trainer.set_tournament_slice(x, y);
        }
        trainers.push(trainer);
    }

    let mut history = RunHistory::new(RunHeader {
        version: HISTORY_VERSION,
        mode: config.mode.name().to_string(),
        trainers: k,
        config_hash: config.config_hash.clone(),
    });
    let interval = config.interval();
    let mut done = 0u64;
    let mut round = 0usize;
    while done < config.steps {
        let next_of = |every: Option<u64>| every.map(|i| (done / i + 1) * i).unwrap_or(u64::MAX);
        let round_at = next_of(interval);
        let target = round_at
            .min(next_of(config.ltfb.eval_interval))
            .min(config.steps);
        let n = (target - done) as usize;
        let results = each_trainer(&mut trainers, |t| t.train_steps(n));
        for (t, r) in trainers.iter_mut().zip(results) {
            history.epochs.extend(t.take_epoch_records());
            match r {
                Ok(steps) => history.steps.extend(steps),
                Err(error) => {
                    return Err(RunAborted {
                        error,
                        history: Box::new(history),
                    })
                }
            }
        }
        done = target;
        if config
            .ltfb
            .eval_interval
            .is_some_and(|e| done.is_multiple_of(e))
            && done < config.steps
        {
            for t in &trainers {
                let metric = t.model().evaluate(&val_x, &val_y).map_err(|e| RunAborted {
                    error: e,
                    history: Box::new(history.clone()),
                })?;
                history.evals.push(EvalRecord {
                    trainer: t.id(),
                    step: done,
                    metric,
                });
            }
        }
        if done == round_at && k >= 2 {
            let matching = pair_trainers(k, round, config.ltfb.pairing_seed);
            match tournament_round(&mut trainers, &matching, round) {
                Ok(e) => history.tournaments.push(e),
                Err(error) => {
                    return Err(RunAborted {
                        error,
                        history: Box::new(history),
                    })
                }
            }
            round += 1;
        }
    }

    let mut finals = Vec::with_capacity(k);
    for t in &trainers {
        let metric = match t.model().evaluate(&val_x, &val_y) {
            Ok(m) => m,
            Err(error) => {
                return Err(RunAborted {
                    error,
                    history: Box::new(history),
                })
            }
        };
        history.evals.push(EvalRecord {
            trainer: t.id(),
            step: done,
            metric,
        });
        finals.push(metric);
    }
    let best = select_best(&finals).unwrap_or(0);
    history.final_metrics = finals;
    history.best_trainer = Some(best);
    Ok(RunOutcome {
        history,
        models: trainers.iter().map(|t| t.model().clone()).collect(),
        best,
        split,
    })
}
