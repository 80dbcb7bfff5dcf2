//! Browser bindings: explore the synthetic simulator, inspect a shuffle
//! plan, and race LTFB against K-independent training on a small dataset.
//!
//! Every export has a plain Rust counterpart returning `Result<_, String>`
//! so it can be exercised natively.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ltfb::config::dims_preset;
use ltfb::datastore::{BundleCatalog, DataStore, Source, StoreMode};
use ltfb::surrogate::{ModalityDims, SurrogateConfig};
use ltfb::synthdata::{GeneratorSpec, Simulator};
use ltfb::tournament::{run, RunConfig, RunMode};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Renders simulator outputs for chosen input parameters.
#[wasm_bindgen]
pub struct Explorer {
    sim: Simulator,
}

impl Explorer {
    pub fn create(seed: u32, preset: &str) -> Result<Explorer, String> {
        let dims = dims_preset(preset).ok_or_else(|| format!("unknown preset {preset:?}"))?;
        let sim = Simulator::new(GeneratorSpec::new(dims, seed as u64)).map_err(err)?;
        Ok(Self { sim })
    }

    fn dims(&self) -> &ModalityDims {
        self.sim.dims()
    }

    /// Image stack `[view][channel][row][col]`, flattened.
    pub fn render_images(&self, params: &[f64]) -> Result<Vec<f32>, String> {
        Ok(self.sim.sample(params).map_err(err)?.images)
    }

    pub fn render_scalars(&self, params: &[f64]) -> Result<Vec<f32>, String> {
        Ok(self.sim.sample(params).map_err(err)?.scalars)
    }
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, preset: &str) -> Result<Explorer, JsError> {
        Self::create(seed, preset).map_err(|e| JsError::new(&e))
    }

    pub fn views(&self) -> usize {
        self.dims().image_views
    }

    pub fn channels(&self) -> usize {
        self.dims().image_channels
    }

    pub fn height(&self) -> usize {
        self.dims().image_h
    }

    pub fn width(&self) -> usize {
        self.dims().image_w
    }

    pub fn images(&self, params: &[f64]) -> Result<Vec<f32>, JsError> {
        self.render_images(params).map_err(|e| JsError::new(&e))
    }

    pub fn scalars(&self, params: &[f64]) -> Result<Vec<f32>, JsError> {
        self.render_scalars(params).map_err(|e| JsError::new(&e))
    }
}

#[derive(Debug, Serialize)]
pub struct PlanView {
    pub permutation: Vec<u32>,
    /// Owner shard of every sample id.
    pub owner: Vec<usize>,
    /// Per step: (sample, owner shard, consumer shard).
    pub steps: Vec<Vec<(u32, usize, usize)>>,
    pub files: usize,
}

/// The preload ownership and one epoch's transfer lists for a small
/// in-memory dataset.
pub fn plan_view(
    samples: u32,
    samples_per_file: usize,
    shards: usize,
    batch: usize,
    seed: u32,
    epoch: u32,
) -> Result<PlanView, String> {
    let dims = ModalityDims::tiny();
    let sim = Simulator::new(GeneratorSpec::new(dims, 1)).map_err(err)?;
    let records = sim.generate_dataset(samples as usize, 2).map_err(err)?;
    let catalog =
        Arc::new(BundleCatalog::from_records(&records, &dims, samples_per_file).map_err(err)?);
    let ids: Vec<u32> = catalog.ids().collect();
    let mut store = DataStore::new(
        catalog.clone(),
        ids.clone(),
        shards,
        StoreMode::Preload,
        None,
    )
    .map_err(err)?;
    store.preload().map_err(err)?;
    let plan = store
        .plan_epoch(epoch as u64, seed as u64, batch)
        .map_err(err)?;
    let steps = plan
        .transfers
        .iter()
        .map(|ts| {
            ts.iter()
                .map(|t| {
                    let from = match t.from {
                        Source::Shard(s) => s,
                        Source::File(_) => usize::MAX,
                    };
                    (t.sample, from, t.to)
                })
                .collect()
        })
        .collect();
    Ok(PlanView {
        owner: ids
            .iter()
            .map(|&i| store.owner_of(i).unwrap_or(0))
            .collect(),
        permutation: plan.permutation,
        steps,
        files: catalog.files().len(),
    })
}

#[wasm_bindgen]
pub fn shuffle_plan(
    samples: u32,
    samples_per_file: usize,
    shards: usize,
    batch: usize,
    seed: u32,
    epoch: u32,
) -> Result<String, JsError> {
    plan_view(samples, samples_per_file, shards, batch, seed, epoch)
        .and_then(|v| serde_json::to_string(&v).map_err(err))
        .map_err(|e| JsError::new(&e))
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub mode: &'static str,
    /// (step, trainer, validation combined metric).
    pub evals: Vec<(u64, usize, f64)>,
    /// Steps at which tournament rounds happened.
    pub rounds: Vec<u64>,
    /// How many times a trainer adopted an incoming generator.
    pub adoptions: usize,
    pub best: usize,
    pub best_metric: f64,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub ltfb: Curve,
    pub k_independent: Curve,
}

/// Trains the same partitions with and without tournaments.
pub fn compare(
    samples: u32,
    trainers: usize,
    steps: u32,
    interval: u32,
    seed: u32,
) -> Result<Comparison, String> {
    let dims = ModalityDims::tiny();
    let sim = Simulator::new(GeneratorSpec::new(dims, 1)).map_err(err)?;
    let records = sim.generate_dataset(samples as usize, 2).map_err(err)?;
    let catalog = Arc::new(BundleCatalog::from_records(&records, &dims, 100).map_err(err)?);
    let mut cfg = RunConfig {
        surrogate: SurrogateConfig::with_dims(dims),
        steps: steps as u64,
        pretrain_steps: 200,
        pretrain_pool: 1024,
        seed: seed as u64,
        ..RunConfig::default()
    };
    cfg.trainer.n_shards = 1;
    cfg.trainer.batch_size = 64;
    cfg.ltfb.k_trainers = trainers;
    cfg.ltfb.tournament_interval = Some(interval as u64);
    cfg.ltfb.eval_interval = Some(interval as u64);
    cfg.ltfb.pairing_seed = seed as u64;

    let mut curves = Vec::new();
    for mode in [RunMode::Ltfb, RunMode::KIndependent] {
        cfg.mode = mode;
        let out = run(catalog.clone(), &cfg).map_err(|a| err(a.error))?;
        let h = &out.history;
        curves.push(Curve {
            mode: mode.name(),
            evals: h
                .evals
                .iter()
                .map(|e| (e.step, e.trainer, e.metric.combined))
                .collect(),
            rounds: h.tournaments.iter().map(|t| t.step).collect(),
            adoptions: h
                .tournaments
                .iter()
                .flat_map(|t| &t.verdicts)
                .filter(|v| v.winner == ltfb::history::Winner::Incoming)
                .count(),
            best: out.best,
            best_metric: out.best_metric().combined,
        });
    }
    let k_independent = curves.pop().unwrap();
    let ltfb = curves.pop().unwrap();
    Ok(Comparison {
        ltfb,
        k_independent,
    })
}

#[wasm_bindgen]
pub fn compare_runs(
    samples: u32,
    trainers: usize,
    steps: u32,
    interval: u32,
    seed: u32,
) -> Result<String, JsError> {
    compare(samples, trainers, steps, interval, seed)
        .and_then(|c| serde_json::to_string(&c).map_err(err))
        .map_err(|e| JsError::new(&e))
}
