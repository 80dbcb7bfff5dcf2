//! Experiment plumbing behind the command-line tool: dataset generation,
//! self-describing run directories and the data-store benchmark.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::config::ExperimentConfig;
use crate::datastore::{write_bundles, BundleCatalog, DataStore, SampleId, StoreMode};
use crate::error::{Error, Result};
use crate::history::{RunHistory, HISTORY_FILE, SUMMARY_FILE};
use crate::surrogate::checkpoint::save_checkpoint;
use crate::synthdata::{GeneratorSpec, Simulator};
use crate::tournament::{run, RunAborted, RunOutcome};

pub const CONFIG_FILE: &str = "config.toml";
pub const HASH_FILE: &str = "config.sha256";
pub const BEST_MODEL_FILE: &str = "best.ckpt";
pub const BENCH_FILE: &str = "bench.csv";

/// Runs `f` on a pool of `threads` workers (the ambient pool when `None`).
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Contract(format!("thread pool: {e}"))),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R>(_threads: Option<usize>, f: impl FnOnce() -> R) -> Result<R> {
    Ok(f())
}

/// Generates `n` samples in sweep order and writes them as bundle files.
pub fn generate_data(
    spec: GeneratorSpec,
    n: usize,
    sampling_seed: u64,
    samples_per_file: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config(vec!["n must be >= 1".into()]));
    }
    let dims = spec.dims;
    let sim = Simulator::new(spec)?;
    let records = sim.generate_dataset(n, sampling_seed)?;
    write_bundles(&records, &dims, samples_per_file, out_dir)
}

/// Opens the configured dataset, generating it first when needed.
pub fn ensure_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<BundleCatalog> {
    let dir = cfg.data.dir.clone().unwrap_or_else(|| out.join("data"));
    let has_bundles = std::fs::read_dir(&dir)
        .map(|mut d| {
            d.any(|e| {
                e.map(|e| {
                    e.path()
                        .extension()
                        .is_some_and(|x| x == crate::datastore::EXTENSION)
                })
                .unwrap_or(false)
            })
        })
        .unwrap_or(false);
    if !has_bundles {
        generate_data(
            cfg.generator_spec(),
            cfg.data.n,
            cfg.data.sampling_seed,
            cfg.data.samples_per_file,
            &dir,
        )?;
    }
    BundleCatalog::open(&dir)
}

/// Writes a history and its summary into `out`.
pub fn write_history(history: &RunHistory, out: &Path) -> Result<()> {
    history.write_jsonl(&out.join(HISTORY_FILE))?;
    history.write_summary(&out.join(SUMMARY_FILE))
}

/// Runs a configured experiment into `out`: the resolved config, its hash,
/// the JSON-lines history, the summary CSV and the best model checkpoint.
/// An aborted run still writes the history gathered so far.
pub fn train_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let hash_path = out.join(HASH_FILE);
    std::fs::write(&hash_path, format!("{}\n", cfg.hash()))
        .map_err(|e| Error::io(&hash_path, e))?;

    let catalog = Arc::new(ensure_dataset(cfg, out)?);
    let run_cfg = cfg.run_config();
    let result = with_threads(cfg.run.threads, || run(catalog, &run_cfg))?;
    match result {
        Ok(outcome) => {
            write_history(&outcome.history, out)?;
            save_checkpoint(outcome.best_model(), &out.join(BEST_MODEL_FILE))?;
            Ok(outcome)
        }
        Err(RunAborted { error, history }) => {
            write_history(&history, out)?;
            Err(error)
        }
    }
}

/// One epoch of the ingestion benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: StoreMode,
    pub epoch: u64,
    /// Time to deliver every minibatch of the epoch.
    pub seconds: f64,
    /// Up-front population time (preload only, reported with epoch 0).
    pub setup_seconds: f64,
    pub files_opened: u64,
    pub bytes_read: u64,
    pub samples_shuffled: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub modes: Vec<StoreMode>,
    pub epochs: u64,
    pub shards: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            modes: vec![StoreMode::None, StoreMode::Dynamic, StoreMode::Preload],
            epochs: 3,
            shards: 4,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Times the data path alone (plan, transfers, file reads) for each mode,
/// epoch by epoch, over `ids`. No model compute is involved, so the
/// differences are those of ingestion.
pub fn bench_datastore(
    catalog: Arc<BundleCatalog>,
    ids: &[SampleId],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let mut store = DataStore::new(catalog.clone(), ids.to_vec(), cfg.shards, mode, None)?;
        let started = Stopwatch::start();
        if mode == StoreMode::Preload {
            store.preload()?;
        }
        let setup = started.seconds();
        for epoch in 0..cfg.epochs {
            let started = Stopwatch::start();
            let plan = store.plan_epoch(epoch, cfg.seed, cfg.batch_size)?;
            let mut delivered = 0usize;
            for step in 0..plan.num_steps() {
                delivered += std::hint::black_box(store.shuffle_step(&plan, step)?).len();
            }
            let seconds = started.seconds();
            debug_assert_eq!(delivered, ids.len());
            // preload I/O lands in epoch 0's counters
            let c = store.end_epoch(epoch + 1);
            rows.push(BenchRow {
                mode,
                epoch,
                seconds,
                setup_seconds: if epoch == 0 { setup } else { 0.0 },
                files_opened: c.files_opened,
                bytes_read: c.bytes_read,
                samples_shuffled: c.samples_shuffled,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s =
        String::from("mode,epoch,seconds,setup_seconds,files_opened,bytes_read,samples_shuffled\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode,
            r.epoch,
            r.seconds,
            r.setup_seconds,
            r.files_opened,
            r.bytes_read,
            r.samples_shuffled
        ));
    }
    s
}

/// Mean epoch time of `mode` from epoch 1 on.
pub fn steady_state_seconds(rows: &[BenchRow], mode: StoreMode) -> Option<f64> {
    let t: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.epoch >= 1)
        .map(|r| r.seconds)
        .collect();
    (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64)
}

/// Process exit code for an error: 2 configuration, 3 I/O or corrupt data,
/// 4 numeric abort, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::CorruptBundle { .. } => 3,
        Error::NumericAbort { .. } => 4,
        _ => 1,
    }
}
