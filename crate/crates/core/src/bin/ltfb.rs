use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use ltfb::config::{dims_preset, ExperimentConfig};
use ltfb::datastore::{BundleCatalog, StoreMode};
use ltfb::experiment::{
    bench_csv, bench_datastore, exit_code, generate_data, steady_state_seconds, train_run,
    with_threads, BenchConfig, BENCH_FILE,
};
use ltfb::surrogate::ModalityDims;
use ltfb::synthdata::GeneratorSpec;
use ltfb::tournament::RunMode;
use ltfb::Error;

#[derive(Parser)]
#[command(
    name = "ltfb",
    version,
    about = "Tournament-coupled GAN surrogate training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as bundle files.
    GenerateData(GenerateArgs),
    /// Train surrogates: a single trainer, LTFB or K-independent.
    Train(TrainArgs),
    /// Time epochs of the data path for each data-store mode.
    BenchDatastore(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 16000)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    samples_per_file: usize,
    /// Seed of the simulator's coefficient tables.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the input-space sweep jitter.
    #[arg(long, default_value_t = 2)]
    sampling_seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Image size preset: tiny, desk or full.
    #[arg(long, default_value = "desk")]
    dims: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// single, ltfb or k-independent.
    #[arg(long)]
    mode: Option<RunMode>,
    #[arg(long)]
    trainers: Option<usize>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Steps between tournament rounds.
    #[arg(long)]
    interval: Option<u64>,
    /// Steps per trainer.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    data_store: Option<StoreMode>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Existing bundle directory; generated under the output dir otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Samples to generate when no dataset is given.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bundle directory to read.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "none,dynamic,preload")]
    data_store: Vec<StoreMode>,
    #[arg(long, default_value_t = 3)]
    epochs: u64,
    #[arg(long, default_value_t = 4)]
    shards: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for bench.csv; printed to stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn preset(name: &str) -> Result<ModalityDims, Error> {
    dims_preset(name).ok_or_else(|| {
        Error::Config(vec![format!(
            "dims: unknown preset {name:?} (tiny|desk|full)"
        )])
    })
}

fn generate(a: GenerateArgs) -> Result<(), Error> {
    let mut spec = GeneratorSpec::new(preset(&a.dims)?, a.seed);
    spec.noise_level = a.noise;
    let files = generate_data(spec, a.n, a.sampling_seed, a.samples_per_file, &a.out)?;
    println!(
        "wrote {} samples in {} files to {}",
        a.n,
        files.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.mode {
        cfg.run.mode = v;
    }
    if let Some(v) = a.trainers {
        cfg.ltfb.trainers = v;
    }
    if let Some(v) = a.shards {
        cfg.trainer.shards = v;
    }
    if let Some(v) = a.batch_size {
        cfg.trainer.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.model.lr = v;
    }
    if let Some(v) = a.interval {
        cfg.ltfb.interval = Some(v);
    }
    if let Some(v) = a.steps {
        cfg.run.steps = v;
    }
    if let Some(v) = a.data_store {
        cfg.trainer.data_store = v;
    }
    if let Some(v) = a.threads {
        cfg.run.threads = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.run.seed = v;
    }
    if let Some(v) = a.data {
        cfg.data.dir = Some(v);
    }
    if let Some(v) = a.n {
        cfg.data.n = v;
    }
    if let Some(v) = &a.dims {
        cfg.dims = preset(v)?;
    }
    if let Some(v) = a.out {
        cfg.run.out = Some(v);
    }
    cfg.validate()?;
    let out = cfg
        .run
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..12]));
    let outcome = train_run(&cfg, &out)?;
    let h = &outcome.history;
    println!(
        "{} run, {} trainer(s), {} steps each, {} tournament round(s)",
        cfg.run.mode.name(),
        h.final_metrics.len(),
        cfg.run.steps,
        h.tournaments.len()
    );
    for (t, m) in h.final_metrics.iter().enumerate() {
        let mark = if t == outcome.best { "  (best)" } else { "" };
        println!(
            "trainer {t}: validation combined {:.6} (forward {:.6}, inverse {:.6}){mark}",
            m.combined, m.forward_mae, m.inverse_mae
        );
    }
    println!("results in {}", out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    let catalog = Arc::new(BundleCatalog::open(&a.data)?);
    let ids: Vec<u32> = catalog.ids().collect();
    let cfg = BenchConfig {
        modes: a.data_store.clone(),
        epochs: a.epochs,
        shards: a.shards,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let rows = with_threads(a.threads, || bench_datastore(catalog.clone(), &ids, &cfg))??;
    let csv = bench_csv(&rows);
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let p = out.join(BENCH_FILE);
        std::fs::write(&p, &csv).map_err(|e| Error::io(&p, e))?;
    }
    print!("{csv}");
    for &mode in &a.data_store {
        let first = rows.iter().find(|r| r.mode == mode && r.epoch == 0);
        if let (Some(f), Some(s)) = (first, steady_state_seconds(&rows, mode)) {
            println!(
                "{mode}: first epoch {:.4}s (+{:.4}s setup), steady state {:.4}s",
                f.seconds, f.setup_seconds, s
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train(a),
        Command::BenchDatastore(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(errs) => {
                    eprintln!("error: invalid configuration");
                    for m in errs {
                        eprintln!("  {m}");
                    }
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
