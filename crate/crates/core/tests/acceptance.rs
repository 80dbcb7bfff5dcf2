//! End-to-end acceptance checks. Runs as a plain binary (no test harness)
//! so the criteria execute one after another, timings are not disturbed by
//! concurrent tests, and the verdict lines are always printed.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{mlp_gradient_error, random_spec, records};
use ltfb::config::ExperimentConfig;
use ltfb::datastore::{write_bundles, BundleCatalog, DataStore, StoreMode};
use ltfb::experiment::{bench_datastore, steady_state_seconds, train_run, BenchConfig};
use ltfb::history::{Winner, SUMMARY_FILE};
use ltfb::surrogate::{ModalityDims, Network, SurrogateConfig};
use ltfb::synthdata::{GeneratorSpec, Simulator};
use ltfb::tournament::{run, Matching, RunConfig, RunMode, RunOutcome};
use ltfb::trainer::{Trainer, TrainerConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---- 1 -------------------------------------------------------------------

fn gradient_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let nets = 40;
    let mut worst = 0.0f64;
    for i in 0..nets {
        let spec = random_spec(&mut rng);
        worst = worst.max(mlp_gradient_error(spec, 1 + i % 4, i as u64));
    }
    verdict(
        worst <= 1e-5,
        format!("{nets} networks, worst rel err {worst:.2e}"),
    )
}

// ---- 2 -------------------------------------------------------------------

fn shard_equivalence() -> Verdict {
    let dims = ModalityDims::default();
    let cat = Arc::new(BundleCatalog::from_records(&records(dims, 2048), &dims, 256).unwrap());
    let mut model =
        ltfb::surrogate::CycleGanModel::<f32>::new(SurrogateConfig::with_dims(dims)).unwrap();
    let (_, y) = ltfb::synthdata::to_tensors::<f32, _>(&records(dims, 512), &dims);
    ltfb::surrogate::pretrain_autoencoder(&mut model, &y, 50, 128, 1).unwrap();

    let trace = |shards: usize| {
        let cfg = TrainerConfig {
            n_shards: shards,
            batch_size: 128,
            plan_seed: 7,
            ..TrainerConfig::default()
        };
        let mut t = Trainer::new(cfg, model.clone(), cat.clone(), cat.ids().collect()).unwrap();
        t.train_steps(50).unwrap()
    };
    let base = trace(1);
    let mut worst = 0.0f64;
    for shards in [2, 4] {
        for (a, b) in base.iter().zip(trace(shards)) {
            for (x, y) in [(a.g_total, b.g_total), (a.d_loss, b.d_loss)] {
                worst = worst.max(common::rel_err(x, y));
            }
        }
    }
    verdict(
        worst <= 1e-4,
        format!("desk dims, 50 steps, B=128, worst rel diff {worst:.2e}"),
    )
}

// ---- 3 -------------------------------------------------------------------

fn exactly_once() -> Verdict {
    let cat = common::memory_catalog(1000, 100);
    let ids: Vec<u32> = cat.ids().collect();
    let mut ok = true;
    for seed in 0..5u64 {
        let mut store =
            DataStore::new(cat.clone(), ids.clone(), 4, StoreMode::Preload, None).unwrap();
        store.preload().unwrap();
        let mut perms = Vec::new();
        for epoch in 0..3 {
            let plan = store.plan_epoch(epoch, seed, 128).unwrap();
            let mut seen = Vec::new();
            for step in 0..plan.num_steps() {
                seen.extend(store.shuffle_step(&plan, step).unwrap().ids());
            }
            seen.sort_unstable();
            ok &= seen == ids;
            perms.push(plan.permutation.clone());
        }
        ok &= perms.iter().collect::<BTreeSet<_>>().len() == 3;
    }
    verdict(ok, "5 seeds x 3 epochs, 1000 samples, 4 shards")
}

// ---- 4 -------------------------------------------------------------------

fn zero_steady_io(data: &Path) -> Verdict {
    let cat = Arc::new(BundleCatalog::open(data).unwrap());
    let ids: Vec<u32> = cat.ids().take(4000).collect();
    let files_touched = ids
        .iter()
        .map(|&i| cat.locate(i).unwrap().0)
        .collect::<BTreeSet<_>>()
        .len();
    let epochs = 3;
    let mut stores: Vec<DataStore> = [StoreMode::None, StoreMode::Dynamic, StoreMode::Preload]
        .into_iter()
        .map(|m| DataStore::new(cat.clone(), ids.clone(), 4, m, None).unwrap())
        .collect();
    stores[2].preload().unwrap();
    let mut streams_equal = true;
    for epoch in 0..epochs {
        let plans: Vec<_> = stores
            .iter()
            .map(|s| s.plan_epoch(epoch, 3, 128).unwrap())
            .collect();
        for step in 0..plans[0].num_steps() {
            let batches: Vec<_> = stores
                .iter_mut()
                .zip(&plans)
                .map(|(s, p)| s.shuffle_step(p, step).unwrap())
                .collect();
            if epoch >= 1 {
                streams_equal &= batches[1].parts == batches[2].parts;
            }
        }
        for s in stores.iter_mut() {
            s.end_epoch(epoch + 1);
        }
    }
    let opens = |s: &DataStore| -> Vec<u64> {
        s.counters()
            .per_epoch
            .iter()
            .map(|e| e.files_opened)
            .collect()
    };
    let none = opens(&stores[0]);
    let dynamic = opens(&stores[1]);
    let pre = &stores[2].counters().file_opens;
    let once =
        pre.iter().filter(|&&n| n > 0).count() == files_touched && pre.iter().all(|&n| n <= 1);
    let pass = dynamic[1..].iter().all(|&n| n == 0)
        && dynamic[0] > 0
        && none.iter().all(|&n| n > 0)
        && once
        && streams_equal;
    verdict(
        pass,
        format!(
            "opens per epoch: none {none:?}, dynamic {dynamic:?}; preload opened {files_touched} files once; \
             dynamic/preload streams identical from epoch 2: {streams_equal}"
        ),
    )
}

// ---- 5 -------------------------------------------------------------------

fn speed_ordering(data: &Path) -> Verdict {
    let cat = Arc::new(BundleCatalog::open(data).unwrap());
    let ids: Vec<u32> = cat.ids().collect();
    let cfg = BenchConfig {
        epochs: 4,
        ..BenchConfig::default()
    };
    let rows = bench_datastore(cat.clone(), &ids, &cfg).unwrap();
    let t = |m| steady_state_seconds(&rows, m).unwrap();
    let (none, dynamic, preload) = (
        t(StoreMode::None),
        t(StoreMode::Dynamic),
        t(StoreMode::Preload),
    );
    let ratio = none / dynamic.max(preload);
    let close = dynamic.max(preload) / dynamic.min(preload);
    let pass = ratio >= 1.5 && close <= 2.0;
    verdict(
        pass,
        format!(
            "{} files, steady epoch: none {none:.4}s, dynamic {dynamic:.4}s, preload {preload:.4}s; \
             none/max(cached) {ratio:.1}x, dynamic vs preload within {close:.2}x (page cache warm)",
            cat.files().len()
        ),
    )
}

// ---- 6 -------------------------------------------------------------------

fn small_run_config(mode: RunMode, k: usize, steps: u64, interval: u64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        mode,
        surrogate: SurrogateConfig::with_dims(ModalityDims::tiny()),
        steps,
        seed,
        ..RunConfig::default()
    };
    cfg.trainer.n_shards = 2;
    cfg.ltfb.k_trainers = k;
    cfg.ltfb.tournament_interval = Some(interval);
    cfg.ltfb.pairing_seed = seed;
    cfg
}

fn tournament_correctness(cat: &Arc<BundleCatalog>) -> Verdict {
    let mut cfg = small_run_config(RunMode::Ltfb, 4, 200, 20, 5);
    cfg.pretrain_steps = 200;
    let out = run(cat.clone(), &cfg).unwrap();
    let events = &out.history.tournaments;
    let mut ok = events.len() == 10;
    let mut adoptions = 0;
    for ev in events {
        let m = Matching {
            pairs: ev.pairs.clone(),
            bye: ev.bye,
        };
        ok &= m.is_valid(4) && ev.verdicts.len() == 4;
        let discs: BTreeSet<&String> = ev.verdicts.iter().map(|v| &v.discriminator_hash).collect();
        ok &= discs.len() == 4;
        for v in &ev.verdicts {
            ok &= v.retained_metric == v.local_metric.min(v.incoming_metric);
            ok &= (v.winner == Winner::Incoming) == (v.incoming_metric < v.local_metric);
            ok &= m.partner_of(v.trainer) == Some(v.partner);
            let partner = ev.verdicts.iter().find(|p| p.trainer == v.partner).unwrap();
            ok &= v.incoming_forward_hash == partner.local_forward_hash
                && v.incoming_inverse_hash == partner.local_inverse_hash;
            ok &= v.received.len() == 2
                && v.received.iter().all(|b| {
                    b.network != Network::Discriminator.name() && b.from_trainer == v.partner
                });
            ok &= !v.received.iter().any(|b| discs.contains(&b.hash));
            adoptions += usize::from(v.winner == Winner::Incoming);
        }
    }
    verdict(
        ok,
        format!(
            "{} rounds, {adoptions} adoptions, all verdicts and transfer logs consistent",
            events.len()
        ),
    )
}

// ---- 7, 8 ----------------------------------------------------------------

fn comparison_config(mode: RunMode, k: usize, seed: u64) -> RunConfig {
    small_run_config(mode, k, 1500, 100, seed)
}

fn best(out: &RunOutcome) -> f64 {
    out.best_metric().combined
}

struct Paired {
    k: usize,
    ltfb: Vec<f64>,
    kind: Vec<f64>,
}

impl Paired {
    fn gaps(&self) -> Vec<f64> {
        self.ltfb
            .iter()
            .zip(&self.kind)
            .map(|(l, k)| l - k)
            .collect()
    }
}

fn paired_runs(cat: &Arc<BundleCatalog>, k: usize, seeds: u64) -> Paired {
    let mut p = Paired {
        k,
        ltfb: Vec::new(),
        kind: Vec::new(),
    };
    for seed in 0..seeds {
        p.ltfb.push(best(
            &run(cat.clone(), &comparison_config(RunMode::Ltfb, k, seed)).unwrap(),
        ));
        p.kind.push(best(
            &run(
                cat.clone(),
                &comparison_config(RunMode::KIndependent, k, seed),
            )
            .unwrap(),
        ));
    }
    p
}

fn ltfb_vs_independent(k4: &Paired, k2: &Paired) -> Verdict {
    let gaps4 = k4.gaps();
    let wins = gaps4.iter().filter(|&&g| g <= 0.0).count();
    let (m4, m2) = (median(gaps4.clone()), median(k2.gaps()));
    let pass = wins >= 4 && m4 <= 0.0 && m4 <= m2;
    let show = |v: &[f64]| {
        v.iter()
            .map(|g| format!("{g:+.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        pass,
        format!(
            "k={}: LTFB <= K-ind best in {wins}/5 seeds, gaps [{}], median {m4:+.4}; k={} median {m2:+.4}",
            k4.k,
            show(&gaps4),
            k2.k
        ),
    )
}

fn no_degradation(cat: &Arc<BundleCatalog>, k4: &Paired, k2: &Paired) -> Verdict {
    let seeds = 3;
    let k1: Vec<f64> = (0..seeds)
        .map(|s| best(&run(cat.clone(), &comparison_config(RunMode::Ltfb, 1, s)).unwrap()))
        .collect();
    let mean = |v: &[f64]| v[..seeds as usize].iter().sum::<f64>() / seeds as f64;
    let m = [mean(&k1), mean(&k2.ltfb), mean(&k4.ltfb)];
    let pass = m[1] <= 1.05 * m[0] && m[2] <= 1.05 * m[1];
    verdict(
        pass,
        format!(
            "mean best validation over {seeds} seeds: k=1 {:.4}, k=2 {:.4}, k=4 {:.4}",
            m[0], m[1], m[2]
        ),
    )
}

// ---- 9 -------------------------------------------------------------------

fn replay(tmp: &Path) -> Verdict {
    let mut cfg = ExperimentConfig {
        dims: ModalityDims::tiny(),
        ..ExperimentConfig::default()
    };
    cfg.data.n = 2000;
    cfg.run.steps = 60;
    cfg.run.pretrain_steps = 50;
    cfg.ltfb.trainers = 3;
    cfg.ltfb.interval = Some(15);
    cfg.trainer.shards = 2;
    cfg.trainer.batch_size = 32;
    let first = tmp.join("replay-a");
    train_run(&cfg, &first).unwrap();

    let mut again = ExperimentConfig::load(&first.join("config.toml")).unwrap();
    again.run.threads = Some(1);
    again.data.dir = Some(first.join("data"));
    let second = tmp.join("replay-b");
    train_run(&again, &second).unwrap();
    let a = std::fs::read(first.join(SUMMARY_FILE)).unwrap();
    let b = std::fs::read(second.join(SUMMARY_FILE)).unwrap();
    verdict(
        a == b && !a.is_empty(),
        format!("summary.csv {} bytes, identical: {}", a.len(), a == b),
    )
}

// ---- 10 ------------------------------------------------------------------

fn throughput_proxy(cat: &Arc<BundleCatalog>) -> Verdict {
    let epoch_time = |k: usize| {
        let mut cfg = small_run_config(RunMode::Ltfb, k, 300, 100, 0);
        cfg.pretrain_steps = 10;
        let out =
            ltfb::experiment::with_threads(Some(1), || run(cat.clone(), &cfg).unwrap()).unwrap();
        let per: Vec<f64> = (0..k)
            .map(|t| out.history.mean_epoch_seconds(t, 1).unwrap())
            .collect();
        per.iter().sum::<f64>() / k as f64
    };
    let t1 = epoch_time(1);
    let t4 = epoch_time(4);
    let ratio = t4 / t1;
    verdict(
        ratio <= 0.3,
        format!("steady epoch k=1 {t1:.3}s, k=4 {t4:.3}s per trainer, ratio {ratio:.3}"),
    )
}

fn synthetic_dataset(dir: &Path) {
    let dims = ModalityDims::tiny();
    let recs = Simulator::new(GeneratorSpec::new(dims, 1))
        .unwrap()
        .generate_dataset(16_000, 2)
        .unwrap();
    write_bundles(&recs, &dims, 160, dir).unwrap();
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic_dataset(&data);
    let cat = Arc::new(BundleCatalog::open(&data).unwrap());

    let mut results: Vec<(usize, &str, Duration, Duration, Verdict)> = Vec::new();
    let mut check = |id, name, budget_s: u64, f: &mut dyn FnMut() -> Verdict| {
        let started = Instant::now();
        let v = f();
        let took = started.elapsed();
        let line = format!(
            "[{}] {id:>2} {name} ({:.1}s / {budget_s}s): {}",
            if v.pass && took.as_secs() < budget_s {
                "PASS"
            } else {
                "FAIL"
            },
            took.as_secs_f64(),
            v.detail
        );
        println!("{line}");
        results.push((id, name, took, Duration::from_secs(budget_s), v));
    };

    check(1, "gradient oracle", 60, &mut gradient_oracle);
    check(2, "shard equivalence", 120, &mut shard_equivalence);
    check(3, "exactly-once shuffle", 30, &mut exactly_once);
    check(4, "steady-state zero I/O", 60, &mut || {
        zero_steady_io(&data)
    });
    check(5, "data-store speed ordering", 300, &mut || {
        speed_ordering(&data)
    });
    check(6, "tournament correctness", 300, &mut || {
        tournament_correctness(&cat)
    });
    let mut k4 = None;
    let mut k2 = None;
    check(7, "LTFB vs K-independent", 1800, &mut || {
        let a = paired_runs(&cat, 4, 5);
        let b = paired_runs(&cat, 2, 5);
        let v = ltfb_vs_independent(&a, &b);
        k4 = Some(a);
        k2 = Some(b);
        v
    });
    check(8, "no degradation with k", 1800, &mut || {
        no_degradation(&cat, k4.as_ref().unwrap(), k2.as_ref().unwrap())
    });
    check(9, "determinism replay", 120, &mut || replay(tmp.path()));
    check(10, "throughput scaling proxy", 600, &mut || {
        throughput_proxy(&cat)
    });

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, _, took, budget, v)| !(v.pass && took < budget))
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
