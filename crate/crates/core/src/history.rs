//! Run records: per-step losses, epoch timings and I/O counters, tournament
//! events and evaluations. Written as JSON lines (one event per line) plus a
//! per-trainer summary CSV that can be recomputed from the JSON lines alone.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::EvalMetric;

pub const HISTORY_VERSION: u32 = 1;
pub const HISTORY_FILE: &str = "history.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub trainer: usize,
    /// 1-based count of steps taken by this trainer.
    pub step: u64,
    pub epoch: u64,
    /// Numeric failure; no update was applied.
    pub skipped: bool,
    pub d_loss: f64,
    pub g_total: f64,
    pub g_forward: f64,
    pub g_adversarial: f64,
    pub g_cycle: f64,
}

impl StepRecord {
    pub fn skipped(trainer: usize, step: u64, epoch: u64) -> Self {
        Self {
            trainer,
            step,
            epoch,
            skipped: true,
            d_loss: 0.0,
            g_total: 0.0,
            g_forward: 0.0,
            g_adversarial: 0.0,
            g_cycle: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub trainer: usize,
    pub epoch: u64,
    pub steps: usize,
    /// Wall-clock time spent in this trainer's steps during the epoch.
    pub seconds: f64,
    pub files_opened: u64,
    pub bytes_read: u64,
    pub samples_shuffled: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Local,
    Incoming,
}

/// One network blob received by a trainer during a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobTransfer {
    pub network: String,
    pub from_trainer: usize,
    pub to_trainer: usize,
    pub hash: String,
}

/// One trainer's side of a tournament pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub trainer: usize,
    pub partner: usize,
    pub local_metric: f64,
    pub incoming_metric: f64,
    pub winner: Winner,
    /// Metric of the generator kept, on this trainer's tournament slice.
    pub retained_metric: f64,
    pub local_forward_hash: String,
    pub local_inverse_hash: String,
    pub incoming_forward_hash: String,
    pub incoming_inverse_hash: String,
    /// This trainer's discriminator after the round.
    pub discriminator_hash: String,
    pub received: Vec<BlobTransfer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentEvent {
    pub round: usize,
    /// Steps every trainer had taken at the barrier.
    pub step: u64,
    pub pairs: Vec<(usize, usize)>,
    pub bye: Option<usize>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub trainer: usize,
    pub step: u64,
    pub metric: EvalMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: u32,
    pub mode: String,
    pub trainers: usize,
    pub config_hash: String,
}

/// Everything recorded during one run. Append-only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub header: Option<RunHeader>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub tournaments: Vec<TournamentEvent>,
    pub evals: Vec<EvalRecord>,
    /// Final shared-validation metric per trainer, by trainer id.
    pub final_metrics: Vec<EvalMetric>,
    pub best_trainer: Option<usize>,
}

/// One line of the JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Event {
    Run(RunHeader),
    Step(StepRecord),
    Epoch(EpochRecord),
    Tournament(TournamentEvent),
    Eval(EvalRecord),
    Final { trainer: usize, metric: EvalMetric },
    Best { trainer: usize },
}

impl RunHistory {
    pub fn new(header: RunHeader) -> Self {
        Self {
            header: Some(header),
            ..Default::default()
        }
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.header.as_ref().map(|h| h.config_hash.as_str())
    }

    /// Copy with wall-clock fields zeroed, for replay comparisons.
    pub fn without_timings(&self) -> Self {
        let mut h = self.clone();
        for e in &mut h.epochs {
            e.seconds = 0.0;
        }
        h
    }

    pub fn steps_of(&self, trainer: usize) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.trainer == trainer)
    }

    pub fn epochs_of(&self, trainer: usize) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.trainer == trainer)
    }

    /// Mean wall time of this trainer's epochs from `from_epoch` on.
    pub fn mean_epoch_seconds(&self, trainer: usize, from_epoch: u64) -> Option<f64> {
        let t: Vec<f64> = self
            .epochs_of(trainer)
            .filter(|e| e.epoch >= from_epoch)
            .map(|e| e.seconds)
            .collect();
        (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64)
    }

    pub fn events(&self) -> Vec<Event> {
        let mut out = Vec::new();
        if let Some(h) = &self.header {
            out.push(Event::Run(h.clone()));
        }
        out.extend(self.steps.iter().map(|s| Event::Step(*s)));
        out.extend(self.epochs.iter().map(|e| Event::Epoch(*e)));
        out.extend(self.tournaments.iter().cloned().map(Event::Tournament));
        out.extend(self.evals.iter().map(|e| Event::Eval(*e)));
        out.extend(
            self.final_metrics
                .iter()
                .enumerate()
                .map(|(trainer, m)| Event::Final {
                    trainer,
                    metric: *m,
                }),
        );
        if let Some(trainer) = self.best_trainer {
            out.push(Event::Best { trainer });
        }
        out
    }

    pub fn from_events(events: impl IntoIterator<Item = Event>) -> Self {
        let mut h = RunHistory::default();
        let mut finals: Vec<(usize, EvalMetric)> = Vec::new();
        for e in events {
            match e {
                Event::Run(r) => h.header = Some(r),
                Event::Step(s) => h.steps.push(s),
                Event::Epoch(e) => h.epochs.push(e),
                Event::Tournament(t) => h.tournaments.push(t),
                Event::Eval(e) => h.evals.push(e),
                Event::Final { trainer, metric } => finals.push((trainer, metric)),
                Event::Best { trainer } => h.best_trainer = Some(trainer),
            }
        }
        finals.sort_by_key(|(t, _)| *t);
        h.final_metrics = finals.into_iter().map(|(_, m)| m).collect();
        h
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in self.events() {
            s.push_str(&serde_json::to_string(&e).expect("history events serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(|e| {
                Error::Contract(format!(
                    "{}:{}: bad history line: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            events.push(e);
        }
        Ok(Self::from_events(events))
    }

    /// Per-trainer summary rows. Contains no wall-clock fields, so a
    /// deterministic replay reproduces it byte for byte.
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let n = self
            .final_metrics
            .len()
            .max(self.steps.iter().map(|s| s.trainer + 1).max().unwrap_or(0));
        (0..n)
            .map(|t| {
                let mut steps = 0u64;
                let mut skipped = 0u64;
                let mut sum = 0.0f64;
                let mut last = None;
                for s in self.steps_of(t) {
                    steps += 1;
                    if s.skipped {
                        skipped += 1;
                    } else {
                        sum += s.g_total;
                        last = Some(s.g_total);
                    }
                }
                let trained = steps - skipped;
                let adopted = self
                    .tournaments
                    .iter()
                    .flat_map(|e| &e.verdicts)
                    .filter(|v| v.trainer == t && v.winner == Winner::Incoming)
                    .count();
                SummaryRow {
                    trainer: t,
                    steps,
                    skipped,
                    mean_g_total: if trained > 0 {
                        sum / trained as f64
                    } else {
                        f64::NAN
                    },
                    last_g_total: last.unwrap_or(f64::NAN),
                    adopted,
                    final_metric: self.final_metrics.get(t).copied(),
                    best: self.best_trainer == Some(t),
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let hash = self.config_hash().unwrap_or("");
        let mut s = String::from(SummaryRow::HEADER);
        s.push('\n');
        for r in self.summary_rows() {
            let m = r.final_metric;
            let f = |g: fn(&EvalMetric) -> f64| {
                m.as_ref().map(g).map(|v| v.to_string()).unwrap_or_default()
            };
            let _ = writeln!(
                s,
                "{hash},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.trainer,
                r.steps,
                r.skipped,
                r.mean_g_total,
                r.last_g_total,
                r.adopted,
                f(|m| m.forward_mae),
                f(|m| m.inverse_mae),
                f(|m| m.combined),
                f(|m| m.scalar_mae),
                f(|m| m.image_mae),
                u8::from(r.best),
            );
        }
        s
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub trainer: usize,
    pub steps: u64,
    pub skipped: u64,
    pub mean_g_total: f64,
    pub last_g_total: f64,
    /// Rounds in which this trainer adopted the incoming generator.
    pub adopted: usize,
    pub final_metric: Option<EvalMetric>,
    pub best: bool,
}

impl SummaryRow {
    pub const HEADER: &'static str = "config_hash,trainer,steps,skipped,mean_g_total,last_g_total,adopted,forward_mae,inverse_mae,combined,scalar_mae,image_mae,best";
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(c: f64) -> EvalMetric {
        EvalMetric::new(c * 0.5, c * 0.5, 0.1, 0.2, 1.0, 1.0)
    }

    fn sample() -> RunHistory {
        let mut h = RunHistory::new(RunHeader {
            version: HISTORY_VERSION,
            mode: "ltfb".into(),
            trainers: 2,
            config_hash: "abc".into(),
        });
        for t in 0..2 {
            for step in 1..=3 {
                h.steps.push(StepRecord {
                    trainer: t,
                    step,
                    epoch: 0,
                    skipped: step == 2 && t == 1,
                    d_loss: 0.7,
                    g_total: 0.1 / step as f64 + t as f64 / 3.0,
                    g_forward: 0.1,
                    g_adversarial: 0.0069,
                    g_cycle: 0.02,
                });
            }
        }
        h.epochs.push(EpochRecord {
            trainer: 0,
            epoch: 0,
            steps: 3,
            seconds: 0.25,
            files_opened: 4,
            bytes_read: 400,
            samples_shuffled: 7,
        });
        h.final_metrics = vec![metric(0.3), metric(1.0 / 3.0)];
        h.best_trainer = Some(0);
        h
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let h = sample();
        let back = RunHistory::from_events(
            h.to_jsonl()
                .lines()
                .map(|l| serde_json::from_str::<Event>(l).unwrap()),
        );
        assert_eq!(back, h);
        assert_eq!(back.summary_csv(), h.summary_csv());
    }

    #[test]
    fn summary_skips_failed_steps() {
        let rows = sample().summary_rows();
        assert_eq!(rows[1].steps, 3);
        assert_eq!(rows[1].skipped, 1);
        assert!(rows[0].best && !rows[1].best);
    }

    #[test]
    fn summary_has_no_timing() {
        let h = sample();
        let mut slower = h.clone();
        slower.epochs[0].seconds = 99.0;
        assert_eq!(h.summary_csv(), slower.summary_csv());
        assert_eq!(h.without_timings(), slower.without_timings());
    }
}
