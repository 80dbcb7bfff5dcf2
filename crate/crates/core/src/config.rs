//! Experiment configuration: a TOML file, overridable from the command line.
//!
//! ```toml
//! [run]
//! mode = "ltfb"
//! steps = 1000
//! seed = 0
//!
//! [data]
//! n = 16000
//! samples_per_file = 500
//!
//! [trainer]
//! shards = 4
//! batch_size = 128
//! data_store = "preload"
//!
//! [ltfb]
//! trainers = 4
//! interval = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datastore::StoreMode;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamHyper};
use crate::surrogate::{ModalityDims, SurrogateConfig};
use crate::synthdata::GeneratorSpec;
use crate::tournament::{LtfbConfig, RunConfig, RunMode};
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub mode: RunMode,
    /// Steps per trainer.
    pub steps: u64,
    pub seed: u64,
    pub pretrain_steps: usize,
    pub pretrain_pool: usize,
    /// Output directory. Not part of the config hash.
    pub out: Option<PathBuf>,
    /// Worker threads; 1 gives the deterministic replay mode. Not hashed.
    pub threads: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: RunMode::Ltfb,
            steps: 1000,
            seed: 0,
            pretrain_steps: 500,
            pretrain_pool: 4096,
            out: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Existing bundle directory. When absent the dataset is generated into
    /// `<out>/data`. Not hashed.
    pub dir: Option<PathBuf>,
    pub n: usize,
    pub samples_per_file: usize,
    pub generator_seed: u64,
    pub sampling_seed: u64,
    pub noise_level: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            n: 16000,
            samples_per_file: 500,
            generator_seed: 1,
            sampling_seed: 2,
            noise_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub encoder_hidden: Vec<usize>,
    pub forward_hidden: Vec<usize>,
    pub inverse_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub eval_forward_weight: f64,
    pub eval_inverse_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = SurrogateConfig::default();
        let a = AdamHyper::default();
        Self {
            encoder_hidden: s.encoder_hidden,
            forward_hidden: s.forward_hidden,
            inverse_hidden: s.inverse_hidden,
            discriminator_hidden: s.discriminator_hidden,
            leaky_slope: 0.2,
            lambda_adv: s.lambda_adv,
            lambda_cyc: s.lambda_cyc,
            eval_forward_weight: s.eval_forward_weight,
            eval_inverse_weight: s.eval_inverse_weight,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSection {
    pub shards: usize,
    pub batch_size: usize,
    pub data_store: StoreMode,
    pub memory_budget_bytes: Option<u64>,
    pub prefetch_depth: usize,
    pub abort_threshold: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            shards: t.n_shards,
            batch_size: t.batch_size,
            data_store: t.store_mode,
            memory_budget_bytes: t.memory_budget_bytes,
            prefetch_depth: t.prefetch_depth,
            abort_threshold: t.abort_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LtfbSection {
    pub trainers: usize,
    /// Steps between tournament rounds; omit for no rounds.
    pub interval: Option<u64>,
    pub pairing_seed: u64,
    pub tournament_fraction: f64,
    pub validation_fraction: f64,
    pub lr_jitter: f64,
    pub eval_interval: Option<u64>,
}

impl Default for LtfbSection {
    fn default() -> Self {
        let l = LtfbConfig::default();
        Self {
            trainers: l.k_trainers,
            interval: l.tournament_interval,
            pairing_seed: l.pairing_seed,
            tournament_fraction: l.tournament_fraction,
            validation_fraction: l.validation_fraction,
            lr_jitter: l.lr_jitter,
            eval_interval: l.eval_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub dims: ModalityDims,
    pub model: ModelSection,
    pub trainer: TrainerSection,
    pub ltfb: LtfbSection,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "run",
        &[
            "mode",
            "steps",
            "seed",
            "pretrain_steps",
            "pretrain_pool",
            "out",
            "threads",
        ],
    ),
    (
        "data",
        &[
            "dir",
            "n",
            "samples_per_file",
            "generator_seed",
            "sampling_seed",
            "noise_level",
        ],
    ),
    (
        "dims",
        &[
            "input_dim",
            "latent_dim",
            "scalar_dim",
            "image_views",
            "image_channels",
            "image_h",
            "image_w",
        ],
    ),
    (
        "model",
        &[
            "encoder_hidden",
            "forward_hidden",
            "inverse_hidden",
            "discriminator_hidden",
            "leaky_slope",
            "lambda_adv",
            "lambda_cyc",
            "eval_forward_weight",
            "eval_inverse_weight",
            "lr",
            "beta1",
            "beta2",
            "eps",
        ],
    ),
    (
        "trainer",
        &[
            "shards",
            "batch_size",
            "data_store",
            "memory_budget_bytes",
            "prefetch_depth",
            "abort_threshold",
        ],
    ),
    (
        "ltfb",
        &[
            "trainers",
            "interval",
            "pairing_seed",
            "tournament_fraction",
            "validation_fraction",
            "lr_jitter",
            "eval_interval",
        ],
    ),
];

/// Named image-size presets.
pub fn dims_preset(name: &str) -> Option<ModalityDims> {
    match name {
        "tiny" => Some(ModalityDims::tiny()),
        "desk" => Some(ModalityDims::default()),
        "full" => Some(ModalityDims::full_resolution()),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Parses TOML text; unknown sections and keys are reported together
    /// with any invalid values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut errs = Vec::new();
        for (section, value) in &table {
            match KNOWN_KEYS.iter().find(|(s, _)| s == section) {
                None => errs.push(format!("{section}: unknown section")),
                Some((_, keys)) => match value.as_table() {
                    None => errs.push(format!("{section}: expected a table")),
                    Some(t) => errs.extend(
                        t.keys()
                            .filter(|k| !keys.contains(&k.as_str()))
                            .map(|k| format!("{section}.{k}: unknown key")),
                    ),
                },
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| {
            Error::Config(vec![match e.span() {
                Some(_) => e.message().to_string(),
                None => e.to_string(),
            }])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every value, reporting all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.data.n >= 1, "data.n must be >= 1");
        need(
            self.data.samples_per_file >= 1,
            "data.samples_per_file must be >= 1",
        );
        need(
            self.data.noise_level >= 0.0 && self.data.noise_level.is_finite(),
            "data.noise_level must be finite and >= 0",
        );
        need(self.trainer.shards >= 1, "trainer.shards must be >= 1");
        need(
            self.trainer.batch_size >= 1,
            "trainer.batch_size must be >= 1",
        );
        need(
            self.trainer.prefetch_depth <= 1,
            "trainer.prefetch_depth must be 0 or 1",
        );
        need(self.ltfb.trainers >= 1, "ltfb.trainers must be >= 1");
        need(self.ltfb.interval != Some(0), "ltfb.interval must be >= 1");
        need(
            self.ltfb.eval_interval != Some(0),
            "ltfb.eval_interval must be >= 1",
        );
        need(
            (0.0..1.0).contains(&self.ltfb.tournament_fraction),
            "ltfb.tournament_fraction must be in [0, 1)",
        );
        need(
            self.ltfb.validation_fraction > 0.0 && self.ltfb.validation_fraction < 1.0,
            "ltfb.validation_fraction must be in (0, 1)",
        );
        need(
            self.ltfb.lr_jitter >= 0.0 && self.ltfb.lr_jitter.is_finite(),
            "ltfb.lr_jitter must be finite and >= 0",
        );
        need(
            self.model.lr > 0.0 && self.model.lr.is_finite(),
            "model.lr must be > 0",
        );
        need(
            (0.0..1.0).contains(&self.model.beta1),
            "model.beta1 must be in [0, 1)",
        );
        need(
            (0.0..1.0).contains(&self.model.beta2),
            "model.beta2 must be in [0, 1)",
        );
        need(self.model.eps > 0.0, "model.eps must be > 0");
        need(
            self.model.lambda_adv >= 0.0,
            "model.lambda_adv must be >= 0",
        );
        need(
            self.model.lambda_cyc >= 0.0,
            "model.lambda_cyc must be >= 0",
        );
        need(self.run.threads != Some(0), "run.threads must be >= 1");
        for (key, widths) in [
            ("model.encoder_hidden", &self.model.encoder_hidden),
            ("model.forward_hidden", &self.model.forward_hidden),
            ("model.inverse_hidden", &self.model.inverse_hidden),
            (
                "model.discriminator_hidden",
                &self.model.discriminator_hidden,
            ),
        ] {
            if widths.contains(&0) {
                errs.push(format!("{key} entries must be >= 1"));
            }
        }
        if let Err(Error::Config(e)) = self.dims.validate() {
            errs.extend(e.into_iter().map(|m| format!("dims: {m}")));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// SHA-256 over the settings that determine results; output paths and
    /// thread count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = None;
        c.run.threads = None;
        c.data.dir = None;
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        let mut g = GeneratorSpec::new(self.dims, self.data.generator_seed);
        g.noise_level = self.data.noise_level;
        g
    }

    pub fn surrogate(&self) -> SurrogateConfig {
        let m = &self.model;
        SurrogateConfig {
            dims: self.dims,
            encoder_hidden: m.encoder_hidden.clone(),
            forward_hidden: m.forward_hidden.clone(),
            inverse_hidden: m.inverse_hidden.clone(),
            discriminator_hidden: m.discriminator_hidden.clone(),
            hidden_activation: Activation::LeakyRelu {
                slope: m.leaky_slope,
            },
            lambda_adv: m.lambda_adv,
            lambda_cyc: m.lambda_cyc,
            eval_forward_weight: m.eval_forward_weight,
            eval_inverse_weight: m.eval_inverse_weight,
            adam: AdamHyper {
                lr: m.lr,
                beta1: m.beta1,
                beta2: m.beta2,
                eps: m.eps,
            },
            seed: self.run.seed,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        let t = &self.trainer;
        let l = &self.ltfb;
        RunConfig {
            mode: self.run.mode,
            surrogate: self.surrogate(),
            trainer: TrainerConfig {
                trainer_id: 0,
                n_shards: t.shards,
                batch_size: t.batch_size,
                store_mode: t.data_store,
                memory_budget_bytes: t.memory_budget_bytes,
                plan_seed: 0,
                prefetch_depth: t.prefetch_depth,
                abort_threshold: t.abort_threshold,
            },
            ltfb: LtfbConfig {
                k_trainers: l.trainers,
                tournament_interval: l.interval,
                pairing_seed: l.pairing_seed,
                tournament_fraction: l.tournament_fraction,
                validation_fraction: l.validation_fraction,
                lr_jitter: l.lr_jitter,
                eval_interval: l.eval_interval,
            },
            steps: self.run.steps,
            pretrain_steps: self.run.pretrain_steps,
            pretrain_pool: self.run.pretrain_pool,
            seed: self.run.seed,
            config_hash: self.hash(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
