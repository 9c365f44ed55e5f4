//! TOML run configuration: model/training/inference settings shared across
//! subcommands. Flags override file values; seeds are never invented.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use infill_core::decode::BeamConfig;
use infill_core::model::EncoderKind;
use infill_core::tigs::TigsConfig;
use infill_core::train::OptimizerKind;
use infill_core::util::fnv1a64;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub encoder: EncoderKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            emb_dim: 48,
            hidden_dim: 64,
            encoder: EncoderKind::Uni,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalLmSection {
    /// The scoring model is trained separately: different width and a
    /// different derived seed than the inference models.
    pub emb_dim: usize,
    pub hidden_dim: usize,
}

impl Default for EvalLmSection {
    fn default() -> Self {
        EvalLmSection {
            emb_dim: 48,
            hidden_dim: 96,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub valid_fraction: f64,
    pub momentum: f64,
    pub halve_on_plateau: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 5.0,
            batch_size: 16,
            epochs: 30,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Sgd,
            valid_fraction: 0.1,
            momentum: 0.9,
            halve_on_plateau: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Sampled-reference pool size for the corpus-reference BLEU variant.
    pub ref_pool: usize,
    pub bleu_epsilon: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ref_pool: 1000,
            bleu_epsilon: infill_core::eval::DEFAULT_BLEU_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every command derives its own stream from it. Mandatory
    /// here or via `--seed`.
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub eval_lm: EvalLmSection,
    pub train: TrainSection,
    pub tigs: TigsConfig,
    pub beam: BeamConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.model.emb_dim == 0 || self.model.hidden_dim == 0 {
            bail!("model dims must be ≥ 1");
        }
        if self.eval_lm.emb_dim == 0 || self.eval_lm.hidden_dim == 0 {
            bail!("eval_lm dims must be ≥ 1");
        }
        let t = &self.train;
        if t.learning_rate <= 0.0 || t.batch_size == 0 || t.epochs == 0 || t.clip_norm <= 0.0 {
            bail!("train section out of range");
        }
        if !(0.0..1.0).contains(&t.valid_fraction) || !(0.0..1.0).contains(&t.momentum) {
            bail!("train fractions out of range");
        }
        if self.tigs.max_rounds == 0
            || self.tigs.lambda < 0.0
            || self.tigs.step_size <= 0.0
            || !(0.0..1.0).contains(&self.tigs.momentum)
            || self.tigs.o_steps_per_round == 0
        {
            bail!("tigs section out of range");
        }
        if self.beam.width == 0 || self.beam.max_rounds == 0 {
            bail!("beam section out of range");
        }
        if self.eval.bleu_epsilon <= 0.0 {
            bail!("bleu epsilon must be > 0");
        }
        Ok(())
    }

    /// Seed after applying the flag override; refuses to run seedless.
    pub fn resolve_seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        flag.or(self.seed)
            .ok_or_else(|| anyhow::anyhow!("a seed is required: set `seed` in the config or pass --seed"))
    }

    /// Stable hash of the effective configuration, recorded in file headers.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        fnv1a64(text.as_bytes())
    }
}

/// Seed-stream tags, one per purpose.
pub mod stream {
    pub const TRAIN_FORWARD: u64 = 1;
    pub const TRAIN_BACKWARD: u64 = 2;
    pub const TRAIN_BIRNN: u64 = 3;
    pub const TRAIN_EVAL_LM: u64 = 4;
    pub const MASK: u64 = 5;
    pub const GSN: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const RANDOM_INIT: u64 = 8;
    pub const SAMPLED_REFS: u64 = 9;
}
