//! Teacher-forced MLE training with SGD (optionally Nesterov momentum),
//! gradient clipping, seeded shuffling, and best-validation checkpointing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::SequencePair;
use crate::error::{Error, Result};
use crate::model::{
    birnn_sequence_nll, encode, reverse_sequence, sequence_nll, DecoderKind, ModelConfig,
    ModelParams, TapedModel,
};
use crate::optim::clip_global_norm;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Nesterov,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Fraction of the corpus held out for validation (seeded shuffle).
    pub valid_fraction: f64,
    /// Momentum coefficient when the optimizer is Nesterov.
    pub momentum: f64,
    /// Halve the learning rate after two epochs without improvement of the
    /// tracked NLL (validation when held out, training otherwise).
    pub halve_on_plateau: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            epochs: 10,
            clip_norm: 5.0,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            valid_fraction: 0.1,
            momentum: 0.9,
            halve_on_plateau: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip norm must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub valid_nll: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    /// Best-validation parameters (last finite ones if training diverged).
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub diverged: bool,
}

/// Per-token NLL of one item under the current parameters, raw path.
fn item_nll(params: &ModelParams, item: &SequencePair) -> Result<(f64, usize)> {
    let enc = if params.config.conditional() {
        Some(encode(params, &item.x)?)
    } else {
        None
    };
    let nll = match params.config.decoder {
        DecoderKind::Birnn => birnn_sequence_nll(params, enc.as_ref(), &item.y)?,
        _ => sequence_nll(params, enc.as_ref(), &item.y)?,
    };
    Ok((nll.total, nll.tokens))
}

fn mean_nll(params: &ModelParams, items: &[&SequencePair]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for item in items {
        let (t, n) = item_nll(params, item)?;
        total += t;
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

/// MLE training loop. Deterministic given the seed; retains the checkpoint
/// with the best validation NLL; aborts on divergence and returns the last
/// finite parameters with `diverged` set.
pub fn train(
    config: &TrainConfig,
    corpus: &[SequencePair],
    model_config: ModelConfig,
) -> Result<TrainResult> {
    config.validate()?;
    model_config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Corpus {
            line: None,
            message: "training corpus is empty".into(),
        });
    }
    if model_config.conditional() && corpus.iter().any(|p| p.x.is_empty()) {
        return Err(Error::Corpus {
            line: None,
            message: "conditional model requires a nonempty input side on every pair".into(),
        });
    }

    // The backward baseline is the same architecture trained on reversed
    // targets; reverse once up front.
    let owned: Vec<SequencePair>;
    let data: &[SequencePair] = if model_config.decoder == DecoderKind::BackwardUni {
        owned = corpus
            .iter()
            .map(|p| SequencePair {
                x: p.x.clone(),
                y: reverse_sequence(&p.y),
            })
            .collect();
        &owned
    } else {
        corpus
    };

    let mut indices: Vec<usize> = (0..data.len()).collect();
    crate::corpus::seeded_shuffle(&mut indices, derive_seed(config.seed, 0x5011, 0));
    let n_valid = ((data.len() as f64) * config.valid_fraction).floor() as usize;
    let valid_idx: Vec<usize> = indices[..n_valid].to_vec();
    let train_idx: Vec<usize> = indices[n_valid..].to_vec();
    if train_idx.is_empty() {
        return Err(Error::Config(
            "validation split leaves no training data".into(),
        ));
    }

    let mut params = ModelParams::init(model_config, config.seed)?;
    let mut best = params.clone();
    let mut best_valid = f64::INFINITY;
    let mut history = Vec::with_capacity(config.epochs);
    let mut learning_rate = config.learning_rate;
    let mut plateau_best = f64::INFINITY;
    let mut plateau_stale = 0usize;
    // Velocity buffers for Nesterov, one per named tensor.
    let mut velocity: Vec<Tensor> = params
        .named()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        crate::corpus::seeded_shuffle(&mut order, derive_seed(config.seed, 0x00e9, epoch as u64));

        let mut epoch_total = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            // Nesterov look-ahead: move to θ + μ·v before taking gradients.
            if config.optimizer == OptimizerKind::Nesterov {
                for ((_, t), v) in params.named_mut().into_iter().zip(&velocity) {
                    for (x, vi) in t.data_mut().iter_mut().zip(v.data()) {
                        *x += config.momentum * vi;
                    }
                }
            }

            let mut tape = Tape::new();
            let tm = TapedModel::register(&mut tape, &params, true);
            let mut item_losses = Vec::with_capacity(batch.len());
            let mut batch_tokens = 0usize;
            for &i in batch {
                let item = &data[i];
                let enc = if params.config.conditional() {
                    Some(tm.encode(&mut tape, &item.x)?)
                } else {
                    None
                };
                let nll = match params.config.decoder {
                    DecoderKind::Birnn => tm.birnn_nll(&mut tape, enc.as_ref(), &item.y)?,
                    _ => tm.nll(&mut tape, enc.as_ref(), &item.y)?,
                };
                item_losses.push(nll);
                batch_tokens += item.y.len();
            }
            let stacked = tape.concat(&item_losses);
            let total = tape.sum(stacked);
            let loss = tape.scale(total, 1.0 / batch_tokens as f64);

            let batch_mean = tape.value(loss).item();
            if !batch_mean.is_finite() {
                return Ok(TrainResult {
                    params: best,
                    history,
                    diverged: true,
                });
            }
            epoch_total += batch_mean * batch_tokens as f64;
            epoch_tokens += batch_tokens;

            let mut grads = tape.grad(loss, tm.param_vals())?;
            clip_global_norm(&mut grads, config.clip_norm);
            if grads.iter().any(|g| !g.all_finite()) {
                return Ok(TrainResult {
                    params: best,
                    history,
                    diverged: true,
                });
            }

            match config.optimizer {
                OptimizerKind::Sgd => {
                    for ((_, t), g) in params.named_mut().into_iter().zip(&grads) {
                        for (x, gi) in t.data_mut().iter_mut().zip(g.data()) {
                            *x -= learning_rate * gi;
                        }
                    }
                }
                OptimizerKind::Nesterov => {
                    // Parameters already sit at the look-ahead point; one
                    // plain step from there lands on θ + v_new, while the
                    // velocity absorbs μ·v − lr·g.
                    for (((_, t), v), g) in params
                        .named_mut()
                        .into_iter()
                        .zip(&mut velocity)
                        .zip(&grads)
                    {
                        for ((x, vi), gi) in
                            t.data_mut().iter_mut().zip(v.data_mut()).zip(g.data())
                        {
                            *vi = config.momentum * *vi - learning_rate * gi;
                            *x -= learning_rate * gi;
                        }
                    }
                }
            }
        }

        let train_nll = epoch_total / epoch_tokens.max(1) as f64;
        let valid_items: Vec<&SequencePair> = valid_idx.iter().map(|&i| &data[i]).collect();
        let valid_nll = if valid_items.is_empty() {
            train_nll
        } else {
            mean_nll(&params, &valid_items)?
        };
        history.push(EpochStats {
            epoch,
            train_nll,
            valid_nll,
        });
        if valid_nll.is_finite() && valid_nll < best_valid && params.all_finite() {
            best_valid = valid_nll;
            best = params.clone();
        }
        if config.halve_on_plateau {
            let tracked = valid_nll;
            if tracked < plateau_best * (1.0 - 1e-3) {
                plateau_best = tracked;
                plateau_stale = 0;
            } else {
                plateau_stale += 1;
                if plateau_stale >= 5 && learning_rate > config.learning_rate / 1024.0 {
                    learning_rate *= 0.5;
                    plateau_stale = 0;
                }
            }
        }
    }

    Ok(TrainResult {
        params: best,
        history,
        diverged: false,
    })
}

/// Loss history as `epoch,train_nll,valid_nll` CSV.
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_nll,valid_nll\n");
    for e in history {
        let _ = writeln!(s, "{},{:.6},{:.6}", e.epoch, e.train_nll, e.valid_nll);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, encode_pair, RawPair, Tokenizer};
    use crate::model::{AttentionKind, EncoderKind};

    /// 50 sentences over a ~30-word vocabulary. Only the subject and verb
    /// carry entropy (ln 50 ≈ 3.9 nats per sentence); every other token is a
    /// function of that pair, so over 14 tokens the per-token floor is about
    /// 0.28 nats — well inside the 0.5 memorization target.
    pub(crate) fn memorization_corpus() -> (Vec<SequencePair>, usize) {
        let subjects = ["birds", "cats", "dogs", "foxes", "wolves"];
        let verbs = [
            "chase", "watch", "follow", "avoid", "greet", "tease", "startle", "ignore", "admire",
            "imitate",
        ];
        let objects = ["mice", "cars", "kites", "shadows", "leaves"];
        let mut lines = Vec::new();
        for (i, s) in subjects.iter().enumerate() {
            for (j, v) in verbs.iter().enumerate() {
                let o = objects[i % objects.len()];
                let o2 = objects[j % objects.len()];
                let o3 = objects[(i + j) % objects.len()];
                lines.push(format!(
                    "the {s} {v} the {o} near the {o2} while the {o3} waits quietly outside"
                ));
            }
        }
        assert_eq!(lines.len(), 50);
        let raw: Vec<RawPair> = lines
            .iter()
            .map(|l| RawPair {
                x: Vec::new(),
                y: crate::corpus::tokenize(l, Tokenizer::Word),
            })
            .collect();
        let streams: Vec<&[String]> = raw.iter().map(|r| r.y.as_slice()).collect();
        let vocab = build_vocab(streams, 100, 1).unwrap();
        let pairs = raw.iter().map(|r| encode_pair(r, &vocab)).collect();
        (pairs, vocab.len())
    }

    fn lm_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            src_vocab: 0,
            tgt_vocab: vocab,
            emb_dim: 16,
            hidden_dim: 32,
            encoder: EncoderKind::None,
            decoder: DecoderKind::ForwardUni,
            attention: AttentionKind::None,
        }
    }

    #[test]
    fn memorizes_small_corpus() {
        let (pairs, vocab) = memorization_corpus();
        let config = TrainConfig {
            learning_rate: 5.0,
            batch_size: 10,
            epochs: 200,
            valid_fraction: 0.0,
            seed: 3,
            halve_on_plateau: true,
            ..TrainConfig::default()
        };
        let result = train(&config, &pairs, lm_config(vocab)).unwrap();
        assert!(!result.diverged);
        let first = result.history.first().unwrap().train_nll;
        let last = result.history.last().unwrap().train_nll;
        // Fresh model sits near the uniform baseline.
        assert!(
            (first - (vocab as f64).ln()).abs() < 0.7,
            "epoch-0 nll {first} vs ln-vocab {}",
            (vocab as f64).ln()
        );
        assert!(last < 0.5, "memorization should reach < 0.5 nll/token, got {last}");
        assert!(last < first / 4.0);
        // Non-increasing after warmup, up to 5% transient upticks.
        let warmup = result.history.len() / 10;
        for w in result.history[warmup..].windows(2) {
            assert!(
                w[1].train_nll <= w[0].train_nll * 1.05,
                "uptick beyond 5% at epoch {}: {} -> {}",
                w[1].epoch,
                w[0].train_nll,
                w[1].train_nll
            );
        }
    }

    #[test]
    fn same_seed_same_history() {
        let (pairs, vocab) = memorization_corpus();
        let config = TrainConfig {
            epochs: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&config, &pairs, lm_config(vocab)).unwrap();
        let b = train(&config, &pairs, lm_config(vocab)).unwrap();
        for (ea, eb) in a.history.iter().zip(&b.history) {
            assert_eq!(ea.train_nll.to_bits(), eb.train_nll.to_bits());
            assert_eq!(ea.valid_nll.to_bits(), eb.valid_nll.to_bits());
        }
    }

    #[test]
    fn nesterov_optimizer_trains() {
        let (pairs, vocab) = memorization_corpus();
        let config = TrainConfig {
            learning_rate: 0.3,
            epochs: 12,
            optimizer: OptimizerKind::Nesterov,
            valid_fraction: 0.1,
            seed: 5,
            ..TrainConfig::default()
        };
        let result = train(&config, &pairs, lm_config(vocab)).unwrap();
        let first = result.history.first().unwrap().train_nll;
        let last = result.history.last().unwrap().train_nll;
        assert!(last < first);
    }

    #[test]
    fn csv_shape() {
        let history = vec![EpochStats {
            epoch: 0,
            train_nll: 1.5,
            valid_nll: 1.25,
        }];
        let csv = history_to_csv(&history);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,1.5"));
    }
}
