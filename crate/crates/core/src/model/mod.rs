//! Attention seq2seq models: an LSTM encoder (absent for unconditional
//! language models), a bilinear-attention LSTM decoder, and the two decoder
//! variants the baselines need — a reversed-target unidirectional decoder and
//! a bidirectional decoder scoring each position from both contexts.

mod checkpoint;
mod forward;
mod taped;

#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use forward::{
    birnn_conditional, birnn_conditional_with_enc, birnn_sequence_nll, decoder_step,
    decoder_step_emb, directional_dists, directional_prob, encode, init_state, project_hidden,
    reverse_sequence, sequence_nll, sequence_nll_tokens, step_log_dist, DecState, SeqNll,
    StepOutput,
};
pub use taped::{fill_loss_and_grads, FillLoss, TapedModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Unconditional language model: no encoder at all.
    None,
    Uni,
    Bi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    /// Standard left-to-right decoder.
    ForwardUni,
    /// Same structure, trained on reversed targets; consumers feed it
    /// reversed sequences.
    BackwardUni,
    /// Two LSTM directions over the full target; scores each position from
    /// both contexts with the position's own input replaced by a placeholder.
    Birnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    None,
    BilinearGeneral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Source vocabulary size; 0 for unconditional models.
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub encoder: EncoderKind,
    pub decoder: DecoderKind,
    pub attention: AttentionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            src_vocab: 0,
            tgt_vocab: 0,
            emb_dim: 64,
            hidden_dim: 128,
            encoder: EncoderKind::Uni,
            decoder: DecoderKind::ForwardUni,
            attention: AttentionKind::BilinearGeneral,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embedding and hidden dims must be ≥ 1".into()));
        }
        if self.tgt_vocab <= corpus::SPECIALS.len() {
            return Err(Error::Config(format!(
                "target vocab must exceed the {} specials, got {}",
                corpus::SPECIALS.len(),
                self.tgt_vocab
            )));
        }
        match self.encoder {
            EncoderKind::None => {
                if self.attention != AttentionKind::None {
                    return Err(Error::Config(
                        "unconditional models cannot use attention".into(),
                    ));
                }
                if self.src_vocab != 0 {
                    return Err(Error::Config(
                        "unconditional models must have src_vocab = 0".into(),
                    ));
                }
            }
            _ => {
                if self.src_vocab <= corpus::SPECIALS.len() {
                    return Err(Error::Config(format!(
                        "conditional models need a source vocab, got {}",
                        self.src_vocab
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn conditional(&self) -> bool {
        self.encoder != EncoderKind::None
    }

    /// Width of one encoder state (0 when unconditional).
    pub fn enc_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::None => 0,
            EncoderKind::Uni => self.hidden_dim,
            EncoderKind::Bi => 2 * self.hidden_dim,
        }
    }

    /// Decoder LSTM input width: token embedding plus attention context.
    pub fn dec_input_dim(&self) -> usize {
        self.emb_dim + self.enc_dim()
    }

    /// Width of the vector fed to the output projection.
    pub fn out_dim(&self) -> usize {
        match self.decoder {
            DecoderKind::Birnn => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }
}

/// One LSTM cell: fused gate weights in i, f, g, o order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor, // [4H × input_dim]
    pub w_hh: Tensor, // [4H × H]
    pub b: Tensor,    // [4H]
}

impl LstmParams {
    fn init(input_dim: usize, hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut b = Tensor::zeros(vec![4 * hidden]);
        // Forget-gate bias starts at 1 so early training keeps cell memory.
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmParams {
            w_ih: Tensor::uniform(vec![4 * hidden, input_dim], scale, rng),
            w_hh: Tensor::uniform(vec![4 * hidden, hidden], scale, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }
}

/// One decoder direction: its cell plus (conditional only) attention and the
/// bridge mapping the final encoder state to the direction's initial hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams {
    pub cell: LstmParams,
    pub attn: Option<Tensor>,     // [H × enc_dim]
    pub bridge_w: Option<Tensor>, // [H × enc_dim]
    pub bridge_b: Option<Tensor>, // [H]
}

impl DirectionParams {
    fn init(config: &ModelConfig, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden_dim;
        let cell = LstmParams::init(config.dec_input_dim(), h, scale, rng);
        if config.conditional() {
            DirectionParams {
                cell,
                attn: (config.attention == AttentionKind::BilinearGeneral)
                    .then(|| Tensor::uniform(vec![h, config.enc_dim()], scale, rng)),
                bridge_w: Some(Tensor::uniform(vec![h, config.enc_dim()], scale, rng)),
                bridge_b: Some(Tensor::zeros(vec![h])),
            }
        } else {
            DirectionParams {
                cell,
                attn: None,
                bridge_w: None,
                bridge_b: None,
            }
        }
    }
}

/// All trainable arrays of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub emb_src: Option<Tensor>, // [src_vocab × emb]
    pub emb_tgt: Tensor,         // [tgt_vocab × emb]
    pub enc_fwd: Option<LstmParams>,
    pub enc_bwd: Option<LstmParams>,
    pub dec_fwd: DirectionParams,
    pub dec_bwd: Option<DirectionParams>, // Birnn only
    pub out_w: Tensor, // [tgt_vocab × out_dim]
    pub out_b: Tensor, // [tgt_vocab]
}

impl ModelParams {
    /// Seeded uniform initialization in ±0.08.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let scale = 0.08;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_src = config
            .conditional()
            .then(|| Tensor::uniform(vec![config.src_vocab, config.emb_dim], scale, &mut rng));
        let emb_tgt = Tensor::uniform(vec![config.tgt_vocab, config.emb_dim], scale, &mut rng);
        let enc_fwd = config
            .conditional()
            .then(|| LstmParams::init(config.emb_dim, config.hidden_dim, scale, &mut rng));
        let enc_bwd = (config.encoder == EncoderKind::Bi)
            .then(|| LstmParams::init(config.emb_dim, config.hidden_dim, scale, &mut rng));
        let dec_fwd = DirectionParams::init(&config, scale, &mut rng);
        let dec_bwd = (config.decoder == DecoderKind::Birnn)
            .then(|| DirectionParams::init(&config, scale, &mut rng));
        let out_w = Tensor::uniform(vec![config.tgt_vocab, config.out_dim()], scale, &mut rng);
        let out_b = Tensor::zeros(vec![config.tgt_vocab]);
        Ok(ModelParams {
            config,
            emb_src,
            emb_tgt,
            enc_fwd,
            enc_bwd,
            dec_fwd,
            dec_bwd,
            out_w,
            out_b,
        })
    }

    /// Stable (name, tensor) listing; checkpoint layout and training updates
    /// both follow this order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        if let Some(t) = &self.emb_src {
            out.push(("emb_src".into(), t));
        }
        out.push(("emb_tgt".into(), &self.emb_tgt));
        if let Some(l) = &self.enc_fwd {
            push_lstm(&mut out, "enc_fwd", l);
        }
        if let Some(l) = &self.enc_bwd {
            push_lstm(&mut out, "enc_bwd", l);
        }
        push_direction(&mut out, "dec_fwd", &self.dec_fwd);
        if let Some(d) = &self.dec_bwd {
            push_direction(&mut out, "dec_bwd", d);
        }
        out.push(("out_w".into(), &self.out_w));
        out.push(("out_b".into(), &self.out_b));
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        if let Some(t) = &mut self.emb_src {
            out.push(("emb_src".into(), t));
        }
        out.push(("emb_tgt".into(), &mut self.emb_tgt));
        if let Some(l) = &mut self.enc_fwd {
            push_lstm_mut(&mut out, "enc_fwd", l);
        }
        if let Some(l) = &mut self.enc_bwd {
            push_lstm_mut(&mut out, "enc_bwd", l);
        }
        push_direction_mut(&mut out, "dec_fwd", &mut self.dec_fwd);
        if let Some(d) = &mut self.dec_bwd {
            push_direction_mut(&mut out, "dec_bwd", d);
        }
        out.push(("out_w".into(), &mut self.out_w));
        out.push(("out_b".into(), &mut self.out_b));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Embedding row of a target token.
    pub fn tgt_embedding(&self, token: usize) -> &[f64] {
        self.emb_tgt.row(token)
    }
}

fn push_lstm<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, l: &'a LstmParams) {
    out.push((format!("{prefix}.w_ih"), &l.w_ih));
    out.push((format!("{prefix}.w_hh"), &l.w_hh));
    out.push((format!("{prefix}.b"), &l.b));
}

fn push_lstm_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, l: &'a mut LstmParams) {
    out.push((format!("{prefix}.w_ih"), &mut l.w_ih));
    out.push((format!("{prefix}.w_hh"), &mut l.w_hh));
    out.push((format!("{prefix}.b"), &mut l.b));
}

fn push_direction<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, d: &'a DirectionParams) {
    push_lstm(out, &format!("{prefix}.cell"), &d.cell);
    if let Some(t) = &d.attn {
        out.push((format!("{prefix}.attn"), t));
    }
    if let Some(t) = &d.bridge_w {
        out.push((format!("{prefix}.bridge_w"), t));
    }
    if let Some(t) = &d.bridge_b {
        out.push((format!("{prefix}.bridge_b"), t));
    }
}

fn push_direction_mut<'a>(
    out: &mut Vec<(String, &'a mut Tensor)>,
    prefix: &str,
    d: &'a mut DirectionParams,
) {
    push_lstm_mut(out, &format!("{prefix}.cell"), &mut d.cell);
    if let Some(t) = &mut d.attn {
        out.push((format!("{prefix}.attn"), t));
    }
    if let Some(t) = &mut d.bridge_w {
        out.push((format!("{prefix}.bridge_w"), t));
    }
    if let Some(t) = &mut d.bridge_b {
        out.push((format!("{prefix}.bridge_b"), t));
    }
}

/// Encoder pass output: one state per input position plus the concatenated
/// final state used to initialize decoder directions.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// [n × enc_dim] matrix of per-position states.
    pub states: Tensor,
    /// Concatenation of each direction's final hidden state.
    pub final_state: Vec<f64>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn state(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }
}
