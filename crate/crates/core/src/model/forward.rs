//! Plain (un-recorded) forward passes. These mirror the taped builders in
//! `taped.rs` kernel-for-kernel so both paths produce the same numbers.

use super::{DecoderKind, DirectionParams, EncoderOutput, LstmParams, ModelParams};
use crate::corpus::{BLANK, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Recurrent decoder state for one direction.
#[derive(Debug, Clone)]
pub struct DecState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// One decoder step output: distribution over the next token plus the
/// attention read (conditional models only).
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub dist: Vec<f64>,
    pub attn: Option<Vec<f64>>,
    pub context: Option<Vec<f64>>,
    pub state: DecState,
}

/// Exact reversal; framing anchors (BOS/EOS) are added by consumers, never
/// stored in sequences, so this is a plain mirror.
pub fn reverse_sequence(y: &[usize]) -> Vec<usize> {
    y.iter().rev().copied().collect()
}

pub(super) fn lstm_cell_raw(
    cell: &LstmParams,
    input: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = cell.hidden();
    let four_h = 4 * hidden;
    let mut gx = vec![0.0; four_h];
    tensor::matvec(cell.w_ih.data(), four_h, input.len(), input, &mut gx);
    let mut gh = vec![0.0; four_h];
    tensor::matvec(cell.w_hh.data(), four_h, hidden, h, &mut gh);
    let mut gates: Vec<f64> = gx.iter().zip(&gh).map(|(a, b)| a + b).collect();
    for (g, b) in gates.iter_mut().zip(cell.b.data()) {
        *g += b;
    }
    let mut new_c = vec![0.0; hidden];
    let mut new_h = vec![0.0; hidden];
    for k in 0..hidden {
        let i = tensor::sigmoid(gates[k]);
        let f = tensor::sigmoid(gates[hidden + k]);
        let g = gates[2 * hidden + k].tanh();
        let o = tensor::sigmoid(gates[3 * hidden + k]);
        let cc = f * c[k] + i * g;
        new_c[k] = cc;
        new_h[k] = o * cc.tanh();
    }
    (new_h, new_c)
}

// ── Encoder ──────────────────────────────────────────────────────────────

/// Run the encoder over `x`. The output has exactly `x.len()` states.
pub fn encode(params: &ModelParams, x: &[usize]) -> Result<EncoderOutput> {
    if !params.config.conditional() {
        return Err(Error::Config("encode called on an unconditional model".into()));
    }
    if x.is_empty() {
        return Err(Error::Config("encoder input must be nonempty".into()));
    }
    let emb = params
        .emb_src
        .as_ref()
        .expect("conditional model has source embeddings");
    for &t in x {
        if t >= emb.rows() {
            return Err(Error::Config(format!(
                "source token index {t} out of range for vocab {}",
                emb.rows()
            )));
        }
    }
    let hidden = params.config.hidden_dim;
    let fwd = params.enc_fwd.as_ref().expect("conditional encoder");

    let run = |cell: &LstmParams, order: &mut dyn Iterator<Item = usize>| {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut states = Vec::new();
        for t in order {
            let (nh, nc) = lstm_cell_raw(cell, emb.row(x[t]), &h, &c);
            h = nh;
            c = nc;
            states.push((t, h.clone()));
        }
        states
    };

    let n = x.len();
    let fwd_states = run(fwd, &mut (0..n));
    let enc_dim = params.config.enc_dim();
    let mut mat = vec![0.0; n * enc_dim];
    for (t, h) in &fwd_states {
        mat[t * enc_dim..t * enc_dim + hidden].copy_from_slice(h);
    }
    let mut final_state = fwd_states.last().expect("nonempty").1.clone();

    if let Some(bwd) = &params.enc_bwd {
        let bwd_states = run(bwd, &mut (0..n).rev());
        for (t, h) in &bwd_states {
            mat[t * enc_dim + hidden..(t + 1) * enc_dim].copy_from_slice(h);
        }
        final_state.extend_from_slice(&bwd_states.last().expect("nonempty").1);
    }

    Ok(EncoderOutput {
        states: Tensor::matrix(n, enc_dim, mat).expect("sized above"),
        final_state,
    })
}

// ── Decoder steps ────────────────────────────────────────────────────────

/// Initial state of one decoder direction: bridged from the final encoder
/// state when conditional, zeros otherwise. Cell memory always starts at 0.
pub fn init_state(params: &ModelParams, dir: &DirectionParams, enc: Option<&EncoderOutput>) -> DecState {
    let hidden = params.config.hidden_dim;
    let h = match (enc, &dir.bridge_w, &dir.bridge_b) {
        (Some(enc), Some(w), Some(b)) => {
            let mut h = vec![0.0; hidden];
            tensor::matvec(w.data(), hidden, w.cols(), &enc.final_state, &mut h);
            for (v, bias) in h.iter_mut().zip(b.data()) {
                *v += bias;
            }
            tensor::tanh_slice(&mut h);
            h
        }
        _ => vec![0.0; hidden],
    };
    DecState {
        h,
        c: vec![0.0; hidden],
    }
}

/// Bilinear attention read queried by the previous hidden state:
/// `score_i = hᵀ W h_enc_i`, weights softmaxed, context = Σ aᵢ·h_enc_i.
fn attend(attn_w: &Tensor, enc: &EncoderOutput, h_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (hidden, enc_dim) = (attn_w.rows(), attn_w.cols());
    let n = enc.len();
    let mut query = vec![0.0; enc_dim];
    tensor::matvec_t(attn_w.data(), hidden, enc_dim, h_prev, &mut query);
    let mut scores = vec![0.0; n];
    tensor::matvec(enc.states.data(), n, enc_dim, &query, &mut scores);
    tensor::softmax_slice(&mut scores);
    let mut ctx = vec![0.0; enc_dim];
    tensor::matvec_t(enc.states.data(), n, enc_dim, &scores, &mut ctx);
    (scores, ctx)
}

/// Advance one direction by one input embedding; returns the new state and
/// the attention read used for it.
pub(super) fn cell_step(
    dir: &DirectionParams,
    state: &DecState,
    input_emb: &[f64],
    enc: Option<&EncoderOutput>,
) -> (DecState, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (attn, ctx, input): (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) =
        match (enc, &dir.attn) {
            (Some(enc), Some(w)) => {
                let (a, c) = attend(w, enc, &state.h);
                let mut input = Vec::with_capacity(input_emb.len() + c.len());
                input.extend_from_slice(input_emb);
                input.extend_from_slice(&c);
                (Some(a), Some(c), input)
            }
            _ => (None, None, input_emb.to_vec()),
        };
    let (h, c) = lstm_cell_raw(&dir.cell, &input, &state.h, &state.c);
    (DecState { h, c }, attn, ctx)
}

/// Output logits for a decoder hidden vector (or the two-direction concat).
pub fn project_hidden(params: &ModelParams, h: &[f64]) -> Vec<f64> {
    let v = params.out_w.rows();
    let mut logits = vec![0.0; v];
    tensor::matvec(params.out_w.data(), v, params.out_w.cols(), h, &mut logits);
    for (l, b) in logits.iter_mut().zip(params.out_b.data()) {
        *l += b;
    }
    logits
}

/// One public decoder step: consume token `y_t`, emit P(next | consumed so far).
pub fn decoder_step(
    params: &ModelParams,
    state: &DecState,
    y_t: usize,
    enc: Option<&EncoderOutput>,
) -> Result<StepOutput> {
    if y_t >= params.config.tgt_vocab {
        return Err(Error::Config(format!(
            "target token index {y_t} out of range for vocab {}",
            params.config.tgt_vocab
        )));
    }
    let emb = params.emb_tgt.row(y_t).to_vec();
    decoder_step_emb(params, state, &emb, enc)
}

/// Decoder step with a caller-supplied input embedding (the gradient-search
/// path feeds blank vectors directly, bypassing the lookup).
pub fn decoder_step_emb(
    params: &ModelParams,
    state: &DecState,
    input_emb: &[f64],
    enc: Option<&EncoderOutput>,
) -> Result<StepOutput> {
    if params.config.conditional() != enc.is_some() {
        return Err(Error::Config(
            "encoder output must be supplied exactly when the model is conditional".into(),
        ));
    }
    if state.h.len() != params.config.hidden_dim || input_emb.len() != params.config.emb_dim {
        return Err(Error::ShapeMismatch {
            op: "decoder_step",
            lhs: vec![state.h.len(), input_emb.len()],
            rhs: vec![params.config.hidden_dim, params.config.emb_dim],
        });
    }
    if params.config.decoder == DecoderKind::Birnn {
        return Err(Error::Config(
            "decoder_step requires a unidirectional decoder; use birnn_conditional".into(),
        ));
    }
    let (new_state, attn, ctx) = cell_step(&params.dec_fwd, state, input_emb, enc);
    let mut dist = project_hidden(params, &new_state.h);
    tensor::softmax_slice(&mut dist);
    Ok(StepOutput {
        dist,
        attn,
        context: ctx,
        state: new_state,
    })
}

/// Advance a unidirectional decoder by one token and return the
/// log-softmaxed distribution over the next position. The beam fills live
/// on this entry point.
pub fn step_log_dist(
    params: &ModelParams,
    state: &DecState,
    token: usize,
    enc: Option<&EncoderOutput>,
) -> Result<(Vec<f64>, DecState)> {
    if params.config.decoder == DecoderKind::Birnn {
        return Err(Error::Config(
            "step_log_dist requires a unidirectional decoder".into(),
        ));
    }
    if token >= params.config.tgt_vocab {
        return Err(Error::Config(format!(
            "target token index {token} out of range for vocab {}",
            params.config.tgt_vocab
        )));
    }
    if params.config.conditional() != enc.is_some() {
        return Err(Error::Config(
            "encoder output must be supplied exactly when the model is conditional".into(),
        ));
    }
    let (new_state, _, _) = cell_step(&params.dec_fwd, state, params.emb_tgt.row(token), enc);
    let mut logits = project_hidden(params, &new_state.h);
    tensor::log_softmax_slice(&mut logits);
    Ok((logits, new_state))
}

// ── Sequence scoring ─────────────────────────────────────────────────────

/// Negative log-likelihood of a concrete sequence.
#[derive(Debug, Clone, Copy)]
pub struct SeqNll {
    pub total: f64,
    pub tokens: usize,
    /// Decoder cell evaluations actually executed (= tokens).
    pub steps: usize,
}

impl SeqNll {
    pub fn per_token(&self) -> f64 {
        self.total / self.tokens as f64
    }
}

/// −Σₜ log P(yₜ | y₁..ₜ₋₁, x) over all positions of `y`, teacher-forced from
/// the BOS anchor. Rejects sequences still containing BLANK.
pub fn sequence_nll(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    y: &[usize],
) -> Result<SeqNll> {
    if params.config.decoder == DecoderKind::Birnn {
        return Err(Error::Config(
            "sequence_nll requires a unidirectional decoder".into(),
        ));
    }
    if params.config.conditional() != enc.is_some() {
        return Err(Error::Config(
            "encoder output must be supplied exactly when the model is conditional".into(),
        ));
    }
    if y.is_empty() {
        return Err(Error::Config("cannot score an empty sequence".into()));
    }
    for &t in y {
        if t == BLANK {
            return Err(Error::Config(
                "sequence_nll rejects sequences containing the blank placeholder".into(),
            ));
        }
        if t >= params.config.tgt_vocab {
            return Err(Error::Config(format!(
                "target token index {t} out of range for vocab {}",
                params.config.tgt_vocab
            )));
        }
    }
    Ok(sequence_nll_tokens(params, enc, y))
}

/// Unchecked scoring core shared by the beam/projection hot paths.
pub fn sequence_nll_tokens(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    y: &[usize],
) -> SeqNll {
    let mut state = init_state(params, &params.dec_fwd, enc);
    let mut total = 0.0;
    let mut steps = 0;
    for t in 0..y.len() {
        let input = if t == 0 { BOS } else { y[t - 1] };
        let (new_state, _, _) = cell_step(&params.dec_fwd, &state, params.emb_tgt.row(input), enc);
        steps += 1;
        let mut logits = project_hidden(params, &new_state.h);
        tensor::log_softmax_slice(&mut logits);
        total -= logits[y[t]];
        state = new_state;
    }
    SeqNll {
        total,
        tokens: y.len(),
        steps,
    }
}

// ── Directional conditionals ─────────────────────────────────────────────

/// Full next-token distributions at position `t` from a forward model
/// (conditioned on the left context) and a backward model (conditioned on
/// the reversed right context). Used by bidirectional beam search.
pub fn directional_dists(
    fwd: &ModelParams,
    bwd: &ModelParams,
    enc_fwd: Option<&EncoderOutput>,
    enc_bwd: Option<&EncoderOutput>,
    y: &[usize],
    t: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if fwd.config.tgt_vocab != bwd.config.tgt_vocab {
        return Err(Error::ShapeMismatch {
            op: "directional_dists",
            lhs: vec![fwd.config.tgt_vocab],
            rhs: vec![bwd.config.tgt_vocab],
        });
    }
    if t >= y.len() {
        return Err(Error::Config(format!(
            "position {t} out of range for length {}",
            y.len()
        )));
    }
    let walk = |params: &ModelParams, enc: Option<&EncoderOutput>, prefix: &[usize]| {
        let mut state = init_state(params, &params.dec_fwd, enc);
        state = cell_step(&params.dec_fwd, &state, params.emb_tgt.row(BOS), enc).0;
        for &tok in prefix {
            state = cell_step(&params.dec_fwd, &state, params.emb_tgt.row(tok), enc).0;
        }
        let mut dist = project_hidden(params, &state.h);
        tensor::softmax_slice(&mut dist);
        dist
    };
    let p_fwd = walk(fwd, enc_fwd, &y[..t]);
    let rev = reverse_sequence(y);
    let rt = y.len() - 1 - t;
    let p_bwd = walk(bwd, enc_bwd, &rev[..rt]);
    Ok((p_fwd, p_bwd))
}

/// `(P_fwd(y_t | y_{<t}, x), P_bwd(y_t | y_{>t}, x))` for the token actually
/// at position `t`.
pub fn directional_prob(
    fwd: &ModelParams,
    bwd: &ModelParams,
    x: Option<&[usize]>,
    y: &[usize],
    t: usize,
) -> Result<(f64, f64)> {
    let enc_f = x.map(|x| encode(fwd, x)).transpose()?;
    let enc_b = x.map(|x| encode(bwd, x)).transpose()?;
    let (pf, pb) = directional_dists(fwd, bwd, enc_f.as_ref(), enc_b.as_ref(), y, t)?;
    Ok((pf[y[t]], pb[y[t]]))
}

/// Pseudo-likelihood of a concrete sequence under a bidirectional decoder:
/// −Σₜ log P(yₜ | y_{≠t}, x). Prefix states are shared across positions, so
/// the whole pass costs O(m) cell steps.
pub fn birnn_sequence_nll(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    y: &[usize],
) -> Result<SeqNll> {
    if params.config.decoder != DecoderKind::Birnn {
        return Err(Error::Config(
            "birnn_sequence_nll requires a bidirectional decoder".into(),
        ));
    }
    if y.is_empty() {
        return Err(Error::Config("cannot score an empty sequence".into()));
    }
    let bwd_dir = params
        .dec_bwd
        .as_ref()
        .expect("birnn decoder has a backward direction");
    let placeholder = params.emb_tgt.row(BLANK);
    let m = y.len();
    let mut steps = 0;

    let mut states_f = Vec::with_capacity(m);
    let mut sf = init_state(params, &params.dec_fwd, enc);
    sf = cell_step(&params.dec_fwd, &sf, params.emb_tgt.row(BOS), enc).0;
    steps += 1;
    states_f.push(sf.clone());
    for t in 1..m {
        sf = cell_step(&params.dec_fwd, &sf, params.emb_tgt.row(y[t - 1]), enc).0;
        steps += 1;
        states_f.push(sf.clone());
    }

    let mut states_b: Vec<Option<DecState>> = vec![None; m];
    let mut sb = init_state(params, bwd_dir, enc);
    sb = cell_step(bwd_dir, &sb, params.emb_tgt.row(EOS), enc).0;
    steps += 1;
    states_b[m - 1] = Some(sb.clone());
    for t in (0..m - 1).rev() {
        sb = cell_step(bwd_dir, &sb, params.emb_tgt.row(y[t + 1]), enc).0;
        steps += 1;
        states_b[t] = Some(sb.clone());
    }

    let mut total = 0.0;
    for t in 0..m {
        let hf = cell_step(&params.dec_fwd, &states_f[t], placeholder, enc).0;
        let hb = cell_step(bwd_dir, states_b[t].as_ref().expect("filled"), placeholder, enc).0;
        steps += 2;
        let mut joint = Vec::with_capacity(2 * params.config.hidden_dim);
        joint.extend_from_slice(&hf.h);
        joint.extend_from_slice(&hb.h);
        let mut logits = project_hidden(params, &joint);
        tensor::log_softmax_slice(&mut logits);
        total -= logits[y[t]];
    }
    Ok(SeqNll {
        total,
        tokens: m,
        steps,
    })
}

// ── Bidirectional conditional ────────────────────────────────────────────

/// P(y_t | y_{≠t}, x) from a bidirectional decoder: both directions run over
/// the sequence with position `t`'s input replaced by the blank placeholder
/// embedding, so the distribution never conditions on y_t itself.
pub fn birnn_conditional(
    params: &ModelParams,
    x: Option<&[usize]>,
    y: &[usize],
    t: usize,
) -> Result<Vec<f64>> {
    let enc = x.map(|x| encode(params, x)).transpose()?;
    birnn_conditional_with_enc(params, enc.as_ref(), y, t)
}

pub fn birnn_conditional_with_enc(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    y: &[usize],
    t: usize,
) -> Result<Vec<f64>> {
    if params.config.decoder != DecoderKind::Birnn {
        return Err(Error::Config(
            "birnn_conditional requires a bidirectional decoder".into(),
        ));
    }
    if params.config.conditional() != enc.is_some() {
        return Err(Error::Config(
            "encoder output must be supplied exactly when the model is conditional".into(),
        ));
    }
    if t >= y.len() {
        return Err(Error::Config(format!(
            "position {t} out of range for length {}",
            y.len()
        )));
    }
    let bwd_dir = params
        .dec_bwd
        .as_ref()
        .expect("birnn decoder has a backward direction");
    let placeholder = params.emb_tgt.row(BLANK);

    // Left-to-right: consume BOS, y[0..t], then the placeholder at t.
    let mut state_f = init_state(params, &params.dec_fwd, enc);
    state_f = cell_step(&params.dec_fwd, &state_f, params.emb_tgt.row(BOS), enc).0;
    for &tok in &y[..t] {
        state_f = cell_step(&params.dec_fwd, &state_f, params.emb_tgt.row(tok), enc).0;
    }
    let h_f = cell_step(&params.dec_fwd, &state_f, placeholder, enc).0;

    // Right-to-left: consume EOS, y[m−1..t+1], then the placeholder at t.
    let mut state_b = init_state(params, bwd_dir, enc);
    state_b = cell_step(bwd_dir, &state_b, params.emb_tgt.row(EOS), enc).0;
    for &tok in y[t + 1..].iter().rev() {
        state_b = cell_step(bwd_dir, &state_b, params.emb_tgt.row(tok), enc).0;
    }
    let h_b = cell_step(bwd_dir, &state_b, placeholder, enc).0;

    let mut joint = Vec::with_capacity(2 * params.config.hidden_dim);
    joint.extend_from_slice(&h_f.h);
    joint.extend_from_slice(&h_b.h);
    let mut dist = project_hidden(params, &joint);
    tensor::softmax_slice(&mut dist);
    Ok(dist)
}
