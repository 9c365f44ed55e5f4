//! Tape-recorded forward passes: the training losses and the penalized
//! infill loss whose gradients drive the embedding search. Mirrors
//! `forward.rs` primitive-for-primitive.

use super::{DecoderKind, EncoderOutput, ModelConfig, ModelParams};
use crate::corpus::{Template, BLANK, BOS, EOS};
use crate::error::{Error, Result};
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

struct TapedLstm {
    w_ih: Val,
    w_hh: Val,
    b: Val,
}

struct TapedDir {
    cell: TapedLstm,
    attn: Option<Val>,
    bridge_w: Option<Val>,
    bridge_b: Option<Val>,
}

/// Encoder output living on a tape.
pub struct TapedEnc {
    pub mat: Val,
    pub final_state: Val,
}

/// A model registered on a tape, either as differentiable variables
/// (training) or as constants (inference-time gradient search).
pub struct TapedModel {
    config: ModelConfig,
    param_vals: Vec<Val>,
    emb_src: Option<Val>,
    emb_tgt: Val,
    enc_fwd: Option<TapedLstm>,
    enc_bwd: Option<TapedLstm>,
    dec_fwd: TapedDir,
    dec_bwd: Option<TapedDir>,
    out_w: Val,
    out_b: Val,
}

impl TapedModel {
    /// Push every named parameter onto the tape in `ModelParams::named`
    /// order. `trainable` marks them as gradient targets.
    pub fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> TapedModel {
        let named = params.named();
        let mut vals = Vec::with_capacity(named.len());
        for (name, t) in &named {
            let v = if trainable {
                tape.var((*t).clone())
            } else {
                tape.leaf((*t).clone())
            };
            vals.push((name.clone(), v));
        }
        let get = |n: &str| -> Option<Val> {
            vals.iter().find(|(name, _)| name == n).map(|(_, v)| *v)
        };
        let lstm = |prefix: &str| -> Option<TapedLstm> {
            Some(TapedLstm {
                w_ih: get(&format!("{prefix}.w_ih"))?,
                w_hh: get(&format!("{prefix}.w_hh"))?,
                b: get(&format!("{prefix}.b"))?,
            })
        };
        let dir = |prefix: &str| -> Option<TapedDir> {
            Some(TapedDir {
                cell: lstm(&format!("{prefix}.cell"))?,
                attn: get(&format!("{prefix}.attn")),
                bridge_w: get(&format!("{prefix}.bridge_w")),
                bridge_b: get(&format!("{prefix}.bridge_b")),
            })
        };
        TapedModel {
            config: params.config.clone(),
            emb_src: get("emb_src"),
            emb_tgt: get("emb_tgt").expect("always present"),
            enc_fwd: lstm("enc_fwd"),
            enc_bwd: lstm("enc_bwd"),
            dec_fwd: dir("dec_fwd").expect("always present"),
            dec_bwd: dir("dec_bwd"),
            out_w: get("out_w").expect("always present"),
            out_b: get("out_b").expect("always present"),
            param_vals: vals.into_iter().map(|(_, v)| v).collect(),
        }
    }

    /// Tape handles in `ModelParams::named` order, for `Tape::grad`.
    pub fn param_vals(&self) -> &[Val] {
        &self.param_vals
    }

    fn lstm_cell(
        &self,
        tape: &mut Tape,
        cell: &TapedLstm,
        input: Val,
        h: Val,
        c: Val,
    ) -> Result<(Val, Val)> {
        let hidden = self.config.hidden_dim;
        let gx = tape.matvec(cell.w_ih, input)?;
        let gh = tape.matvec(cell.w_hh, h)?;
        let s = tape.add(gx, gh)?;
        let gates = tape.add(s, cell.b)?;
        let i_pre = tape.slice(gates, 0, hidden)?;
        let f_pre = tape.slice(gates, hidden, hidden)?;
        let g_pre = tape.slice(gates, 2 * hidden, hidden)?;
        let o_pre = tape.slice(gates, 3 * hidden, hidden)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let new_c = tape.add(fc, ig)?;
        let tc = tape.tanh(new_c);
        let new_h = tape.mul(o, tc)?;
        Ok((new_h, new_c))
    }

    /// Record the encoder over `x`; errors mirror `forward::encode`.
    pub fn encode(&self, tape: &mut Tape, x: &[usize]) -> Result<TapedEnc> {
        let emb = self.emb_src.ok_or_else(|| {
            Error::Config("encode called on an unconditional model".into())
        })?;
        if x.is_empty() {
            return Err(Error::Config("encoder input must be nonempty".into()));
        }
        let hidden = self.config.hidden_dim;
        let zero = tape.leaf(Tensor::zeros(vec![hidden]));
        let fwd = self.enc_fwd.as_ref().expect("conditional encoder");

        let mut h = zero;
        let mut c = zero;
        let mut fwd_states = Vec::with_capacity(x.len());
        for &t in x {
            let input = tape.row(emb, t)?;
            let (nh, nc) = self.lstm_cell(tape, fwd, input, h, c)?;
            h = nh;
            c = nc;
            fwd_states.push(h);
        }
        let fwd_final = *fwd_states.last().expect("nonempty");

        let (rows, final_state) = if let Some(bwd) = &self.enc_bwd {
            let mut h = zero;
            let mut c = zero;
            let mut bwd_states = vec![zero; x.len()];
            for t in (0..x.len()).rev() {
                let input = tape.row(emb, x[t])?;
                let (nh, nc) = self.lstm_cell(tape, bwd, input, h, c)?;
                h = nh;
                c = nc;
                bwd_states[t] = h;
            }
            let rows: Vec<Val> = fwd_states
                .iter()
                .zip(&bwd_states)
                .map(|(f, b)| tape.concat(&[*f, *b]))
                .collect();
            let final_state = tape.concat(&[fwd_final, bwd_states[0]]);
            (rows, final_state)
        } else {
            (fwd_states, fwd_final)
        };

        let mat = tape.stack_rows(&rows)?;
        Ok(TapedEnc { mat, final_state })
    }

    fn init_state(&self, tape: &mut Tape, dir: &TapedDir, enc: Option<&TapedEnc>) -> Result<(Val, Val)> {
        let hidden = self.config.hidden_dim;
        let zero = tape.leaf(Tensor::zeros(vec![hidden]));
        let h = match (enc, dir.bridge_w, dir.bridge_b) {
            (Some(enc), Some(w), Some(b)) => {
                let bh = tape.matvec(w, enc.final_state)?;
                let bhb = tape.add(bh, b)?;
                tape.tanh(bhb)
            }
            _ => zero,
        };
        Ok((h, zero))
    }

    /// One decoder-direction step; returns (h, c) after consuming `input`.
    fn dir_step(
        &self,
        tape: &mut Tape,
        dir: &TapedDir,
        state: (Val, Val),
        input_emb: Val,
        enc: Option<&TapedEnc>,
    ) -> Result<(Val, Val)> {
        let (h_prev, c_prev) = state;
        let input = match (enc, dir.attn) {
            (Some(enc), Some(attn)) => {
                let query = tape.matvec_t(attn, h_prev)?;
                let scores = tape.matvec(enc.mat, query)?;
                let weights = tape.softmax(scores);
                let ctx = tape.matvec_t(enc.mat, weights)?;
                tape.concat(&[input_emb, ctx])
            }
            _ => input_emb,
        };
        self.lstm_cell(tape, &dir.cell, input, h_prev, c_prev)
    }

    fn logits(&self, tape: &mut Tape, h: Val) -> Result<Val> {
        let wh = tape.matvec(self.out_w, h)?;
        tape.add(wh, self.out_b)
    }

    /// Teacher-forced NLL of a concrete sequence under a unidirectional
    /// decoder; the scalar node is −Σₜ log P(yₜ | y₁..ₜ₋₁, x).
    pub fn nll(&self, tape: &mut Tape, enc: Option<&TapedEnc>, y: &[usize]) -> Result<Val> {
        if self.config.decoder == DecoderKind::Birnn {
            return Err(Error::Config(
                "teacher-forced nll requires a unidirectional decoder".into(),
            ));
        }
        let mut state = self.init_state(tape, &self.dec_fwd, enc)?;
        let mut contribs = Vec::with_capacity(y.len());
        for t in 0..y.len() {
            let input_tok = if t == 0 { BOS } else { y[t - 1] };
            let input = tape.row(self.emb_tgt, input_tok)?;
            state = self.dir_step(tape, &self.dec_fwd, state, input, enc)?;
            let logits = self.logits(tape, state.0)?;
            let ls = tape.log_softmax(logits);
            contribs.push(tape.pick(ls, y[t])?);
        }
        let stacked = tape.concat(&contribs);
        let log_prob = tape.sum(stacked);
        Ok(tape.scale(log_prob, -1.0))
    }

    /// NLL of the filled template where blank positions feed the supplied
    /// embedding variables as decoder inputs (soft inputs, hard targets).
    pub fn fill_nll(
        &self,
        tape: &mut Tape,
        enc: Option<&TapedEnc>,
        template: &Template,
        fill: &[usize],
        emb_vars: &[Val],
    ) -> Result<Val> {
        let y = template.fill(fill);
        let blank_of: std::collections::HashMap<usize, usize> = template
            .blanks()
            .iter()
            .enumerate()
            .map(|(j, &p)| (p, j))
            .collect();
        let mut state = self.init_state(tape, &self.dec_fwd, enc)?;
        let mut contribs = Vec::with_capacity(y.len());
        for t in 0..y.len() {
            let input = if t == 0 {
                tape.row(self.emb_tgt, BOS)?
            } else if let Some(&j) = blank_of.get(&(t - 1)) {
                emb_vars[j]
            } else {
                tape.row(self.emb_tgt, y[t - 1])?
            };
            state = self.dir_step(tape, &self.dec_fwd, state, input, enc)?;
            let logits = self.logits(tape, state.0)?;
            let ls = tape.log_softmax(logits);
            contribs.push(tape.pick(ls, y[t])?);
        }
        let stacked = tape.concat(&contribs);
        let log_prob = tape.sum(stacked);
        Ok(tape.scale(log_prob, -1.0))
    }

    /// Bidirectional training loss: −Σₜ log P(yₜ | y_{≠t}, x), with each
    /// position's own input replaced by the blank placeholder embedding.
    pub fn birnn_nll(&self, tape: &mut Tape, enc: Option<&TapedEnc>, y: &[usize]) -> Result<Val> {
        let bwd = self
            .dec_bwd
            .as_ref()
            .ok_or_else(|| Error::Config("birnn loss requires a bidirectional decoder".into()))?;
        let m = y.len();
        let placeholder = tape.row(self.emb_tgt, BLANK)?;

        // states_f[t]: after consuming BOS, y[..t]
        let mut states_f = Vec::with_capacity(m);
        let mut sf = self.init_state(tape, &self.dec_fwd, enc)?;
        let bos = tape.row(self.emb_tgt, BOS)?;
        sf = self.dir_step(tape, &self.dec_fwd, sf, bos, enc)?;
        states_f.push(sf);
        for t in 1..m {
            let input = tape.row(self.emb_tgt, y[t - 1])?;
            sf = self.dir_step(tape, &self.dec_fwd, sf, input, enc)?;
            states_f.push(sf);
        }

        // states_b[t]: after consuming EOS, y[t+1..] right-to-left
        let mut states_b = vec![None; m];
        let mut sb = self.init_state(tape, bwd, enc)?;
        let eos = tape.row(self.emb_tgt, EOS)?;
        sb = self.dir_step(tape, bwd, sb, eos, enc)?;
        states_b[m - 1] = Some(sb);
        for t in (0..m - 1).rev() {
            let input = tape.row(self.emb_tgt, y[t + 1])?;
            sb = self.dir_step(tape, bwd, sb, input, enc)?;
            states_b[t] = Some(sb);
        }

        let mut contribs = Vec::with_capacity(m);
        for t in 0..m {
            let hf = self.dir_step(tape, &self.dec_fwd, states_f[t], placeholder, enc)?;
            let hb = self.dir_step(tape, bwd, states_b[t].expect("filled above"), placeholder, enc)?;
            let joint = tape.concat(&[hf.0, hb.0]);
            let logits = self.logits(tape, joint)?;
            let ls = tape.log_softmax(logits);
            contribs.push(tape.pick(ls, y[t])?);
        }
        let stacked = tape.concat(&contribs);
        let log_prob = tape.sum(stacked);
        Ok(tape.scale(log_prob, -1.0))
    }
}

/// Result of one penalized infill-loss evaluation.
#[derive(Debug, Clone)]
pub struct FillLoss {
    /// Full objective: NLL plus λ·Σⱼ‖embⱼ‖₂.
    pub loss: f64,
    /// The NLL term alone.
    pub nll: f64,
    /// ∂loss/∂embⱼ for every blank, in blank order.
    pub grads: Vec<Tensor>,
    /// Decoder cell evaluations executed by the forward pass.
    pub decoder_steps: usize,
}

/// Loss and exact blank-embedding gradients for a filled template.
///
/// Blank positions use `fill_embs[j]` directly as the decoder input
/// (bypassing the embedding lookup) while the cross-entropy target at a
/// blank stays the current discrete token `fill[j]`. Model parameters enter
/// the record as constants: only the blank vectors receive gradients.
pub fn fill_loss_and_grads(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    template: &Template,
    fill: &[usize],
    fill_embs: &[Tensor],
    lambda: f64,
) -> Result<FillLoss> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be ≥ 0, got {lambda}")));
    }
    if fill.len() != template.blank_count() || fill_embs.len() != template.blank_count() {
        return Err(Error::Config(format!(
            "expected one fill token and one embedding per blank ({}), got {} / {}",
            template.blank_count(),
            fill.len(),
            fill_embs.len()
        )));
    }
    for t in fill_embs {
        if t.shape() != [params.config.emb_dim] {
            return Err(Error::ShapeMismatch {
                op: "fill_loss_and_grads",
                lhs: t.shape().to_vec(),
                rhs: vec![params.config.emb_dim],
            });
        }
        t.ensure_finite("fill embedding")?;
    }
    for &tok in fill {
        if tok == BLANK || tok >= params.config.tgt_vocab {
            return Err(Error::Config(format!("invalid fill token {tok}")));
        }
    }

    let mut tape = Tape::new();
    let tm = TapedModel::register(&mut tape, params, false);
    let enc_vals = enc.map(|e| TapedEnc {
        mat: tape.leaf(e.states.clone()),
        final_state: tape.leaf(Tensor::vector(e.final_state.clone())),
    });
    let emb_vars: Vec<Val> = fill_embs.iter().map(|t| tape.var(t.clone())).collect();

    let nll_val = tm.fill_nll(&mut tape, enc_vals.as_ref(), template, fill, &emb_vars)?;
    let norms: Vec<Val> = emb_vars.iter().map(|v| tape.l2_norm(*v)).collect();
    let stacked = tape.concat(&norms);
    let pen_sum = tape.sum(stacked);
    let pen = tape.scale(pen_sum, lambda);
    let loss_val = tape.add(nll_val, pen)?;

    let loss = tape.value(loss_val).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "fill loss".into(),
        });
    }
    let grads = tape.grad(loss_val, &emb_vars)?;
    Ok(FillLoss {
        loss,
        nll: tape.value(nll_val).item(),
        grads,
        decoder_steps: template.len(),
    })
}
