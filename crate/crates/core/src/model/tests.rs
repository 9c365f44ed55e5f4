use super::*;
use crate::corpus::{Template, BLANK, BOS};
use crate::tape::{finite_diff_grad, Tape};
use crate::tensor::Tensor;

fn cond_config(vocab: usize, encoder: EncoderKind, decoder: DecoderKind) -> ModelConfig {
    ModelConfig {
        src_vocab: vocab,
        tgt_vocab: vocab,
        emb_dim: 4,
        hidden_dim: 5,
        encoder,
        decoder,
        attention: AttentionKind::BilinearGeneral,
    }
}

fn lm_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        src_vocab: 0,
        tgt_vocab: vocab,
        emb_dim: 4,
        hidden_dim: 5,
        encoder: EncoderKind::None,
        decoder: DecoderKind::ForwardUni,
        attention: AttentionKind::None,
    }
}

#[test]
fn config_validation() {
    assert!(lm_config(10).validate().is_ok());
    let mut bad = lm_config(10);
    bad.attention = AttentionKind::BilinearGeneral;
    assert!(bad.validate().is_err());
    let mut bad = cond_config(10, EncoderKind::Uni, DecoderKind::ForwardUni);
    bad.src_vocab = 0;
    assert!(bad.validate().is_err());
    let mut bad = lm_config(10);
    bad.tgt_vocab = 5;
    assert!(bad.validate().is_err());
}

#[test]
fn encode_shapes_and_determinism() {
    let uni = ModelParams::init(cond_config(9, EncoderKind::Uni, DecoderKind::ForwardUni), 1).unwrap();
    let one = encode(&uni, &[5]).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one.state(0).len(), 5);

    let bi = ModelParams::init(cond_config(9, EncoderKind::Bi, DecoderKind::ForwardUni), 2).unwrap();
    let out = encode(&bi, &[5, 6, 7]).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out.state(0).len(), 10);
    assert_eq!(out.final_state.len(), 10);

    let again = encode(&bi, &[5, 6, 7]).unwrap();
    assert_eq!(out.states.data(), again.states.data());

    assert!(encode(&bi, &[]).is_err());
    assert!(encode(&bi, &[100]).is_err());
}

#[test]
fn attention_over_single_position_is_forced() {
    let params = ModelParams::init(cond_config(9, EncoderKind::Uni, DecoderKind::ForwardUni), 3).unwrap();
    let enc = encode(&params, &[6]).unwrap();
    let state = init_state(&params, &params.dec_fwd, Some(&enc));
    let out = decoder_step(&params, &state, BOS, Some(&enc)).unwrap();
    let attn = out.attn.unwrap();
    assert_eq!(attn, vec![1.0]);
    assert_eq!(out.context.unwrap(), enc.state(0).to_vec());
    let sum: f64 = out.dist.iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
    assert!(out.dist.iter().all(|&p| p > 0.0));
}

#[test]
fn zeroed_projection_gives_uniform_distribution() {
    let vocab = 10;
    let mut params = ModelParams::init(lm_config(vocab), 4).unwrap();
    params.out_w = Tensor::zeros(params.out_w.shape().to_vec());
    params.out_b = Tensor::zeros(params.out_b.shape().to_vec());
    let state = init_state(&params, &params.dec_fwd, None);
    let out = decoder_step(&params, &state, BOS, None).unwrap();
    for &p in &out.dist {
        assert!((p - 0.1).abs() < 1e-12);
    }
    // m = 4 tokens under the uniform model: total NLL = 4·ln 10.
    let nll = sequence_nll(&params, None, &[5, 6, 7, 8]).unwrap();
    assert!((nll.total - 4.0 * (10f64).ln()).abs() < 1e-9);
    assert!((nll.per_token() - (10f64).ln()).abs() < 1e-9);
}

#[test]
fn sequence_nll_matches_stepwise_accumulation() {
    let params = ModelParams::init(cond_config(11, EncoderKind::Bi, DecoderKind::ForwardUni), 5).unwrap();
    let x = vec![5, 8, 6];
    let y = vec![7, 9, 5, 10, 6];
    let enc = encode(&params, &x).unwrap();
    let direct = sequence_nll(&params, Some(&enc), &y).unwrap();

    let mut state = init_state(&params, &params.dec_fwd, Some(&enc));
    let mut total = 0.0;
    for t in 0..y.len() {
        let input = if t == 0 { BOS } else { y[t - 1] };
        let out = decoder_step(&params, &state, input, Some(&enc)).unwrap();
        total -= out.dist[y[t]].ln();
        state = out.state;
    }
    assert!(
        (direct.total - total).abs() < 1e-9,
        "{} vs {}",
        direct.total,
        total
    );
    assert!(direct.total >= 0.0);
}

#[test]
fn sequence_nll_rejects_blanks() {
    let params = ModelParams::init(lm_config(10), 6).unwrap();
    assert!(sequence_nll(&params, None, &[5, BLANK, 6]).is_err());
}

#[test]
fn fill_loss_without_penalty_equals_sequence_nll_on_true_rows() {
    let params = ModelParams::init(cond_config(12, EncoderKind::Uni, DecoderKind::ForwardUni), 7).unwrap();
    let x = vec![5, 6];
    let y = vec![7, 8, 9, 10];
    let template = Template::from_masked(&y, &[1, 2]);
    let enc = encode(&params, &x).unwrap();
    let fill = vec![8, 9];
    let embs: Vec<Tensor> = fill
        .iter()
        .map(|&t| Tensor::vector(params.tgt_embedding(t).to_vec()))
        .collect();
    let fl = fill_loss_and_grads(&params, Some(&enc), &template, &fill, &embs, 0.0).unwrap();
    let nll = sequence_nll(&params, Some(&enc), &y).unwrap();
    assert!((fl.loss - nll.total).abs() < 1e-6);
    assert!((fl.nll - nll.total).abs() < 1e-6);
    assert_eq!(fl.decoder_steps, y.len());
}

#[test]
fn penalty_gradient_is_lambda_scaled_unit_vector() {
    // A blank in the final slot never feeds the decoder, so its gradient is
    // exactly the penalty term λ·v/‖v‖.
    let params = ModelParams::init(lm_config(12), 8).unwrap();
    let y = vec![5, 6, 7, 8];
    let template = Template::from_masked(&y, &[3]);
    let lambda = 0.7;
    let v = Tensor::vector(vec![0.3, -0.1, 0.25, 0.05]);
    let fl = fill_loss_and_grads(&params, None, &template, &[8], &[v.clone()], lambda).unwrap();
    let norm = crate::tensor::l2_norm(v.data());
    for (g, x) in fl.grads[0].data().iter().zip(v.data()) {
        assert!((g - lambda * x / norm).abs() < 1e-12);
    }
}

#[test]
fn fill_gradients_match_finite_differences() {
    let params = ModelParams::init(cond_config(10, EncoderKind::Uni, DecoderKind::ForwardUni), 9).unwrap();
    let x = vec![6, 7, 5];
    let y = vec![8, 9, 5, 7, 6];
    let template = Template::from_masked(&y, &[1, 3]);
    let enc = encode(&params, &x).unwrap();
    let fill = vec![9, 7];
    let lambda = 0.05;
    let embs: Vec<Tensor> = fill
        .iter()
        .map(|&t| Tensor::vector(params.tgt_embedding(t).to_vec()))
        .collect();
    let fl = fill_loss_and_grads(&params, Some(&enc), &template, &fill, &embs, lambda).unwrap();

    for j in 0..fill.len() {
        let numeric = finite_diff_grad(
            |probe| {
                let mut alt = embs.clone();
                alt[j] = probe.clone();
                Ok(
                    fill_loss_and_grads(&params, Some(&enc), &template, &fill, &alt, lambda)?
                        .loss,
                )
            },
            &embs[j],
            1e-5,
        )
        .unwrap();
        for (a, n) in fl.grads[j].data().iter().zip(numeric.data()) {
            let err = (a - n).abs() / f64::max(1.0, a.abs());
            assert!(err < 1e-7, "blank {j}: {a} vs {n}");
        }
    }
}

/// Full-model gradient check: every parameter tensor of a conditional
/// attention model against central finite differences of the training loss.
#[test]
fn training_loss_gradients_match_finite_differences() {
    let config = cond_config(9, EncoderKind::Bi, DecoderKind::ForwardUni);
    let params = ModelParams::init(config, 10).unwrap();
    let x = vec![5, 7];
    let y = vec![6, 8, 5];

    let loss_for = |p: &ModelParams| -> f64 {
        let mut tape = Tape::new();
        let tm = TapedModel::register(&mut tape, p, true);
        let enc = tm.encode(&mut tape, &x).unwrap();
        let nll = tm.nll(&mut tape, Some(&enc), &y).unwrap();
        tape.value(nll).item()
    };

    let mut tape = Tape::new();
    let tm = TapedModel::register(&mut tape, &params, true);
    let enc = tm.encode(&mut tape, &x).unwrap();
    let nll = tm.nll(&mut tape, Some(&enc), &y).unwrap();
    let grads = tape.grad(nll, tm.param_vals()).unwrap();

    for ((name, tensor), grad) in params.named().iter().zip(&grads) {
        let numeric = finite_diff_grad(
            |probe| {
                let mut alt = params.clone();
                for (n, slot) in alt.named_mut() {
                    if &n == name {
                        *slot = probe.clone();
                    }
                }
                Ok(loss_for(&alt))
            },
            tensor,
            1e-5,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (a, n) in grad.data().iter().zip(numeric.data()) {
            worst = worst.max((a - n).abs() / f64::max(1.0, a.abs()));
        }
        assert!(worst < 1e-6, "param {name}: max rel err {worst}");
    }
}

/// Same check for the bidirectional decoder's masked objective.
#[test]
fn birnn_loss_gradients_match_finite_differences() {
    let config = cond_config(8, EncoderKind::Uni, DecoderKind::Birnn);
    let params = ModelParams::init(config, 11).unwrap();
    let x = vec![5, 6];
    let y = vec![7, 5, 6];

    let loss_for = |p: &ModelParams| -> f64 {
        let mut tape = Tape::new();
        let tm = TapedModel::register(&mut tape, p, true);
        let enc = tm.encode(&mut tape, &x).unwrap();
        let nll = tm.birnn_nll(&mut tape, Some(&enc), &y).unwrap();
        tape.value(nll).item()
    };

    let mut tape = Tape::new();
    let tm = TapedModel::register(&mut tape, &params, true);
    let enc = tm.encode(&mut tape, &x).unwrap();
    let nll = tm.birnn_nll(&mut tape, Some(&enc), &y).unwrap();
    let grads = tape.grad(nll, tm.param_vals()).unwrap();

    for ((name, tensor), grad) in params.named().iter().zip(&grads) {
        let numeric = finite_diff_grad(
            |probe| {
                let mut alt = params.clone();
                for (n, slot) in alt.named_mut() {
                    if &n == name {
                        *slot = probe.clone();
                    }
                }
                Ok(loss_for(&alt))
            },
            tensor,
            1e-5,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (a, n) in grad.data().iter().zip(numeric.data()) {
            worst = worst.max((a - n).abs() / f64::max(1.0, a.abs()));
        }
        assert!(worst < 1e-6, "param {name}: max rel err {worst}");
    }
}

#[test]
fn birnn_conditional_is_a_distribution_and_ignores_position_value() {
    let params = ModelParams::init(cond_config(10, EncoderKind::Uni, DecoderKind::Birnn), 12).unwrap();
    let x = vec![5, 9];
    let mut y = vec![6, 7, 8, 5];
    let a = birnn_conditional(&params, Some(&x), &y, 2).unwrap();
    let sum: f64 = a.iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
    // The value at the queried position is marginalized out.
    y[2] = 9;
    let b = birnn_conditional(&params, Some(&x), &y, 2).unwrap();
    assert_eq!(a, b);
    assert!(birnn_conditional(&params, Some(&x), &y, 4).is_err());
}

#[test]
fn birnn_sequence_nll_matches_per_position_conditionals() {
    let params = ModelParams::init(cond_config(10, EncoderKind::Uni, DecoderKind::Birnn), 13).unwrap();
    let x = vec![5, 6];
    let y = vec![7, 9, 8];
    let enc = encode(&params, &x).unwrap();
    let direct = birnn_sequence_nll(&params, Some(&enc), &y).unwrap();
    let mut total = 0.0;
    for t in 0..y.len() {
        let dist = birnn_conditional_with_enc(&params, Some(&enc), &y, t).unwrap();
        total -= dist[y[t]].ln();
    }
    assert!((direct.total - total).abs() < 1e-9);
}

#[test]
fn reverse_sequence_involution() {
    let y = vec![5, 6, 7];
    assert_eq!(reverse_sequence(&y), vec![7, 6, 5]);
    assert_eq!(reverse_sequence(&reverse_sequence(&y)), y);
}

#[test]
fn directional_prob_rejects_vocab_mismatch() {
    let fwd = ModelParams::init(lm_config(10), 14).unwrap();
    let bwd = ModelParams::init(lm_config(11), 15).unwrap();
    assert!(directional_prob(&fwd, &bwd, None, &[5, 6], 0).is_err());
}

#[test]
fn replayed_fill_loss_is_bit_identical() {
    // Record the penalized loss, replay the record, compare bits.
    let params = ModelParams::init(lm_config(10), 16).unwrap();
    let y = vec![5, 6, 7, 8];
    let template = Template::from_masked(&y, &[1]);
    let embs = vec![Tensor::vector(params.tgt_embedding(6).to_vec())];

    let mut tape = Tape::new();
    let tm = TapedModel::register(&mut tape, &params, false);
    let emb_vars: Vec<_> = embs.iter().map(|t| tape.var(t.clone())).collect();
    let nll = tm
        .fill_nll(&mut tape, None, &template, &[6], &emb_vars)
        .unwrap();
    let original = tape.value(nll).item();
    let replayed = tape.replay(nll).item();
    assert_eq!(original.to_bits(), replayed.to_bits());
}
