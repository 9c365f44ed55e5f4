//! Gradient-search infilling.
//!
//! Each blank is a parameterized embedding vector. The loop alternates an
//! optimization step (Nesterov updates on the vector against the L2-penalized
//! sequence NLL, all model parameters frozen) with a projection step (the K
//! nearest vocabulary embeddings plus the incumbent are rescored by plain
//! sequence NLL and the argmin becomes the new discrete fill). The incumbent
//! augmentation makes the per-round NLL trace non-increasing, so "a full
//! round with no change" is a sound convergence rule.
//!
//! Decoder-step accounting per instance (`m` = template length, `B` blanks,
//! `K` candidates, `o` optimization steps per blank per round):
//!
//! ```text
//! total = m                                  // init (greedy pass or initial scoring)
//!       + Σ over executed rounds of ( m·B·(K+1)   // projection candidates
//!                                   + o·m·B )     // optimization forwards
//! ```

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Slot, Template, BLANK};
use crate::decode::beam_fill_forward;
use crate::error::{Error, Result};
use crate::model::{
    fill_loss_and_grads, sequence_nll_tokens, EncoderOutput, ModelParams,
};
use crate::optim::{nesterov_step, NesterovState};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Left-to-right greedy fill from the model itself.
    Greedy,
    /// Seeded uniform draws over the non-special vocabulary.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TigsConfig {
    /// Candidate-set size; 0 resolves to ⌈1% of the vocabulary⌉.
    pub k: usize,
    /// Round cap T.
    pub max_rounds: usize,
    /// L2 penalty weight λ on the blank vectors.
    pub lambda: f64,
    /// Optimization step size α.
    pub step_size: f64,
    /// Nesterov momentum.
    pub momentum: f64,
    /// Gradient updates per blank per round.
    pub o_steps_per_round: usize,
    pub distance: DistanceKind,
    pub init: InitStrategy,
    /// Seed for random initialization.
    pub seed: u64,
}

impl Default for TigsConfig {
    fn default() -> Self {
        TigsConfig {
            k: 0,
            max_rounds: 50,
            lambda: 0.01,
            step_size: 1.0,
            momentum: 0.9,
            o_steps_per_round: 1,
            distance: DistanceKind::Euclidean,
            init: InitStrategy::Greedy,
            seed: 0,
        }
    }
}

impl TigsConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.k > vocab {
            return Err(Error::Config(format!(
                "candidate-set size {} exceeds the vocabulary {vocab}",
                self.k
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("round cap must be ≥ 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be ≥ 0".into()));
        }
        if self.step_size <= 0.0 {
            return Err(Error::Config("step size must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.o_steps_per_round == 0 {
            return Err(Error::Config("o_steps_per_round must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Effective candidate-set size for a vocabulary. The placeholder token
    /// is never a candidate, so the pool holds |V|−1 entries and K clamps
    /// to that; requesting K = |V| therefore covers the whole pool.
    pub fn resolved_k(&self, vocab: usize) -> usize {
        let k = if self.k == 0 {
            (0.01 * vocab as f64).ceil() as usize
        } else {
            self.k
        };
        k.clamp(1, vocab.saturating_sub(1).max(1))
    }
}

/// Mutable search state for one infilling instance.
#[derive(Debug, Clone)]
pub struct InfillState {
    /// Current discrete fill ŷ, one token per blank.
    pub fill: Vec<usize>,
    /// Current continuous vectors, one per blank.
    pub embs: Vec<Tensor>,
    /// Per-blank optimizer state.
    pub velocity: Vec<NesterovState>,
    /// Current complete sequence (template with the fill substituted).
    pub sequence: Vec<usize>,
    /// Sequence NLL of `sequence`.
    pub nll: f64,
    pub round: usize,
}

#[derive(Debug, Clone)]
pub struct BlankChoice {
    pub blank: usize,
    pub token: usize,
    pub nll_after: f64,
}

#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    pub choices: Vec<BlankChoice>,
    pub nll_after: f64,
    pub candidate_evals: usize,
    pub decoder_steps: usize,
    /// Optimization updates skipped because a gradient came back non-finite.
    pub skipped_o_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TigsTrace {
    pub init_decoder_steps: usize,
    pub rounds: Vec<RoundTrace>,
    pub total_decoder_steps: usize,
    pub converged: bool,
    pub rounds_used: usize,
}

#[derive(Debug, Clone)]
pub struct TigsOutcome {
    pub sequence: Vec<usize>,
    pub nll: f64,
    pub trace: TigsTrace,
}

/// Outcome of one projection step, exposed for traces and tests.
#[derive(Debug, Clone)]
pub struct PStepReport {
    /// Tokens evaluated, incumbent first; always K+1 entries.
    pub candidates: Vec<usize>,
    pub chosen: usize,
    pub nll_after: f64,
    pub decoder_steps: usize,
}

/// Build the initial state: greedy fill (width-1 constrained beam) or seeded
/// uniform draws over the non-special vocabulary, with each blank vector set
/// to the chosen token's embedding row.
pub fn initialize_fill(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    template: &Template,
    config: &TigsConfig,
) -> Result<(InfillState, usize)> {
    if template.blank_count() == 0 {
        return Err(Error::Config(
            "template has no blanks; nothing to infer".into(),
        ));
    }
    config.validate(params.config.tgt_vocab)?;
    let blanks = template.blanks();

    let (fill, nll, init_steps) = match config.init {
        InitStrategy::Greedy => {
            let greedy = beam_fill_forward(params, enc, template, 1)?;
            let fill: Vec<usize> = blanks.iter().map(|&p| greedy.sequence[p]).collect();
            (fill, -greedy.score, greedy.decoder_steps)
        }
        InitStrategy::Random => {
            let specials = crate::corpus::SPECIALS.len();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let fill: Vec<usize> = blanks
                .iter()
                .map(|_| rng.random_range(specials..params.config.tgt_vocab))
                .collect();
            let nll = sequence_nll_tokens(params, enc, &template.fill(&fill));
            (fill, nll.total, nll.steps)
        }
    };

    let embs: Vec<Tensor> = fill
        .iter()
        .map(|&tok| Tensor::vector(params.tgt_embedding(tok).to_vec()))
        .collect();
    let velocity = embs
        .iter()
        .map(|e| NesterovState::new(e.shape().to_vec(), config.momentum, config.step_size))
        .collect::<Result<Vec<_>>>()?;
    let sequence = template.fill(&fill);
    Ok((
        InfillState {
            fill,
            embs,
            velocity,
            sequence,
            nll,
            round: 0,
        },
        init_steps,
    ))
}

/// Optimization step for blank `j`: `o_steps_per_round` Nesterov updates of
/// its vector against the penalized loss, all other blanks held fixed.
/// A non-finite gradient skips the remaining updates for this blank this
/// round; the occurrence count is returned rather than an error.
pub fn o_step(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    template: &Template,
    state: &mut InfillState,
    j: usize,
    config: &TigsConfig,
) -> Result<(usize, usize)> {
    if j >= state.fill.len() {
        return Err(Error::Config(format!("blank index {j} out of range")));
    }
    let mut steps = 0usize;
    let mut skipped = 0usize;
    for _ in 0..config.o_steps_per_round {
        let fill = state.fill.clone();
        let embs = state.embs.clone();
        let result = nesterov_step(&mut state.velocity[j], &mut state.embs[j], |probe| {
            let mut probe_embs = embs.clone();
            probe_embs[j] = probe.clone();
            let fl = fill_loss_and_grads(params, enc, template, &fill, &probe_embs, config.lambda)?;
            steps += fl.decoder_steps;
            Ok(fl.grads[j].clone())
        });
        match result {
            Ok(()) => {}
            Err(Error::NonFinite { .. }) => {
                skipped += 1;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((steps, skipped))
}

/// Tokens of the K nearest vocabulary embeddings to `v` (placeholder row
/// excluded), ties toward the lower index.
pub fn nearest_k(params: &ModelParams, v: &Tensor, k: usize, distance: DistanceKind) -> Vec<usize> {
    let emb = &params.emb_tgt;
    let mut scored: Vec<(f64, usize)> = (0..emb.rows())
        .filter(|&tok| tok != BLANK)
        .map(|tok| {
            let row = emb.row(tok);
            let d = match distance {
                DistanceKind::Euclidean => tensor::squared_distance(v.data(), row),
                DistanceKind::Cosine => tensor::cosine_distance(v.data(), row),
            };
            (d, tok)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, tok)| tok).collect()
}

/// Projection step for blank `j`: evaluate the incumbent plus the K nearest
/// tokens by full-sequence NLL (no penalty term) and keep the argmin, ties
/// toward the lower token index. The vector snaps to the winner's embedding
/// row and its optimizer velocity resets.
pub fn p_step(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    template: &Template,
    state: &mut InfillState,
    j: usize,
    config: &TigsConfig,
) -> Result<PStepReport> {
    if j >= state.fill.len() {
        return Err(Error::Config(format!("blank index {j} out of range")));
    }
    state.embs[j].ensure_finite("projection input vector")?;
    let k = config.resolved_k(params.config.tgt_vocab);

    // Incumbent first, then the K nearest; kept as-is even when the
    // incumbent reappears, so every projection costs exactly K+1 scorings.
    let mut candidates = Vec::with_capacity(k + 1);
    candidates.push(state.fill[j]);
    candidates.extend(nearest_k(params, &state.embs[j], k, config.distance));

    let mut steps = 0usize;
    let mut best_tok = usize::MAX;
    let mut best_nll = f64::INFINITY;
    let mut fill = state.fill.clone();
    for &cand in &candidates {
        fill[j] = cand;
        let nll = sequence_nll_tokens(params, enc, &template.fill(&fill));
        steps += nll.steps;
        if nll.total < best_nll || (nll.total == best_nll && cand < best_tok) {
            best_nll = nll.total;
            best_tok = cand;
        }
    }

    state.fill[j] = best_tok;
    state.sequence = template.fill(&state.fill);
    state.nll = best_nll;
    state.embs[j] = Tensor::vector(params.tgt_embedding(best_tok).to_vec());
    state.velocity[j].reset();

    Ok(PStepReport {
        candidates,
        chosen: best_tok,
        nll_after: best_nll,
        decoder_steps: steps,
    })
}

/// Full gradient-search loop: initialize, then alternate optimization and
/// projection per blank in ascending order until a full round leaves the
/// fill unchanged or the round cap is hit.
pub fn tigs_infill(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    template: &Template,
    config: &TigsConfig,
) -> Result<TigsOutcome> {
    let (mut state, init_steps) = initialize_fill(params, enc, template, config)?;
    let nb = state.fill.len();
    let mut rounds: Vec<RoundTrace> = Vec::new();
    let mut total_steps = init_steps;
    let mut converged = false;

    for round in 1..=config.max_rounds {
        state.round = round;
        let fill_before = state.fill.clone();
        let mut choices = Vec::with_capacity(nb);
        let mut candidate_evals = 0usize;
        let mut round_steps = 0usize;
        let mut skipped = 0usize;

        for j in 0..nb {
            let (o_steps, o_skipped) = o_step(params, enc, template, &mut state, j, config)?;
            round_steps += o_steps;
            skipped += o_skipped;
            let report = p_step(params, enc, template, &mut state, j, config)?;
            round_steps += report.decoder_steps;
            candidate_evals += report.candidates.len();
            choices.push(BlankChoice {
                blank: j,
                token: report.chosen,
                nll_after: report.nll_after,
            });
        }

        total_steps += round_steps;
        if let Some(prev) = rounds.last() {
            debug_assert!(state.nll <= prev.nll_after + 1e-9);
        }
        rounds.push(RoundTrace {
            round,
            choices,
            nll_after: state.nll,
            candidate_evals,
            decoder_steps: round_steps,
            skipped_o_steps: skipped,
        });

        if state.fill == fill_before {
            converged = true;
            break;
        }
    }

    debug_assert!(template.preserved_by(&state.sequence));
    let rounds_used = rounds.len();
    Ok(TigsOutcome {
        sequence: state.sequence.clone(),
        nll: state.nll,
        trace: TigsTrace {
            init_decoder_steps: init_steps,
            rounds,
            total_decoder_steps: total_steps,
            converged,
            rounds_used,
        },
    })
}

/// One candidate of the unknown-length search.
#[derive(Debug, Clone)]
pub struct LengthCandidate {
    pub length: usize,
    pub mean_nll: f64,
    pub outcome: TigsOutcome,
}

/// Unknown-blank-length wrapper: expand a single gap to each length in the
/// range, infill each expansion, and rank the completed sequences by mean
/// per-token NLL. Returns the ranked candidates, best first.
pub fn tigs_unknown_length(
    params: &ModelParams,
    enc: Option<&EncoderOutput>,
    template_with_gap: &Template,
    length_range: &[usize],
    config: &TigsConfig,
) -> Result<Vec<LengthCandidate>> {
    if template_with_gap.blank_count() != 1 {
        return Err(Error::Config(format!(
            "unknown-length search expects exactly one gap, got {} blanks",
            template_with_gap.blank_count()
        )));
    }
    if length_range.is_empty() {
        return Err(Error::Config("length range must be nonempty".into()));
    }
    if length_range.contains(&0) {
        return Err(Error::Config("gap lengths must be ≥ 1".into()));
    }
    let gap = template_with_gap.blanks()[0];

    let mut candidates = Vec::with_capacity(length_range.len());
    for &len in length_range {
        let mut slots = Vec::with_capacity(template_with_gap.len() + len - 1);
        for (i, s) in template_with_gap.slots().iter().enumerate() {
            if i == gap {
                slots.extend(std::iter::repeat(Slot::Blank).take(len));
            } else {
                slots.push(*s);
            }
        }
        let expanded = Template::new(slots);
        let outcome = tigs_infill(params, enc, &expanded, config)?;
        candidates.push(LengthCandidate {
            length: len,
            mean_nll: outcome.nll / expanded.len() as f64,
            outcome,
        });
    }
    candidates.sort_by(|a, b| a.mean_nll.total_cmp(&b.mean_nll).then(a.length.cmp(&b.length)));
    Ok(candidates)
}
