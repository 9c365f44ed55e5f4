//! Metric suite: sentence BLEU-4, model-based NLL under a separately trained
//! language model, and the strategy × ratio evaluation grid over all
//! infilling algorithms.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{mask_middle, mask_random, SequencePair, Template};
use crate::decode::{
    beam_fill_backward, beam_fill_both, beam_fill_forward, bibs_fill, gsn_fill, BeamConfig,
};
use crate::error::{Error, Result};
use crate::model::{encode, sequence_nll, EncoderOutput, ModelParams};
use crate::tigs::{tigs_infill, TigsConfig, TigsTrace};
use crate::util::derive_seed;

pub const DEFAULT_BLEU_EPSILON: f64 = 1e-9;

// ── BLEU ─────────────────────────────────────────────────────────────────

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts: HashMap<&[usize], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with 4-gram modified precisions, brevity penalty, and
/// add-epsilon smoothing on zero match counts. An n-gram order the
/// hypothesis is too short to produce contributes a bare epsilon precision.
/// An empty hypothesis scores 0.
pub fn bleu4(hypothesis: &[usize], references: &[&[usize]], epsilon: f64) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Config("bleu4 needs at least one reference".into()));
    }
    if hypothesis.is_empty() {
        eprintln!("warning: empty hypothesis scored as BLEU 0");
        return Ok(0.0);
    }
    let c = hypothesis.len();
    // Closest reference length; ties toward the shorter reference.
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("nonempty");

    let mut log_precision_sum = 0.0;
    for n in 1..=4 {
        let hyp_counts = ngram_counts(hypothesis, n);
        let total: usize = hyp_counts.values().sum();
        let mut matches = 0usize;
        if total > 0 {
            let mut max_ref: HashMap<&[usize], usize> = HashMap::new();
            for reference in references {
                for (gram, count) in ngram_counts(reference, n) {
                    let e = max_ref.entry(gram).or_insert(0);
                    *e = (*e).max(count);
                }
            }
            for (gram, count) in &hyp_counts {
                matches += (*count).min(*max_ref.get(gram).unwrap_or(&0));
            }
        }
        let p = if total == 0 {
            epsilon
        } else if matches == 0 {
            epsilon / total as f64
        } else {
            matches as f64 / total as f64
        };
        log_precision_sum += p.ln();
    }
    let brevity = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(brevity * (log_precision_sum / 4.0).exp())
}

/// Mean BLEU of each hypothesis against a shared reference set sampled
/// without replacement from `pool` (seeded, order-independent).
pub fn bleu_sampled_refs(
    hypotheses: &[Vec<usize>],
    pool: &[Vec<usize>],
    pool_size: usize,
    seed: u64,
    epsilon: f64,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Config("reference pool is empty".into()));
    }
    if pool_size == 0 || pool_size > pool.len() {
        return Err(Error::Config(format!(
            "pool_size must be in 1..={}, got {pool_size}",
            pool.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Config("no hypotheses to score".into()));
    }
    // Sample indices, then sort so the reference set is independent of the
    // pool's draw order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..pool_size {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..pool_size].to_vec();
    chosen.sort_unstable();
    let refs: Vec<&[usize]> = chosen.iter().map(|&i| pool[i].as_slice()).collect();

    let mut total = 0.0;
    for hyp in hypotheses {
        total += bleu4(hyp, &refs, epsilon)?;
    }
    Ok(total / hypotheses.len() as f64)
}

// ── Model-based NLL ──────────────────────────────────────────────────────

/// Mean per-token NLL of complete sentences under a separately trained
/// language model (conditional when the task is conditional).
pub fn eval_nll(eval_lm: &ModelParams, instances: &[(Option<Vec<usize>>, Vec<usize>)]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Config("no instances to evaluate".into()));
    }
    let mut sum = 0.0;
    for (x, y) in instances {
        for &tok in y {
            if tok >= eval_lm.config.tgt_vocab {
                return Err(Error::Config(format!(
                    "token {tok} outside the evaluation model's vocabulary {}",
                    eval_lm.config.tgt_vocab
                )));
            }
        }
        let enc = match (eval_lm.config.conditional(), x) {
            (true, Some(x)) => Some(encode(eval_lm, x)?),
            (false, None) => None,
            _ => {
                return Err(Error::Config(
                    "conditional evaluation model requires an input side (and vice versa)".into(),
                ))
            }
        };
        sum += sequence_nll(eval_lm, enc.as_ref(), y)?.per_token();
    }
    Ok(sum / instances.len() as f64)
}

// ── Grid ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Middle,
    Random,
}

impl MaskStrategy {
    pub fn id(&self) -> &'static str {
        match self {
            MaskStrategy::Middle => "middle",
            MaskStrategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "tigs")]
    Tigs,
    #[serde(rename = "bs-f")]
    BeamForward,
    #[serde(rename = "bs-b")]
    BeamBackward,
    #[serde(rename = "bs-fb")]
    BeamBoth,
    #[serde(rename = "bibs")]
    Bibs,
    #[serde(rename = "gsn")]
    Gsn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Tigs,
        Algorithm::BeamForward,
        Algorithm::BeamBackward,
        Algorithm::BeamBoth,
        Algorithm::Bibs,
        Algorithm::Gsn,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Tigs => "tigs",
            Algorithm::BeamForward => "bs-f",
            Algorithm::BeamBackward => "bs-b",
            Algorithm::BeamBoth => "bs-fb",
            Algorithm::Bibs => "bibs",
            Algorithm::Gsn => "gsn",
        }
    }

    pub fn parse(s: &str) -> Result<Algorithm> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Models the grid runs against.
pub struct GridModels<'a> {
    pub fwd: &'a ModelParams,
    pub bwd: &'a ModelParams,
    pub birnn: &'a ModelParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub strategies: Vec<MaskStrategy>,
    pub ratios: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub mask_seed: u64,
    pub tigs: TigsConfig,
    pub beam: BeamConfig,
    /// Worker threads for instance-level parallelism; outputs are in
    /// deterministic instance order regardless of the count.
    pub workers: usize,
    pub bleu_epsilon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            strategies: vec![MaskStrategy::Middle, MaskStrategy::Random],
            ratios: vec![0.25, 0.5, 0.75],
            algorithms: Algorithm::ALL.to_vec(),
            mask_seed: 0,
            tigs: TigsConfig::default(),
            beam: BeamConfig::default(),
            workers: 1,
            bleu_epsilon: DEFAULT_BLEU_EPSILON,
        }
    }
}

/// One algorithm's output on one instance.
#[derive(Debug, Clone)]
pub struct InstanceFill {
    pub instance: usize,
    pub algorithm: Algorithm,
    pub sequence: Vec<usize>,
    /// Per-token NLL under the forward inference model (shared scoring
    /// model for comparability across algorithms).
    pub model_nll: f64,
    /// Per-token NLL under the evaluation language model.
    pub eval_nll: f64,
    pub bleu: f64,
    pub preserved: bool,
    pub wall_ms: f64,
    pub tigs_trace: Option<TigsTrace>,
}

/// Aggregates for one (algorithm × strategy × ratio) cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub algorithm: Algorithm,
    pub instances: usize,
    pub excluded: usize,
    pub model_nll: f64,
    pub eval_nll: f64,
    pub bleu: f64,
    pub preserve_rate: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub cells: Vec<CellReport>,
    pub per_instance: Vec<(MaskStrategy, f64, InstanceFill)>,
    pub bleu_epsilon: f64,
}

struct InstanceJob<'a> {
    index: usize,
    pair: &'a SequencePair,
    template: Template,
}

fn run_instance(
    models: &GridModels<'_>,
    eval_lm: &ModelParams,
    job: &InstanceJob<'_>,
    algorithms: &[Algorithm],
    config: &GridConfig,
    cell_tag: u64,
) -> Vec<Result<InstanceFill>> {
    let conditional = models.fwd.config.conditional();
    let rex = |p: &ModelParams| -> Result<Option<EncoderOutput>> {
        if conditional {
            Ok(Some(encode(p, &job.pair.x)?))
        } else {
            Ok(None)
        }
    };

    let mut out = Vec::with_capacity(algorithms.len());
    let prepared = (|| -> Result<_> {
        Ok((rex(models.fwd)?, rex(models.bwd)?, rex(models.birnn)?, rex(eval_lm)?))
    })();
    let (enc_f, enc_b, enc_r, enc_e) = match prepared {
        Ok(encs) => encs,
        Err(e) => {
            let msg = e.to_string();
            for _ in algorithms {
                out.push(Err(Error::Config(msg.clone())));
            }
            return out;
        }
    };

    for &algo in algorithms {
        let start = Instant::now();
        let result = (|| -> Result<(Vec<usize>, Option<TigsTrace>)> {
            match algo {
                Algorithm::Tigs => {
                    let o = tigs_infill(models.fwd, enc_f.as_ref(), &job.template, &config.tigs)?;
                    Ok((o.sequence, Some(o.trace)))
                }
                Algorithm::BeamForward => Ok((
                    beam_fill_forward(models.fwd, enc_f.as_ref(), &job.template, config.beam.width)?
                        .sequence,
                    None,
                )),
                Algorithm::BeamBackward => Ok((
                    beam_fill_backward(models.bwd, enc_b.as_ref(), &job.template, config.beam.width)?
                        .sequence,
                    None,
                )),
                Algorithm::BeamBoth => Ok((
                    beam_fill_both(
                        models.fwd,
                        models.bwd,
                        enc_f.as_ref(),
                        enc_b.as_ref(),
                        &job.template,
                        config.beam.width,
                    )?
                    .chosen
                    .sequence,
                    None,
                )),
                Algorithm::Bibs => Ok((
                    bibs_fill(
                        models.fwd,
                        models.bwd,
                        enc_f.as_ref(),
                        enc_b.as_ref(),
                        &job.template,
                        config.beam.width,
                        config.beam.max_rounds,
                    )?
                    .sequence,
                    None,
                )),
                Algorithm::Gsn => Ok((
                    gsn_fill(
                        models.birnn,
                        enc_r.as_ref(),
                        &job.template,
                        config.beam.max_rounds,
                        derive_seed(config.beam.seed, cell_tag, job.index as u64),
                    )?
                    .sequence,
                    None,
                )),
            }
        })();
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        out.push(result.and_then(|(sequence, trace)| {
            let model = sequence_nll(models.fwd, enc_f.as_ref(), &sequence)?;
            let lm = sequence_nll(eval_lm, enc_e.as_ref(), &sequence)?;
            let bleu = bleu4(&sequence, &[&job.pair.y], config.bleu_epsilon)?;
            let preserved = job.template.preserved_by(&sequence);
            Ok(InstanceFill {
                instance: job.index,
                algorithm: algo,
                sequence,
                model_nll: model.per_token(),
                eval_nll: lm.per_token(),
                bleu,
                preserved,
                wall_ms,
                tigs_trace: trace,
            })
        }));
    }
    out
}

/// Run every algorithm over every (strategy × ratio) cell of the test set.
///
/// Templates are generated once per cell with seeds derived from the
/// instance index, so every algorithm sees byte-identical templates.
/// Failures exclude the instance from that algorithm's aggregates and are
/// counted. Instance work may fan out over `workers` threads; outputs are
/// ordered by instance index either way.
pub fn run_grid(
    models: &GridModels<'_>,
    eval_lm: &ModelParams,
    test_set: &[SequencePair],
    config: &GridConfig,
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    if config.algorithms.is_empty() || config.strategies.is_empty() || config.ratios.is_empty() {
        return Err(Error::Config("grid axes must be nonempty".into()));
    }
    config.beam.validate()?;
    config.tigs.validate(models.fwd.config.tgt_vocab)?;
    for &r in &config.ratios {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!("mask ratio {r} outside (0, 1)")));
        }
    }

    let mut cells = Vec::new();
    let mut per_instance = Vec::new();

    for &strategy in &config.strategies {
        for &ratio in &config.ratios {
            let cell_tag = (strategy as u64) << 32 | ((ratio * 1000.0).round() as u64);
            let jobs: Vec<InstanceJob<'_>> = test_set
                .iter()
                .enumerate()
                .filter(|(_, p)| p.y.len() >= 2)
                .map(|(i, pair)| {
                    let template = match strategy {
                        MaskStrategy::Middle => mask_middle(&pair.y, ratio),
                        MaskStrategy::Random => mask_random(
                            &pair.y,
                            ratio,
                            derive_seed(config.mask_seed, cell_tag, i as u64),
                        ),
                    }?;
                    Ok(InstanceJob {
                        index: i,
                        pair,
                        template,
                    })
                })
                .collect::<Result<_>>()?;

            // Fan instances out; collect back into deterministic index order.
            let slots: Vec<Vec<Result<InstanceFill>>> =
                crate::util::parallel_map_indexed(jobs.len(), config.workers, |k| {
                    run_instance(models, eval_lm, &jobs[k], &config.algorithms, config, cell_tag)
                });

            for (a_idx, &algo) in config.algorithms.iter().enumerate() {
                let mut included = 0usize;
                let mut excluded = 0usize;
                let mut sums = (0.0, 0.0, 0.0, 0.0, 0.0); // model, eval, bleu, preserved, ms
                for results in &slots {
                    match &results[a_idx] {
                        Ok(fill) => {
                            included += 1;
                            sums.0 += fill.model_nll;
                            sums.1 += fill.eval_nll;
                            sums.2 += fill.bleu;
                            sums.3 += if fill.preserved { 1.0 } else { 0.0 };
                            sums.4 += fill.wall_ms;
                        }
                        Err(_) => excluded += 1,
                    }
                }
                let n = included.max(1) as f64;
                cells.push(CellReport {
                    strategy,
                    ratio,
                    algorithm: algo,
                    instances: included,
                    excluded,
                    model_nll: sums.0 / n,
                    eval_nll: sums.1 / n,
                    bleu: sums.2 / n,
                    preserve_rate: sums.3 / n,
                    mean_ms: sums.4 / n,
                });
            }
            for results in slots {
                for result in results {
                    if let Ok(fill) = result {
                        per_instance.push((strategy, ratio, fill));
                    }
                }
            }
        }
    }

    Ok(EvalReport {
        cells,
        per_instance,
        bleu_epsilon: config.bleu_epsilon,
    })
}

// ── Rendering ────────────────────────────────────────────────────────────

/// Cell aggregates as TSV.
pub fn report_to_tsv(report: &EvalReport) -> String {
    let mut s = String::from(
        "strategy\tratio\talgorithm\tinstances\texcluded\tmodel_nll\teval_nll\tbleu4\tpreserve_rate\tmean_ms\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            c.strategy.id(),
            c.ratio,
            c.algorithm.id(),
            c.instances,
            c.excluded,
            c.model_nll,
            c.eval_nll,
            c.bleu,
            c.preserve_rate,
            c.mean_ms
        );
    }
    s
}

/// Text table in the usual infilling-results layout: metric × method rows,
/// ratio × strategy columns.
pub fn render_table(report: &EvalReport) -> String {
    let mut ratios: Vec<f64> = report.cells.iter().map(|c| c.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let mut strategies: Vec<MaskStrategy> = report.cells.iter().map(|c| c.strategy).collect();
    strategies.dedup();
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for c in &report.cells {
        if !algorithms.contains(&c.algorithm) {
            algorithms.push(c.algorithm);
        }
    }

    let lookup = |algo: Algorithm, strategy: MaskStrategy, ratio: f64| {
        report
            .cells
            .iter()
            .find(|c| c.algorithm == algo && c.strategy == strategy && c.ratio == ratio)
    };

    let mut s = String::new();
    let _ = write!(s, "{:<8}{:<8}", "metric", "method");
    for &r in &ratios {
        for st in &strategies {
            let _ = write!(s, "{:>16}", format!("r={:.0}% {}", r * 100.0, st.id()));
        }
    }
    s.push('\n');
    let metrics: [(&str, fn(&CellReport) -> f64); 4] = [
        ("NLL", |c| c.model_nll),
        ("evalNLL", |c| c.eval_nll),
        ("BLEU", |c| c.bleu),
        ("ms", |c| c.mean_ms),
    ];
    for (name, get) in metrics {
        for &algo in &algorithms {
            let _ = write!(s, "{name:<8}{:<8}", algo.id());
            for &r in &ratios {
                for &st in &strategies {
                    match lookup(algo, st, r) {
                        Some(c) => {
                            let _ = write!(s, "{:>16.4}", get(c));
                        }
                        None => {
                            let _ = write!(s, "{:>16}", "-");
                        }
                    }
                }
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

/// Per-instance results as TSV (one row per algorithm × instance).
pub fn per_instance_tsv(report: &EvalReport, vocab: &crate::corpus::Vocab) -> String {
    let mut s = String::from(
        "strategy\tratio\tinstance\talgorithm\tmodel_nll\teval_nll\tbleu4\tpreserved\twall_ms\tsequence\n",
    );
    for (strategy, ratio, fill) in &report.per_instance {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.3}\t{}",
            strategy.id(),
            ratio,
            fill.instance,
            fill.algorithm.id(),
            fill.model_nll,
            fill.eval_nll,
            fill.bleu,
            fill.preserved,
            fill.wall_ms,
            vocab.decode(&fill.sequence)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<usize> {
        // Tiny ad-hoc token ids for BLEU tests: bytes of each word summed.
        s.split_whitespace()
            .map(|w| w.bytes().map(|b| b as usize).sum::<usize>())
            .collect()
    }

    #[test]
    fn bleu_identity_is_one() {
        let h = toks("the cat sat on the mat today");
        let score = bleu4(&h, &[&h], DEFAULT_BLEU_EPSILON).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_disjoint_is_epsilon_level() {
        let h = toks("aa bb cc dd");
        let r = toks("xx yy zz ww");
        let score = bleu4(&h, &[&r], DEFAULT_BLEU_EPSILON).unwrap();
        assert!(score < 1e-8, "score {score}");
    }

    #[test]
    fn bleu_brevity_case_matches_hand_formula() {
        // hyp "a b c" vs ref "a b c d": p1..3 = 1, p4 smoothed (too short),
        // brevity penalty exp(1 − 4/3).
        let h = toks("a b c");
        let r = toks("a b c d");
        let score = bleu4(&h, &[&r], DEFAULT_BLEU_EPSILON).unwrap();
        let expected = (1.0f64 * 1.0 * 1.0 * 1e-9).powf(0.25) * (1.0 - 4.0 / 3.0f64).exp();
        assert!((score - expected).abs() < 1e-12, "{score} vs {expected}");
    }

    #[test]
    fn bleu_empty_hypothesis_is_zero() {
        let r = toks("a b");
        assert_eq!(bleu4(&[], &[&r], DEFAULT_BLEU_EPSILON).unwrap(), 0.0);
    }

    #[test]
    fn bleu_reference_order_invariant() {
        let h = toks("a b c d e");
        let r1 = toks("a b x d e");
        let r2 = toks("a q c d z");
        let a = bleu4(&h, &[&r1, &r2], DEFAULT_BLEU_EPSILON).unwrap();
        let b = bleu4(&h, &[&r2, &r1], DEFAULT_BLEU_EPSILON).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn sampled_refs_hit_self_and_are_seeded() {
        let pool: Vec<Vec<usize>> = (0..20)
            .map(|i| (0..6).map(|j| 10 + (i * 7 + j * 3) % 17).collect())
            .collect();
        let hyp = vec![pool[3].clone()];
        let full = bleu_sampled_refs(&hyp, &pool, pool.len(), 1, DEFAULT_BLEU_EPSILON).unwrap();
        assert!((full - 1.0).abs() < 1e-12, "pool contains the hypothesis");
        let a = bleu_sampled_refs(&hyp, &pool, 5, 42, DEFAULT_BLEU_EPSILON).unwrap();
        let b = bleu_sampled_refs(&hyp, &pool, 5, 42, DEFAULT_BLEU_EPSILON).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(bleu_sampled_refs(&hyp, &pool, 0, 1, DEFAULT_BLEU_EPSILON).is_err());
        assert!(bleu_sampled_refs(&hyp, &[], 1, 1, DEFAULT_BLEU_EPSILON).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn bleu_bounded_and_order_invariant(
                hyp in proptest::collection::vec(0usize..12, 1..10),
                r1 in proptest::collection::vec(0usize..12, 1..10),
                r2 in proptest::collection::vec(0usize..12, 1..10),
            ) {
                let a = bleu4(&hyp, &[&r1, &r2], DEFAULT_BLEU_EPSILON).unwrap();
                let b = bleu4(&hyp, &[&r2, &r1], DEFAULT_BLEU_EPSILON).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
