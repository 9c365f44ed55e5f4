//! Command-line workflow: synthesize or prepare a corpus, train the model
//! family, mask test sentences, fill templates with any of the six
//! algorithms, evaluate fills, and cross-check against exhaustive search.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{stream, RunConfig};
use infill_core::corpus::{
    self, CorpusFormat, SequencePair, Template, Tokenizer, Vocab, BLANK,
};
use infill_core::decode::{
    beam_fill_backward, beam_fill_both, beam_fill_forward, bibs_fill, gsn_fill,
};
use infill_core::eval::{
    bleu4, bleu_sampled_refs, render_table, report_to_tsv, run_grid, Algorithm, GridConfig,
    GridModels,
};
use infill_core::model::{
    encode, load_checkpoint, save_checkpoint, sequence_nll, AttentionKind, DecoderKind,
    EncoderKind, ModelConfig, ModelParams,
};
use infill_core::tigs::tigs_infill;
use infill_core::train::{history_to_csv, train, TrainConfig};
use infill_core::util::{derive_seed, parallel_map_indexed};

#[derive(Parser)]
#[command(name = "infill", version, about = "Seq2seq text-infilling laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pairs,
    Mono,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pairs => CorpusFormat::Pairs,
            FormatArg::Mono => CorpusFormat::Mono,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerArg {
    Word,
    Char,
}

impl From<TokenizerArg> for Tokenizer {
    fn from(t: TokenizerArg) -> Self {
        match t {
            TokenizerArg::Word => Tokenizer::Word,
            TokenizerArg::Char => Tokenizer::Char,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Middle,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Forward,
    Backward,
    Birnn,
    EvalLm,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the built-in synthetic query/reply corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Tokenize a corpus, build the vocabulary, and split train/test.
    Prepare(PrepareArgs),
    /// Train one model role and write its checkpoint.
    Train(TrainArgs),
    /// Mask a test file into templates.
    Mask(MaskArgs),
    /// Fill templates with one algorithm.
    Infill(InfillArgs),
    /// Aggregate fills into a metric report.
    Eval(EvalArgs),
    /// Exhaustive-search argmin fills for small instances.
    Oracle(OracleArgs),
    /// Full strategy × ratio × algorithm evaluation grid.
    Grid(GridArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "pairs")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "word")]
    tokenizer: TokenizerArg,
    #[arg(long, default_value_t = 2000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Fraction of the corpus held out as the test split.
    #[arg(long, default_value_t = 0.05)]
    test_fraction: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory produced by `prepare` (vocab.txt + train.tsv).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    role: RoleArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional loss-history CSV path.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    /// Test file (same format as the prepared corpus).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    tokenizer: Option<TokenizerArg>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    seed: u64,
    /// Template file; a parallel `<out>.src` is written for pair corpora.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InfillArgs {
    #[arg(long)]
    templates: PathBuf,
    /// Source-side file for conditional tasks (defaults to `<templates>.src`
    /// when that file exists).
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    /// Forward model checkpoint; always required, it also scores the fills.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    model_bwd: Option<PathBuf>,
    #[arg(long)]
    model_birnn: Option<PathBuf>,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Fills TSVs from `infill`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    fills: Vec<PathBuf>,
    /// Reference corpus (the unmasked test file).
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    tokenizer: Option<TokenizerArg>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    eval_lm: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also score against a sampled reference pool of this size.
    #[arg(long, default_value_t = 0)]
    sampled_refs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    templates: PathBuf,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 2)]
    max_blanks: usize,
    #[arg(long, default_value_t = 64)]
    max_vocab: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory from `prepare` (vocab.txt + test.tsv).
    #[arg(long)]
    data: PathBuf,
    /// Directory holding fwd.ckpt, bwd.ckpt, birnn.ckpt, eval_lm.ckpt.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Cap on test instances (0 = all).
    #[arg(long, default_value_t = 0)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
}

const EVAL_HARD_CAP: u64 = 1_000_000;

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { out, pairs, seed } => cmd_synth(&out, pairs, seed),
        Command::Prepare(args) => cmd_prepare(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Mask(args) => cmd_mask(&args),
        Command::Infill(args) => cmd_infill(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Grid(args) => cmd_grid(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

// ── Shared helpers ───────────────────────────────────────────────────────

fn header(cmd: &str, seed: u64, config_hash: u64, extra: &str) -> String {
    format!(
        "# infill {} cmd={cmd} seed={seed} config={config_hash:016x}{extra}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Read the `key=value` metadata of the first header line, if any.
fn header_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut meta = BTreeMap::new();
    if let Some(line) = text.lines().next() {
        if line.starts_with('#') {
            for piece in line.split_whitespace() {
                if let Some((k, v)) = piece.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        }
    }
    Ok(meta)
}

fn io_format(path: &Path, flag: Option<FormatArg>) -> Result<CorpusFormat> {
    if let Some(f) = flag {
        return Ok(f.into());
    }
    match header_meta(path)?.get("format").map(String::as_str) {
        Some("pairs") => Ok(CorpusFormat::Pairs),
        Some("mono") => Ok(CorpusFormat::Mono),
        _ => bail!(
            "cannot determine the corpus format of {}: pass --format",
            path.display()
        ),
    }
}

fn io_tokenizer(path: &Path, flag: Option<TokenizerArg>) -> Result<Tokenizer> {
    if let Some(t) = flag {
        return Ok(t.into());
    }
    match header_meta(path)?.get("tokenizer").map(String::as_str) {
        Some("word") => Ok(Tokenizer::Word),
        Some("char") => Ok(Tokenizer::Char),
        _ => bail!(
            "cannot determine the tokenizer of {}: pass --tokenizer",
            path.display()
        ),
    }
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading vocab {}", path.display()))?;
    Ok(corpus::vocab_from_lines(&text)?)
}

fn read_templates(path: &Path, vocab: &Vocab) -> Result<Vec<Template>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading templates {}", path.display()))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| Ok(Template::from_line(l, vocab)?))
        .collect()
}

/// Source-side lines as token-id sequences (whitespace-pretokenized).
fn read_src(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading source file {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|t| vocab.id_or_unk(t)).collect())
        .collect())
}

fn write_output(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelParams> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

// ── Commands ─────────────────────────────────────────────────────────────

fn cmd_synth(out: &Path, pairs: usize, seed: u64) -> Result<()> {
    if pairs == 0 {
        bail!("--pairs must be ≥ 1");
    }
    let data = corpus::synthetic_pairs(pairs, seed);
    let mut content = header("synth", seed, 0, &format!(" pairs={pairs} format=pairs tokenizer=word"));
    content.push_str(&corpus::pairs_to_tsv(&data));
    write_output(out, &content)?;
    println!("wrote {} pairs to {}", pairs, out.display());
    Ok(())
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    if !(0.0..1.0).contains(&args.test_fraction) {
        bail!("--test-fraction must be in [0, 1)");
    }
    let format: CorpusFormat = args.format.into();
    let tokenizer: Tokenizer = args.tokenizer.into();
    let raw = corpus::load_raw(&args.corpus, format, tokenizer)?;

    let mut indices: Vec<usize> = (0..raw.len()).collect();
    corpus::seeded_shuffle(&mut indices, derive_seed(args.seed, stream::SPLIT, 0));
    let n_test = ((raw.len() as f64) * args.test_fraction).floor() as usize;
    let (test_idx, train_idx) = indices.split_at(n_test);
    if train_idx.is_empty() {
        bail!("test fraction leaves no training data");
    }

    let streams = train_idx.iter().flat_map(|&i| {
        let pair = &raw[i];
        [pair.x.as_slice(), pair.y.as_slice()]
    });
    let vocab = corpus::build_vocab(streams, args.max_vocab, args.min_count)?;

    let fmt_id = match format {
        CorpusFormat::Pairs => "pairs",
        CorpusFormat::Mono => "mono",
    };
    let tok_id = match tokenizer {
        Tokenizer::Word => "word",
        Tokenizer::Char => "char",
    };
    let meta = format!(" format={fmt_id} tokenizer={tok_id} vocab={}", vocab.len());

    let render_split = |idx: &[usize]| {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        let mut body = String::new();
        for &i in &sorted {
            let pair = &raw[i];
            match format {
                CorpusFormat::Pairs => {
                    let _ = writeln!(
                        body,
                        "{}\t{}",
                        corpus::detokenize(&pair.x, tokenizer),
                        corpus::detokenize(&pair.y, tokenizer)
                    );
                }
                CorpusFormat::Mono => {
                    let _ = writeln!(body, "{}", corpus::detokenize(&pair.y, tokenizer));
                }
            }
        }
        body
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let h = |name: &str| header(name, args.seed, 0, &meta);
    write_output(
        &args.out_dir.join("vocab.txt"),
        &format!("{}{}", h("prepare-vocab"), corpus::vocab_to_lines(&vocab)),
    )?;
    write_output(
        &args.out_dir.join("train.tsv"),
        &format!("{}{}", h("prepare-train"), render_split(train_idx)),
    )?;
    write_output(
        &args.out_dir.join("test.tsv"),
        &format!("{}{}", h("prepare-test"), render_split(test_idx)),
    )?;
    println!(
        "vocab {} tokens; train {} / test {} -> {}",
        vocab.len(),
        train_idx.len(),
        test_idx.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn model_config_for(
    run: &RunConfig,
    role: RoleArg,
    vocab: usize,
    conditional: bool,
) -> ModelConfig {
    let (emb, hidden) = match role {
        RoleArg::EvalLm => (run.eval_lm.emb_dim, run.eval_lm.hidden_dim),
        _ => (run.model.emb_dim, run.model.hidden_dim),
    };
    let decoder = match role {
        RoleArg::Backward => DecoderKind::BackwardUni,
        RoleArg::Birnn => DecoderKind::Birnn,
        _ => DecoderKind::ForwardUni,
    };
    ModelConfig {
        src_vocab: if conditional { vocab } else { 0 },
        tgt_vocab: vocab,
        emb_dim: emb,
        hidden_dim: hidden,
        encoder: if conditional {
            run.model.encoder
        } else {
            EncoderKind::None
        },
        decoder,
        attention: if conditional {
            AttentionKind::BilinearGeneral
        } else {
            AttentionKind::None
        },
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = RunConfig::load(args.config.as_deref())?;
    let master = run.resolve_seed(args.seed)?;
    let vocab = read_vocab(&args.data.join("vocab.txt"))?;
    let train_path = args.data.join("train.tsv");
    let format = io_format(&train_path, None)?;
    let tokenizer = io_tokenizer(&train_path, None)?;
    let pairs = corpus::load_corpus(&train_path, format, tokenizer, &vocab)?;
    let conditional = format == CorpusFormat::Pairs;

    let role_stream = match args.role {
        RoleArg::Forward => stream::TRAIN_FORWARD,
        RoleArg::Backward => stream::TRAIN_BACKWARD,
        RoleArg::Birnn => stream::TRAIN_BIRNN,
        RoleArg::EvalLm => stream::TRAIN_EVAL_LM,
    };
    let t = &run.train;
    let train_config = TrainConfig {
        learning_rate: t.learning_rate,
        batch_size: t.batch_size,
        epochs: t.epochs,
        clip_norm: t.clip_norm,
        seed: derive_seed(master, role_stream, 0),
        optimizer: t.optimizer,
        valid_fraction: t.valid_fraction,
        momentum: t.momentum,
        halve_on_plateau: t.halve_on_plateau,
    };
    let model_config = model_config_for(&run, args.role, vocab.len(), conditional);

    let started = Instant::now();
    let result = train(&train_config, &pairs, model_config)?;
    if result.diverged {
        eprintln!("warning: training diverged; keeping the last finite checkpoint");
    }
    save_checkpoint(&result.params, &args.out)?;
    if let Some(history) = &args.history {
        let mut content = header("train", master, run.hash(), "");
        content.push_str(&history_to_csv(&result.history));
        write_output(history, &content)?;
    }
    let last = result.history.last().map(|e| (e.train_nll, e.valid_nll));
    println!(
        "trained {:?} in {:.1}s; final train/valid nll {:?}; checkpoint {}",
        role_of(args.role),
        started.elapsed().as_secs_f64(),
        last,
        args.out.display()
    );
    Ok(())
}

fn role_of(role: RoleArg) -> &'static str {
    match role {
        RoleArg::Forward => "forward",
        RoleArg::Backward => "backward",
        RoleArg::Birnn => "birnn",
        RoleArg::EvalLm => "eval-lm",
    }
}

fn cmd_mask(args: &MaskArgs) -> Result<()> {
    if !(args.ratio > 0.0 && args.ratio < 1.0) {
        bail!("--ratio must be in (0, 1)");
    }
    let format = io_format(&args.data, args.format)?;
    let tokenizer = io_tokenizer(&args.data, args.tokenizer)?;
    let vocab = read_vocab(&args.vocab)?;
    let pairs = corpus::load_corpus(&args.data, format, tokenizer, &vocab)?;
    for (i, p) in pairs.iter().enumerate() {
        if p.y.len() < 2 {
            bail!("instance {i} is too short to mask (m = {})", p.y.len());
        }
    }

    let strategy_id = match args.strategy {
        StrategyArg::Middle => "middle",
        StrategyArg::Random => "random",
    };
    let mut body = String::new();
    let mut src_body = String::new();
    for (i, p) in pairs.iter().enumerate() {
        let template = match args.strategy {
            StrategyArg::Middle => corpus::mask_middle(&p.y, args.ratio)?,
            StrategyArg::Random => {
                corpus::mask_random(&p.y, args.ratio, derive_seed(args.seed, stream::MASK, i as u64))?
            }
        };
        let _ = writeln!(body, "{}", template.to_line(&vocab));
        if format == CorpusFormat::Pairs {
            let _ = writeln!(src_body, "{}", vocab.decode(&p.x));
        }
    }

    let meta = format!(" strategy={strategy_id} ratio={}", args.ratio);
    write_output(
        &args.out,
        &format!("{}{}", header("mask", args.seed, 0, &meta), body),
    )?;
    if format == CorpusFormat::Pairs {
        let src_path = src_sibling(&args.out);
        write_output(
            &src_path,
            &format!("{}{}", header("mask-src", args.seed, 0, &meta), src_body),
        )?;
    }
    println!("masked {} instances -> {}", pairs.len(), args.out.display());
    Ok(())
}

fn src_sibling(templates: &Path) -> PathBuf {
    let mut p = templates.as_os_str().to_os_string();
    p.push(".src");
    PathBuf::from(p)
}

fn cmd_infill(args: &InfillArgs) -> Result<()> {
    let run = RunConfig::load(args.config.as_deref())?;
    let master = run.resolve_seed(args.seed)?;
    let algo = Algorithm::parse(&args.algo)?;
    let vocab = read_vocab(&args.vocab)?;
    let templates = read_templates(&args.templates, &vocab)?;

    let fwd = load_model(&args.model)?;
    let bwd = match algo {
        Algorithm::BeamBackward | Algorithm::BeamBoth | Algorithm::Bibs => Some(load_model(
            args.model_bwd
                .as_deref()
                .ok_or_else(|| anyhow!("--model-bwd is required for {}", algo.id()))?,
        )?),
        _ => None,
    };
    let birnn = match algo {
        Algorithm::Gsn => Some(load_model(
            args.model_birnn
                .as_deref()
                .ok_or_else(|| anyhow!("--model-birnn is required for gsn"))?,
        )?),
        _ => None,
    };

    let src = match &args.src {
        Some(p) => Some(read_src(p, &vocab)?),
        None => {
            let sibling = src_sibling(&args.templates);
            if sibling.exists() {
                Some(read_src(&sibling, &vocab)?)
            } else {
                None
            }
        }
    };
    if fwd.config.conditional() != src.is_some() {
        bail!("conditional models need a source file (and unconditional ones must not get one)");
    }
    if let Some(src) = &src {
        if src.len() != templates.len() {
            bail!(
                "source file has {} lines but there are {} templates",
                src.len(),
                templates.len()
            );
        }
    }

    let tigs_config = run.tigs.clone();
    let beam = run.beam.clone();
    let rows: Vec<Result<(String, f64)>> =
        parallel_map_indexed(templates.len(), args.workers, |i| {
            let template = &templates[i];
            let x = src.as_ref().map(|s| s[i].as_slice());
            let started = Instant::now();
            let enc_f = x.map(|x| encode(&fwd, x)).transpose()?;
            let sequence = match algo {
                Algorithm::Tigs => {
                    tigs_infill(&fwd, enc_f.as_ref(), template, &tigs_config)?.sequence
                }
                Algorithm::BeamForward => {
                    beam_fill_forward(&fwd, enc_f.as_ref(), template, beam.width)?.sequence
                }
                Algorithm::BeamBackward => {
                    let bwd = bwd.as_ref().expect("loaded above");
                    let enc_b = x.map(|x| encode(bwd, x)).transpose()?;
                    beam_fill_backward(bwd, enc_b.as_ref(), template, beam.width)?.sequence
                }
                Algorithm::BeamBoth => {
                    let bwd = bwd.as_ref().expect("loaded above");
                    let enc_b = x.map(|x| encode(bwd, x)).transpose()?;
                    beam_fill_both(&fwd, bwd, enc_f.as_ref(), enc_b.as_ref(), template, beam.width)?
                        .chosen
                        .sequence
                }
                Algorithm::Bibs => {
                    let bwd = bwd.as_ref().expect("loaded above");
                    let enc_b = x.map(|x| encode(bwd, x)).transpose()?;
                    bibs_fill(
                        &fwd,
                        bwd,
                        enc_f.as_ref(),
                        enc_b.as_ref(),
                        template,
                        beam.width,
                        beam.max_rounds,
                    )?
                    .sequence
                }
                Algorithm::Gsn => {
                    let birnn = birnn.as_ref().expect("loaded above");
                    let enc_r = x.map(|x| encode(birnn, x)).transpose()?;
                    gsn_fill(
                        birnn,
                        enc_r.as_ref(),
                        template,
                        beam.max_rounds,
                        derive_seed(master, stream::GSN, i as u64),
                    )?
                    .sequence
                }
            };
            let nll = sequence_nll(&fwd, enc_f.as_ref(), &sequence)?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            let row = format!(
                "{i}\t{}\t{}\t{}\t{:.6}\t{:.3}",
                algo.id(),
                template.to_line(&vocab),
                vocab.decode(&sequence),
                nll.per_token(),
                wall_ms
            );
            Ok((row, nll.per_token()))
        });

    let mut content = header(
        "infill",
        master,
        run.hash(),
        &format!(" algo={}", algo.id()),
    );
    content.push_str("#instance\talgorithm\ttemplate\tsequence\tmodel_nll\twall_ms\n");
    let mut mean = 0.0;
    let n = rows.len();
    for row in rows {
        let (line, nll) = row?;
        mean += nll / n as f64;
        content.push_str(&line);
        content.push('\n');
    }
    write_output(&args.out, &content)?;
    println!(
        "filled {} templates with {} (mean model nll {:.4}) -> {}",
        n,
        algo.id(),
        mean,
        args.out.display()
    );
    Ok(())
}

struct FillRow {
    instance: usize,
    algorithm: String,
    template: String,
    sequence: Vec<usize>,
    model_nll: f64,
    wall_ms: f64,
}

fn read_fills(path: &Path, vocab: &Vocab) -> Result<Vec<FillRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading fills {}", path.display()))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            bail!("{}:{}: expected 6 tab-separated fields", path.display(), ln + 1);
        }
        rows.push(FillRow {
            instance: fields[0].parse().context("instance id")?,
            algorithm: fields[1].to_string(),
            template: fields[2].to_string(),
            sequence: fields[3]
                .split_whitespace()
                .map(|t| vocab.id_or_unk(t))
                .collect(),
            model_nll: fields[4].parse().context("model_nll")?,
            wall_ms: fields[5].parse().context("wall_ms")?,
        });
    }
    Ok(rows)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if args.fills.is_empty() {
        bail!("at least one --fills file is required");
    }
    let run = RunConfig::load(args.config.as_deref())?;
    let master = run.resolve_seed(args.seed)?;
    let vocab = read_vocab(&args.vocab)?;
    let format = io_format(&args.refs, args.format)?;
    let tokenizer = io_tokenizer(&args.refs, args.tokenizer)?;
    let refs = corpus::load_corpus(&args.refs, format, tokenizer, &vocab)?;
    let eval_lm = load_model(&args.eval_lm)?;
    if eval_lm.config.tgt_vocab != vocab.len() {
        bail!(
            "evaluation model vocabulary {} does not match the vocab file ({})",
            eval_lm.config.tgt_vocab,
            vocab.len()
        );
    }

    let mut content = header("eval", master, run.hash(), &format!(" bleu_epsilon={}", run.eval.bleu_epsilon));
    content.push_str(
        "#file\talgorithm\tinstances\tmodel_nll\teval_nll\tbleu4\tsampled_bleu\tpreserve_rate\tmean_ms\n",
    );
    let pool: Vec<Vec<usize>> = refs.iter().map(|p| p.y.clone()).collect();

    for path in &args.fills {
        let rows = read_fills(path, &vocab)?;
        if rows.is_empty() {
            bail!("{} contains no fills", path.display());
        }
        let mut by_algo: BTreeMap<String, Vec<&FillRow>> = BTreeMap::new();
        for r in &rows {
            by_algo.entry(r.algorithm.clone()).or_default().push(r);
        }
        for (algo, rows) in by_algo {
            let mut model_nll = 0.0;
            let mut lm_nll = 0.0;
            let mut bleu = 0.0;
            let mut preserved = 0usize;
            let mut ms = 0.0;
            let mut hyps = Vec::with_capacity(rows.len());
            for r in &rows {
                let pair = refs.get(r.instance).ok_or_else(|| {
                    anyhow!("instance {} has no reference line", r.instance)
                })?;
                let enc = if eval_lm.config.conditional() {
                    Some(encode(&eval_lm, &pair.x)?)
                } else {
                    None
                };
                lm_nll += sequence_nll(&eval_lm, enc.as_ref(), &r.sequence)?.per_token();
                bleu += bleu4(&r.sequence, &[&pair.y], run.eval.bleu_epsilon)?;
                let template = Template::from_line(&r.template, &vocab)?;
                if template.preserved_by(&r.sequence) {
                    preserved += 1;
                }
                model_nll += r.model_nll;
                ms += r.wall_ms;
                hyps.push(r.sequence.clone());
            }
            let n = rows.len() as f64;
            let sampled = if args.sampled_refs > 0 {
                bleu_sampled_refs(
                    &hyps,
                    &pool,
                    args.sampled_refs.min(pool.len()),
                    derive_seed(master, stream::SAMPLED_REFS, 0),
                    run.eval.bleu_epsilon,
                )?
            } else {
                f64::NAN
            };
            let _ = writeln!(
                content,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
                path.display(),
                algo,
                rows.len(),
                model_nll / n,
                lm_nll / n,
                bleu / n,
                sampled,
                preserved as f64 / n,
                ms / n
            );
        }
    }
    write_output(&args.out, &content)?;
    println!("evaluation report -> {}", args.out.display());
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let vocab = read_vocab(&args.vocab)?;
    let params = load_model(&args.model)?;
    let templates = read_templates(&args.templates, &vocab)?;
    let src = match &args.src {
        Some(p) => Some(read_src(p, &vocab)?),
        None => {
            let sibling = src_sibling(&args.templates);
            sibling.exists().then(|| read_src(&sibling, &vocab)).transpose()?
        }
    };
    if params.config.conditional() != src.is_some() {
        bail!("conditional model needs a source file (and unconditional ones must not get one)");
    }

    if vocab.len() > args.max_vocab {
        bail!(
            "oracle refuses: vocabulary {} exceeds --max-vocab {}",
            vocab.len(),
            args.max_vocab
        );
    }
    let pool: Vec<usize> = (0..vocab.len()).filter(|&t| t != BLANK).collect();
    // Validate the whole batch before producing any output.
    for (i, t) in templates.iter().enumerate() {
        let nb = t.blank_count();
        if nb > args.max_blanks {
            bail!(
                "oracle refuses instance {i}: {nb} blanks exceed --max-blanks {}",
                args.max_blanks
            );
        }
        let evals = (pool.len() as u64).saturating_pow(nb as u32);
        if evals > EVAL_HARD_CAP {
            bail!(
                "oracle refuses instance {i}: {}^{} = {evals} evaluations exceed the {EVAL_HARD_CAP} cap",
                pool.len(),
                nb
            );
        }
    }

    let mut content = header("oracle", 0, 0, "");
    content.push_str("#instance\ttemplate\tsequence\tnll_total\tnll_per_token\tevaluations\n");
    for (i, template) in templates.iter().enumerate() {
        let x = src.as_ref().map(|s| s[i].as_slice());
        let enc = x.map(|x| encode(&params, x)).transpose()?;
        let nb = template.blank_count();
        let mut fill: Vec<usize> = vec![0; nb]; // odometer over pool indices
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut evals = 0u64;
        loop {
            let tokens: Vec<usize> = fill.iter().map(|&k| pool[k]).collect();
            let y = template.fill(&tokens);
            let nll = sequence_nll(&params, enc.as_ref(), &y)?;
            evals += 1;
            // Strict improvement keeps the lexicographically-first argmin.
            if best.as_ref().map_or(true, |(b, _)| nll.total < *b) {
                best = Some((nll.total, y));
            }
            // Advance the odometer.
            let mut pos = nb;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                fill[pos] += 1;
                if fill[pos] < pool.len() {
                    break;
                }
                fill[pos] = 0;
            }
            if fill.iter().all(|&k| k == 0) {
                break;
            }
            if nb == 0 {
                break;
            }
        }
        let (nll, sequence) = best.expect("at least one evaluation");
        let _ = writeln!(
            content,
            "{i}\t{}\t{}\t{:.6}\t{:.6}\t{evals}",
            template.to_line(&vocab),
            vocab.decode(&sequence),
            nll,
            nll / sequence.len() as f64
        );
    }
    write_output(&args.out, &content)?;
    println!("oracle fills -> {}", args.out.display());
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let run = RunConfig::load(args.config.as_deref())?;
    let master = run.resolve_seed(args.seed)?;
    let vocab = read_vocab(&args.data.join("vocab.txt"))?;
    let test_path = args.data.join("test.tsv");
    let format = io_format(&test_path, None)?;
    let tokenizer = io_tokenizer(&test_path, None)?;
    let mut test: Vec<SequencePair> = corpus::load_corpus(&test_path, format, tokenizer, &vocab)?;
    if args.instances > 0 {
        test.truncate(args.instances);
    }

    let fwd = load_model(&args.models.join("fwd.ckpt"))?;
    let bwd = load_model(&args.models.join("bwd.ckpt"))?;
    let birnn = load_model(&args.models.join("birnn.ckpt"))?;
    let eval_lm = load_model(&args.models.join("eval_lm.ckpt"))?;

    let mut tigs = run.tigs.clone();
    tigs.seed = derive_seed(master, stream::RANDOM_INIT, 0);
    let mut beam = run.beam.clone();
    beam.seed = derive_seed(master, stream::GSN, 0);
    let grid = GridConfig {
        mask_seed: derive_seed(master, stream::MASK, 0),
        tigs,
        beam,
        workers: args.workers,
        bleu_epsilon: run.eval.bleu_epsilon,
        ..GridConfig::default()
    };

    let started = Instant::now();
    let report = run_grid(
        &GridModels {
            fwd: &fwd,
            bwd: &bwd,
            birnn: &birnn,
        },
        &eval_lm,
        &test,
        &grid,
    )?;

    std::fs::create_dir_all(&args.out_dir)?;
    let head = header("grid", master, run.hash(), &format!(" instances={}", test.len()));
    write_output(
        &args.out_dir.join("report.tsv"),
        &format!("{head}{}", report_to_tsv(&report)),
    )?;
    write_output(
        &args.out_dir.join("report.txt"),
        &format!("{head}{}", render_table(&report)),
    )?;
    write_output(
        &args.out_dir.join("per_instance.tsv"),
        &format!("{head}{}", infill_core::eval::per_instance_tsv(&report, &vocab)),
    )?;
    println!(
        "grid over {} instances finished in {:.1}s -> {}",
        test.len(),
        started.elapsed().as_secs_f64(),
        args.out_dir.display()
    );
    Ok(())
}
