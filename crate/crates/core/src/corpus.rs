//! Corpus ingestion: tokenization, vocabulary construction, template masking,
//! and a built-in synthetic pair generator for desk-scale experiments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const BLANK: usize = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<blank>"];

/// Literal used for blank slots in template files.
pub const BLANK_LITERAL: &str = "__BLANK__";

/// Replacement token for the space character under the `char` tokenizer so
/// template files stay space-separated.
pub const SPACE_TOKEN: &str = "<sp>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    Char,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// Tab-separated `x<TAB>y` per line.
    Pairs,
    /// One target sentence per line; no conditional input.
    Mono,
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> Vec<String> {
    match tokenizer {
        Tokenizer::Word => text.split_whitespace().map(str::to_string).collect(),
        Tokenizer::Char => text
            .chars()
            .map(|c| {
                if c == ' ' {
                    SPACE_TOKEN.to_string()
                } else {
                    c.to_string()
                }
            })
            .collect(),
    }
}

/// Inverse of [`tokenize`] up to whitespace normalization: word tokens are
/// space-joined, char tokens are concatenated with the space token mapped
/// back. `tokenize(detokenize(ts)) == ts` for any tokenized stream.
pub fn detokenize(tokens: &[String], tokenizer: Tokenizer) -> String {
    match tokenizer {
        Tokenizer::Word => tokens.join(" "),
        Tokenizer::Char => tokens
            .iter()
            .map(|t| if t == SPACE_TOKEN { " " } else { t.as_str() })
            .collect(),
    }
}

// ── Vocab ────────────────────────────────────────────────────────────────

/// Token ↔ index bijection with the five specials pinned to indices 0–4.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Corpus {
                    line: None,
                    message: format!("duplicate vocab token `{t}`"),
                });
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Corpus {
                    line: None,
                    message: format!("special token `{s}` missing from index {i}"),
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index for `token`, or UNK when absent.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }
}

/// Frequency-ranked vocabulary over a tokenized corpus.
///
/// Tokens are ranked by count (descending) with lexicographic tie-break,
/// tokens under `min_count` are dropped (they will map to UNK), and the
/// result is truncated to `max_size` including the five specials.
pub fn build_vocab<'a, I>(token_streams: I, max_size: usize, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size < 6 {
        return Err(Error::Config(format!(
            "vocab max_size must allow the 5 specials plus at least one token, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut any = false;
    for stream in token_streams {
        any = true;
        for t in stream {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::Corpus {
            line: None,
            message: "cannot build a vocabulary from an empty corpus".into(),
        });
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIALS.len());

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocab::from_tokens(tokens)
}

/// Vocab body for a vocab file: one token per line in index order.
pub fn vocab_to_lines(vocab: &Vocab) -> String {
    let mut s = String::new();
    for t in vocab.tokens() {
        let _ = writeln!(s, "{t}");
    }
    s
}

/// Parse a vocab file body; `#`-prefixed header lines are skipped.
pub fn vocab_from_lines(text: &str) -> Result<Vocab> {
    let tokens: Vec<String> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(str::to_string)
        .collect();
    Vocab::from_tokens(tokens)
}

// ── Sequence pairs ───────────────────────────────────────────────────────

/// Conditional input `x` (empty for unconditional tasks) and target `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencePair {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

/// Raw (untokenized into ids) pair of token streams.
#[derive(Debug, Clone)]
pub struct RawPair {
    pub x: Vec<String>,
    pub y: Vec<String>,
}

/// Parse a corpus file into token streams. Lines starting with `#` are
/// treated as headers and skipped; line numbers in errors are 1-based over
/// the raw file.
pub fn load_raw(path: &Path, format: CorpusFormat, tokenizer: Tokenizer) -> Result<Vec<RawPair>> {
    let text = std::fs::read_to_string(path)?;
    parse_raw(&text, format, tokenizer)
}

pub fn parse_raw(text: &str, format: CorpusFormat, tokenizer: Tokenizer) -> Result<Vec<RawPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let pair = match format {
            CorpusFormat::Pairs => {
                let mut fields = line.split('\t');
                let (x, y) = match (fields.next(), fields.next(), fields.next()) {
                    (Some(x), Some(y), None) => (x, y),
                    _ => {
                        return Err(Error::Corpus {
                            line: Some(i + 1),
                            message: "expected exactly two tab-separated fields".into(),
                        })
                    }
                };
                RawPair {
                    x: tokenize(x, tokenizer),
                    y: tokenize(y, tokenizer),
                }
            }
            CorpusFormat::Mono => RawPair {
                x: Vec::new(),
                y: tokenize(line, tokenizer),
            },
        };
        if pair.y.is_empty() {
            return Err(Error::Corpus {
                line: Some(i + 1),
                message: "target side is empty".into(),
            });
        }
        out.push(pair);
    }
    if out.is_empty() {
        return Err(Error::Corpus {
            line: None,
            message: "corpus file contains no data lines".into(),
        });
    }
    Ok(out)
}

pub fn encode_pair(raw: &RawPair, vocab: &Vocab) -> SequencePair {
    SequencePair {
        x: raw.x.iter().map(|t| vocab.id_or_unk(t)).collect(),
        y: raw.y.iter().map(|t| vocab.id_or_unk(t)).collect(),
    }
}

/// Load a corpus and encode it against a fixed vocabulary; out-of-vocabulary
/// tokens become UNK.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    tokenizer: Tokenizer,
    vocab: &Vocab,
) -> Result<Vec<SequencePair>> {
    let raw = load_raw(path, format, tokenizer)?;
    Ok(raw.iter().map(|r| encode_pair(r, vocab)).collect())
}

// ── Templates ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Token(usize),
    Blank,
}

/// Target sequence with blank placeholders plus the sorted blank index set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    slots: Vec<Slot>,
    blanks: Vec<usize>,
}

impl Template {
    pub fn new(slots: Vec<Slot>) -> Self {
        let blanks = slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, Slot::Blank).then_some(i))
            .collect();
        Template { slots, blanks }
    }

    pub fn from_masked(y: &[usize], blank_positions: &[usize]) -> Self {
        let mut slots: Vec<Slot> = y.iter().map(|&t| Slot::Token(t)).collect();
        for &p in blank_positions {
            slots[p] = Slot::Blank;
        }
        Template::new(slots)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Sorted positions of the blanks.
    pub fn blanks(&self) -> &[usize] {
        &self.blanks
    }

    pub fn blank_count(&self) -> usize {
        self.blanks.len()
    }

    /// Complete sequence with `fill[j]` substituted at the j-th blank.
    pub fn fill(&self, fill: &[usize]) -> Vec<usize> {
        debug_assert_eq!(fill.len(), self.blanks.len());
        let mut j = 0;
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Token(t) => *t,
                Slot::Blank => {
                    let v = fill[j];
                    j += 1;
                    v
                }
            })
            .collect()
    }

    /// Mirror image: position i maps to len−1−i, blanks included.
    pub fn reversed(&self) -> Template {
        let mut slots = self.slots.clone();
        slots.reverse();
        Template::new(slots)
    }

    /// True when `seq` carries the template's token at every non-blank slot.
    pub fn preserved_by(&self, seq: &[usize]) -> bool {
        seq.len() == self.slots.len()
            && self.slots.iter().zip(seq).all(|(s, &t)| match s {
                Slot::Token(expected) => *expected == t,
                Slot::Blank => true,
            })
    }

    pub fn to_line(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        for (i, s) in self.slots.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match s {
                Slot::Token(t) => out.push_str(vocab.token(*t)),
                Slot::Blank => out.push_str(BLANK_LITERAL),
            }
        }
        out
    }

    pub fn from_line(line: &str, vocab: &Vocab) -> Result<Template> {
        let slots = line
            .split_whitespace()
            .map(|t| {
                if t == BLANK_LITERAL {
                    Slot::Blank
                } else {
                    Slot::Token(vocab.id_or_unk(t))
                }
            })
            .collect::<Vec<_>>();
        if slots.is_empty() {
            return Err(Error::Corpus {
                line: None,
                message: "empty template line".into(),
            });
        }
        Ok(Template::new(slots))
    }
}

/// Blank count for ratio `r` over length `m`: round-half-up of `r·m`,
/// clamped to `[1, m−1]` so at least one context token survives.
fn mask_count(m: usize, r: f64) -> Result<usize> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Config(format!("mask ratio must be in (0, 1), got {r}")));
    }
    if m < 2 {
        return Err(Error::Corpus {
            line: None,
            message: format!("sequence of length {m} is too short to mask"),
        });
    }
    let k = (r * m as f64 + 0.5).floor() as usize;
    Ok(k.clamp(1, m - 1))
}

/// Contiguous central mask: k blanks starting at ⌊(m−k)/2⌋.
pub fn mask_middle(y: &[usize], r: f64) -> Result<Template> {
    let m = y.len();
    let k = mask_count(m, r)?;
    let start = (m - k) / 2;
    let positions: Vec<usize> = (start..start + k).collect();
    Ok(Template::from_masked(y, &positions))
}

/// k distinct uniformly drawn positions; deterministic for a fixed seed.
pub fn mask_random(y: &[usize], r: f64, seed: u64) -> Result<Template> {
    let m = y.len();
    let k = mask_count(m, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher–Yates: first k entries are a uniform k-subset.
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        idx.swap(i, j);
    }
    let mut positions = idx[..k].to_vec();
    positions.sort_unstable();
    Ok(Template::from_masked(y, &positions))
}

/// In-place Fisher–Yates with a ChaCha stream; shared by training shuffles
/// and data splits so every consumer is reproducible.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

// ── Synthetic corpus ─────────────────────────────────────────────────────

const TOPICS: &[(&str, &[&str], &[&str])] = &[
    (
        "animals",
        &["cat", "dog", "horse", "rabbit", "fox", "wolf", "owl", "crane"],
        &["swift", "furry", "wild", "shy", "clever"],
    ),
    (
        "foods",
        &["bread", "cheese", "apple", "soup", "cake", "honey", "rice", "plum"],
        &["tasty", "sweet", "fresh", "warm", "plain"],
    ),
    (
        "places",
        &["market", "garden", "harbor", "castle", "forest", "valley", "bridge", "tower"],
        &["busy", "quiet", "ancient", "green", "famous"],
    ),
    (
        "tools",
        &["hammer", "needle", "ladder", "basket", "kettle", "lantern", "barrel", "rope"],
        &["useful", "heavy", "simple", "sturdy", "worn"],
    ),
    (
        "music",
        &["fiddle", "drum", "flute", "horn", "bell", "harp", "chant", "tune"],
        &["loud", "soft", "merry", "gentle", "bright"],
    ),
    (
        "weather",
        &["rain", "frost", "wind", "fog", "snow", "thunder", "sunshine", "breeze"],
        &["cold", "sudden", "mild", "fierce", "long"],
    ),
];

const QUERY_PATTERNS: &[&str] = &[
    "do you like the {n}",
    "what do you think of the {n}",
    "tell me about the {n}",
    "have you seen the {n}",
    "how is the {n} today",
    "any news about the {n}",
];

const REPLY_PATTERNS: &[&str] = &[
    "i think the {n} is very {a}",
    "the {n} looks {a} and {b} today",
    "well the {n} seems rather {a} to me",
    "everyone says the {n} is quite {a}",
    "oh that {n} is the most {a} of all",
    "yes the {a} {n} pleases everyone here",
];

/// Deterministic synthetic query/reply corpus. Replies repeat the queried
/// noun and use adjectives tied to the noun's topic, so a small attention
/// model can learn sharp conditionals on both the input and the context.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, nouns, adjs) = TOPICS[rng.random_range(0..TOPICS.len())];
        let noun = nouns[rng.random_range(0..nouns.len())];
        let a_idx = rng.random_range(0..adjs.len());
        let adj = adjs[a_idx];
        let adj2 = adjs[(a_idx + 1 + rng.random_range(0..adjs.len() - 1)) % adjs.len()];
        let q = QUERY_PATTERNS[rng.random_range(0..QUERY_PATTERNS.len())];
        let r = REPLY_PATTERNS[rng.random_range(0..REPLY_PATTERNS.len())];
        let expand = |pat: &str| {
            pat.replace("{n}", noun)
                .replace("{a}", adj)
                .replace("{b}", adj2)
        };
        out.push((expand(q), expand(r)));
    }
    out
}

/// Render synthetic pairs as a pairs-format corpus body.
pub fn pairs_to_tsv(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (x, y) in pairs {
        let _ = writeln!(s, "{x}\t{y}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(tokens: &[&str]) -> Vocab {
        let streams: Vec<Vec<String>> = vec![tokens.iter().map(|s| s.to_string()).collect()];
        build_vocab(streams.iter().map(|s| s.as_slice()), 1000, 1).unwrap()
    }

    #[test]
    fn word_tokenizer_splits_pairs_line() {
        let raw = parse_raw("hi there\thello", CorpusFormat::Pairs, Tokenizer::Word).unwrap();
        assert_eq!(raw[0].x, vec!["hi", "there"]);
        assert_eq!(raw[0].y, vec!["hello"]);
    }

    #[test]
    fn char_tokenizer_mono() {
        let raw = parse_raw("abc", CorpusFormat::Mono, Tokenizer::Char).unwrap();
        assert_eq!(raw[0].y, vec!["a", "b", "c"]);
        assert!(raw[0].x.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_raw("ok\tfine\nbad line without tab", CorpusFormat::Pairs, Tokenizer::Word)
            .unwrap_err();
        match err {
            Error::Corpus { line, .. } => assert_eq!(line, Some(2)),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_rejected() {
        assert!(parse_raw("", CorpusFormat::Mono, Tokenizer::Word).is_err());
    }

    #[test]
    fn vocab_frequency_then_lexicographic() {
        let vocab = v(&["a", "a", "b"]);
        assert_eq!(vocab.token(5), "a");
        assert_eq!(vocab.token(6), "b");
        // tie between b-like singles breaks lexicographically
        let vocab = v(&["c", "b"]);
        assert_eq!(vocab.token(5), "b");
        assert_eq!(vocab.token(6), "c");
    }

    #[test]
    fn vocab_bijection_and_specials() {
        let vocab = v(&["x", "y", "z"]);
        for i in 0..vocab.len() {
            assert_eq!(vocab.lookup(vocab.token(i)), Some(i));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(vocab.token(i), *s);
        }
    }

    #[test]
    fn min_count_drops_singletons_to_unk() {
        let streams: Vec<Vec<String>> =
            vec![["a", "a", "rare"].iter().map(|s| s.to_string()).collect()];
        let vocab = build_vocab(streams.iter().map(|s| s.as_slice()), 1000, 2).unwrap();
        assert_eq!(vocab.lookup("rare"), None);
        assert_eq!(vocab.id_or_unk("rare"), UNK);
        assert_eq!(vocab.id_or_unk("a"), 5);
    }

    #[test]
    fn vocab_too_small_rejected() {
        let streams: Vec<Vec<String>> = vec![vec!["a".to_string()]];
        assert!(build_vocab(streams.iter().map(|s| s.as_slice()), 5, 1).is_err());
    }

    #[test]
    fn mask_middle_examples() {
        let y: Vec<usize> = (10..18).collect(); // m = 8
        let t = mask_middle(&y, 0.5).unwrap();
        assert_eq!(t.blanks(), &[2, 3, 4, 5]);
        let t = mask_middle(&y, 0.25).unwrap();
        assert_eq!(t.blanks(), &[3, 4]);
        let y4: Vec<usize> = (10..14).collect(); // m = 4
        let t = mask_middle(&y4, 0.75).unwrap();
        assert_eq!(t.blanks(), &[0, 1, 2]);
    }

    #[test]
    fn mask_preserves_context_tokens() {
        let y: Vec<usize> = (10..18).collect();
        let t = mask_middle(&y, 0.5).unwrap();
        for (i, s) in t.slots().iter().enumerate() {
            match s {
                Slot::Token(tok) => assert_eq!(*tok, y[i]),
                Slot::Blank => assert!(t.blanks().contains(&i)),
            }
        }
    }

    #[test]
    fn mask_random_deterministic_and_counted() {
        let y: Vec<usize> = (10..18).collect();
        let a = mask_random(&y, 0.25, 7).unwrap();
        let b = mask_random(&y, 0.25, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.blank_count(), 2);
    }

    #[test]
    fn mask_random_boundary_leaves_one_token() {
        let y: Vec<usize> = (10..14).collect();
        // r close to 1 clamps to m−1 blanks
        let t = mask_random(&y, 0.99, 3).unwrap();
        assert_eq!(t.blank_count(), 3);
    }

    #[test]
    fn mask_rejects_degenerate_input() {
        assert!(mask_middle(&[5], 0.5).is_err());
        assert!(mask_middle(&[5, 6], 0.0).is_err());
        assert!(mask_middle(&[5, 6], 1.0).is_err());
    }

    #[test]
    fn template_fill_and_reverse() {
        let t = Template::from_masked(&[10, 11, 12, 13], &[1, 3]);
        assert_eq!(t.fill(&[99, 98]), vec![10, 99, 12, 98]);
        let r = t.reversed();
        assert_eq!(r.blanks(), &[0, 2]);
        assert_eq!(r.reversed(), t);
    }

    #[test]
    fn template_line_roundtrip() {
        let vocab = v(&["hello", "world", "again"]);
        let y = vec![
            vocab.lookup("hello").unwrap(),
            vocab.lookup("world").unwrap(),
            vocab.lookup("again").unwrap(),
        ];
        let t = Template::from_masked(&y, &[1]);
        let line = t.to_line(&vocab);
        assert_eq!(line, "hello __BLANK__ again");
        let back = Template::from_line(&line, &vocab).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let a = synthetic_pairs(32, 5);
        let b = synthetic_pairs(32, 5);
        assert_eq!(a, b);
        assert_ne!(a, synthetic_pairs(32, 6));
        for (x, y) in &a {
            assert!(y.split_whitespace().count() >= 4);
            assert!(!x.is_empty());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn mask_count_and_preservation(
                m in 2usize..40,
                r in 0.01f64..0.99,
                seed in 0u64..500,
                middle in proptest::bool::ANY,
            ) {
                let y: Vec<usize> = (0..m).map(|i| 5 + i).collect();
                let t = if middle {
                    mask_middle(&y, r).unwrap()
                } else {
                    mask_random(&y, r, seed).unwrap()
                };
                let expected = (((r * m as f64) + 0.5).floor() as usize).clamp(1, m - 1);
                prop_assert_eq!(t.blank_count(), expected);
                // non-blank slots carry the original tokens
                for (i, s) in t.slots().iter().enumerate() {
                    if let Slot::Token(tok) = s {
                        prop_assert_eq!(*tok, y[i]);
                    }
                }
                if middle {
                    // contiguous
                    let b = t.blanks();
                    for w in b.windows(2) {
                        prop_assert_eq!(w[1], w[0] + 1);
                    }
                }
            }

            #[test]
            fn template_text_roundtrip(m in 1usize..20, blanks in proptest::collection::vec(0usize..20, 0..6)) {
                let words: Vec<String> = (0..m).map(|i| format!("w{i}")).collect();
                let streams = vec![words.clone()];
                let vocab = build_vocab(streams.iter().map(|s| s.as_slice()), 100, 1).unwrap();
                let y: Vec<usize> = words.iter().map(|w| vocab.lookup(w).unwrap()).collect();
                let positions: Vec<usize> = blanks.into_iter().filter(|&b| b < m).collect();
                let t = Template::from_masked(&y, &positions);
                let line = t.to_line(&vocab);
                prop_assert_eq!(Template::from_line(&line, &vocab).unwrap(), t);
            }
        }
    }
}
