use infill_core::corpus::{build_vocab, encode_pair, tokenize, RawPair, SequencePair, Tokenizer};
use infill_core::model::*;
use infill_core::train::{train, TrainConfig};

fn memorization_lines() -> Vec<String> {
    let subjects = ["birds", "cats", "dogs", "foxes", "wolves"];
    let verbs = ["chase","watch","follow","avoid","greet","tease","startle","ignore","admire","imitate"];
    let objects = ["mice", "cars", "kites", "shadows", "leaves"];
    let mut lines = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        for (j, v) in verbs.iter().enumerate() {
            lines.push(format!("the {s} {v} the {} near the {} while the {} waits quietly outside",
                objects[i%5], objects[j%5], objects[(i+j)%5]));
        }
    }
    lines
}

fn main() {
    let lines = memorization_lines();
    let raw: Vec<RawPair> = lines.iter().map(|l| RawPair { x: Vec::new(), y: tokenize(l, Tokenizer::Word) }).collect();
    let streams: Vec<&[String]> = raw.iter().map(|r| r.y.as_slice()).collect();
    let vocab = build_vocab(streams, 200, 1).unwrap();
    let pairs: Vec<SequencePair> = raw.iter().map(|r| encode_pair(r, &vocab)).collect();
    for seed in [3u64, 9, 21, 42] {
        for (h, e) in [(48usize, 24usize), (64, 24)] {
            let config = TrainConfig { learning_rate: 5.0, batch_size: 10, epochs: 200, valid_fraction: 0.0, seed, halve_on_plateau: true, ..TrainConfig::default() };
            let mc = ModelConfig { src_vocab: 0, tgt_vocab: vocab.len(), emb_dim: e, hidden_dim: h, encoder: EncoderKind::None, decoder: DecoderKind::ForwardUni, attention: AttentionKind::None };
            let r = train(&config, &pairs, mc).unwrap();
            println!("seed={seed} h={h}: last {:.3}", r.history.last().unwrap().train_nll);
        }
    }
}
