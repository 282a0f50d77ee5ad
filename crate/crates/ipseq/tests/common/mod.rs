//! Builders for on-disk task directories used by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ipseq::checkpoint::Checkpoint;
use ipseq::corpus::ParallelCorpus;
use ipseq::manifest::{TaskManifest, MANIFEST_NAME};
use ipseq_core::model::{Modality, ModelConfig, Seq2Seq};
use ipseq_core::vocab::{Tokenization, Vocabulary};

pub const PAIRS: [(&str, &str); 6] = [
    ("ab", "a b ."),
    ("ba", "b a ."),
    ("abc", "a b c ."),
    ("cab", "c a b ."),
    ("bb", "b b ."),
    ("ca", "c a ."),
];

pub fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
    ParallelCorpus {
        sources: pairs.iter().map(|p| p.0.to_string()).collect(),
        targets: pairs.iter().map(|p| p.1.to_string()).collect(),
    }
}

/// A task `<root>/<id>` with an untrained char→char model seeded by `seed`.
pub fn text_task(root: &Path, id: &str, pairs: &[(&str, &str)], seed: u64, online_lr: f64) -> PathBuf {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    let c = corpus(pairs);
    c.save_split(&dir.join("samples")).unwrap();
    let src = Vocabulary::build(c.sources.iter().map(String::as_str), Tokenization::Char, 100);
    let tgt = Vocabulary::build(c.targets.iter().map(String::as_str), Tokenization::Char, 100);
    let config = ModelConfig {
        src_vocab_size: src.len(),
        tgt_vocab_size: tgt.len(),
        embedding_dim: 4,
        encoder_hidden_dim: 4,
        decoder_hidden_dim: 6,
        attention_dim: 4,
        modality: Modality::Text,
        feature_dim: None,
        max_output_len: 24,
    };
    let model = Seq2Seq::new(config, seed).unwrap();
    Checkpoint {
        model,
        src_vocab: Some(src),
        tgt_vocab: tgt,
        optimizer: None,
    }
    .save(&dir.join("model.ckpt"))
    .unwrap();
    let mut m = TaskManifest::new(id, &format!("Task {id}"), Modality::Text, Tokenization::Char);
    m.src_tokenization = Some(Tokenization::Char);
    m.max_len = 24;
    m.beam_width = 3;
    m.online_lr = online_lr;
    m.save(&dir.join(MANIFEST_NAME)).unwrap();
    dir
}
