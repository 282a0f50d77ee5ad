//! Offline training from corpus files.

use std::path::Path;

use ipseq_core::learn::{train, Example, LossPoint, OptimizerState, TrainConfig};
use ipseq_core::model::{Modality, ModelConfig, Seq2Seq, SourceObject, DEFAULT_MAX_OUTPUT_LEN};
use ipseq_core::vocab::{Tokenization, Vocabulary};

use crate::checkpoint::Checkpoint;
use crate::corpus::{load_sources, split_paths, ParallelCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub modality: Modality,
    pub src_tokenization: Option<Tokenization>,
    pub tgt_tokenization: Tokenization,
    pub max_vocab: usize,
    pub embedding_dim: usize,
    pub encoder_hidden_dim: usize,
    pub decoder_hidden_dim: usize,
    pub attention_dim: usize,
    pub max_output_len: usize,
    pub train: TrainConfig,
}

impl TrainSetup {
    pub fn new(modality: Modality, src: Option<Tokenization>, tgt: Tokenization) -> Self {
        TrainSetup {
            modality,
            src_tokenization: src,
            tgt_tokenization: tgt,
            max_vocab: 10_000,
            embedding_dim: 16,
            encoder_hidden_dim: 16,
            decoder_hidden_dim: 32,
            attention_dim: 16,
            max_output_len: DEFAULT_MAX_OUTPUT_LEN,
            train: TrainConfig::default(),
        }
    }
}

/// Sources and tokenized targets of a split, under the given vocabularies.
pub fn load_examples(stem: &Path, modality: Modality, src: Option<&Vocabulary>, tgt: &Vocabulary) -> Result<Vec<Example>> {
    let corpus = ParallelCorpus::load_split(stem)?;
    let (src_path, _) = split_paths(stem);
    let base = src_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let sources = load_sources(&corpus.sources, modality, src, &base)?;
    Ok(sources
        .into_iter()
        .zip(&corpus.targets)
        .map(|(source, t)| Example {
            source,
            target: tgt.tokenize(t),
        })
        .collect())
}

/// Builds vocabularies from the split, initializes a model from the seed and
/// trains it. `on_point` sees every batch loss as it is computed.
pub fn train_from_split(
    stem: &Path,
    setup: &TrainSetup,
    on_point: impl FnMut(LossPoint),
) -> Result<(Checkpoint, Vec<LossPoint>)> {
    let corpus = ParallelCorpus::load_split(stem)?;
    let (src_path, _) = split_paths(stem);
    let src_vocab = match (setup.modality, setup.src_tokenization) {
        (Modality::Text, Some(mode)) => Some(Vocabulary::build(
            corpus.sources.iter().map(String::as_str),
            mode,
            setup.max_vocab,
        )),
        (Modality::Text, None) => return Err(Error::format(&src_path, "text models need a source tokenization")),
        (Modality::Features, _) => None,
    };
    let tgt_vocab = Vocabulary::build(
        corpus.targets.iter().map(String::as_str),
        setup.tgt_tokenization,
        setup.max_vocab,
    );
    let examples = load_examples(stem, setup.modality, src_vocab.as_ref(), &tgt_vocab)?;
    let feature_dim = match examples.first().map(|e| &e.source) {
        Some(SourceObject::Features(rows)) => Some(rows.cols()),
        _ => None,
    };
    let config = ModelConfig {
        src_vocab_size: src_vocab.as_ref().map_or(0, Vocabulary::len),
        tgt_vocab_size: tgt_vocab.len(),
        embedding_dim: setup.embedding_dim,
        encoder_hidden_dim: setup.encoder_hidden_dim,
        decoder_hidden_dim: setup.decoder_hidden_dim,
        attention_dim: setup.attention_dim,
        modality: setup.modality,
        feature_dim,
        max_output_len: setup.max_output_len,
    };
    let mut model = Seq2Seq::new(config, setup.train.seed)?;
    let mut state = OptimizerState::new(setup.train.optimizer, model.params());
    let curve = train(&mut model, &examples, &setup.train, &mut state, on_point)?;
    Ok((
        Checkpoint {
            model,
            src_vocab,
            tgt_vocab,
            optimizer: Some(state),
        },
        curve,
    ))
}
