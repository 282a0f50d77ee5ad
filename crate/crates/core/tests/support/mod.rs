//! Test-only helpers: a tiny deterministic RNG, random small models and
//! vocabularies, and an exhaustive-enumeration search oracle that does not
//! go through the beam search code.
#![allow(dead_code)]

use ipseq_core::model::{EncodedSource, Modality, ModelConfig, Seq2Seq, SourceObject};
use ipseq_core::tensor::Tensor;
use ipseq_core::vocab::{Tokenization, Vocabulary, EOS};

pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 11
    }

    /// Uniform in [-1, 1).
    pub fn signed(&mut self) -> f64 {
        (self.next_u64() as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

pub fn randomize(model: &mut Seq2Seq, rng: &mut Lcg, scale: f64) {
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.signed() * scale;
        }
    }
}

pub fn small_config(src_vocab: usize, tgt_vocab: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        src_vocab_size: src_vocab,
        tgt_vocab_size: tgt_vocab,
        embedding_dim: 3,
        encoder_hidden_dim: 2,
        decoder_hidden_dim: 3,
        attention_dim: 2,
        modality: Modality::Text,
        feature_dim: None,
        max_output_len: max_len,
    }
}

/// A random model over `tgt`, with random parameters of magnitude `scale`.
pub fn random_model(rng: &mut Lcg, src_vocab: usize, tgt: &Vocabulary, max_len: usize, scale: f64) -> Seq2Seq {
    let mut m = Seq2Seq::new(small_config(src_vocab, tgt.len(), max_len), rng.next_u64()).unwrap();
    randomize(&mut m, rng, scale);
    m
}

pub fn random_source(rng: &mut Lcg, src_vocab: usize) -> SourceObject {
    let len = 1 + rng.below(4);
    let mut ids: Vec<u32> = (0..len).map(|_| 4 + rng.below(src_vocab - 4) as u32).collect();
    ids.push(EOS);
    SourceObject::Tokens(ids)
}

pub fn random_features(rng: &mut Lcg, t: usize, d: usize) -> Tensor {
    Tensor::matrix(t, d, (0..t * d).map(|_| rng.signed()).collect())
}

/// `n` distinct tokens for the given mode.
pub fn random_vocab(rng: &mut Lcg, mode: Tokenization, n: usize) -> Vocabulary {
    let pool: &[&str] = match mode {
        Tokenization::Char => &["a", "b", "c", " ", ".", "é"],
        Tokenization::Word => &["a", "ab", "b", "ba", "abc", ".", ",", "c"],
    };
    let mut chosen: Vec<&str> = Vec::new();
    while chosen.len() < n {
        let t = *rng.pick(pool);
        if !chosen.contains(&t) {
            chosen.push(t);
        }
    }
    Vocabulary::from_tokens(mode, chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumerated {
    pub tokens: Vec<u32>,
    pub logprob: f64,
    pub capped: bool,
}

/// Every complete output of at most `max_len` tokens (EOS included): sequences
/// ending in EOS, plus EOS-less sequences of exactly `max_len` tokens.
pub fn enumerate(model: &Seq2Seq, vocab: &Vocabulary, enc: &EncodedSource, max_len: usize) -> Vec<Enumerated> {
    let symbols: Vec<u32> = (0..vocab.len() as u32).filter(|&t| vocab.is_generatable(t)).collect();
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<u32>::new(), 0.0f64, model.initial_state(enc))];
    while let Some((prefix, lp, state)) = stack.pop() {
        let step = model.decoder_step(&state, enc).unwrap();
        for &t in &symbols {
            let mut tokens = prefix.clone();
            tokens.push(t);
            let score = lp + step.logprobs[t as usize];
            if t == EOS {
                out.push(Enumerated { tokens, logprob: score, capped: false });
            } else if tokens.len() == max_len {
                out.push(Enumerated { tokens, logprob: score, capped: true });
            } else {
                let mut next = step.state.clone();
                next.prev_token = t;
                stack.push((tokens, score, next));
            }
        }
    }
    out
}

/// Highest-scoring entry, ties to the lexicographically smaller token sequence.
pub fn argmax<'a>(items: impl IntoIterator<Item = &'a Enumerated>) -> Option<&'a Enumerated> {
    items.into_iter().fold(None, |best: Option<&Enumerated>, e| match best {
        None => Some(e),
        Some(b) if e.logprob > b.logprob || (e.logprob == b.logprob && e.tokens < b.tokens) => Some(e),
        keep => keep,
    })
}

/// Brute-force restricted argmax: best sequence whose rendering starts with `prefix`.
pub fn constrained_argmax<'a>(all: &'a [Enumerated], vocab: &Vocabulary, prefix: &str) -> Option<&'a Enumerated> {
    argmax(all.iter().filter(|e| vocab.detokenize(&e.tokens).starts_with(prefix)))
}

/// Cuts `text` at a random character boundary (possibly empty or whole).
pub fn random_cut(rng: &mut Lcg, text: &str) -> String {
    let n = text.chars().count();
    let k = rng.below(n + 1);
    text.chars().take(k).collect()
}

/// Finite-difference check of the summed teacher-forced loss over `examples`.
pub fn model_grad_check(
    model: &mut Seq2Seq,
    examples: &[(SourceObject, Vec<u32>)],
    eps: f64,
    tolerance: f64,
) -> ipseq_core::gradcheck::GradCheckReport {
    use ipseq_core::model::Binder;
    let shape = model.clone();
    ipseq_core::gradcheck::grad_check(
        model.params_mut(),
        |g| {
            let mut b = Binder::new(shape.params());
            let mut total = None;
            for (src, tgt) in examples {
                let l = shape.loss_nodes(g, &mut b, src, tgt)?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l),
                });
            }
            Ok(total.expect("at least one example"))
        },
        eps,
        tolerance,
    )
    .unwrap()
}
