//! Beam search, with and without a character-prefix constraint.
//!
//! Constrained search works on the rendered surface: a partial hypothesis
//! tracks how many bytes of the prefix its surface has matched so far. While
//! the prefix is not yet covered, only tokens whose rendered piece (joiner +
//! surface) either fits inside the remaining prefix or extends past its end
//! are allowed, and EOS is not. Scores stay true model log-probabilities.
//!
//! If no hypothesis can complete the prefix (unknown characters, a cap that
//! is too short, or a beam that pruned every viable path), the prefix is
//! spliced verbatim in front of a freely decoded suffix; see
//! [`splice_fallback`].

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::Result;
use crate::model::{DecoderState, EncodedSource, Seq2Seq};
use crate::vocab::{split_surfaces, Tokenization, Vocabulary, EOS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthNormalization {
    #[default]
    None,
    DivideByLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamParams {
    pub beam_width: usize,
    /// Maximum hypothesis length in tokens, EOS included.
    pub max_len: usize,
    pub length_normalization: LengthNormalization,
}

impl BeamParams {
    pub fn new(beam_width: usize, max_len: usize) -> Self {
        BeamParams {
            beam_width: beam_width.max(1),
            max_len: max_len.max(1),
            length_normalization: LengthNormalization::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens after BOS; ends with EOS unless `capped`.
    pub token_ids: Vec<u32>,
    pub logprob: f64,
    pub surface: String,
    /// The prefix could not be produced by the model and was spliced in verbatim.
    pub spliced: bool,
    /// Closed by the length cap rather than by EOS.
    pub capped: bool,
}

impl Hypothesis {
    pub fn score(&self, norm: LengthNormalization) -> f64 {
        match norm {
            LengthNormalization::None => self.logprob,
            LengthNormalization::DivideByLength => self.logprob / self.token_ids.len().max(1) as f64,
        }
    }
}

/// A character prefix split into the tokens it completely determines and a
/// trailing residual that does not (yet) form a whole token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixConstraint {
    raw_prefix: String,
    forced_token_ids: Vec<u32>,
    residual_start: usize,
}

impl PrefixConstraint {
    pub fn empty() -> Self {
        PrefixConstraint {
            raw_prefix: String::new(),
            forced_token_ids: Vec::new(),
            residual_start: 0,
        }
    }

    pub fn raw_prefix(&self) -> &str {
        &self.raw_prefix
    }

    pub fn forced_token_ids(&self) -> &[u32] {
        &self.forced_token_ids
    }

    /// Part of the prefix covered by the forced tokens, including the word
    /// separator that follows them.
    pub fn forced_surface(&self) -> &str {
        &self.raw_prefix[..self.residual_start]
    }

    pub fn residual(&self) -> &str {
        &self.raw_prefix[self.residual_start..]
    }

    pub fn is_empty(&self) -> bool {
        self.raw_prefix.is_empty()
    }
}

/// Longest-match decomposition of `raw_prefix` into forced tokens and a residual.
///
/// Character vocabularies take the longest vocabulary token at each position.
/// Word vocabularies force a word only once something follows it in the
/// prefix, so a trailing partial word always stays in the residual. The
/// first unknown token stops the decomposition.
pub fn make_constraint(raw_prefix: &str, vocab: &Vocabulary) -> PrefixConstraint {
    let (forced, mut start) = match vocab.mode() {
        Tokenization::Char => longest_match(raw_prefix, vocab),
        Tokenization::Word => complete_words(raw_prefix, vocab),
    };
    if vocab.mode() == Tokenization::Word && !forced.is_empty() && raw_prefix[start..].starts_with(' ') {
        start += 1;
    }
    PrefixConstraint {
        raw_prefix: raw_prefix.into(),
        forced_token_ids: forced,
        residual_start: start,
    }
}

fn longest_match(raw: &str, vocab: &Vocabulary) -> (Vec<u32>, usize) {
    let mut forced = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let rest = &raw[pos..];
        let best = (0..vocab.len() as u32)
            .filter(|&id| vocab.is_generatable(id) && id != EOS)
            .filter(|&id| rest.starts_with(vocab.surface(id)))
            .max_by_key(|&id| (vocab.surface(id).len(), core::cmp::Reverse(id)));
        match best {
            Some(id) => {
                forced.push(id);
                pos += vocab.surface(id).len();
            }
            None => break,
        }
    }
    (forced, pos)
}

fn complete_words(raw: &str, vocab: &Vocabulary) -> (Vec<u32>, usize) {
    let mut forced = Vec::new();
    let mut rendered = String::new();
    let mut consumed = 0;
    for surface in split_surfaces(raw, Tokenization::Word) {
        let Some(id) = vocab.id(&surface) else { break };
        if !vocab.is_generatable(id) || id == EOS {
            break;
        }
        let mut next = rendered.clone();
        next.push_str(vocab.joiner(forced.is_empty(), id));
        next.push_str(&surface);
        // The rendering must reproduce the prefix, and the token must be followed by something.
        if !raw.starts_with(next.as_str()) || next.len() >= raw.len() {
            break;
        }
        forced.push(id);
        rendered = next;
        consumed = rendered.len();
    }
    (forced, consumed)
}

/// How appending a token interacts with the unmatched part of the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consumption {
    /// The piece lies strictly inside the remaining prefix and consumes this many bytes.
    Partial(usize),
    /// The piece covers the rest of the prefix; the constraint is released.
    Complete,
}

/// Tokens that may follow while `remaining` (non-empty) of the prefix is
/// still unmatched. `first` is true when nothing has been rendered yet
/// (word vocabularies put no space before the first token).
pub fn compatible_mask(remaining: &str, vocab: &Vocabulary, first: bool) -> Vec<(u32, Consumption)> {
    let mut out = Vec::new();
    for id in 0..vocab.len() as u32 {
        if !vocab.is_generatable(id) || id == EOS {
            continue;
        }
        if let Some(c) = consumption(remaining, vocab.joiner(first, id), vocab.surface(id)) {
            out.push((id, c));
        }
    }
    out
}

fn consumption(remaining: &str, joiner: &str, surface: &str) -> Option<Consumption> {
    let rb = remaining.as_bytes();
    let piece_len = joiner.len() + surface.len();
    let piece = joiner.bytes().chain(surface.bytes());
    if piece_len < rb.len() {
        piece.zip(rb).all(|(a, &b)| a == b).then_some(Consumption::Partial(piece_len))
    } else {
        piece.zip(rb).all(|(a, &b)| a == b).then_some(Consumption::Complete)
    }
}

struct Partial {
    tokens: Vec<u32>,
    logprob: f64,
    state: DecoderState,
    /// Bytes of the prefix matched so far.
    matched: usize,
}

struct Candidate {
    parent: usize,
    token: u32,
    logprob: f64,
    matched: usize,
}

/// Orders by score descending, then by token sequence ascending.
fn rank(a_score: f64, a_tokens: (&[u32], Option<u32>), b_score: f64, b_tokens: (&[u32], Option<u32>)) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.0.iter().chain(a_tokens.1.iter()).cmp(b_tokens.0.iter().chain(b_tokens.1.iter())))
}

fn run_search(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    encoded: &EncodedSource,
    params: &BeamParams,
    prefix: &str,
    start: Partial,
) -> Result<Vec<Hypothesis>> {
    let width = params.beam_width.max(1);
    let max_len = params.max_len.max(1);
    let mut finished: Vec<(Vec<u32>, f64, bool)> = Vec::new();
    let mut live = alloc::vec![start];
    if live[0].tokens.len() >= max_len {
        let p = live.pop().expect("start");
        finished.push((p.tokens, p.logprob, true));
    }

    while !live.is_empty() {
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (pi, p) in live.iter().enumerate() {
            let out = model.decoder_step(&p.state, encoded)?;
            if p.matched < prefix.len() {
                let first = p.tokens.is_empty();
                for (token, c) in compatible_mask(&prefix[p.matched..], vocab, first) {
                    candidates.push(Candidate {
                        parent: pi,
                        token,
                        logprob: p.logprob + out.logprobs[token as usize],
                        matched: match c {
                            Consumption::Partial(n) => p.matched + n,
                            Consumption::Complete => prefix.len(),
                        },
                    });
                }
            } else {
                for token in 0..vocab.len() as u32 {
                    if vocab.is_generatable(token) {
                        candidates.push(Candidate {
                            parent: pi,
                            token,
                            logprob: p.logprob + out.logprobs[token as usize],
                            matched: p.matched,
                        });
                    }
                }
            }
            next_states.push(out.state);
        }

        candidates.sort_by(|a, b| {
            rank(
                a.logprob,
                (&live[a.parent].tokens, Some(a.token)),
                b.logprob,
                (&live[b.parent].tokens, Some(b.token)),
            )
        });
        candidates.truncate(width);

        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            let mut tokens = live[c.parent].tokens.clone();
            tokens.push(c.token);
            if c.token == EOS {
                finished.push((tokens, c.logprob, false));
            } else if tokens.len() >= max_len {
                if c.matched >= prefix.len() {
                    finished.push((tokens, c.logprob, true));
                }
            } else {
                let mut state = next_states[c.parent].clone();
                state.prev_token = c.token;
                next.push(Partial {
                    tokens,
                    logprob: c.logprob,
                    state,
                    matched: c.matched,
                });
            }
        }
        live = next;
    }

    let norm = params.length_normalization;
    let mut hyps: Vec<Hypothesis> = finished
        .into_iter()
        .map(|(token_ids, logprob, capped)| Hypothesis {
            surface: vocab.detokenize(&token_ids),
            token_ids,
            logprob,
            spliced: false,
            capped,
        })
        .collect();
    hyps.sort_by(|a, b| rank(a.score(norm), (&a.token_ids, None), b.score(norm), (&b.token_ids, None)));
    Ok(hyps)
}

/// Unconstrained beam search; hypotheses ranked best first.
pub fn beam_search(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    encoded: &EncodedSource,
    params: &BeamParams,
) -> Result<Vec<Hypothesis>> {
    let start = Partial {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.initial_state(encoded),
        matched: 0,
    };
    run_search(model, vocab, encoded, params, "", start)
}

/// Beam search restricted to hypotheses whose surface starts with the
/// constraint's prefix. Never returns an empty list: when the model cannot
/// reach the prefix the result is a single spliced hypothesis.
pub fn constrained_beam_search(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    encoded: &EncodedSource,
    constraint: &PrefixConstraint,
    params: &BeamParams,
) -> Result<Vec<Hypothesis>> {
    let start = Partial {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.initial_state(encoded),
        matched: 0,
    };
    let hyps = run_search(model, vocab, encoded, params, constraint.raw_prefix(), start)?;
    if !hyps.is_empty() {
        return Ok(hyps);
    }
    Ok(alloc::vec![decode_spliced(model, vocab, encoded, constraint, params)?])
}

/// Feeds the forced tokens and one UNK per residual unit, then decodes a
/// free suffix and splices it after the verbatim prefix.
fn decode_spliced(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    encoded: &EncodedSource,
    constraint: &PrefixConstraint,
    params: &BeamParams,
) -> Result<Hypothesis> {
    let units = match vocab.mode() {
        Tokenization::Char => constraint.residual().chars().count(),
        Tokenization::Word => split_surfaces(constraint.residual(), Tokenization::Word).len(),
    };
    let mut fed: Vec<u32> = constraint.forced_token_ids().to_vec();
    fed.extend(core::iter::repeat_n(UNK, units));

    let mut state = model.initial_state(encoded);
    let mut logprob = 0.0;
    for &tok in &fed {
        let out = model.decoder_step(&state, encoded)?;
        logprob += out.logprobs[tok as usize];
        state = out.state;
        state.prev_token = tok;
    }
    let start = Partial {
        tokens: fed.clone(),
        logprob,
        state,
        matched: 0,
    };
    let best = run_search(model, vocab, encoded, params, "", start)?
        .into_iter()
        .next()
        .expect("unconstrained search always finishes");
    let suffix = &best.token_ids[fed.len()..];
    Ok(splice_fallback(constraint, vocab, &fed, suffix, best.logprob, best.capped))
}

/// Assembles a spliced hypothesis: the prefix verbatim, then the rendered
/// suffix. `fed` are the tokens that stood in for the prefix while decoding.
pub fn splice_fallback(
    constraint: &PrefixConstraint,
    vocab: &Vocabulary,
    fed: &[u32],
    suffix: &[u32],
    logprob: f64,
    capped: bool,
) -> Hypothesis {
    let raw = constraint.raw_prefix();
    let rendered = vocab.detokenize(suffix);
    let mut surface = String::with_capacity(raw.len() + rendered.len() + 1);
    surface.push_str(raw);
    let needs_space = vocab.mode() == Tokenization::Word
        && !raw.is_empty()
        && !raw.ends_with(' ')
        && !rendered.is_empty()
        && !suffix.first().is_some_and(|&t| vocab.is_attached_punctuation(t));
    if needs_space {
        surface.push(' ');
    }
    surface.push_str(&rendered);
    let mut token_ids = fed.to_vec();
    token_ids.extend_from_slice(suffix);
    Hypothesis {
        token_ids,
        logprob,
        surface,
        spliced: true,
        capped,
    }
}
