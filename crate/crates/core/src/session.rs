//! The interactive-predictive protocol for one sample.
//!
//! A session starts fresh, receives one unconstrained prediction, then any
//! number of prefix corrections, each answered by a constrained re-decode,
//! and ends with validation. Effort is counted along the way.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::decode::{beam_search, constrained_beam_search, make_constraint, BeamParams, Hypothesis};
use crate::error::{Error, Result};
use crate::model::{Seq2Seq, SourceObject};
use crate::vocab::{normalize_prefix, Vocabulary};

/// Produces hypotheses for a source, optionally completing a character prefix.
pub trait Predictor {
    fn predict(&self, source: &SourceObject, prefix: Option<&str>) -> Result<Hypothesis>;
}

/// Beam search over a trained model.
pub struct ModelPredictor<'a> {
    pub model: &'a Seq2Seq,
    pub vocab: &'a Vocabulary,
    pub beam: BeamParams,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, source: &SourceObject, prefix: Option<&str>) -> Result<Hypothesis> {
        let encoded = self.model.encode(source)?;
        let mut hyps = match prefix {
            None => beam_search(self.model, self.vocab, &encoded, &self.beam)?,
            Some(p) => {
                let constraint = make_constraint(p, self.vocab);
                constrained_beam_search(self.model, self.vocab, &encoded, &constraint, &self.beam)?
            }
        };
        if hyps.is_empty() {
            return Err(Error::Empty("hypothesis list"));
        }
        Ok(hyps.swap_remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Fresh,
    Predicting,
    Interacting,
    Validated,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Fresh => "fresh",
            Status::Predicting => "predicting",
            Status::Interacting => "interacting",
            Status::Validated => "validated",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EffortCounters {
    pub keystrokes: u64,
    pub mouse_actions: u64,
    /// System decodes, the initial prediction included.
    pub iterations: u64,
}

impl EffortCounters {
    /// Keystrokes plus mouse actions per character of `final_text`.
    ///
    /// An empty final text is treated as one character long.
    pub fn ksmr(&self, final_text: &str) -> f64 {
        let chars = final_text.chars().count().max(1);
        (self.keystrokes + self.mouse_actions) as f64 / chars as f64
    }
}

/// Cutting an over-long hypothesis down to its first `chars` characters,
/// done by the user as one delete keystroke at the cut point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub chars: usize,
    pub moved_pointer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub final_text: String,
    pub effort: EffortCounters,
    pub ksmr: f64,
}

/// What a finished session leaves behind; enough to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session_id: u64,
    pub prefixes: Vec<String>,
    pub truncated_to: Option<usize>,
    pub final_text: String,
    pub effort: EffortCounters,
}

/// Keeps the first `position` characters of `previous` and appends `typed`.
pub fn derive_prefix(previous: &str, position: usize, typed: &str) -> Result<String> {
    let len = previous.chars().count();
    if position > len {
        return Err(Error::EditPosition { position, len });
    }
    let mut out: String = previous.chars().take(position).collect();
    out.push_str(typed);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Session {
    id: u64,
    source: SourceObject,
    hypothesis: Option<Hypothesis>,
    history: Vec<String>,
    effort: EffortCounters,
    status: Status,
    truncated_to: Option<usize>,
}

impl Session {
    pub fn new(id: u64, source: SourceObject) -> Self {
        Session {
            id,
            source,
            hypothesis: None,
            history: Vec::new(),
            effort: EffortCounters::default(),
            status: Status::Fresh,
            truncated_to: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn source(&self) -> &SourceObject {
        &self.source
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn effort(&self) -> EffortCounters {
        self.effort
    }

    pub fn hypothesis(&self) -> Option<&Hypothesis> {
        self.hypothesis.as_ref()
    }

    pub fn feedback_history(&self) -> &[String] {
        &self.history
    }

    fn require(&self, expected: Status) -> Result<()> {
        if self.status == expected {
            Ok(())
        } else {
            Err(Error::BadState {
                expected: expected.as_str(),
                actual: self.status.as_str(),
            })
        }
    }

    pub fn initial_prediction(&mut self, predictor: &dyn Predictor) -> Result<&Hypothesis> {
        self.require(Status::Fresh)?;
        self.status = Status::Predicting;
        match predictor.predict(&self.source, None) {
            Ok(h) => {
                self.hypothesis = Some(h);
                self.effort.iterations = 1;
                self.status = Status::Interacting;
                Ok(self.hypothesis.as_ref().unwrap())
            }
            Err(e) => {
                self.status = Status::Fresh;
                Err(e)
            }
        }
    }

    /// Re-decodes so that the hypothesis completes `raw_prefix`.
    ///
    /// The prefix is normalized first (a single trailing space survives);
    /// an empty prefix asks for a fresh unconstrained hypothesis.
    pub fn apply_feedback(
        &mut self,
        predictor: &dyn Predictor,
        raw_prefix: &str,
        typed_len: usize,
        moved_pointer: bool,
    ) -> Result<&Hypothesis> {
        self.require(Status::Interacting)?;
        let prefix = normalize_prefix(raw_prefix);
        let hyp = if prefix.is_empty() {
            predictor.predict(&self.source, None)?
        } else {
            predictor.predict(&self.source, Some(&prefix))?
        };
        if !hyp.surface.starts_with(&prefix) {
            return Err(Error::PrefixViolated);
        }
        self.effort.keystrokes += typed_len as u64;
        self.effort.mouse_actions += moved_pointer as u64;
        self.effort.iterations += 1;
        self.history.push(prefix);
        self.truncated_to = None;
        self.hypothesis = Some(hyp);
        Ok(self.hypothesis.as_ref().unwrap())
    }

    /// Drops everything after the first `t.chars` characters of the
    /// current hypothesis. No decode happens.
    pub fn truncate(&mut self, t: Truncation) -> Result<()> {
        self.require(Status::Interacting)?;
        let hyp = self.hypothesis.as_mut().ok_or(Error::Empty("hypothesis"))?;
        let len = hyp.surface.chars().count();
        if t.chars >= len {
            return Err(Error::BadTruncation { requested: t.chars, len });
        }
        hyp.surface = hyp.surface.chars().take(t.chars).collect();
        self.effort.keystrokes += 1;
        self.effort.mouse_actions += t.moved_pointer as u64;
        self.truncated_to = Some(t.chars);
        Ok(())
    }

    /// Accepts the current hypothesis; the validation click counts as a
    /// mouse action.
    pub fn validate(&mut self) -> Result<SessionReport> {
        self.require(Status::Interacting)?;
        let final_text = self
            .hypothesis
            .as_ref()
            .map(|h| h.surface.clone())
            .ok_or(Error::Empty("hypothesis"))?;
        self.effort.mouse_actions += 1;
        self.status = Status::Validated;
        let ksmr = self.effort.ksmr(&final_text);
        Ok(SessionReport {
            final_text,
            effort: self.effort,
            ksmr,
        })
    }

    pub fn log(&self) -> Result<SessionLog> {
        self.require(Status::Validated)?;
        Ok(SessionLog {
            session_id: self.id,
            prefixes: self.history.clone(),
            truncated_to: self.truncated_to,
            final_text: self.hypothesis.as_ref().map(|h| h.surface.to_string()).unwrap_or_default(),
            effort: self.effort,
        })
    }
}

/// Re-runs a logged interaction against `predictor` and returns the text it
/// ends with.
pub fn replay(predictor: &dyn Predictor, source: SourceObject, log: &SessionLog) -> Result<String> {
    let mut s = Session::new(log.session_id, source);
    s.initial_prediction(predictor)?;
    for p in &log.prefixes {
        s.apply_feedback(predictor, p, 0, false)?;
    }
    if let Some(chars) = log.truncated_to {
        s.truncate(Truncation { chars, moved_pointer: false })?;
    }
    Ok(s.validate()?.final_text)
}
