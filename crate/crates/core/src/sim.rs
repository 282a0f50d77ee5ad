//! A simulated user that corrects hypotheses towards a known reference.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::session::{Predictor, Session, SessionReport, Truncation};
use crate::vocab::normalize;

/// One interactive session as seen from the user's side.
pub trait InteractiveBackend {
    type Error;

    /// Requests the initial hypothesis.
    fn predict(&mut self) -> Result<String, Self::Error>;
    fn feedback(&mut self, prefix: &str, typed_len: usize, moved_pointer: bool) -> Result<String, Self::Error>;
    fn validate(&mut self, truncation: Option<Truncation>) -> Result<SessionReport, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub iterations: u64,
    pub keystrokes: u64,
    pub mouse_actions: u64,
    pub ksmr: f64,
    pub converged: bool,
    pub final_text: String,
    /// The prefixes sent, in order.
    pub prefixes: Vec<String>,
}

/// Characters of `a` and `b` agree up to this index (a char count).
fn common_prefix_chars(a: &[char], b: &[char]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Drives one session until the hypothesis equals `reference`, typing
/// `burst` characters at the first mismatch each time, then validates.
///
/// A hypothesis that runs past a correct reference is cut with one
/// truncation. Gives up (unconverged) after `len(reference)` corrections.
pub fn simulate_sample<B: InteractiveBackend>(
    backend: &mut B,
    reference: &str,
    burst: usize,
) -> Result<SampleOutcome, B::Error> {
    let reference = normalize(reference);
    let target: Vec<char> = reference.chars().collect();
    let burst = burst.max(1);
    let mut hyp = backend.predict()?;
    let mut caret: Option<usize> = None;
    let mut prefixes = Vec::new();
    let mut truncation = None;

    loop {
        let current: Vec<char> = hyp.chars().collect();
        if current == target {
            break;
        }
        let i = common_prefix_chars(&current, &target);
        if i == target.len() {
            truncation = Some(Truncation {
                chars: i,
                moved_pointer: caret != Some(i),
            });
            break;
        }
        if prefixes.len() >= target.len() {
            break;
        }
        let k = burst.min(target.len() - i);
        let prefix: String = target[..i + k].iter().collect();
        let moved = caret != Some(i);
        caret = Some(i + k);
        hyp = backend.feedback(&prefix, k, moved)?;
        prefixes.push(prefix);
    }

    let report = backend.validate(truncation)?;
    Ok(SampleOutcome {
        iterations: report.effort.iterations,
        keystrokes: report.effort.keystrokes,
        mouse_actions: report.effort.mouse_actions,
        ksmr: report.ksmr,
        converged: report.final_text == reference,
        final_text: report.final_text,
        prefixes,
    })
}

/// An in-memory session driven through a [`Predictor`].
pub struct LocalBackend<'a> {
    pub session: Session,
    pub predictor: &'a dyn Predictor,
}

impl InteractiveBackend for LocalBackend<'_> {
    type Error = Error;

    fn predict(&mut self) -> Result<String, Error> {
        Ok(self.session.initial_prediction(self.predictor)?.surface.clone())
    }

    fn feedback(&mut self, prefix: &str, typed_len: usize, moved_pointer: bool) -> Result<String, Error> {
        Ok(self
            .session
            .apply_feedback(self.predictor, prefix, typed_len, moved_pointer)?
            .surface
            .clone())
    }

    fn validate(&mut self, truncation: Option<Truncation>) -> Result<SessionReport, Error> {
        if let Some(t) = truncation {
            self.session.truncate(t)?;
        }
        self.session.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub samples: usize,
    pub converged: usize,
    pub mean_ksmr: f64,
    pub mean_iterations: f64,
    pub mean_keystrokes: f64,
    pub mean_mouse_actions: f64,
    pub first_half_ksmr: f64,
    pub second_half_ksmr: f64,
    /// Mean of (len + 1) / len over the final texts: typing everything
    /// and clicking once.
    pub retype_ksmr: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn summarize(rows: &[SampleOutcome]) -> Summary {
    let half = rows.len() / 2;
    Summary {
        samples: rows.len(),
        converged: rows.iter().filter(|r| r.converged).count(),
        mean_ksmr: mean(rows.iter().map(|r| r.ksmr)),
        mean_iterations: mean(rows.iter().map(|r| r.iterations as f64)),
        mean_keystrokes: mean(rows.iter().map(|r| r.keystrokes as f64)),
        mean_mouse_actions: mean(rows.iter().map(|r| r.mouse_actions as f64)),
        first_half_ksmr: mean(rows[..half].iter().map(|r| r.ksmr)),
        second_half_ksmr: mean(rows[half..].iter().map(|r| r.ksmr)),
        retype_ksmr: mean(rows.iter().map(|r| {
            let n = r.final_text.chars().count().max(1) as f64;
            (n + 1.0) / n
        })),
    }
}
