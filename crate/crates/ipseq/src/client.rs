//! Blocking HTTP client for the server's JSON API.

use std::time::Duration;

use ipseq_core::session::{EffortCounters, SessionReport, Truncation};
use ipseq_core::sim::InteractiveBackend;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::engine::{Prediction, TaskInfo};
use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Client {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

#[derive(Deserialize)]
struct VersionBody {
    version: u32,
}

#[derive(Deserialize)]
struct TasksBody {
    tasks: Vec<TaskInfoWire>,
}

#[derive(Deserialize)]
struct TaskInfoWire {
    id: String,
    name: String,
    modality: String,
}

#[derive(Deserialize)]
struct SessionBody {
    session_id: u64,
    source_preview: String,
}

#[derive(Deserialize)]
struct PredictionBody {
    hypothesis: String,
    spliced: bool,
}

#[derive(Deserialize)]
struct ValidateBody {
    final_text: String,
    keystrokes: u64,
    mouse_actions: u64,
    iterations: u64,
    ksmr: f64,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Client {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }

    fn decode<T: DeserializeOwned>(response: ureq::Response) -> Result<T> {
        let body: Value = response.into_json().map_err(|e| Error::Transport(e.to_string()))?;
        serde_json::from_value(body).map_err(|e| Error::Transport(format!("unexpected response: {e}")))
    }

    fn finish<T: DeserializeOwned>(result: std::result::Result<ureq::Response, ureq::Error>) -> Result<T> {
        match result {
            Ok(r) => Self::decode(r),
            Err(ureq::Error::Status(_, r)) => {
                let e: ErrorBody = Self::decode(r)?;
                Err(Error::Remote {
                    code: e.code,
                    message: e.message,
                })
            }
            Err(e) => Err(Error::Transport(e.to_string())),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::finish(self.agent.get(&format!("{}{path}", self.base)).call())
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: Value) -> Result<T> {
        Self::finish(self.agent.post(&format!("{}{path}", self.base)).send_json(body))
    }

    pub fn version(&self) -> Result<u32> {
        Ok(self.get::<VersionBody>("/version")?.version)
    }

    pub fn tasks(&self) -> Result<Vec<TaskInfo>> {
        Ok(self
            .get::<TasksBody>("/tasks")?
            .tasks
            .into_iter()
            .map(|t| TaskInfo {
                id: t.id,
                name: t.name,
                modality: t.modality,
            })
            .collect())
    }

    /// Returns `(session_id, source_preview)`.
    pub fn start_session(&self, task_id: &str, sample_id: usize) -> Result<(u64, String)> {
        let b: SessionBody = self.post("/session", json!({"task_id": task_id, "sample_id": sample_id}))?;
        Ok((b.session_id, b.source_preview))
    }

    pub fn predict(&self, session_id: u64) -> Result<Prediction> {
        let b: PredictionBody = self.post("/predict", json!({"session_id": session_id}))?;
        Ok(Prediction {
            hypothesis: b.hypothesis,
            spliced: b.spliced,
        })
    }

    pub fn feedback(&self, session_id: u64, prefix: &str, typed_len: usize, moved_pointer: bool) -> Result<Prediction> {
        let b: PredictionBody = self.post(
            "/feedback",
            json!({
                "session_id": session_id,
                "prefix": prefix,
                "typed_len": typed_len,
                "moved_pointer": moved_pointer,
            }),
        )?;
        Ok(Prediction {
            hypothesis: b.hypothesis,
            spliced: b.spliced,
        })
    }

    pub fn validate(&self, session_id: u64, learn: bool, truncation: Option<Truncation>) -> Result<SessionReport> {
        let mut body = json!({"session_id": session_id, "learn": learn});
        if let Some(t) = truncation {
            body["truncate_to"] = json!(t.chars);
            body["truncate_moved_pointer"] = json!(t.moved_pointer);
        }
        let b: ValidateBody = self.post("/validate", body)?;
        Ok(SessionReport {
            final_text: b.final_text,
            effort: EffortCounters {
                keystrokes: b.keystrokes,
                mouse_actions: b.mouse_actions,
                iterations: b.iterations,
            },
            ksmr: b.ksmr,
        })
    }
}

/// One remote session, usable by the simulator.
pub struct HttpSession<'a> {
    pub client: &'a Client,
    pub session_id: u64,
    pub learn: bool,
}

impl InteractiveBackend for HttpSession<'_> {
    type Error = Error;

    fn predict(&mut self) -> Result<String> {
        Ok(self.client.predict(self.session_id)?.hypothesis)
    }

    fn feedback(&mut self, prefix: &str, typed_len: usize, moved_pointer: bool) -> Result<String> {
        Ok(self.client.feedback(self.session_id, prefix, typed_len, moved_pointer)?.hypothesis)
    }

    fn validate(&mut self, truncation: Option<Truncation>) -> Result<SessionReport> {
        self.client.validate(self.session_id, self.learn, truncation)
    }
}
