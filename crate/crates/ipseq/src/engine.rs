//! Loaded tasks and live sessions, independent of transport.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use ipseq_core::decode::{BeamParams, Hypothesis};
use ipseq_core::learn::{online_update, Example, OptimizerState, UpdateReport};
use ipseq_core::model::{Modality, Seq2Seq, SourceObject};
use ipseq_core::session::{ModelPredictor, Predictor, Session, SessionLog, SessionReport, Truncation};
use ipseq_core::sim::InteractiveBackend;
use ipseq_core::vocab::Vocabulary;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::corpus::{load_sources, read_lines, split_paths, ParallelCorpus};
use crate::error::{Error, Result};
use crate::manifest::{discover, TaskManifest};

#[derive(Debug, Clone)]
pub struct Sample {
    pub source: SourceObject,
    pub preview: String,
    pub reference: String,
}

pub struct Task {
    pub manifest: TaskManifest,
    pub src_vocab: Option<Vocabulary>,
    pub tgt_vocab: Vocabulary,
    pub samples: Vec<Sample>,
    online_lr: f64,
    model: RwLock<Seq2Seq>,
    optimizer: Mutex<OptimizerState>,
}

impl Task {
    /// Loads the task's checkpoint and samples. `samples` overrides the
    /// manifest's split stem.
    pub fn load(manifest: TaskManifest, samples: Option<&Path>) -> Result<Self> {
        let ckpt = Checkpoint::load(&manifest.resolve(&manifest.checkpoint))?;
        let ckpt_path = manifest.resolve(&manifest.checkpoint);
        if ckpt.model.config().modality != manifest.modality {
            return Err(Error::format(&ckpt_path, "checkpoint modality differs from the manifest"));
        }
        if ckpt.tgt_vocab.mode() != manifest.tgt_tokenization
            || ckpt.src_vocab.as_ref().map(Vocabulary::mode) != manifest.src_tokenization
        {
            return Err(Error::format(&ckpt_path, "checkpoint tokenization differs from the manifest"));
        }

        let stem = samples.map_or_else(|| manifest.resolve(&manifest.samples), Path::to_path_buf);
        let corpus = ParallelCorpus::load_split(&stem)?;
        let (src_path, _) = split_paths(&stem);
        let base = src_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let sources = load_sources(&corpus.sources, manifest.modality, ckpt.src_vocab.as_ref(), &base)?;
        let previews = match (&manifest.previews, samples) {
            (Some(p), None) => {
                let path = manifest.resolve(p);
                let lines = read_lines(&path)?;
                if lines.len() != corpus.len() {
                    return Err(Error::format(&path, "preview count differs from sample count"));
                }
                lines.into_iter().map(|l| format!("/media/{}/{}", manifest.id, l.trim())).collect()
            }
            _ if manifest.modality == Modality::Text => corpus.sources.clone(),
            _ => corpus.sources.iter().map(|s| s.trim().to_string()).collect(),
        };
        let samples = sources
            .into_iter()
            .zip(previews)
            .zip(corpus.targets)
            .map(|((source, preview), reference)| Sample {
                source,
                preview,
                reference,
            })
            .collect();

        let optimizer = match ckpt.optimizer {
            Some(o) if o.kind == manifest.optimizer => o,
            _ => OptimizerState::new(manifest.optimizer, ckpt.model.params()),
        };
        Ok(Task {
            online_lr: manifest.online_lr,
            manifest,
            src_vocab: ckpt.src_vocab,
            tgt_vocab: ckpt.tgt_vocab,
            samples,
            model: RwLock::new(ckpt.model),
            optimizer: Mutex::new(optimizer),
        })
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn online_lr(&self) -> f64 {
        self.online_lr
    }

    pub fn set_online_lr(&mut self, lr: f64) {
        self.online_lr = lr;
    }

    pub fn beam(&self) -> BeamParams {
        BeamParams {
            beam_width: self.manifest.beam_width,
            max_len: self.manifest.max_len,
            length_normalization: self.manifest.length_normalization,
        }
    }

    /// A copy of the current parameters.
    pub fn snapshot(&self) -> Seq2Seq {
        self.model.read().unwrap().clone()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.snapshot(),
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
            optimizer: Some(self.optimizer.lock().unwrap().clone()),
        }
    }

    /// One online step on a validated text. Unknown words become UNK.
    pub fn learn(&self, source: &SourceObject, final_text: &str) -> Result<UpdateReport> {
        let example = Example {
            source: source.clone(),
            target: self.tgt_vocab.tokenize(final_text),
        };
        let mut model = self.model.write().unwrap();
        let mut opt = self.optimizer.lock().unwrap();
        Ok(online_update(&mut model, &mut opt, &example, self.online_lr, Some(self.manifest.clip_norm))?)
    }
}

impl Predictor for Task {
    fn predict(&self, source: &SourceObject, prefix: Option<&str>) -> ipseq_core::Result<Hypothesis> {
        let model = self.model.read().unwrap();
        ModelPredictor {
            model: &model,
            vocab: &self.tgt_vocab,
            beam: self.beam(),
        }
        .predict(source, prefix)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct TaskInfo {
    pub id: String,
    pub name: String,
    pub modality: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Prediction {
    pub hypothesis: String,
    pub spliced: bool,
}

impl From<&Hypothesis> for Prediction {
    fn from(h: &Hypothesis) -> Self {
        Prediction {
            hypothesis: h.surface.clone(),
            spliced: h.spliced,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub report: SessionReport,
    pub update: Option<UpdateReport>,
}

struct Entry {
    task: Arc<Task>,
    session: Session,
}

#[derive(Default)]
pub struct Engine {
    tasks: BTreeMap<String, Arc<Task>>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Entry>>>>,
    next_id: AtomicU64,
}

impl Engine {
    pub fn new(tasks: Vec<Task>) -> Self {
        Engine {
            tasks: tasks.into_iter().map(|t| (t.id().to_string(), Arc::new(t))).collect(),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Loads every task under `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let tasks = discover(dir)?
            .into_iter()
            .map(|m| Task::load(m, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(tasks))
    }

    pub fn tasks(&self) -> Vec<TaskInfo> {
        self.tasks
            .values()
            .map(|t| TaskInfo {
                id: t.manifest.id.clone(),
                name: t.manifest.name.clone(),
                modality: t.manifest.modality.to_string(),
            })
            .collect()
    }

    pub fn task(&self, id: &str) -> Result<&Arc<Task>> {
        self.tasks.get(id).ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    /// `(task id, media directory)` for tasks that serve media.
    pub fn media_dirs(&self) -> Vec<(String, PathBuf)> {
        self.tasks
            .values()
            .filter_map(|t| t.manifest.media.as_ref().map(|m| (t.manifest.id.clone(), t.manifest.resolve(m))))
            .collect()
    }

    pub fn start_session(&self, task_id: &str, sample_id: usize) -> Result<(u64, String)> {
        let task = self.task(task_id)?.clone();
        let sample = task.samples.get(sample_id).ok_or_else(|| Error::UnknownSample {
            task: task_id.to_string(),
            sample: sample_id,
        })?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let preview = sample.preview.clone();
        let session = Session::new(id, sample.source.clone());
        self.sessions
            .lock()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(Entry { task, session })));
        Ok((id, preview))
    }

    fn with_session<T>(&self, id: u64, f: impl FnOnce(&mut Entry) -> Result<T>) -> Result<T> {
        let entry = self
            .sessions
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownSession(id))?;
        let mut guard = match entry.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(Error::Busy(id)),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        f(&mut guard)
    }

    pub fn predict(&self, id: u64) -> Result<Prediction> {
        self.with_session(id, |e| {
            let task = e.task.clone();
            Ok(e.session.initial_prediction(task.as_ref())?.into())
        })
    }

    pub fn feedback(&self, id: u64, prefix: &str, typed_len: usize, moved_pointer: bool) -> Result<Prediction> {
        self.with_session(id, |e| {
            let task = e.task.clone();
            Ok(e.session.apply_feedback(task.as_ref(), prefix, typed_len, moved_pointer)?.into())
        })
    }

    /// Closes the session, optionally cutting the hypothesis first, and
    /// applies an online update when `learn` is set.
    pub fn validate(&self, id: u64, learn: bool, truncation: Option<Truncation>) -> Result<Validation> {
        self.with_session(id, |e| {
            if let Some(t) = truncation {
                e.session.truncate(t)?;
            }
            let report = e.session.validate()?;
            let update = if learn {
                Some(e.task.learn(e.session.source(), &report.final_text)?)
            } else {
                None
            };
            Ok(Validation { report, update })
        })
    }

    pub fn session_log(&self, id: u64) -> Result<SessionLog> {
        self.with_session(id, |e| Ok(e.session.log()?))
    }

    /// Holds the session's lock while `f` runs; lets tests provoke `busy`.
    pub fn hold_session<T>(&self, id: u64, f: impl FnOnce() -> T) -> Result<T> {
        self.with_session(id, |_| Ok(f()))
    }
}

/// An engine session driven directly, without HTTP.
pub struct EngineSession<'a> {
    pub engine: &'a Engine,
    pub session_id: u64,
    pub learn: bool,
}

impl InteractiveBackend for EngineSession<'_> {
    type Error = Error;

    fn predict(&mut self) -> Result<String> {
        Ok(self.engine.predict(self.session_id)?.hypothesis)
    }

    fn feedback(&mut self, prefix: &str, typed_len: usize, moved_pointer: bool) -> Result<String> {
        Ok(self.engine.feedback(self.session_id, prefix, typed_len, moved_pointer)?.hypothesis)
    }

    fn validate(&mut self, truncation: Option<Truncation>) -> Result<SessionReport> {
        Ok(self.engine.validate(self.session_id, self.learn, truncation)?.report)
    }
}
