//! Corpus-level user simulation over the in-process engine or HTTP.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use ipseq_core::sim::{simulate_sample, summarize, SampleOutcome, Summary};

use crate::client::{Client, HttpSession};
use crate::engine::{Engine, EngineSession, Task};
use crate::error::{Error, Result};
use crate::manifest::discover;
use crate::server::ServerHandle;

/// Online learning rate used with `learn` when none is given.
pub const DEFAULT_SIMULATION_LR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    /// A server started on a loopback port for the run.
    Http,
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub tasks_dir: PathBuf,
    pub task: String,
    /// Split stem; `<split>.src` / `<split>.tgt` must exist.
    pub split: PathBuf,
    pub learn: bool,
    pub lr: Option<f64>,
    pub beam: Option<usize>,
    pub burst: usize,
    pub transport: Transport,
    pub parallel: usize,
    pub report: Option<PathBuf>,
}

impl SimulateOptions {
    pub fn new(tasks_dir: &Path, task: &str, split: &Path) -> Self {
        SimulateOptions {
            tasks_dir: tasks_dir.to_path_buf(),
            task: task.to_string(),
            split: split.to_path_buf(),
            learn: false,
            lr: None,
            beam: None,
            burst: 1,
            transport: Transport::Http,
            parallel: 1,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub rows: Vec<SampleOutcome>,
    pub summary: Summary,
}

/// Loads the task with the split as its samples and simulates every sample.
pub fn simulate(opts: &SimulateOptions) -> Result<SimulationReport> {
    if opts.parallel > 1 && opts.learn {
        return Err(Error::BadRequest("--parallel needs learning disabled".into()));
    }
    let manifest = discover(&opts.tasks_dir)?
        .into_iter()
        .find(|m| m.id == opts.task)
        .ok_or_else(|| Error::UnknownTask(opts.task.clone()))?;
    let mut task = Task::load(manifest, Some(&opts.split))?;
    if let Some(lr) = opts.lr.or(opts.learn.then_some(DEFAULT_SIMULATION_LR)) {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::BadRequest(format!("learning rate must be non-negative, got {lr}")));
        }
        task.set_online_lr(lr);
    }
    if let Some(b) = opts.beam {
        if b == 0 {
            return Err(Error::BadRequest("beam width must be at least 1".into()));
        }
        task.manifest.beam_width = b;
    }
    let references: Vec<String> = task.samples.iter().map(|s| s.reference.clone()).collect();
    let engine = Arc::new(Engine::new(vec![task]));
    let rows = run_corpus(&engine, &opts.task, &references, opts)?;
    if let Some(path) = &opts.report {
        std::fs::write(path, report_tsv(&rows)).map_err(|e| Error::io(path, e))?;
    }
    let summary = summarize(&rows);
    Ok(SimulationReport { rows, summary })
}

/// Simulates sample `i` against `references[i]` for every `i`, in order
/// unless `opts.parallel > 1`.
pub fn run_corpus(
    engine: &Arc<Engine>,
    task_id: &str,
    references: &[String],
    opts: &SimulateOptions,
) -> Result<Vec<SampleOutcome>> {
    let server = match opts.transport {
        Transport::InProcess => None,
        Transport::Http => Some(ServerHandle::spawn(engine.clone(), SocketAddr::from(([127, 0, 0, 1], 0)))?),
    };
    let client = server.as_ref().map(|s| Client::new(&s.url()));

    let run_one = |i: usize| -> Result<SampleOutcome> {
        match &client {
            Some(c) => {
                let (id, _) = c.start_session(task_id, i)?;
                let mut backend = HttpSession {
                    client: c,
                    session_id: id,
                    learn: opts.learn,
                };
                simulate_sample(&mut backend, &references[i], opts.burst)
            }
            None => {
                let (id, _) = engine.start_session(task_id, i)?;
                let mut backend = EngineSession {
                    engine,
                    session_id: id,
                    learn: opts.learn,
                };
                simulate_sample(&mut backend, &references[i], opts.burst)
            }
        }
    };

    if opts.parallel <= 1 {
        return (0..references.len()).map(run_one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SampleOutcome>>>> = Mutex::new((0..references.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..opts.parallel.min(references.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= references.len() {
                    break;
                }
                let r = run_one(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every sample ran")).collect()
}

pub fn report_tsv(rows: &[SampleOutcome]) -> String {
    let mut out = String::from("sample_id\titerations\tkeystrokes\tmouse_actions\tksmr\tconverged\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{:.6}\t{}",
            r.iterations, r.keystrokes, r.mouse_actions, r.ksmr, r.converged
        );
    }
    out
}

pub fn format_summary(s: &Summary) -> String {
    format!(
        "samples: {}\nconverged: {}/{}\nmean ksmr: {:.4}\nretype ksmr: {:.4}\nmean iterations: {:.3}\n\
         mean keystrokes: {:.3}\nmean mouse actions: {:.3}\nfirst-half ksmr: {:.4}\nsecond-half ksmr: {:.4}\n",
        s.samples,
        s.converged,
        s.samples,
        s.mean_ksmr,
        s.retype_ksmr,
        s.mean_iterations,
        s.mean_keystrokes,
        s.mean_mouse_actions,
        s.first_half_ksmr,
        s.second_half_ksmr,
    )
}
