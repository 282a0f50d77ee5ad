//! Task manifests: `key = value` lines, `#` comments. Paths are relative to
//! the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use ipseq_core::decode::LengthNormalization;
use ipseq_core::learn::{OptimizerKind, DEFAULT_CLIP_NORM};
use ipseq_core::model::Modality;
use ipseq_core::vocab::Tokenization;

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "task.conf";

#[derive(Debug, Clone, PartialEq)]
pub struct TaskManifest {
    pub id: String,
    pub name: String,
    pub modality: Modality,
    pub checkpoint: PathBuf,
    /// Split stem of the samples offered to users.
    pub samples: PathBuf,
    /// One preview per sample: the source text for text tasks, a file under
    /// `media` otherwise. Text tasks default to the source lines.
    pub previews: Option<PathBuf>,
    pub media: Option<PathBuf>,
    pub src_tokenization: Option<Tokenization>,
    pub tgt_tokenization: Tokenization,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_normalization: LengthNormalization,
    pub online_lr: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    /// Directory the manifest was read from.
    pub dir: PathBuf,
}

impl TaskManifest {
    pub fn new(id: &str, name: &str, modality: Modality, tgt_tokenization: Tokenization) -> Self {
        TaskManifest {
            id: id.to_string(),
            name: name.to_string(),
            modality,
            checkpoint: PathBuf::from("model.ckpt"),
            samples: PathBuf::from("samples"),
            previews: None,
            media: None,
            src_tokenization: None,
            tgt_tokenization,
            beam_width: 4,
            max_len: ipseq_core::model::DEFAULT_MAX_OUTPUT_LEN,
            length_normalization: LengthNormalization::None,
            online_lr: 0.0,
            optimizer: OptimizerKind::Sgd,
            clip_norm: DEFAULT_CLIP_NORM,
            dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut fields: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let k = k.trim().to_string();
            if fields.iter().any(|(_, seen, _)| *seen == k) {
                return Err(err(i + 1, format!("duplicate key `{k}`")));
            }
            fields.push((i + 1, k, v.trim().to_string()));
        }
        let get = |key: &str| fields.iter().find(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str()));
        let require = |key: &str| get(key).ok_or_else(|| err(0, format!("missing key `{key}`")));
        fn parse_as<T: std::str::FromStr>(
            v: Option<(usize, &str)>,
            err: &dyn Fn(usize, String) -> Error,
        ) -> Result<Option<T>>
        where
            T::Err: fmt::Display,
        {
            v.map(|(line, s)| s.parse::<T>().map_err(|e| err(line, format!("`{s}`: {e}"))))
                .transpose()
        }

        for (line, k, _) in &fields {
            if !KEYS.contains(&k.as_str()) {
                return Err(err(*line, format!("unknown key `{k}`")));
            }
        }

        let (_, id) = require("id")?;
        let modality: Modality = parse_as(Some(require("modality")?), &err)?.unwrap();
        let tgt: Tokenization = parse_as(Some(require("tgt_tokenization")?), &err)?.unwrap();
        let mut m = TaskManifest::new(id, get("name").map_or(id, |(_, v)| v), modality, tgt);
        m.checkpoint = PathBuf::from(require("checkpoint")?.1);
        m.samples = PathBuf::from(require("samples")?.1);
        m.previews = get("previews").map(|(_, v)| PathBuf::from(v));
        m.media = get("media").map(|(_, v)| PathBuf::from(v));
        m.src_tokenization = parse_as(get("src_tokenization"), &err)?;
        if let Some(v) = parse_as(get("beam_width"), &err)? {
            m.beam_width = v;
        }
        if let Some(v) = parse_as(get("max_len"), &err)? {
            m.max_len = v;
        }
        if let Some((line, v)) = get("length_normalization") {
            m.length_normalization = match v {
                "none" => LengthNormalization::None,
                "length" => LengthNormalization::DivideByLength,
                other => return Err(err(line, format!("unknown length normalization `{other}`"))),
            };
        }
        if let Some(v) = parse_as(get("online_lr"), &err)? {
            m.online_lr = v;
        }
        if let Some(v) = parse_as(get("optimizer"), &err)? {
            m.optimizer = v;
        }
        if let Some(v) = parse_as(get("clip_norm"), &err)? {
            m.clip_norm = v;
        }
        m.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

        if m.beam_width == 0 || m.max_len == 0 {
            return Err(err(0, "beam_width and max_len must be at least 1".into()));
        }
        if !(m.online_lr >= 0.0 && m.online_lr.is_finite()) {
            return Err(err(0, format!("online_lr must be non-negative, got {}", m.online_lr)));
        }
        if modality == Modality::Text && m.src_tokenization.is_none() {
            return Err(err(0, "text tasks need `src_tokenization`".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

const KEYS: &[&str] = &[
    "id",
    "name",
    "modality",
    "checkpoint",
    "samples",
    "previews",
    "media",
    "src_tokenization",
    "tgt_tokenization",
    "beam_width",
    "max_len",
    "length_normalization",
    "online_lr",
    "optimizer",
    "clip_norm",
];

impl fmt::Display for TaskManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "id = {}", self.id)?;
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "modality = {}", self.modality)?;
        writeln!(f, "checkpoint = {}", self.checkpoint.display())?;
        writeln!(f, "samples = {}", self.samples.display())?;
        if let Some(p) = &self.previews {
            writeln!(f, "previews = {}", p.display())?;
        }
        if let Some(p) = &self.media {
            writeln!(f, "media = {}", p.display())?;
        }
        if let Some(t) = self.src_tokenization {
            writeln!(f, "src_tokenization = {t}")?;
        }
        writeln!(f, "tgt_tokenization = {}", self.tgt_tokenization)?;
        writeln!(f, "beam_width = {}", self.beam_width)?;
        writeln!(f, "max_len = {}", self.max_len)?;
        let norm = match self.length_normalization {
            LengthNormalization::None => "none",
            LengthNormalization::DivideByLength => "length",
        };
        writeln!(f, "length_normalization = {norm}")?;
        writeln!(f, "online_lr = {}", self.online_lr)?;
        writeln!(f, "optimizer = {}", self.optimizer.as_str())?;
        writeln!(f, "clip_norm = {}", self.clip_norm)
    }
}

/// Every `*/task.conf` directly under `dir`, sorted by task id.
pub fn discover(dir: &Path) -> Result<Vec<TaskManifest>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let candidate = entry.path().join(MANIFEST_NAME);
        if candidate.is_file() {
            out.push(TaskManifest::load(&candidate)?);
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = out.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Manifest {
            path: dir.to_path_buf(),
            line: 0,
            message: format!("task id `{}` declared twice", w[0].id),
        });
    }
    Ok(out)
}
