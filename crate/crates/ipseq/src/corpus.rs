//! Aligned line-per-segment corpora.
//!
//! A split `<stem>` is the file pair `<stem>.src` / `<stem>.tgt`. For feature
//! models each source line names a feature file, relative to the `.src` file.

use std::path::{Path, PathBuf};

use ipseq_core::model::{Modality, SourceObject};
use ipseq_core::vocab::{normalize, Vocabulary};

use crate::error::{Error, Result};
use crate::features::load_feature_sequence;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
}

pub fn split_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".src"), with(".tgt"))
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

impl ParallelCorpus {
    pub fn load(source: &Path, target: &Path) -> Result<Self> {
        let sources = read_lines(source)?;
        let targets: Vec<String> = read_lines(target)?.iter().map(|t| normalize(t)).collect();
        if sources.len() != targets.len() {
            return Err(Error::format(
                target,
                format!("{} target lines for {} source lines", targets.len(), sources.len()),
            ));
        }
        if let Some(i) = targets.iter().position(|t| t.is_empty()) {
            return Err(Error::format(target, format!("line {} is empty", i + 1)));
        }
        if sources.is_empty() {
            return Err(Error::format(source, "corpus is empty"));
        }
        Ok(ParallelCorpus { sources, targets })
    }

    pub fn load_split(stem: &Path) -> Result<Self> {
        let (s, t) = split_paths(stem);
        Self::load(&s, &t)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn save_split(&self, stem: &Path) -> Result<()> {
        let (s, t) = split_paths(stem);
        let join = |lines: &[String]| lines.iter().map(|l| format!("{l}\n")).collect::<String>();
        std::fs::write(&s, join(&self.sources)).map_err(|e| Error::io(&s, e))?;
        std::fs::write(&t, join(&self.targets)).map_err(|e| Error::io(&t, e))
    }
}

/// Turns source lines into model inputs. `base` resolves feature file names.
pub fn load_sources(
    lines: &[String],
    modality: Modality,
    src_vocab: Option<&Vocabulary>,
    base: &Path,
) -> Result<Vec<SourceObject>> {
    lines
        .iter()
        .map(|line| match (modality, src_vocab) {
            (Modality::Text, Some(v)) => Ok(SourceObject::Tokens(v.tokenize(line))),
            (Modality::Text, None) => Err(Error::format(base, "text model without a source vocabulary")),
            (Modality::Features, _) => Ok(SourceObject::Features(load_feature_sequence(&base.join(line.trim()))?)),
        })
        .collect()
}
