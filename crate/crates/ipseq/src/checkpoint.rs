//! Model checkpoints.
//!
//! Layout, all integers u32 little-endian unless noted:
//! magic `IPSQCKPT`, version, model config, source vocabulary (absent for
//! feature models), target vocabulary, named parameter tensors (name, rank,
//! extents, f64 LE values), then optional optimizer state.

use std::path::Path;

use ipseq_core::learn::{OptimizerKind, OptimizerState};
use ipseq_core::model::{Modality, ModelConfig, Seq2Seq};
use ipseq_core::params::ParamStore;
use ipseq_core::vocab::{Tokenization, Vocabulary};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IPSQCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Seq2Seq,
    pub src_vocab: Option<Vocabulary>,
    pub tgt_vocab: Vocabulary,
    pub optimizer: Option<OptimizerState>,
}

fn write_vocab(w: &mut Writer, v: &Vocabulary) {
    w.u8(match v.mode() {
        Tokenization::Char => 0,
        Tokenization::Word => 1,
    });
    w.u32(v.len() as u32);
    for t in v.tokens() {
        w.str(t);
    }
}

fn read_vocab(r: &mut Reader) -> Result<Vocabulary> {
    let mode = match r.u8()? {
        0 => Tokenization::Char,
        1 => Tokenization::Word,
        m => return Err(Error::format(r.path(), format!("unknown tokenization tag {m}"))),
    };
    let n = r.u32()? as usize;
    let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let v = Vocabulary::from_tokens(mode, &tokens);
    if v.tokens() != tokens.as_slice() {
        return Err(Error::format(r.path(), "vocabulary has duplicate or misplaced entries"));
    }
    Ok(v)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);

        let c = self.model.config();
        for v in [
            c.src_vocab_size,
            c.tgt_vocab_size,
            c.embedding_dim,
            c.encoder_hidden_dim,
            c.decoder_hidden_dim,
            c.attention_dim,
        ] {
            w.u32(v as u32);
        }
        w.u8(match c.modality {
            Modality::Text => 0,
            Modality::Features => 1,
        });
        w.u32(c.feature_dim.unwrap_or(0) as u32);
        w.u32(c.max_output_len as u32);

        match &self.src_vocab {
            Some(v) => {
                w.u8(1);
                write_vocab(&mut w, v);
            }
            None => w.u8(0),
        }
        write_vocab(&mut w, &self.tgt_vocab);

        let params = self.model.params();
        w.u32(params.len() as u32);
        for (name, t) in params.iter() {
            w.str(name);
            w.tensor(t);
        }

        match &self.optimizer {
            None => w.u8(0),
            Some(o) => {
                w.u8(match o.kind {
                    OptimizerKind::Sgd => 1,
                    OptimizerKind::Adadelta => 2,
                });
                w.u64(o.steps);
                w.u32(o.accum_grad.len() as u32);
                for t in o.accum_grad.iter().chain(&o.accum_update) {
                    w.tensor(t);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if bytes.len() < MAGIC.len() || r.take(MAGIC.len())? != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "checkpoint",
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                version,
            });
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let modality = match r.u8()? {
            0 => Modality::Text,
            1 => Modality::Features,
            m => return Err(Error::format(path, format!("unknown modality tag {m}"))),
        };
        let feature_dim = match r.u32()? {
            0 => None,
            d => Some(d as usize),
        };
        let config = ModelConfig {
            src_vocab_size: dims[0],
            tgt_vocab_size: dims[1],
            embedding_dim: dims[2],
            encoder_hidden_dim: dims[3],
            decoder_hidden_dim: dims[4],
            attention_dim: dims[5],
            modality,
            feature_dim,
            max_output_len: r.u32()? as usize,
        };

        let src_vocab = match r.u8()? {
            0 => None,
            _ => Some(read_vocab(&mut r)?),
        };
        let tgt_vocab = read_vocab(&mut r)?;

        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let t = r.tensor()?;
            store.insert(&name, t)?;
        }
        let model = Seq2Seq::from_params(config, store)?;

        let optimizer = match r.u8()? {
            0 => None,
            tag @ (1 | 2) => {
                let kind = if tag == 1 { OptimizerKind::Sgd } else { OptimizerKind::Adadelta };
                let steps = r.u64()?;
                let k = r.u32()? as usize;
                let mut tensors = (0..2 * k).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                let accum_update = tensors.split_off(k);
                Some(OptimizerState {
                    kind,
                    steps,
                    accum_grad: tensors,
                    accum_update,
                })
            }
            t => return Err(Error::format(path, format!("unknown optimizer tag {t}"))),
        };
        r.finish()?;

        let ckpt = Checkpoint {
            model,
            src_vocab,
            tgt_vocab,
            optimizer,
        };
        ckpt.check_consistency(path)?;
        Ok(ckpt)
    }

    fn check_consistency(&self, path: &Path) -> Result<()> {
        let c = self.model.config();
        if c.tgt_vocab_size != self.tgt_vocab.len() {
            return Err(Error::format(
                path,
                format!("target vocabulary has {} entries, model expects {}", self.tgt_vocab.len(), c.tgt_vocab_size),
            ));
        }
        match (&self.src_vocab, c.modality) {
            (Some(v), Modality::Text) if v.len() == c.src_vocab_size => Ok(()),
            (None, Modality::Features) => Ok(()),
            _ => Err(Error::format(path, "source vocabulary does not match the model")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
