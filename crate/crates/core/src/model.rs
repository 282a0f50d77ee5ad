//! Attention encoder–decoder over token or feature-vector sources.
//!
//! Encoder: a bidirectional single-layer GRU over source embeddings (text),
//! or an affine + tanh projection of precomputed feature rows (images,
//! videos). Either way the decoder sees `T` annotation rows of width
//! `2 · encoder_hidden_dim`.
//!
//! Decoder: a conditional GRU. The first GRU consumes the previous target
//! embedding, its output queries additive attention over the annotations,
//! and a second GRU consumes the attended context. A tanh readout of the new
//! state, the context and the previous embedding feeds the output softmax.
//!
//! Every computation here is expressed on [`Graph`], so inference and
//! training share the same arithmetic.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Axis, Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::{BOS, EOS};

pub const INIT_RANGE: f64 = 0.08;
pub const DEFAULT_MAX_OUTPUT_LEN: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Features,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Features => "features",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "features" => Ok(Modality::Features),
            other => Err(Error::InvalidConfig(alloc::format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub embedding_dim: usize,
    pub encoder_hidden_dim: usize,
    pub decoder_hidden_dim: usize,
    pub attention_dim: usize,
    pub modality: Modality,
    /// Width of feature rows; required iff `modality` is `Features`.
    pub feature_dim: Option<usize>,
    pub max_output_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("encoder_hidden_dim", self.encoder_hidden_dim),
            ("decoder_hidden_dim", self.decoder_hidden_dim),
            ("attention_dim", self.attention_dim),
            ("max_output_len", self.max_output_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be at least 1")));
            }
        }
        if self.tgt_vocab_size <= EOS as usize {
            return Err(Error::InvalidConfig("target vocabulary must contain the reserved ids".to_string()));
        }
        match (self.modality, self.feature_dim) {
            (Modality::Text, None) if self.src_vocab_size > 0 => Ok(()),
            (Modality::Text, None) => Err(Error::InvalidConfig("src_vocab_size must be at least 1".to_string())),
            (Modality::Features, Some(d)) if d > 0 => Ok(()),
            (Modality::Text, Some(_)) => Err(Error::InvalidConfig(
                "feature_dim is only valid for the features modality".to_string(),
            )),
            (Modality::Features, _) => Err(Error::InvalidConfig(
                "features modality requires feature_dim ≥ 1".to_string(),
            )),
        }
    }

    pub fn annotation_dim(&self) -> usize {
        2 * self.encoder_hidden_dim
    }
}

/// What the model reads: token ids or a `T × d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceObject {
    Tokens(Vec<u32>),
    Features(Tensor),
}

impl SourceObject {
    pub fn modality(&self) -> Modality {
        match self {
            SourceObject::Tokens(_) => Modality::Text,
            SourceObject::Features(_) => Modality::Features,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SourceObject::Tokens(ids) => ids.len(),
            SourceObject::Features(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    /// `T × 2·encoder_hidden_dim`.
    pub annotations: Tensor,
    /// Annotations projected into attention space, `T × attention_dim`.
    pub keys: Tensor,
    pub initial_decoder_state: Tensor,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.annotations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Tensor,
    pub prev_token: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logprobs: Vec<f64>,
    pub state: DecoderState,
    pub attention: Vec<f64>,
}

/// Parameter handles of one GRU cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_cand: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_cand: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_cand: ParamId,
}

impl GruParams {
    pub fn register(store: &mut ParamStore, init: &mut Init, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let mut w = |name: &str, r: usize, c: usize| store.insert(&alloc::format!("{prefix}.{name}"), init.matrix(r, c));
        let w_update = w("w_update", input, hidden)?;
        let w_reset = w("w_reset", input, hidden)?;
        let w_cand = w("w_cand", input, hidden)?;
        let u_update = w("u_update", hidden, hidden)?;
        let u_reset = w("u_reset", hidden, hidden)?;
        let u_cand = w("u_cand", hidden, hidden)?;
        let mut b = |name: &str| store.insert(&alloc::format!("{prefix}.{name}"), Tensor::zeros(&[1, hidden]));
        Ok(GruParams {
            w_update,
            w_reset,
            w_cand,
            u_update,
            u_reset,
            u_cand,
            b_update: b("b_update")?,
            b_reset: b("b_reset")?,
            b_cand: b("b_cand")?,
        })
    }
}

/// Seeded uniform initializer for weight matrices.
pub struct Init {
    rng: ChaCha8Rng,
    range: f64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            range: INIT_RANGE,
        }
    }

    pub fn with_range(seed: u64, range: f64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            range,
        }
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        let r = self.range;
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-r..=r)).collect();
        Tensor::matrix(rows, cols, data)
    }
}

/// Binds store parameters into one graph, each at most once.
pub struct Binder {
    nodes: Vec<Option<NodeId>>,
    neg_ones: Vec<(usize, NodeId)>,
}

impl Binder {
    pub fn new(store: &ParamStore) -> Self {
        Binder {
            nodes: vec![None; store.len()],
            neg_ones: Vec::new(),
        }
    }

    pub fn param(&mut self, g: &mut Graph, id: ParamId) -> NodeId {
        *self.nodes[id.index()].get_or_insert_with(|| g.param(id))
    }

    fn neg_ones(&mut self, g: &mut Graph, width: usize) -> NodeId {
        if let Some(&(_, n)) = self.neg_ones.iter().find(|(w, _)| *w == width) {
            return n;
        }
        let n = g.constant(Tensor::full(&[1, width], -1.0));
        self.neg_ones.push((width, n));
        n
    }

    /// `x · w + b`
    pub fn affine(&mut self, g: &mut Graph, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let wn = self.param(g, w);
        let bn = self.param(g, b);
        let xw = g.matmul(x, wn);
        g.add(xw, bn)
    }

    /// One GRU update: `h' = (1 − z) ∘ h + z ∘ tanh(x·W + (r ∘ h)·U + b)`.
    pub fn gru(&mut self, g: &mut Graph, p: &GruParams, x: NodeId, h: NodeId, hidden: usize) -> NodeId {
        let gate = |s: &mut Self, g: &mut Graph, w, u, b, h_in: NodeId| {
            let xw = s.affine(g, x, w, b);
            let un = s.param(g, u);
            let hu = g.matmul(h_in, un);
            g.add(xw, hu)
        };
        let z_pre = gate(self, g, p.w_update, p.u_update, p.b_update, h);
        let z = g.sigmoid(z_pre);
        let r_pre = gate(self, g, p.w_reset, p.u_reset, p.b_reset, h);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h);
        let n_pre = gate(self, g, p.w_cand, p.u_cand, p.b_cand, rh);
        let n = g.tanh(n_pre);
        let neg = self.neg_ones(g, hidden);
        let minus_h = g.mul(h, neg);
        let delta = g.add(n, minus_h);
        let step = g.mul(z, delta);
        g.add(h, step)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderParams {
    src_embedding: Option<ParamId>,
    forward: Option<GruParams>,
    backward: Option<GruParams>,
    feature_w: Option<ParamId>,
    feature_b: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DecoderParams {
    init_w: ParamId,
    init_b: ParamId,
    tgt_embedding: ParamId,
    gru1: GruParams,
    gru2: GruParams,
    att_keys: ParamId,
    att_query: ParamId,
    att_score: ParamId,
    out_state: ParamId,
    out_context: ParamId,
    out_embedding: ParamId,
    out_bias: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

/// Graph nodes of one decoder step.
pub struct StepNodes {
    pub logprobs: NodeId,
    pub hidden: NodeId,
    pub attention: NodeId,
}

/// The encoder–decoder together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    enc: EncoderParams,
    dec: DecoderParams,
}

impl Seq2Seq {
    /// Fresh model; weights uniform in ±0.08 from `seed`, biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, &mut Init::new(seed))
    }

    pub fn with_init(config: ModelConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let (e, he, hd, a, ann) = (
            c.embedding_dim,
            c.encoder_hidden_dim,
            c.decoder_hidden_dim,
            c.attention_dim,
            c.annotation_dim(),
        );
        let enc = match c.modality {
            Modality::Text => EncoderParams {
                src_embedding: Some(store.insert("enc.embedding", init.matrix(c.src_vocab_size, e))?),
                forward: Some(GruParams::register(&mut store, init, "enc.fwd", e, he)?),
                backward: Some(GruParams::register(&mut store, init, "enc.bwd", e, he)?),
                feature_w: None,
                feature_b: None,
            },
            Modality::Features => {
                let d = c.feature_dim.expect("validated");
                EncoderParams {
                    src_embedding: None,
                    forward: None,
                    backward: None,
                    feature_w: Some(store.insert("enc.feature_w", init.matrix(d, ann))?),
                    feature_b: Some(store.insert("enc.feature_b", Tensor::zeros(&[1, ann]))?),
                }
            }
        };
        let dec = DecoderParams {
            init_w: store.insert("dec.init_w", init.matrix(ann, hd))?,
            init_b: store.insert("dec.init_b", Tensor::zeros(&[1, hd]))?,
            tgt_embedding: store.insert("dec.embedding", init.matrix(c.tgt_vocab_size, e))?,
            gru1: GruParams::register(&mut store, init, "dec.gru1", e, hd)?,
            gru2: GruParams::register(&mut store, init, "dec.gru2", ann, hd)?,
            att_keys: store.insert("dec.att_keys", init.matrix(ann, a))?,
            att_query: store.insert("dec.att_query", init.matrix(hd, a))?,
            att_score: store.insert("dec.att_score", init.matrix(1, a))?,
            out_state: store.insert("dec.out_state", init.matrix(hd, e))?,
            out_context: store.insert("dec.out_context", init.matrix(ann, e))?,
            out_embedding: store.insert("dec.out_embedding", init.matrix(e, e))?,
            out_bias: store.insert("dec.out_bias", Tensor::zeros(&[1, e]))?,
            proj_w: store.insert("dec.proj_w", init.matrix(e, c.tgt_vocab_size))?,
            proj_b: store.insert("dec.proj_b", Tensor::zeros(&[1, c.tgt_vocab_size]))?,
        };
        Ok(Seq2Seq {
            config,
            params: store,
            enc,
            dec,
        })
    }

    /// Rebuilds a model from a configuration and previously saved parameters.
    /// Every expected parameter must be present with the expected shape.
    pub fn from_params(config: ModelConfig, saved: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        if saved.len() != ids.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "expected {} parameters, found {}",
                ids.len(),
                saved.len()
            )));
        }
        for id in ids {
            let name = model.params.name(id).to_string();
            let value = saved.value(saved.id(&name)?).clone();
            model.params.set(id, value)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Adds the encoder to `g`; returns the annotation node and the initial decoder state node.
    pub fn encode_nodes(&self, g: &mut Graph, b: &mut Binder, source: &SourceObject) -> Result<(NodeId, NodeId)> {
        let annotations = match source {
            SourceObject::Tokens(ids) => self.text_annotations(g, b, ids)?,
            SourceObject::Features(rows) => self.feature_annotations(g, b, rows)?,
        };
        let t = source.len();
        let avg = g.constant(Tensor::full(&[1, t], 1.0 / t as f64));
        let mean = g.matmul(avg, annotations);
        let pre = b.affine(g, mean, self.dec.init_w, self.dec.init_b);
        let init = g.tanh(pre);
        Ok((annotations, init))
    }

    fn text_annotations(&self, g: &mut Graph, b: &mut Binder, ids: &[u32]) -> Result<NodeId> {
        if self.config.modality != Modality::Text {
            return Err(Error::ModalityMismatch);
        }
        if ids.is_empty() {
            return Err(Error::Empty("source token sequence"));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.src_vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.config.src_vocab_size,
            });
        }
        let he = self.config.encoder_hidden_dim;
        let table = b.param(g, self.enc.src_embedding.expect("text encoder"));
        let embedded: Vec<NodeId> = ids.iter().map(|&id| g.row_lookup(table, id as usize)).collect();
        let zero = g.constant(Tensor::zeros(&[1, he]));

        let fwd = self.enc.forward.expect("text encoder");
        let mut h = zero;
        let mut forward_states = Vec::with_capacity(ids.len());
        for &x in &embedded {
            h = b.gru(g, &fwd, x, h, he);
            forward_states.push(h);
        }
        let bwd = self.enc.backward.expect("text encoder");
        let mut h = zero;
        let mut backward_states = vec![zero; ids.len()];
        for (i, &x) in embedded.iter().enumerate().rev() {
            h = b.gru(g, &bwd, x, h, he);
            backward_states[i] = h;
        }
        let rows: Vec<NodeId> = forward_states
            .iter()
            .zip(&backward_states)
            .map(|(&f, &bk)| g.concat(&[f, bk], Axis::Cols))
            .collect();
        Ok(g.concat(&rows, Axis::Rows))
    }

    fn feature_annotations(&self, g: &mut Graph, b: &mut Binder, rows: &Tensor) -> Result<NodeId> {
        if self.config.modality != Modality::Features {
            return Err(Error::ModalityMismatch);
        }
        let d = self.config.feature_dim.expect("validated");
        if rows.shape().len() != 2 || rows.cols() != d {
            return Err(Error::FeatureWidth {
                expected: d,
                actual: rows.cols(),
            });
        }
        let x = g.constant(rows.clone());
        let pre = b.affine(
            g,
            x,
            self.enc.feature_w.expect("feature encoder"),
            self.enc.feature_b.expect("feature encoder"),
        );
        Ok(g.tanh(pre))
    }

    pub fn key_nodes(&self, g: &mut Graph, b: &mut Binder, annotations: NodeId) -> NodeId {
        let w = b.param(g, self.dec.att_keys);
        g.matmul(annotations, w)
    }

    /// Adds one conditional-GRU decoder step to `g`.
    pub fn step_nodes(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        annotations: NodeId,
        keys: NodeId,
        hidden: NodeId,
        prev_token: u32,
    ) -> StepNodes {
        let hd = self.config.decoder_hidden_dim;
        let d = &self.dec;
        let table = b.param(g, d.tgt_embedding);
        let emb = g.row_lookup(table, prev_token as usize);
        let s1 = b.gru(g, &d.gru1, emb, hidden, hd);

        // additive attention: score_t = v · tanh(key_t + s1·W_q)
        let wq = b.param(g, d.att_query);
        let query = g.matmul(s1, wq);
        let mixed = g.add(keys, query);
        let act = g.tanh(mixed);
        let v = b.param(g, d.att_score);
        let scores = g.matmul_t(v, act);
        let attention = g.softmax(scores);
        let context = g.matmul(attention, annotations);

        let s2 = b.gru(g, &d.gru2, context, s1, hd);

        let ws = b.param(g, d.out_state);
        let wc = b.param(g, d.out_context);
        let we = b.param(g, d.out_embedding);
        let bo = b.param(g, d.out_bias);
        let rs = g.matmul(s2, ws);
        let rc = g.matmul(context, wc);
        let re = g.matmul(emb, we);
        let r = g.add(rs, rc);
        let r = g.add(r, re);
        let r = g.add(r, bo);
        let readout = g.tanh(r);
        let logits = b.affine(g, readout, d.proj_w, d.proj_b);
        let probs = g.softmax(logits);
        let logprobs = g.log(probs);
        StepNodes {
            logprobs,
            hidden: s2,
            attention,
        }
    }

    pub fn encode(&self, source: &SourceObject) -> Result<EncodedSource> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params);
        let (ann, init) = self.encode_nodes(&mut g, &mut b, source)?;
        let keys = self.key_nodes(&mut g, &mut b, ann);
        g.forward(&self.params, &[])?;
        Ok(EncodedSource {
            annotations: g.take_value(ann),
            keys: g.take_value(keys),
            initial_decoder_state: g.take_value(init),
        })
    }

    pub fn encode_text(&self, ids: &[u32]) -> Result<EncodedSource> {
        if self.config.modality != Modality::Text {
            return Err(Error::ModalityMismatch);
        }
        self.encode(&SourceObject::Tokens(ids.to_vec()))
    }

    pub fn encode_features(&self, rows: &Tensor) -> Result<EncodedSource> {
        if self.config.modality != Modality::Features {
            return Err(Error::ModalityMismatch);
        }
        if rows.shape().len() != 2 {
            return Err(Error::Empty("feature rows"));
        }
        self.encode(&SourceObject::Features(rows.clone()))
    }

    pub fn initial_state(&self, encoded: &EncodedSource) -> DecoderState {
        DecoderState {
            hidden: encoded.initial_decoder_state.clone(),
            prev_token: BOS,
        }
    }

    /// One decoding step from `state`: next-token log-probabilities, the new
    /// state (whose `prev_token` is left for the caller to set) and the
    /// attention distribution over source positions.
    pub fn decoder_step(&self, state: &DecoderState, encoded: &EncodedSource) -> Result<StepOutput> {
        if !state.hidden.is_finite() {
            return Err(Error::NonFinite("decoder state"));
        }
        if state.prev_token as usize >= self.config.tgt_vocab_size {
            return Err(Error::TokenOutOfRange {
                id: state.prev_token,
                size: self.config.tgt_vocab_size,
            });
        }
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params);
        let ann = g.constant(encoded.annotations.clone());
        let keys = g.constant(encoded.keys.clone());
        let hidden = g.constant(state.hidden.clone());
        let nodes = self.step_nodes(&mut g, &mut b, ann, keys, hidden, state.prev_token);
        g.forward(&self.params, &[])?;
        let logprobs = g.take_value(nodes.logprobs).into_data();
        if logprobs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder_step"));
        }
        Ok(StepOutput {
            logprobs,
            state: DecoderState {
                hidden: g.take_value(nodes.hidden),
                prev_token: state.prev_token,
            },
            attention: g.take_value(nodes.attention).into_data(),
        })
    }

    /// Teacher-forced log-probability of `target` (which must end with EOS).
    pub fn sequence_logprob(&self, source: &SourceObject, target: &[u32]) -> Result<f64> {
        let encoded = self.encode(source)?;
        self.sequence_logprob_encoded(&encoded, target)
    }

    pub fn sequence_logprob_encoded(&self, encoded: &EncodedSource, target: &[u32]) -> Result<f64> {
        check_target(target, self.config.tgt_vocab_size)?;
        let mut state = self.initial_state(encoded);
        let mut total = 0.0;
        for &tok in target {
            let out = self.decoder_step(&state, encoded)?;
            total += out.logprobs[tok as usize];
            state = out.state;
            state.prev_token = tok;
        }
        Ok(total)
    }

    /// Adds the teacher-forced negative log-likelihood of `target` to `g`
    /// (a `[1]` scalar), encoder included.
    pub fn loss_nodes(&self, g: &mut Graph, b: &mut Binder, source: &SourceObject, target: &[u32]) -> Result<NodeId> {
        check_target(target, self.config.tgt_vocab_size)?;
        let (ann, init) = self.encode_nodes(g, b, source)?;
        let keys = self.key_nodes(g, b, ann);
        let mut hidden = init;
        let mut prev = BOS;
        let mut total: Option<NodeId> = None;
        for &tok in target {
            let step = self.step_nodes(g, b, ann, keys, hidden, prev);
            let mut pick = vec![0.0; self.config.tgt_vocab_size];
            pick[tok as usize] = -1.0;
            let pick = g.constant(Tensor::row(pick));
            let picked = g.mul(step.logprobs, pick);
            let nll = g.sum(picked);
            total = Some(match total {
                None => nll,
                Some(t) => g.add(t, nll),
            });
            hidden = step.hidden;
            prev = tok;
        }
        Ok(total.expect("non-empty target"))
    }
}

fn check_target(target: &[u32], vocab: usize) -> Result<()> {
    if target.is_empty() {
        return Err(Error::Empty("target sequence"));
    }
    if target.last() != Some(&EOS) {
        return Err(Error::InvalidConfig("target must end with EOS".to_string()));
    }
    if let Some(&id) = target.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::TokenOutOfRange { id, size: vocab });
    }
    Ok(())
}
