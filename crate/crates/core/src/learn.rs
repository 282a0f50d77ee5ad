//! Offline training and per-sample online updates.

use alloc::vec::Vec;

use libm::sqrt;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Binder, Seq2Seq, SourceObject};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_CLIP_NORM: f64 = 5.0;
pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adadelta,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adadelta => "adadelta",
        }
    }
}

impl core::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            other => Err(Error::InvalidConfig(alloc::format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            batch_size: 1,
            epochs: 1,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidConfig(alloc::format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: SourceObject,
    /// Target ids ending with EOS.
    pub target: Vec<u32>,
}

/// Per-parameter optimizer accumulators, in parameter-store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub steps: u64,
    /// Adadelta running averages of squared gradients and squared updates.
    pub accum_grad: Vec<Tensor>,
    pub accum_update: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect::<Vec<_>>();
        let (accum_grad, accum_update) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adadelta => (zeros(), zeros()),
        };
        OptimizerState {
            kind,
            steps: 0,
            accum_grad,
            accum_update,
        }
    }

    /// Applies the accumulated gradients. A zero learning rate touches
    /// neither parameters nor optimizer state.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if lr == 0.0 {
            return Ok(());
        }
        if self.kind == OptimizerKind::Adadelta && self.accum_grad.len() != params.len() {
            return Err(Error::InvalidConfig("optimizer state does not match the parameters".into()));
        }
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = params.grad(id).data().to_vec();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in params.value_mut(id).data_mut().iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adadelta => {
                    let eg = self.accum_grad[k].data_mut();
                    let ex = self.accum_update[k].data_mut();
                    let value = params.value_mut(id).data_mut();
                    for i in 0..grad.len() {
                        let g = grad[i];
                        eg[i] = ADADELTA_RHO * eg[i] + (1.0 - ADADELTA_RHO) * g * g;
                        let dx = -sqrt(ex[i] + ADADELTA_EPS) / sqrt(eg[i] + ADADELTA_EPS) * g;
                        ex[i] = ADADELTA_RHO * ex[i] + (1.0 - ADADELTA_RHO) * dx * dx;
                        value[i] += lr * dx;
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = sqrt(params.grad_squared_norm());
    if norm > max_norm {
        params.scale_grads(max_norm / norm);
    }
    norm
}

/// Mean teacher-forced negative log-likelihood over `batch`, with the
/// matching gradients left in the parameter store (previous ones cleared).
pub fn batch_gradients(model: &mut Seq2Seq, batch: &[&Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    model.params_mut().zero_grads();
    let seed = Tensor::scalar(1.0 / batch.len() as f64);
    let mut total = 0.0;
    for ex in batch {
        let mut g = Graph::new();
        let mut b = Binder::new(model.params());
        let loss = model.loss_nodes(&mut g, &mut b, &ex.source, &ex.target)?;
        g.forward(model.params(), &[])?;
        let value = g.take_value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        total += value;
        g.backward(loss, &seed, model.params_mut())?;
    }
    Ok(total / batch.len() as f64)
}

/// Negative log-likelihood of one example, no gradients.
pub fn example_loss(model: &Seq2Seq, ex: &Example) -> Result<f64> {
    Ok(-model.sequence_logprob(&ex.source, &ex.target)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub batch: usize,
    /// Mean loss of the batch, measured before its update.
    pub loss: f64,
}

/// Runs `config.epochs` passes over `examples`, reshuffled each epoch from
/// `config.seed`. `on_point` sees every batch loss as it is produced.
pub fn train(
    model: &mut Seq2Seq,
    examples: &[Example],
    config: &TrainConfig,
    state: &mut OptimizerState,
    mut on_point: impl FnMut(LossPoint),
) -> Result<Vec<LossPoint>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (i, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&k| &examples[k]).collect();
            let loss = batch_gradients(model, &batch)?;
            if let Some(c) = config.clip_norm {
                clip_gradients(model.params_mut(), c);
            }
            state.step(model.params_mut(), config.learning_rate)?;
            let point = LossPoint {
                epoch,
                batch: i + 1,
                loss,
            };
            on_point(point);
            curve.push(point);
        }
    }
    model.params_mut().zero_grads();
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub loss_before: f64,
    pub loss_after: f64,
}

/// One clipped gradient step on a single validated sample.
pub fn online_update(
    model: &mut Seq2Seq,
    state: &mut OptimizerState,
    example: &Example,
    learning_rate: f64,
    clip_norm: Option<f64>,
) -> Result<UpdateReport> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!("bad learning rate {learning_rate}")));
    }
    if learning_rate == 0.0 {
        let loss = example_loss(model, example)?;
        return Ok(UpdateReport {
            loss_before: loss,
            loss_after: loss,
        });
    }
    let loss_before = batch_gradients(model, &[example])?;
    if let Some(c) = clip_norm {
        clip_gradients(model.params_mut(), c);
    }
    state.step(model.params_mut(), learning_rate)?;
    model.params_mut().zero_grads();
    Ok(UpdateReport {
        loss_before,
        loss_after: example_loss(model, example)?,
    })
}
