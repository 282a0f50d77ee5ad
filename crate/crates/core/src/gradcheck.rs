//! Central finite-difference verification of backward gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

fn evaluate(params: &ParamStore, build: &impl Fn(&mut Graph) -> Result<NodeId>) -> Result<(Graph, NodeId, f64)> {
    let mut g = Graph::new();
    let out = build(&mut g)?;
    g.forward(params, &[])?;
    let loss = g.value(out).expect("forward ran").item();
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((g, out, loss))
}

/// Compares the backward gradient of the scalar built by `build` against
/// central differences with step `eps`, for every element of every parameter.
///
/// `params` is restored exactly (values and gradients) before returning.
pub fn grad_check(
    params: &mut ParamStore,
    build: impl Fn(&mut Graph) -> Result<NodeId>,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive".to_string()));
    }
    let saved_grads: Vec<Tensor> = params.ids().map(|id| params.grad(id).clone()).collect();
    params.zero_grads();
    let (mut g, out, _) = evaluate(params, &build)?;
    g.backward(out, &Tensor::scalar(1.0), params)?;
    let analytic: Vec<Tensor> = params.ids().map(|id| params.grad(id).clone()).collect();

    let mut report = GradCheckReport {
        params: Vec::new(),
        tolerance,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let mut worst = (0.0, 0);
        for i in 0..params.value(id).len() {
            let original = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = original + eps;
            let plus = evaluate(params, &build).map(|r| r.2);
            params.value_mut(id).data_mut()[i] = original - eps;
            let minus = evaluate(params, &build).map(|r| r.2);
            params.value_mut(id).data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let err = relative_error(analytic[id.index()].data()[i], numeric);
            if err > worst.0 || i == 0 {
                worst = (err, i);
            }
        }
        report.params.push(ParamCheck {
            name: params.name(id).to_string(),
            max_relative_error: worst.0,
            worst_index: worst.1,
        });
    }

    for (id, g) in params.ids().collect::<Vec<_>>().into_iter().zip(saved_grads) {
        *params.grad_mut(id) = g;
    }
    Ok(report)
}
