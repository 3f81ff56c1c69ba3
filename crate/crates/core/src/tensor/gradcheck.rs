//! Central-difference oracle for tape gradients.

use serde::Serialize;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// A collection of tensors that can be perturbed coordinate by coordinate.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![self]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![self]
    }
}

impl ParamSet for Vec<Tensor> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_tensor: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of a scalar function against central
/// differences `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` on every coordinate.
///
/// `f` records the loss for the given parameters on a fresh graph and
/// returns the loss together with the leaf vars bound to `params`, in
/// [`ParamSet::tensors`] order.
pub fn finite_diff_check<P, F>(f: F, params: &P, h: f64) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: Fn(&mut Graph, &P) -> Result<(Var, Vec<Var>)>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }

    let mut graph = Graph::new();
    let (loss, leaves) = f(&mut graph, params)?;
    let n_tensors = params.tensors().len();
    if leaves.len() != n_tensors {
        return Err(Error::Oracle(format!(
            "function bound {} leaves for {} parameter tensors",
            leaves.len(),
            n_tensors
        )));
    }
    let base = graph.value(loss).item()?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&v| {
            graph
                .grad(v)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Oracle("parameter leaf has no gradient".into()))
        })
        .collect::<Result<_>>()?;

    let eval = |p: &P| -> Result<f64> {
        let mut g = Graph::new();
        let (l, _) = f(&mut g, p)?;
        g.value(l).item()
    };

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {base} then {again} at identical parameters"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: 0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensors()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if !rel.is_finite() {
                return Err(Error::Oracle(format!(
                    "non-finite comparison at tensor {t} index {i}"
                )));
            }
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = t;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
