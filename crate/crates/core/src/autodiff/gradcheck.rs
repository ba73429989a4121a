//! Central finite-difference gradient verification.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A coordinate of one of the probed inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub input: usize,
    pub coordinate: usize,
}

/// Max over every input coordinate of `|analytic - numeric| / max(1, |numeric|)`.
pub fn check_gradients<T, F>(f: F, inputs: &[Tensor<T>], h: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let probes: Vec<Probe> = inputs
        .iter()
        .enumerate()
        .flat_map(|(input, t)| (0..t.numel()).map(move |coordinate| Probe { input, coordinate }))
        .collect();
    check_gradients_at(f, inputs, h, &probes)
}

/// Same as [`check_gradients`] restricted to the listed coordinates.
pub fn check_gradients_at<T, F>(f: F, inputs: &[Tensor<T>], h: T, probes: &[Probe]) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(h >= T::lit(1e-5) && h <= T::lit(1e-2)) {
        return Err(Error::DomainError {
            op: "check_gradients",
            detail: format!("step {h} outside [1e-5, 1e-2]"),
        });
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    if !g.value(root).is_finite() {
        return Err(Error::NonFiniteProbe { coordinate: 0 });
    }
    g.backward(root)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| g.grad(v)).collect();

    let eval = |perturbed: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).item())
    };

    let mut worst = T::zero();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (flat, p) in probes.iter().enumerate() {
        let orig = inputs[p.input].data()[p.coordinate];
        work[p.input].data_mut()[p.coordinate] = orig + h;
        let plus = eval(&work)?;
        work[p.input].data_mut()[p.coordinate] = orig - h;
        let minus = eval(&work)?;
        work[p.input].data_mut()[p.coordinate] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteProbe { coordinate: flat });
        }
        let numeric = (plus - minus) / (h + h);
        let a = analytic[p.input].data()[p.coordinate];
        let rel = (a - numeric).abs() / numeric.abs().max(T::one());
        worst = worst.max(rel);
    }
    Ok(worst)
}
