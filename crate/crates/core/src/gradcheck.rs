//! Central finite-difference gradient checking for scalar functions of one tensor.

use crate::autograd::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest relative error over elements whose analytic gradient exceeds `floor`.
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_index: Option<usize>,
}

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// `f` builds a scalar on a fresh `f64` graph from the input leaf.
pub fn check(
    x: &Tensor<f64>,
    eps: f64,
    floor: f64,
    f: impl Fn(&mut Graph<f64>, Var) -> Var,
) -> GradCheck {
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = f(&mut g, leaf);
    let grads = g.backward(out);
    let analytic = grads
        .get(leaf)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; x.data.len()]);

    let eval = |t: Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.constant(t);
        let o = f(&mut g, v);
        g.value(o).item()
    };
    let mut report = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        worst_index: None,
    };
    for i in 0..x.data.len() {
        if analytic[i].abs() <= floor {
            continue;
        }
        let mut plus = x.clone();
        plus.data[i] += eps;
        let mut minus = x.clone();
        minus.data[i] -= eps;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
        let rel = (numeric - analytic[i]).abs() / analytic[i].abs().max(numeric.abs());
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = Some(i);
        }
    }
    report
}
