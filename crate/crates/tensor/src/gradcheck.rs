//! Central finite differences, for checking hand-written backward passes.
//!
//! The check only evaluates the forward function, so it is independent of the
//! backward closures it validates.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Result of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, floor)` over all checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the autodiff gradient of `f` at `inputs` with central finite
/// differences of step `h`. `f` builds a scalar loss from leaf variables.
///
/// `floor` bounds the denominator of the relative error so that coordinates
/// with vanishing gradients do not dominate.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, h: f64, floor: f64) -> GradCheck
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss);

    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).item()
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: max_rel,
        checked,
    }
}
