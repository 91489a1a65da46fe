//! Central finite-difference gradient checking.

use super::{Graph, Tensor, TensorError, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)` seen.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, entry)` where the largest error occurred.
    pub worst: (usize, usize),
}

/// Compares the adjoint of `build` against central differences with step
/// `eps` for every entry of every input. `build` receives one differentiable
/// leaf per input and must return a scalar.
pub fn check<F>(inputs: &[Tensor], eps: f64, build: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect();

    let mut probe = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let mut worst = (0, 0);
    for i in 0..probe.len() {
        for j in 0..probe[i].len() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (i, j);
            }
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        checked,
        worst,
    })
}
