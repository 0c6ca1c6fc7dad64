use crate::error::Result;

use super::{Graph, Tensor, Var};

const STEP: f64 = 1e-5;

/// Largest relative discrepancy between the analytic gradient of a scalar
/// function and central differences (step 1e−5) over every input element.
/// Relative error is `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var).unwrap_or_else(|| Tensor::zeros(inputs[which].shape()));
        for idx in 0..inputs[which].numel() {
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + STEP;
            let plus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - STEP;
            let minus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// [`grad_check`] for a function of one tensor.
pub fn grad_check_single<F>(f: F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check(|g, v| f(g, v[0]), std::slice::from_ref(x))
}
