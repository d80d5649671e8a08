use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Relative disagreement between two derivative estimates.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Backward-pass adjoints compared against central differences.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    /// Worst absolute error per input tensor over the tensor's largest
    /// gradient entry. Unlike `per_input` it is not swamped by entries that
    /// sit at the resolution of the finite difference.
    pub per_input_normwise: Vec<f64>,
    pub max_normwise_error: f64,
    pub step: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Checks the adjoints of a scalar function built by `build` at `inputs`.
///
/// `build` receives a fresh tape and one input var per tensor and returns
/// the output var; non-scalar outputs are summed. Every coordinate is
/// perturbed by `±step` and the function rebuilt from scratch.
pub fn grad_check<F>(build: F, inputs: &[Tensor], step: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data().iter().sum())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let seed = Tensor::full(tape.shape(out).to_vec(), 1.0);
    let grads = tape.backward(out, seed)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut per_input_normwise = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut fd = Tensor::zeros(inputs[i].shape().to_vec());
        let mut worst: f64 = 0.0;
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x;
            let d = (plus - minus) / (2.0 * step);
            fd.data_mut()[j] = d;
            worst = worst.max(relative_error(analytic[i].data()[j], d));
        }
        let a = analytic[i].data();
        let scale = a.iter().chain(fd.data()).fold(1e-8f64, |m, v| m.max(v.abs()));
        let diff = a.iter().zip(fd.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        per_input_normwise.push(diff / scale);
        numeric.push(fd);
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    let max_normwise_error = per_input_normwise.iter().copied().fold(0.0, f64::max);
    Ok(GradReport {
        per_input,
        max_rel_error,
        per_input_normwise,
        max_normwise_error,
        step,
        analytic,
        numeric,
    })
}
