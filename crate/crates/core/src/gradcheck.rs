//! Central finite-difference verification of analytic gradients (float64).

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    /// Perturbation for `(f(x+eps) − f(x−eps)) / (2·eps)`.
    pub eps: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Skip elements where the central differences at `eps` and `2·eps`
    /// disagree, i.e. where a ReLU or max switches within `2·eps` of the
    /// input. One unit near its switch point touches many weights, so up to
    /// 10% of the elements may be skipped.
    pub skip_kinks: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { eps: 1e-3, tol: 1e-4, floor: 1e-6, skip_kinks: false }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub checked_elements: usize,
    /// Elements left out as non-differentiable points.
    pub skipped_elements: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the analytic gradient of the scalar `f(inputs)` against central
/// differences on every element of every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.scalar(loss))
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    let mut skipped = 0;
    for (ti, grad) in analytic.iter().enumerate() {
        if !grad.all_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of input {ti}")));
        }
        let mut worst: f64 = 0.0;
        for e in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[e];
            work[ti].data_mut()[e] = orig + opts.eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[e] = orig - opts.eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            if opts.skip_kinks {
                work[ti].data_mut()[e] = orig + 2.0 * opts.eps;
                let plus2 = eval(&work)?;
                work[ti].data_mut()[e] = orig - 2.0 * opts.eps;
                let minus2 = eval(&work)?;
                work[ti].data_mut()[e] = orig;
                let wide = (plus2 - minus2) / (4.0 * opts.eps);
                if (wide - numeric).abs() > 0.1 * opts.tol * wide.abs().max(numeric.abs()).max(1e-4) {
                    skipped += 1;
                    continue;
                }
            }
            let a = grad.data()[e];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    let passed = max_rel_error < opts.tol && skipped * 10 <= checked + skipped;
    Ok(GradcheckReport { per_input, max_rel_error, checked_elements: checked, skipped_elements: skipped, tol: opts.tol, passed })
}
