//! Finite-difference gradient verification.

use crate::autograd::tape::{Tape, Var};
use crate::tensor::{Result, Tensor};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the gradients of the scalar built by `f` against central
/// differences over every element of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let leaves: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            grads
                .of(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let leaves: Vec<_> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&tape, &leaves)?.value();
        Ok(out.data()[0])
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ei in 0..param.numel() {
            let orig = param.data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[ei];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.checked == 1 {
                report.max_relative_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
