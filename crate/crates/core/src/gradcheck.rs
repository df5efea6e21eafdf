//! Central finite-difference gradient checking against the tape.

use crate::tape::{Tape, Var};
use crate::tensor::{NumError, Tensor};

/// Runs `f` on a fresh tape with the given leaf inputs (all requiring grad),
/// backpropagates from the scalar it returns, and compares every analytic
/// input gradient against central finite differences at `step`.
///
/// Returns the worst relative error, with the denominator
/// max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let run = |ins: &[Tensor]| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.len() {
            let orig = t.data()[e];
            work[ti].data_mut()[e] = orig + step;
            let fp = run(&work)?;
            work[ti].data_mut()[e] = orig - step;
            let fm = run(&work)?;
            work[ti].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[ti].data()[e];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
