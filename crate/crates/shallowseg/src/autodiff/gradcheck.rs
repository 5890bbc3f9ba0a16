//! Central finite-difference certification of analytic gradients.

use super::{Tape, TensorId};

/// Compare the analytic gradient of a scalar-valued graph against central
/// differences for a single input. Returns the max relative error with
/// denominator max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<B>(build: B, shape: &[usize], x0: &[f64], h: f64) -> f64
where
    B: Fn(&mut Tape<f64>, TensorId) -> TensorId,
{
    grad_check_multi(
        |tape, ids| build(tape, ids[0]),
        &[(shape, x0)],
        h,
    )
}

/// Multi-input variant; the builder receives one leaf per (shape, data) pair
/// and every input is perturbed coordinate by coordinate.
pub fn grad_check_multi<B>(build: B, inputs: &[(&[usize], &[f64])], h: f64) -> f64
where
    B: Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
{
    assert!(h > 0.0, "step must be positive");
    let eval = |datasets: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs
            .iter()
            .zip(datasets)
            .map(|(&(shape, _), data)| tape.leaf(shape, data.clone(), false))
            .collect();
        let loss = build(&mut tape, &ids);
        tape.scalar_value(loss)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|&(shape, data)| tape.leaf(shape, data.to_vec(), true))
        .collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.data(loss).len(), 1, "grad_check: graph must be scalar-valued");
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();

    let base: Vec<Vec<f64>> = inputs.iter().map(|&(_, d)| d.to_vec()).collect();
    let mut max_rel = 0.0f64;
    for (j, (_, data)) in inputs.iter().enumerate() {
        for i in 0..data.len() {
            let mut plus = base.clone();
            plus[j][i] += h;
            let mut minus = base.clone();
            minus[j][i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[j][i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    max_rel
}
