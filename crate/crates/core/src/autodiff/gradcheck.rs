use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference gradient of the scalar `f` with respect to each tensor.
pub fn numeric_gradient<F>(f: F, params: &[Tensor], eps: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.detached())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };
    let mut work: Vec<Tensor> = params.iter().map(Tensor::detached).collect();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].numel()];
        for (ei, slot) in g.iter_mut().enumerate() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over every entry of
/// every parameter, with the numeric side from central differences.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(&p.detached().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let numeric = numeric_gradient(&f, params, eps)?;
    let mut worst: f64 = 0.0;
    for (v, num) in vars.iter().zip(&numeric) {
        let zeros = vec![0.0; num.len()];
        let analytic = grads.get(*v).unwrap_or(&zeros);
        for (a, n) in analytic.iter().zip(num) {
            worst = worst.max((a - n).abs() / n.abs().max(1.0));
        }
    }
    Ok(worst)
}
