use crate::params::ParameterSet;
use crate::{NdError, Result};

/// One Adam update with bias correction over every named parameter.
/// Gradients are zeroed afterwards and the step counter advances by one.
/// A parameter that never received a gradient since the last step is a
/// contract violation: it means a loss silently ignored part of the model.
pub fn adam_step(ps: &mut ParameterSet, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
    let missing: Vec<String> = ps
        .entries
        .iter()
        .filter(|(_, e)| !e.grad_seen)
        .map(|(k, _)| k.clone())
        .collect();
    if !missing.is_empty() {
        return Err(NdError::Contract(format!(
            "no gradient accumulated for {missing:?}"
        )));
    }

    let (b1, b2) = betas;
    ps.step += 1;
    let t = ps.step as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);

    for e in ps.entries.values_mut() {
        let n = e.value.len();
        for i in 0..n {
            let g = e.grad.values()[i];
            let m = b1 * e.m.values()[i] + (1.0 - b1) * g;
            let v = b2 * e.v.values()[i] + (1.0 - b2) * g * g;
            e.m.values_mut()[i] = m;
            e.v.values_mut()[i] = v;
            let mhat = m / bc1;
            let vhat = v / bc2;
            e.value.values_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        for g in e.grad.values_mut() {
            *g = 0.0;
        }
        e.grad_seen = false;
    }
    Ok(())
}
