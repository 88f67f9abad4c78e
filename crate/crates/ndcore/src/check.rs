use crate::params::ParameterSet;
use crate::{NdError, Result};

/// Compare analytic gradients against central differences.
///
/// `f` must evaluate the loss and leave its gradients accumulated in `params`
/// (gradients are cleared here before every call). Returns the maximum over
/// all scalar parameters of |analytic - numeric| / max(1, |numeric|).
///
/// `h` is the finite-difference step and must lie in [1e-6, 1e-4]; outside
/// that window cancellation or truncation error dominates and the comparison
/// is meaningless.
pub fn gradient_check<F>(f: F, params: &mut ParameterSet, h: f64) -> Result<f64>
where
    F: Fn(&mut ParameterSet) -> Result<f64>,
{
    if !(1.0e-6..=1.0e-4).contains(&h) {
        return Err(NdError::Contract(format!(
            "finite-difference step {h:e} outside [1e-6, 1e-4]"
        )));
    }

    params.zero_grads();
    let base = f(params)?;
    if !base.is_finite() {
        return Err(NdError::Numeric(format!("loss is not finite: {base}")));
    }
    let analytic = params.grads_snapshot();

    let names: Vec<String> = params.names().map(String::from).collect();
    let mut worst = 0.0_f64;
    for name in &names {
        let len = params.value(name).expect("name listed by the set").len();
        for i in 0..len {
            let orig = params.value(name).expect("name listed by the set").values()[i];

            params
                .value_mut(name)
                .expect("name listed by the set")
                .values_mut()[i] = orig + h;
            params.zero_grads();
            let up = f(params)?;

            params
                .value_mut(name)
                .expect("name listed by the set")
                .values_mut()[i] = orig - h;
            params.zero_grads();
            let down = f(params)?;

            params
                .value_mut(name)
                .expect("name listed by the set")
                .values_mut()[i] = orig;

            if !up.is_finite() || !down.is_finite() {
                return Err(NdError::Numeric(format!(
                    "perturbed loss not finite at {name}[{i}]"
                )));
            }
            let numeric = (up - down) / (2.0 * h);
            let got = analytic[name.as_str()].values()[i];
            let rel = (got - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    // leave the parameter set in a clean state for the caller.
    params.zero_grads();
    Ok(worst)
}
