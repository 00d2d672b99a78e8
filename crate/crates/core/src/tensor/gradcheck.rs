//! Central finite-difference gradient checking.

use super::{Graph, Tensor, TensorError, Var};

/// Gradient magnitude below which errors are measured absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// Compare analytic gradients of `f` at `inputs` with central differences.
///
/// The numeric derivative uses the fourth-order central stencil
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, whose truncation
/// error is small enough that `h` can be chosen well above the roundoff
/// regime.
///
/// Returns the maximum over all input components of
/// `|analytic - numeric| / max(|analytic|, |numeric|, MAGNITUDE_FLOOR)`.
/// Components below the floor are therefore compared in absolute terms,
/// since structural zeros and gradients near `1e-9` sit at the roundoff
/// level of any finite-difference estimate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], fd_epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.backward(out)?;
        vars.iter().map(|&v| g.grad_or_zeros(v)).collect::<Vec<_>>()
    };

    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..grad.numel() {
            let orig = probe[ti].data()[j];
            let mut at = |offset: f64| -> Result<f64, TensorError> {
                probe[ti].data_mut()[j] = orig + offset * fd_epsilon;
                eval(&probe)
            };
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            probe[ti].data_mut()[j] = orig;

            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * fd_epsilon);
            let a = grad.data()[j];
            let denom = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
