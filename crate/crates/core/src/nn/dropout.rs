use rand::Rng;

use crate::tensor::{Function, Graph, Tensor, TensorError, Var};

use super::Mode;

#[derive(Debug)]
struct MaskFn {
    mask: Vec<f64>,
}

impl Function for MaskFn {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(gy.iter().zip(&self.mask).map(|(g, m)| g * m).collect())]
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`. Eval mode returns `x`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var, TensorError> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidArgument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let t = g.value(x);
    let mask: Vec<f64> = (0..t.numel())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let out = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
    g.apply(Box::new(MaskFn { mask }), &[x], out)
}
