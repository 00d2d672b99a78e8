use crate::tensor::{Function, Graph, Tensor, TensorError, Var};

#[derive(Debug)]
struct GapFn {
    plane: usize,
}

impl Function for GapFn {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let scale = 1.0 / self.plane as f64;
        let gx = gy
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * scale, self.plane))
            .collect();
        vec![Some(gx)]
    }
}

/// Mean over each `H x W` plane: `N x C x H x W -> N x C`.
pub fn global_avg_pool(g: &mut Graph, x: Var) -> Result<Var, TensorError> {
    let t = g.value(x);
    let s = t.shape();
    if s.len() != 4 {
        return Err(TensorError::InvalidShape(format!(
            "global_avg_pool needs NCHW, got {s:?}"
        )));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let data = t
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    let out = Tensor::new(&[n, c], data)?;
    g.apply(Box::new(GapFn { plane }), &[x], out)
}
