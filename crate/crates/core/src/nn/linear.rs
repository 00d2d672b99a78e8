use crate::tensor::kernels::gemm;
use crate::tensor::{Function, Graph, Tensor, TensorError, Var};

#[derive(Debug)]
struct LinearFn {
    n: usize,
    input: usize,
    output: usize,
}

impl Function for LinearFn {
    fn name(&self) -> &'static str {
        "fully_connected"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, i, o) = (self.n, self.input, self.output);
        let (x, w) = (inputs[0].data(), inputs[1].data());
        // y = x W^T + b  =>  dx = dy W, dW = dy^T x, db = colsum(dy)
        let gx = needs[0].then(|| {
            let mut g = vec![0.0; n * i];
            gemm(n, o, i, 1.0, gy, false, w, false, 0.0, &mut g);
            g
        });
        let gw = needs[1].then(|| {
            let mut g = vec![0.0; o * i];
            gemm(o, n, i, 1.0, gy, true, x, false, 0.0, &mut g);
            g
        });
        let gb = needs[2].then(|| {
            let mut g = vec![0.0; o];
            for row in gy.chunks(o) {
                g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            g
        });
        vec![gx, gw, gb]
    }
}

/// `y = x * W^T + b` for `x: N x IN`, `W: OUT x IN`, `b: OUT`.
pub fn fully_connected(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let (xs, ws, bs) = (g.value(x).shape(), g.value(w).shape(), g.value(b).shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
        return Err(TensorError::ShapeMismatch {
            op: "fully_connected",
            left: xs.to_vec(),
            right: ws.to_vec(),
        });
    }
    let (n, i, o) = (xs[0], xs[1], ws[0]);
    let bias = g.value(b).data();
    let mut y: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm(n, i, o, 1.0, g.value(x).data(), false, g.value(w).data(), true, 1.0, &mut y);
    let out = Tensor::new(&[n, o], y)?;
    g.apply(Box::new(LinearFn { n, input: i, output: o }), &[x, w, b], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;
    use rand::SeedableRng;

    #[test]
    fn identity_weight() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5]).unwrap());
        let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let w = g.constant(eye);
        let b = g.constant(Tensor::zeros(&[3]));
        let y = fully_connected(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn hand_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![1.0]));
        let y = fully_connected(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[12.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 3]));
        let w = g.constant(Tensor::ones(&[2, 2]));
        let b = g.constant(Tensor::ones(&[2]));
        assert!(fully_connected(&mut g, x, w, b).is_err());
    }

    #[test]
    fn matches_matmul_composition_and_differences() {
        for seed in 0..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[3, 4], &mut rng);
            let w = Tensor::randn(&[2, 4], &mut rng);
            let b = Tensor::randn(&[2], &mut rng);
            let probe = Tensor::randn(&[3, 2], &mut rng);

            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let fused = fully_connected(&mut g, xv, wv, bv).unwrap();
            let wt = g.transpose(wv).unwrap();
            let xw = g.matmul(xv, wt).unwrap();
            let composed = g.add(xw, bv).unwrap();
            for (a, e) in g.value(fused).data().iter().zip(g.value(composed).data()) {
                assert!((a - e).abs() < 1e-12);
            }

            let err = grad_check(
                |g, v| {
                    let y = fully_connected(g, v[0], v[1], v[2])?;
                    let p = g.constant(probe.clone());
                    let z = g.mul(y, p)?;
                    g.sum(z)
                },
                &[x, w, b],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }
}
