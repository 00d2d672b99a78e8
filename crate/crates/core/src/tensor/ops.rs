use super::kernels::{gemm, matmul};
use super::{Function, Graph, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Elementwise unary operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    Neg,
    Square,
    Exp,
    Ln,
    Scale(f64),
}

/// `b` broadcasts against `a` when it has the same shape, is a single
/// value, or matches `a`'s trailing dimensions.
fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    let nb: usize = b.iter().product();
    a == b || nb == 1 || (b.len() <= a.len() && a.ends_with(b))
}

#[derive(Debug)]
struct Binary {
    kind: BinaryKind,
}

impl Function for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let nb = b.len();
        let ga = needs[0].then(|| match self.kind {
            BinaryKind::Add | BinaryKind::Sub => gy.to_vec(),
            BinaryKind::Mul => gy.iter().enumerate().map(|(i, g)| g * b[i % nb]).collect(),
            BinaryKind::Div => gy.iter().enumerate().map(|(i, g)| g / b[i % nb]).collect(),
        });
        let gb = needs[1].then(|| {
            let mut acc = vec![0.0; nb];
            for (i, g) in gy.iter().enumerate() {
                let j = i % nb;
                acc[j] += match self.kind {
                    BinaryKind::Add => *g,
                    BinaryKind::Sub => -g,
                    BinaryKind::Mul => g * a[i],
                    BinaryKind::Div => -g * a[i] / (b[j] * b[j]),
                };
            }
            acc
        });
        vec![ga, gb]
    }
}

#[derive(Debug)]
struct UnaryFn(Unary);

impl Function for UnaryFn {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Relu => "relu",
            Unary::Neg => "neg",
            Unary::Square => "square",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Scale(_) => "scale",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        let y = out.data();
        let g = gy
            .iter()
            .enumerate()
            .map(|(i, g)| match self.0 {
                // subgradient at 0 is 0
                Unary::Relu => {
                    if x[i] > 0.0 {
                        *g
                    } else {
                        0.0
                    }
                }
                Unary::Neg => -g,
                Unary::Square => 2.0 * x[i] * g,
                Unary::Exp => y[i] * g,
                Unary::Ln => g / x[i],
                Unary::Scale(s) => s * g,
            })
            .collect();
        vec![Some(g)]
    }
}

#[derive(Debug)]
struct Reduce {
    mean: bool,
}

impl Function for Reduce {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = inputs[0].numel();
        let g = if self.mean { gy[0] / n as f64 } else { gy[0] };
        vec![Some(vec![g; n])]
    }
}

#[derive(Debug)]
struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl Function for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (inputs[0].data(), inputs[1].data());
        // dA = dC * B^T, dB = A^T * dC
        let ga = needs[0].then(|| {
            let mut g = vec![0.0; m * k];
            gemm(m, n, k, 1.0, gy, false, b, true, 0.0, &mut g);
            g
        });
        let gb = needs[1].then(|| {
            let mut g = vec![0.0; k * n];
            gemm(k, m, n, 1.0, a, true, gy, false, 0.0, &mut g);
            g
        });
        vec![ga, gb]
    }
}

#[derive(Debug)]
struct Transpose {
    rows: usize,
    cols: usize,
}

impl Function for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(super::kernels::transpose(gy, self.cols, self.rows))]
    }
}

#[derive(Debug)]
struct Reshape;

impl Function for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(gy.to_vec())]
    }
}

impl Graph {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(TensorError::ShapeMismatch {
                op: Binary { kind }.name(),
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (x, y) = (ta.data(), tb.data());
        let nb = y.len();
        let data = x
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let q = y[i % nb];
                match kind {
                    BinaryKind::Add => p + q,
                    BinaryKind::Sub => p - q,
                    BinaryKind::Mul => p * q,
                    BinaryKind::Div => p / q,
                }
            })
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.apply(Box::new(Binary { kind }), &[a, b], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| match op {
                Unary::Relu => v.max(0.0),
                Unary::Neg => -v,
                Unary::Square => v * v,
                Unary::Exp => v.exp(),
                Unary::Ln => v.ln(),
                Unary::Scale(s) => s * v,
            })
            .collect();
        let out = Tensor::new(t.shape(), data)?;
        self.apply(Box::new(UnaryFn(op)), &[x], out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Relu, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Square, x)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        self.unary(Unary::Scale(s), x)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(x).data().iter().sum();
        self.apply(Box::new(Reduce { mean: false }), &[x], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.apply(Box::new(Reduce { mean: true }), &[x], Tensor::scalar(s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::new(&[m, n], matmul(ta.data(), tb.data(), m, k, n))?;
        self.apply(Box::new(MatMul { m, k, n }), &[a, b], out)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.ndim() != 2 {
            return Err(TensorError::InvalidShape(format!(
                "transpose needs a matrix, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let out = Tensor::new(&[cols, rows], super::kernels::transpose(t.data(), rows, cols))?;
        self.apply(Box::new(Transpose { rows, cols }), &[x], out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).reshape(shape)?;
        self.apply(Box::new(Reshape), &[x], out)
    }
}
