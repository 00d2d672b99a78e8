use crate::exec;
use crate::tensor::kernels::gemm;
use crate::tensor::{Function, Graph, Tensor, TensorError, Var};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn input_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Unfold one `C x H x W` sample into a `(C*KH*KW) x (OH*OW)` matrix.
fn im2col(x: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let p = d.positions();
    for c in 0..d.c {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..d.oh {
                    let ii = (oi * d.stride + ki) as isize - d.pad as isize;
                    for oj in 0..d.ow {
                        let jj = (oj * d.stride + kj) as isize - d.pad as isize;
                        dst[oi * d.ow + oj] = if ii >= 0 && jj >= 0 && (ii as usize) < d.h && (jj as usize) < d.w {
                            x[(c * d.h + ii as usize) * d.w + jj as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a sample buffer.
fn col2im(cols: &[f64], d: &ConvDims, x: &mut [f64]) {
    let p = d.positions();
    for c in 0..d.c {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..d.oh {
                    let ii = (oi * d.stride + ki) as isize - d.pad as isize;
                    if ii < 0 || ii as usize >= d.h {
                        continue;
                    }
                    for oj in 0..d.ow {
                        let jj = (oj * d.stride + kj) as isize - d.pad as isize;
                        if jj >= 0 && (jj as usize) < d.w {
                            x[(c * d.h + ii as usize) * d.w + jj as usize] += src[oi * d.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct Conv2dFn {
    dims: ConvDims,
    has_bias: bool,
}

impl Function for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let d = self.dims;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (ckk, p, oc) = (d.ckk(), d.positions(), d.oc);
        let need_x = needs[0];
        let need_w = needs[1];

        // per-sample partials, reduced in sample order for determinism
        let partials = exec::map_indexed(d.n, |s| {
            let gys = &gy[s * oc * p..(s + 1) * oc * p];
            let dw = need_w.then(|| {
                let mut cols = vec![0.0; ckk * p];
                im2col(&x[s * d.input_len()..(s + 1) * d.input_len()], &d, &mut cols);
                let mut dw = vec![0.0; oc * ckk];
                gemm(oc, p, ckk, 1.0, gys, false, &cols, true, 0.0, &mut dw);
                dw
            });
            let dx = need_x.then(|| {
                let mut dcols = vec![0.0; ckk * p];
                gemm(ckk, oc, p, 1.0, w, true, gys, false, 0.0, &mut dcols);
                let mut dx = vec![0.0; d.input_len()];
                col2im(&dcols, &d, &mut dx);
                dx
            });
            (dw, dx)
        });

        let mut gx = need_x.then(|| Vec::with_capacity(d.n * d.input_len()));
        let mut gw = need_w.then(|| vec![0.0; oc * ckk]);
        for (dw, dx) in partials {
            if let (Some(acc), Some(dw)) = (gw.as_mut(), dw) {
                acc.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
            }
            if let (Some(acc), Some(dx)) = (gx.as_mut(), dx) {
                acc.extend_from_slice(&dx);
            }
        }
        let mut out = vec![gx, gw];
        if self.has_bias {
            let gb = needs[2].then(|| {
                let mut gb = vec![0.0; oc];
                for s in 0..d.n {
                    for (o, acc) in gb.iter_mut().enumerate() {
                        let base = (s * oc + o) * p;
                        *acc += gy[base..base + p].iter().sum::<f64>();
                    }
                }
                gb
            });
            out.push(gb);
        }
        out
    }
}

/// 2-D cross-correlation of `x: N x C x H x W` with `w: OC x C x KH x KW`,
/// plus an optional per-channel bias.
pub fn conv2d(
    g: &mut Graph,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    padding: usize,
) -> Result<Var, TensorError> {
    let (xs, ws) = (g.value(x).shape().to_vec(), g.value(w).shape().to_vec());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: xs,
            right: ws,
        });
    }
    let (oh, ow) = match (
        conv_output_size(xs[2], ws[2], stride, padding),
        conv_output_size(xs[3], ws[3], stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(TensorError::InvalidArgument(format!(
                "conv2d: kernel {:?} does not fit input {:?} with padding {padding} and stride {stride}",
                &ws[2..],
                &xs[2..]
            )))
        }
    };
    let d = ConvDims {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        oc: ws[0],
        kh: ws[2],
        kw: ws[3],
        oh,
        ow,
        stride,
        pad: padding,
    };
    if let Some(b) = b {
        if g.value(b).shape() != [d.oc] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                left: vec![d.oc],
                right: g.value(b).shape().to_vec(),
            });
        }
    }

    let (ckk, p) = (d.ckk(), d.positions());
    let xd = g.value(x).data();
    let wd = g.value(w).data();
    let bd = b.map(|b| g.value(b).data());
    let mut out = vec![0.0; d.n * d.oc * p];
    exec::for_each_chunk_mut(&mut out, d.oc * p, |s, dst| {
        let mut cols = vec![0.0; ckk * p];
        im2col(&xd[s * d.input_len()..(s + 1) * d.input_len()], &d, &mut cols);
        if let Some(bd) = bd {
            for (o, row) in dst.chunks_mut(p).enumerate() {
                row.fill(bd[o]);
            }
        }
        gemm(d.oc, ckk, p, 1.0, wd, false, &cols, false, if bd.is_some() { 1.0 } else { 0.0 }, dst);
    });
    let out = Tensor::new(&[d.n, d.oc, oh, ow], out)?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    g.apply(
        Box::new(Conv2dFn {
            dims: d,
            has_bias: b.is_some(),
        }),
        &inputs,
        out,
    )
}

/// Direct six-loop convolution, kept as a reference for tests and benches.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, padding: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = conv_output_size(h, kh, stride, padding).expect("kernel fits");
    let ow = conv_output_size(wd, kw, stride, padding).expect("kernel fits");
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
    for s in 0..n {
        for o in 0..oc {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for ch in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ii = (i * stride + ki) as isize - padding as isize;
                                let jj = (j * stride + kj) as isize - padding as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                    acc += x.get(&[s, ch, ii as usize, jj as usize]) * w.get(&[o, ch, ki, kj]);
                                }
                            }
                        }
                    }
                    out.set(&[s, o, i, j], acc);
                }
            }
        }
    }
    out
}

#[derive(Debug)]
struct MaxPoolFn {
    argmax: Vec<usize>,
}

impl Function for MaxPoolFn {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        for (g, &src) in gy.iter().zip(&self.argmax) {
            gx[src] += g;
        }
        vec![Some(gx)]
    }
}

/// Max pooling without padding. Ties go to the first index in row-major
/// window order.
pub fn max_pool2d(g: &mut Graph, x: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
    let t = g.value(x);
    let s = t.shape();
    if s.len() != 4 {
        return Err(TensorError::InvalidShape(format!("max_pool2d needs NCHW, got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (Some(oh), Some(ow)) = (
        conv_output_size(h, kernel, stride, 0),
        conv_output_size(w, kernel, stride, 0),
    ) else {
        return Err(TensorError::InvalidArgument(format!(
            "max_pool2d: window {kernel} does not fit {h}x{w}"
        )));
    };
    let data = t.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + (i * stride) * w + j * stride;
                for ki in 0..kernel {
                    for kj in 0..kernel {
                        let idx = base + (i * stride + ki) * w + j * stride + kj;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::new(&[n, c, oh, ow], out)?;
    g.apply(Box::new(MaxPoolFn { argmax }), &[x], out)
}
