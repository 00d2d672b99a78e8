use crate::tensor::{Function, Graph, Tensor, TensorError, Var};

#[derive(Debug)]
struct SoftmaxCeFn {
    classes: usize,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl Function for SoftmaxCeFn {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, gy: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len() as f64;
        let mut g: Vec<f64> = self.probs.iter().map(|p| p * gy[0] / n).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            g[i * self.classes + l] -= gy[0] / n;
        }
        vec![Some(g)]
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`, computed with the
/// row maximum subtracted.
pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
    let t = g.value(logits);
    let s = t.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(TensorError::InvalidShape(format!(
            "logits {s:?} for {} labels",
            labels.len()
        )));
    }
    let c = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut probs = vec![0.0; t.numel()];
    let mut total = 0.0;
    for ((row, p), &label) in t.data().chunks(c).zip(probs.chunks_mut(c)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (pj, &v) in p.iter_mut().zip(row) {
            *pj = (v - max).exp();
            z += *pj;
        }
        p.iter_mut().for_each(|pj| *pj /= z);
        total += z.ln() - (row[label] - max);
    }
    let loss = total / labels.len() as f64;
    g.apply(
        Box::new(SoftmaxCeFn {
            classes: c,
            probs,
            labels: labels.to_vec(),
        }),
        &[logits],
        Tensor::scalar(loss),
    )
}

/// Index of the largest entry in each row (first on ties).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = *t.shape().last().expect("rank >= 1");
    t.data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
