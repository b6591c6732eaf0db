//! Softmax cross-entropy with a numerically stable max-subtracted softmax.

use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch.
///
/// Returns the scalar loss and the gradient with respect to the logits,
/// already divided by the batch size.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> (f64, Tensor) {
    let n = logits.shape()[0];
    let classes = logits.shape()[1];
    debug_assert_eq!(n, labels.len());
    let mut grad = vec![0.0; n * classes];
    let mut loss_sum = 0.0;
    let inv_n = 1.0 / n as f64;
    for b in 0..n {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let grow = &mut grad[b * classes..(b + 1) * classes];
        for (g, &l) in grow.iter_mut().zip(row) {
            let e = (l - max).exp();
            *g = e;
            sum += e;
        }
        let y = labels[b] as usize;
        loss_sum += sum.ln() - (row[y] - max);
        let inv_sum = 1.0 / sum;
        for g in grow.iter_mut() {
            *g *= inv_sum * inv_n;
        }
        grow[y] -= inv_n;
    }
    (
        loss_sum * inv_n,
        Tensor::new(vec![n, classes], grad).expect("loss grad shape"),
    )
}
