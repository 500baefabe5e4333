use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Numerically stable softmax of a logit vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: k,
        });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    let loss = log_sum - z[label];
    let mut grad = softmax(z);
    grad[label] -= T::one();
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}
