//! Element-wise nonlinearities: the tanh/sigmoid gate and ReLU.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `tanh(filter) * sigmoid(gate)`, element-wise.
pub fn gated_activation<T: Scalar>(filter: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    filter.check_same_shape(gate, "gated activation")?;
    let data = filter
        .data()
        .iter()
        .zip(gate.data())
        .map(|(&f, &g)| f.tanh() * sigmoid(g))
        .collect();
    Tensor::new(filter.shape().to_vec(), data)
}

/// Gradients of [`gated_activation`] with respect to the filter and gate inputs.
pub fn gated_activation_backward<T: Scalar>(
    filter: &Tensor<T>,
    gate: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    filter.check_same_shape(gate, "gated activation")?;
    filter.check_same_shape(upstream, "gated activation upstream")?;
    let n = filter.len();
    let mut d_filter = Vec::with_capacity(n);
    let mut d_gate = Vec::with_capacity(n);
    for ((&f, &g), &u) in filter.data().iter().zip(gate.data()).zip(upstream.data()) {
        let th = f.tanh();
        let sg = sigmoid(g);
        d_filter.push((T::one() - th * th) * sg * u);
        d_gate.push(th * sg * (T::one() - sg) * u);
    }
    Ok((
        Tensor::new(filter.shape().to_vec(), d_filter)?,
        Tensor::new(filter.shape().to_vec(), d_gate)?,
    ))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU backward; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.check_same_shape(upstream, "relu upstream")?;
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &u)| if v > T::zero() { u } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn gate_is_zero_at_origin() {
        let z = gated_activation(&t(&[0.0]), &t(&[0.0])).unwrap();
        assert_eq!(z.data(), &[0.0]);
    }

    #[test]
    fn gate_saturates_to_one() {
        let z = gated_activation(&t(&[20.0]), &t(&[20.0])).unwrap();
        assert!((z.data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn gate_shape_mismatch() {
        assert!(gated_activation(&t(&[0.0, 1.0]), &t(&[0.0])).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = t(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &t(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..64)) {
            let x = t(&v);
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }

        #[test]
        fn gate_output_is_bounded(f in -50.0f64..50.0, g in -50.0f64..50.0) {
            let z = gated_activation(&t(&[f]), &t(&[g])).unwrap().data()[0];
            prop_assert!(z.abs() <= 1.0 && z.is_finite());
        }
    }
}
