use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial global average pooling: `[B, C, H, W] -> [B, C, 1, 1]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::config("global_avg_pool expects rank 4"));
    }
    let (b, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h == 0 || w == 0 {
        return Err(Error::config("global_avg_pool needs H, W >= 1"));
    }
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    let x = input.data();
    let mut out = Tensor::zeros(&[b, c, 1, 1]);
    for (plane, o) in out.data_mut().iter_mut().enumerate() {
        let mut acc = T::ZERO;
        for &v in &x[plane * hw..(plane + 1) * hw] {
            acc += v;
        }
        *o = acc * inv;
    }
    Ok(out)
}

pub fn global_avg_pool_grad<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::from_f64(1.0 / hw as f64);
    let g = grad_out.data();
    let mut out = Tensor::zeros(input_shape);
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = g[i / hw] * inv;
    }
    out
}

/// Sum of all elements, as a scalar tensor.
pub fn sum_all<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::ZERO;
    for &v in input.data() {
        acc += v;
    }
    Tensor::scalar(acc)
}

/// `sum(x * weights)` with constant weights; the smooth scalar objective
/// used by gradient checks.
pub fn weighted_sum<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != weights.shape() {
        return Err(Error::usage("weighted_sum shape mismatch"));
    }
    let mut acc = T::ZERO;
    for (&x, &w) in input.data().iter().zip(weights.data()) {
        acc += x * w;
    }
    Ok(Tensor::scalar(acc))
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::usage(format!(
            "l1_loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut acc = T::ZERO;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        acc += (p - t).abs();
    }
    Ok(Tensor::scalar(acc / T::from_f64(pred.numel() as f64)))
}

/// Gradient of `l1_loss` w.r.t. `pred`: `sign(pred - target) / numel`, with
/// the subgradient at zero pinned to 0.
pub fn l1_loss_grad<T: Scalar>(grad_out: T, pred: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let inv = T::from_f64(1.0 / pred.numel() as f64);
    let mut out = Tensor::zeros(pred.shape());
    for ((o, &p), &t) in out.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        let s = if d > T::ZERO {
            T::ONE
        } else if d < T::ZERO {
            -T::ONE
        } else {
            T::ZERO
        };
        *o = grad_out * s * inv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_of_constant_is_constant() {
        let x = Tensor::filled(&[2, 3, 4, 5], 2.5f64);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn pool_closed_form() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert!((y.data()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pool_invariant_under_spatial_permutation() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = Tensor::from_vec(&[1, 1, 2, 2], vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        let a = global_avg_pool(&x).unwrap();
        let b = global_avg_pool(&p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn l1_basics() {
        let a = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(l1_loss(&a, &a).unwrap().data()[0], 0.0);
        let b = a.map(|v| v + 1.0);
        assert!((l1_loss(&b, &a).unwrap().data()[0] - 1.0).abs() < 1e-12);
        let c = Tensor::<f64>::zeros(&[3]);
        assert!(l1_loss(&a, &c).is_err());
    }
}
