use crate::error::{Error, Result};

use super::tensor::{Scalar, Tensor};

/// Sum of squared surface-position errors over `lambda` surfaces.
///
/// Both vectors use the surface-major layout: surface `i` (0-based) at
/// middle column `k` lives at index `i * m1 + k` with `m1 = len / lambda`.
/// Returns the loss and its gradient with respect to `pred`.
pub fn euclidean_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    lambda: usize,
) -> Result<(T, Tensor<T>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "loss: prediction has {} values, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if lambda == 0 || pred.len() % lambda != 0 {
        return Err(Error::Shape(format!(
            "loss: {} values cannot be split over {lambda} surfaces",
            pred.len()
        )));
    }
    let m1 = pred.len() / lambda;
    let (p, t) = (pred.data(), target.data());
    let two = T::one() + T::one();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); p.len()];
    for surface in 0..lambda {
        for k1 in 0..m1 {
            let k2 = surface * m1 + k1;
            let d = p[k2] - t[k2];
            loss += d * d;
            grad[k2] = two * d;
        }
    }
    Ok((loss, Tensor::from_vec(pred.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_vectors_have_zero_loss() {
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (e, g) = euclidean_loss(&t, &t, 2).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_surface_hand_example() {
        let target = Tensor::from_vec(&[4], vec![10.0, 10.0, 20.0, 20.0]).unwrap();
        let pred = Tensor::from_vec(&[4], vec![11.0, 9.0, 20.0, 22.0]).unwrap();
        let (e, g) = euclidean_loss(&pred, &target, 2).unwrap();
        assert_eq!(e, 6.0);
        assert_eq!(g.data(), &[2.0, -2.0, 0.0, 4.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = Tensor::<f64>::zeros(&[4]);
        let b = Tensor::<f64>::zeros(&[5]);
        assert!(euclidean_loss(&a, &b, 1).is_err());
        assert!(euclidean_loss(&a, &a, 3).is_err());
    }
}
