//! SGD with classical momentum. The only optimizer in the crate: the update
//! rule is a two-line recurrence, which keeps training runs trivially
//! reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// One momentum-SGD update on a single tensor:
/// `v = momentum*v + g; w -= lr*v`. A zero learning rate leaves the weights
/// untouched (the velocity still integrates the gradient).
pub fn sgd_step<T: Element>(
    weights: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if weights.dims() != grad.dims() || weights.dims() != velocity.dims() {
        return Err(Error::shape(format!(
            "sgd over weights {:?}, grad {:?}, velocity {:?}",
            weights.dims(),
            grad.dims(),
            velocity.dims()
        )));
    }
    if lr < 0.0 {
        return Err(Error::invalid("learning rate must be >= 0"));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid("momentum must be in [0, 1)"));
    }
    let mu = T::from_f64(momentum);
    let step = T::from_f64(lr);
    for ((w, &g), v) in weights
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = mu * *v + g;
        *w -= step * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_is_noop() {
        let mut w = Tensor::<f64>::filled(&[2], 1.5);
        let g = Tensor::<f64>::zeros(&[2]);
        let mut v = Tensor::<f64>::zeros(&[2]);
        sgd_step(&mut w, &g, &mut v, 0.1, 0.9).unwrap();
        assert_eq!(w.data(), &[1.5, 1.5]);
    }

    #[test]
    fn plain_sgd_arithmetic() {
        let mut w = Tensor::<f64>::filled(&[1], 1.0);
        let g = Tensor::<f64>::filled(&[1], 0.5);
        let mut v = Tensor::<f64>::zeros(&[1]);
        sgd_step(&mut w, &g, &mut v, 0.1, 0.0).unwrap();
        assert!((w.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_hand_unrolled_recurrence() {
        let (lr, mu) = (0.1, 0.9);
        let (g1, g2) = (0.5, -0.25);
        let mut w = Tensor::<f64>::filled(&[1], 2.0);
        let mut v = Tensor::<f64>::zeros(&[1]);
        sgd_step(&mut w, &Tensor::filled(&[1], g1), &mut v, lr, mu).unwrap();
        sgd_step(&mut w, &Tensor::filled(&[1], g2), &mut v, lr, mu).unwrap();
        // v1 = g1; w1 = 2 - lr*v1; v2 = mu*v1 + g2; w2 = w1 - lr*v2.
        let v1 = g1;
        let w1 = 2.0 - lr * v1;
        let v2 = mu * v1 + g2;
        let w2 = w1 - lr * v2;
        assert!((w.data()[0] - w2).abs() < 1e-15);
        assert!((v.data()[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let mut w = Tensor::<f64>::zeros(&[1]);
        let g = Tensor::<f64>::zeros(&[1]);
        let mut v = Tensor::<f64>::zeros(&[1]);
        assert!(sgd_step(&mut w, &g, &mut v, -0.1, 0.0).is_err());
        assert!(sgd_step(&mut w, &g, &mut v, 0.1, 1.0).is_err());
    }
}
