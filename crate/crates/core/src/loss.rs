//! Training losses: L2, L1, and the Charbonnier penalty.
//!
//! All three are mean-reduced over the tensor. The Charbonnier penalty
//! `sqrt(d^2 + eps^2)` is a smooth L1 surrogate; per element it never strays
//! from `|d|` by more than `eps`.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    L2,
    L1,
    Charbonnier { eps: f64 },
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::L2 => "l2",
            Loss::L1 => "l1",
            Loss::Charbonnier { .. } => "charbonnier",
        }
    }
}

/// Loss value (as f64, for logging) and its gradient w.r.t. the prediction.
pub fn loss_and_grad<T: Element>(
    loss: Loss,
    prediction: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    if prediction.dims() != target.dims() {
        return Err(Error::shape(format!(
            "loss over {:?} vs {:?}",
            prediction.dims(),
            target.dims()
        )));
    }
    if let Loss::Charbonnier { eps } = loss {
        if eps <= 0.0 {
            return Err(Error::invalid("charbonnier eps must be > 0"));
        }
    }
    let n = prediction.len();
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut grad = Tensor::<T>::zeros(prediction.dims());
    let mut total = 0.0f64;
    let g = grad.data_mut();
    for (i, (&p, &t)) in prediction.data().iter().zip(target.data()).enumerate() {
        let d = p - t;
        match loss {
            Loss::L2 => {
                total += d.to_f64() * d.to_f64();
                g[i] = (d + d) * inv_n;
            }
            Loss::L1 => {
                total += d.to_f64().abs();
                g[i] = if d > T::ZERO {
                    inv_n
                } else if d < T::ZERO {
                    -inv_n
                } else {
                    T::ZERO
                };
            }
            Loss::Charbonnier { eps } => {
                let e = T::from_f64(eps);
                let r = (d * d + e * e).sqrt();
                total += r.to_f64();
                g[i] = d / r * inv_n;
            }
        }
    }
    Ok((total / n as f64, grad))
}

/// Loss value only (skips gradient allocation).
pub fn loss_value<T: Element>(loss: Loss, prediction: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if prediction.dims() != target.dims() {
        return Err(Error::shape(format!(
            "loss over {:?} vs {:?}",
            prediction.dims(),
            target.dims()
        )));
    }
    let mut total = 0.0f64;
    for (&p, &t) in prediction.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        total += match loss {
            Loss::L2 => d * d,
            Loss::L1 => d.abs(),
            Loss::Charbonnier { eps } => (d * d + eps * eps).sqrt(),
        };
    }
    Ok(total / prediction.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_zero_on_equal_inputs() {
        let a = Tensor::<f64>::filled(&[2, 3, 3], 0.4);
        let (v, g) = loss_and_grad(Loss::L2, &a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn charbonnier_formula() {
        // d = 3, eps = 1e-3: element value is sqrt(9 + 1e-6).
        let p = Tensor::<f64>::filled(&[1, 1, 1], 3.0);
        let t = Tensor::<f64>::zeros(&[1, 1, 1]);
        let (v, _) = loss_and_grad(Loss::Charbonnier { eps: 1e-3 }, &p, &t).unwrap();
        assert!((v - (9.0f64 + 1e-6).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn charbonnier_within_eps_of_abs() {
        let eps = 0.01;
        for i in -50..=50 {
            let d = i as f64 * 0.13;
            let c = (d * d + eps * eps).sqrt();
            assert!((c - d.abs()).abs() <= eps, "d={d}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(&[1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 2, 3]);
        assert!(loss_and_grad(Loss::L2, &a, &b).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng::Rng::new(5);
        for loss in [Loss::L2, Loss::L1, Loss::Charbonnier { eps: 1e-3 }] {
            let p = Tensor::<f64>::from_fn(&[1, 3, 3], |_| rng.uniform(-1.0, 1.0));
            let t = Tensor::<f64>::from_fn(&[1, 3, 3], |_| rng.uniform(-1.0, 1.0));
            let (_, g) = loss_and_grad(loss, &p, &t).unwrap();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.data_mut()[i] += h;
                let mut minus = p.clone();
                minus.data_mut()[i] -= h;
                let num = (loss_value(loss, &plus, &t).unwrap()
                    - loss_value(loss, &minus, &t).unwrap())
                    / (2.0 * h);
                let a = g.data()[i];
                assert!(
                    (num - a).abs() / (num.abs() + a.abs()).max(1e-6) < 1e-5,
                    "{loss:?} elem {i}: analytic {a}, numeric {num}"
                );
            }
        }
    }
}
