use crate::error::{Error, Result};
use crate::nn::{DenseTensor, Real};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Mean absolute error over all elements and its (sub)gradient w.r.t. `pred`.
/// The subgradient at a zero difference is 0.
pub fn mae_loss<T: Real>(
    pred: &DenseTensor<T>,
    target: &DenseTensor<T>,
) -> Result<(f64, DenseTensor<T>)> {
    check_same_shape("mae_loss", pred, target)?;
    let n = pred.len();
    if n == 0 {
        return Err(Error::Contract("mae_loss on empty tensors".into()));
    }
    let inv = T::lit(1.0 / n as f64);
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(n);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        sum += d.as_f64().abs();
        grad.push(if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        });
    }
    Ok((
        sum / n as f64,
        DenseTensor::new(pred.shape().to_vec(), grad)?,
    ))
}

/// Mean absolute error without the gradient, accumulated in f64.
pub fn mae<T: Real>(pred: &DenseTensor<T>, target: &DenseTensor<T>) -> Result<f64> {
    check_same_shape("mae", pred, target)?;
    if pred.is_empty() {
        return Err(Error::Contract("mae on empty tensors".into()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).as_f64().abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean binary cross-entropy of sigmoid outputs `prob` against 0/1 `labels`.
///
/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` for the loss value.
/// The returned gradient is with respect to the pre-sigmoid logits,
/// `(p - y) / n`.
pub fn bce_loss<T: Real>(
    prob: &DenseTensor<T>,
    labels: &DenseTensor<T>,
) -> Result<(f64, DenseTensor<T>)> {
    check_same_shape("bce_loss", prob, labels)?;
    let n = prob.len();
    if n == 0 {
        return Err(Error::Contract("bce_loss on empty tensors".into()));
    }
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(n);
    let inv = 1.0 / n as f64;
    for (i, (&p, &y)) in prob.data().iter().zip(labels.data()).enumerate() {
        let y = y.as_f64();
        if y != 0.0 && y != 1.0 {
            return Err(Error::Contract(format!(
                "label {i} is {y}, expected 0 or 1"
            )));
        }
        let p = p.as_f64();
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        grad.push(T::lit((p - y) * inv));
    }
    Ok((sum * inv, DenseTensor::new(prob.shape().to_vec(), grad)?))
}

fn check_same_shape<T: Real>(ctx: &str, a: &DenseTensor<T>, b: &DenseTensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            ctx,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::sigmoid;

    fn t(v: &[f64]) -> DenseTensor<f64> {
        DenseTensor::matrix(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let a = t(&[0.3, -1.0, 2.0]);
        assert_eq!(mae_loss(&a, &a).unwrap().0, 0.0);
        assert_eq!(mae_loss(&t(&[1.0, 2.0]), &t(&[0.0, 0.0])).unwrap().0, 1.5);
        // zero difference has zero subgradient
        assert!(mae_loss(&a, &a).unwrap().1.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mae_gradient_matches_finite_differences() {
        let pred = [0.4, -1.2, 3.3, 0.05];
        let target = [0.1, -1.0, 2.0, 0.9];
        let (_, g) = mae_loss(&t(&pred), &t(&target)).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut up = pred;
            let mut dn = pred;
            up[i] += h;
            dn[i] -= h;
            let fd = (mae(&t(&up), &t(&target)).unwrap() - mae(&t(&dn), &t(&target)).unwrap())
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn mae_shape_mismatch() {
        assert!(matches!(
            mae_loss(&t(&[1.0]), &t(&[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let p = t(&[0.5; 6]);
        let y = t(&[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        let (l, _) = bce_loss(&p, &y).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_at_labels_is_tiny() {
        let (l, _) = bce_loss(&t(&[1.0, 0.0]), &t(&[1.0, 0.0])).unwrap();
        assert!(l < 1e-6 && l > 0.0);
    }

    #[test]
    fn bce_rejects_soft_labels() {
        assert!(matches!(
            bce_loss(&t(&[0.3]), &t(&[0.5])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bce_logit_gradient_matches_finite_differences() {
        let logits = [-1.3, 0.2, 2.1, -0.4];
        let labels = t(&[1.0, 0.0, 1.0, 0.0]);
        let probs = |z: &[f64]| t(&z.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>());
        let (_, g) = bce_loss(&probs(&logits), &labels).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut dn = logits;
            up[i] += h;
            dn[i] -= h;
            let fd = (bce_loss(&probs(&up), &labels).unwrap().0
                - bce_loss(&probs(&dn), &labels).unwrap().0)
                / (2.0 * h);
            let rel = (fd - g.data()[i]).abs() / g.data()[i].abs().max(1e-12);
            assert!(rel < 1e-5, "logit {i}: fd {fd} vs {}", g.data()[i]);
        }
    }
}
