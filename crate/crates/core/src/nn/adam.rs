use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{MlpParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments for one parameter blob.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            hyper,
        }
    }

    /// Zeroes both moments; the step count is kept.
    pub fn reset_moments(&mut self) {
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
    }

    /// One bias-corrected Adam update. A non-finite gradient leaves both
    /// `params` and the state untouched.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "adam step",
                self.m.len(),
                format!("params {} / grads {}", params.len(), grads.len()),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient component at index {i}"
            )));
        }
        self.t += 1;
        let h = self.hyper;
        let t = self.t as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - h.beta1), T::lit(1.0 - h.beta2));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        let (lr, eps) = (T::lit(h.lr), T::lit(h.eps));
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step_params(&mut self, params: &mut MlpParams<T>, grads: &MlpParams<T>) -> Result<()> {
        self.step(params.as_mut_slice(), grads.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar Adam written straight from the update rule.
    fn scalar_adam(mut p: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v) = (0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn zero_gradient_is_a_fixpoint() {
        let mut st = AdamState::<f32>::new(3, AdamHyper::default());
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
        for _ in 0..20 {
            st.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        let mut st = AdamState::<f64>::new(1, AdamHyper::default());
        let mut p = vec![1.0];
        st.step(&mut p, &[0.5]).unwrap();
        // m_hat = 0.5, v_hat = 0.25 => step = lr * 0.5 / (0.5 + 1e-8)
        let expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.999).abs() < 1e-7);
    }

    #[test]
    fn three_steps_match_scalar_oracle() {
        let mut st = AdamState::<f64>::new(1, AdamHyper::default());
        let mut p = vec![0.3];
        for _ in 0..3 {
            st.step(&mut p, &[-1.25]).unwrap();
        }
        let oracle = scalar_adam(0.3, &[-1.25; 3], 1e-3);
        assert!((p[0] - oracle).abs() < 1e-12, "{} vs {oracle}", p[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut st = AdamState::<f32>::new(2, AdamHyper::default());
        let mut p = vec![1.0, 1.0];
        let err = st.step(&mut p, &[0.1, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(st.t, 0);
        assert!(st.m.iter().all(|&m| m == 0.0));
    }
}
