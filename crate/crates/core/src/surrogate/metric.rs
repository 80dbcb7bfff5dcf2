use serde::{Deserialize, Serialize};

/// Validation / tournament score of a surrogate. Lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetric {
    /// MAE of `Dec(F(x))` against the true output bundle.
    pub forward_mae: f64,
    /// MAE of `G(F(x))` against `x`.
    pub inverse_mae: f64,
    /// `w_f · forward_mae + w_i · inverse_mae`; the comparison scalar.
    pub combined: f64,
    /// Forward MAE restricted to the scalar outputs.
    pub scalar_mae: f64,
    /// Forward MAE restricted to the image pixels.
    pub image_mae: f64,
}

impl EvalMetric {
    pub fn new(
        forward_mae: f64,
        inverse_mae: f64,
        scalar_mae: f64,
        image_mae: f64,
        w_forward: f64,
        w_inverse: f64,
    ) -> Self {
        Self {
            forward_mae,
            inverse_mae,
            combined: w_forward * forward_mae + w_inverse * inverse_mae,
            scalar_mae,
            image_mae,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.combined.is_finite()
    }
}
