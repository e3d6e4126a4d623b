//! Adaptive-gradient (Adagrad) updates.

/// Per-parameter step `lr / sqrt(G + eps)` where `G` accumulates squared
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Adagrad {
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    /// Applies one update in place. `accum` must have the shape of `params`.
    #[inline]
    pub fn step(&self, params: &mut [f64], accum: &mut [f64], grad: &[f64]) {
        debug_assert!(params.len() == accum.len() && params.len() == grad.len());
        for ((p, a), g) in params.iter_mut().zip(accum.iter_mut()).zip(grad) {
            *a += g * g;
            *p -= self.learning_rate * g / libm::sqrt(*a + self.epsilon);
        }
    }
}
