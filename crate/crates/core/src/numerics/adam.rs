use super::encoder::{EncoderParams, Gradients};
use crate::error::{Error, Result};

/// Adam optimizer state with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(params: &EncoderParams, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            learning_rate,
            beta1: Self::DEFAULT_BETA1,
            beta2: Self::DEFAULT_BETA2,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::config(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::config("Adam learning rate and epsilon must be positive"));
        }
        if self.first_moment.dims() != self.second_moment.dims() {
            return Err(Error::shape("Adam moment accumulators disagree in shape"));
        }
        Ok(())
    }

    /// Fresh moments and step counter, same hyperparameters.
    pub fn reset(&mut self) {
        self.step = 0;
        self.first_moment.scale(0.0);
        self.second_moment.scale(0.0);
    }
}

/// One Adam update in place; increments `state.step`.
pub fn adam_step(params: &mut EncoderParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    grads.check_congruent(params)?;
    state.first_moment.check_congruent(params)?;
    state.second_moment.check_congruent(params)?;

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    let moments = state
        .first_moment
        .values_mut()
        .zip(state.second_moment.values_mut());
    for ((p, &g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
