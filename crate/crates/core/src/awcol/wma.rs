use crate::error::{Error, Result};
use crate::numerics::{softmax_into, Matrix};

/// Rectified annealing of the WMA mixing rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub alpha0: f64,
    pub alpha_min: f64,
    pub gamma: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            alpha0: 0.5,
            alpha_min: 0.1,
            gamma: 0.99,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha0 && self.alpha0 <= 1.0) {
            return Err(Error::config(format!(
                "need 0 < alpha_min <= alpha0 <= 1, got alpha_min={} alpha0={}",
                self.alpha_min, self.alpha0
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `max(alpha_min, γ·alpha)`.
pub fn anneal_alpha(alpha: f64, schedule: &AnnealSchedule) -> f64 {
    schedule.alpha_min.max(schedule.gamma * alpha)
}

/// Smoothed per-query class probabilities of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct WmaState {
    pub probs: Matrix,
    pub alpha: f64,
    pub initialized: bool,
}

impl WmaState {
    /// Uninitialized state; the first update copies its input.
    pub fn new(n_query: usize, n_way: usize, alpha: f64) -> Self {
        WmaState {
            probs: Matrix::filled(n_query, n_way, 1.0 / n_way as f64),
            alpha,
            initialized: false,
        }
    }

    /// Overwrites the state with `probs` and marks it initialized.
    pub fn seed_with(&mut self, probs: &Matrix) -> Result<()> {
        if probs.shape() != self.probs.shape() {
            return Err(shape_err(probs, &self.probs));
        }
        self.probs = probs.clone();
        self.initialized = true;
        Ok(())
    }
}

fn shape_err(a: &Matrix, b: &Matrix) -> Error {
    Error::shape(format!(
        "WMA matrices differ: {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

/// `probs ← (1−α)·probs + α·fresh` with `α = state.alpha`. An uninitialized
/// state takes `fresh` verbatim.
pub fn wma_update(state: &mut WmaState, fresh: &Matrix) -> Result<()> {
    if fresh.shape() != state.probs.shape() {
        return Err(shape_err(fresh, &state.probs));
    }
    if !state.initialized {
        return state.seed_with(fresh);
    }
    let a = state.alpha;
    for (p, &f) in state.probs.as_mut_slice().iter_mut().zip(fresh.as_slice()) {
        *p = (1.0 - a) * *p + a * f;
    }
    Ok(())
}

/// Row-wise softmax of the element-wise mean of two WMA matrices.
pub fn co_predict(first: &WmaState, second: &WmaState) -> Result<Matrix> {
    co_predict_probs(&first.probs, &second.probs)
}

pub fn co_predict_probs(first: &Matrix, second: &Matrix) -> Result<Matrix> {
    if first.shape() != second.shape() {
        return Err(shape_err(first, second));
    }
    let mut out = Matrix::zeros(first.rows(), first.cols());
    let mut avg = vec![0.0; first.cols()];
    for r in 0..first.rows() {
        for ((a, &x), &y) in avg.iter_mut().zip(first.row(r)).zip(second.row(r)) {
            *a = 0.5 * (x + y);
        }
        softmax_into(&avg, out.row_mut(r));
    }
    Ok(out)
}
