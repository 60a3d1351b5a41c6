use super::pseudo::PseudoBatch;
use crate::error::{Error, Result};
use crate::numerics::{EncoderParams, Gradients, Matrix};
use crate::protonet::{weighted_ce, Task, TaskForward};

/// Floor on the negative-label loss inside `λ / L_neg`.
pub const NEG_LOSS_FLOOR: f64 = 1e-3;

/// Which terms enter the fine-tuning objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSwitches {
    pub lambda: f64,
    pub use_co: bool,
    pub use_neg: bool,
    pub use_support: bool,
}

impl LossSwitches {
    pub fn full(lambda: f64) -> Self {
        LossSwitches {
            lambda,
            use_co: true,
            use_neg: true,
            use_support: false,
        }
    }
}

/// Value of every term plus the gradient of the total.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub co: f64,
    pub neg: f64,
    /// `L_neg` fell below [`NEG_LOSS_FLOOR`] and the floor was used.
    pub neg_floored: bool,
    pub support: Option<f64>,
    pub total: f64,
    /// Rows whose log argument hit the clamp, over all terms.
    pub clamped: usize,
    pub grads: Gradients,
}

/// Weighted cross-entropy against the positive pseudo-labels, with gradient.
pub fn weighted_co_loss(
    encoder: &EncoderParams,
    task: &Task,
    batch: &PseudoBatch,
) -> Result<(f64, Gradients)> {
    check_batch(task, batch)?;
    let fwd = TaskForward::run(encoder, task)?;
    let ce = weighted_ce(&fwd.query_probs(), &batch.positive, &batch.weights)?;
    finite(ce.value, "co-learning loss")?;
    let grads = fwd.backward(encoder, None, Some(&ce.d_logits))?;
    Ok((ce.value, grads))
}

/// Weighted cross-entropy against the negative pseudo-labels.
pub fn negative_loss(encoder: &EncoderParams, task: &Task, batch: &PseudoBatch) -> Result<f64> {
    check_batch(task, batch)?;
    let fwd = TaskForward::run(encoder, task)?;
    let ce = weighted_ce(&fwd.query_probs(), &batch.negative, &batch.weights)?;
    finite(ce.value, "negative-label loss")?;
    Ok(ce.value)
}

/// `co + λ / max(neg, NEG_LOSS_FLOOR)`.
pub fn total_loss(co: f64, neg: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return co;
    }
    co + lambda / neg.max(NEG_LOSS_FLOOR)
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("{what} is {v}")))
    }
}

fn check_batch(task: &Task, batch: &PseudoBatch) -> Result<()> {
    if batch.len() != task.n_query() || batch.co_probs.cols() != task.n_way() {
        return Err(Error::shape(format!(
            "pseudo-batch covers {}x{}, task has {} queries and {} classes",
            batch.len(),
            batch.co_probs.cols(),
            task.n_query(),
            task.n_way()
        )));
    }
    Ok(())
}

/// Evaluates the configured objective on an existing forward pass and
/// backpropagates it. `fwd` must come from `encoder` on `task`.
pub fn objective(
    fwd: &TaskForward,
    encoder: &EncoderParams,
    task: &Task,
    batch: &PseudoBatch,
    switches: LossSwitches,
) -> Result<LossTerms> {
    check_batch(task, batch)?;
    let q = fwd.query_probs();
    let co = weighted_ce(&q, &batch.positive, &batch.weights)?;
    let neg = weighted_ce(&q, &batch.negative, &batch.weights)?;
    finite(co.value, "co-learning loss")?;
    finite(neg.value, "negative-label loss")?;
    let mut clamped = co.clamped + neg.clamped;

    let mut d_query = Matrix::zeros(q.rows(), q.cols());
    let mut total = 0.0;
    if switches.use_co {
        total += co.value;
        d_query = co.d_logits;
    }
    let neg_floored = neg.value < NEG_LOSS_FLOOR;
    if switches.use_neg && switches.lambda != 0.0 {
        total += switches.lambda / neg.value.max(NEG_LOSS_FLOOR);
        if !neg_floored {
            // d(λ/L)/dL = −λ/L²
            let coef = -switches.lambda / (neg.value * neg.value);
            for (d, &g) in d_query.as_mut_slice().iter_mut().zip(neg.d_logits.as_slice()) {
                *d += coef * g;
            }
        }
    }

    let mut support = None;
    let mut d_support = None;
    if switches.use_support {
        let s = fwd.support_probs();
        let ones = vec![1.0; s.rows()];
        let ce = weighted_ce(&s, task.support_labels(), &ones)?;
        finite(ce.value, "support loss")?;
        clamped += ce.clamped;
        total += ce.value;
        support = Some(ce.value);
        d_support = Some(ce.d_logits);
    }

    let grads = fwd.backward(encoder, d_support.as_ref(), Some(&d_query))?;
    Ok(LossTerms {
        co: co.value,
        neg: neg.value,
        neg_floored,
        support,
        total,
        clamped,
        grads,
    })
}
