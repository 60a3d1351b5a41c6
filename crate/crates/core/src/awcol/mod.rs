//! Adaptive weighted co-learning on a target task.
//!
//! Each model keeps a weighted moving average (WMA) of its query
//! predictions, with a rate that decays geometrically to a floor. The two
//! WMA matrices are averaged and softmax-rescaled into a co-prediction,
//! which yields a positive pseudo-label (argmax), a confidence weight (max)
//! and a random negative pseudo-label per query. Models are updated in
//! alternating blocks of `beta` iterations, minimizing the weighted
//! positive-label cross-entropy plus `λ / L_neg`, where `L_neg` is the
//! weighted cross-entropy at the negative labels.

mod finetune;
mod loss;
mod pseudo;
mod wma;

pub use finetune::{
    evaluate, finetune, Ablation, FinetuneConfig, FinetuneOutcome, FinetuneTrace, IterationRecord,
    StateSnapshot, Variant,
};
pub use loss::{
    negative_loss, objective, total_loss, weighted_co_loss, LossSwitches, LossTerms,
    NEG_LOSS_FLOOR,
};
pub use pseudo::{make_pseudo_batch, PseudoBatch};
pub use wma::{anneal_alpha, co_predict, co_predict_probs, wma_update, AnnealSchedule, WmaState};
