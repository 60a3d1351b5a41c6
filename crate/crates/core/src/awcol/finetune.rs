use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{objective, LossSwitches};
use super::pseudo::{make_pseudo_batch, PseudoBatch};
use super::wma::{anneal_alpha, co_predict, co_predict_probs, wma_update, AnnealSchedule, WmaState};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix};
use crate::protonet::{accuracy, Episode, ProtoModel, Task, TaskForward};

/// Component switches reproducing the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Each model trains on pseudo-labels from its own WMA predictions only.
    pub no_colearn: bool,
    /// Both models step every iteration from one shared pseudo-batch.
    pub simultaneous_update: bool,
    /// WMA rate pinned to 1 (no smoothing).
    pub no_wma: bool,
    pub drop_co_loss: bool,
    pub drop_neg_loss: bool,
    pub unit_weights: bool,
    /// Adds a mean cross-entropy on the labeled support set.
    pub add_support_loss: bool,
}

/// The eight rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoCoLearn,
    NoAltUpdate,
    NoWma,
    NoCoLoss,
    NoNegLoss,
    NoAdaptWeight,
    WithSupportLoss,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoCoLearn,
        Variant::NoAltUpdate,
        Variant::NoWma,
        Variant::NoCoLoss,
        Variant::NoNegLoss,
        Variant::NoAdaptWeight,
        Variant::WithSupportLoss,
    ];

    pub fn ablation(self) -> Ablation {
        let mut a = Ablation::default();
        match self {
            Variant::Full => {}
            Variant::NoCoLearn => a.no_colearn = true,
            Variant::NoAltUpdate => a.simultaneous_update = true,
            Variant::NoWma => a.no_wma = true,
            Variant::NoCoLoss => a.drop_co_loss = true,
            Variant::NoNegLoss => a.drop_neg_loss = true,
            Variant::NoAdaptWeight => a.unit_weights = true,
            Variant::WithSupportLoss => a.add_support_loss = true,
        }
        a
    }

    /// Short machine-friendly key, used for output directories.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCoLearn => "no_colearn",
            Variant::NoAltUpdate => "no_alt_update",
            Variant::NoWma => "no_wma",
            Variant::NoCoLoss => "no_co_loss",
            Variant::NoNegLoss => "no_neg_loss",
            Variant::NoAdaptWeight => "no_adapt_weight",
            Variant::WithSupportLoss => "with_support_loss",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "AWCoL",
            Variant::NoCoLearn => "- w/o Co-Learn.",
            Variant::NoAltUpdate => "- w/o Alt. Update",
            Variant::NoWma => "- w/o WMA",
            Variant::NoCoLoss => "- w/o L_co",
            Variant::NoNegLoss => "- w/o L_neg",
            Variant::NoAdaptWeight => "- w/o Adapt. Weight",
            Variant::WithSupportLoss => "- with L_S",
        }
    }

    pub fn from_key(key: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.key() == key)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub total_iterations: usize,
    /// Consecutive iterations per model before switching.
    pub beta: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub schedule: AnnealSchedule,
    pub ablation: Ablation,
    /// Seeds negative pseudo-label sampling.
    pub seed: u64,
    /// Keep a copy of both WMA matrices and the co-prediction after every iteration.
    pub record_states: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            total_iterations: 100,
            beta: 5,
            lambda: 1e-2,
            learning_rate: 1e-3,
            schedule: AnnealSchedule::default(),
            ablation: Ablation::default(),
            seed: 0,
            record_states: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta == 0 {
            return Err(Error::config("beta must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("fine-tuning learning rate must be positive"));
        }
        self.schedule.validate()?;
        let a = &self.ablation;
        if a.drop_co_loss && a.no_colearn {
            return Err(Error::config("drop_co_loss and no_colearn cannot be combined"));
        }
        if a.drop_co_loss && a.drop_neg_loss && !a.add_support_loss {
            return Err(Error::config("every loss term is disabled"));
        }
        Ok(())
    }

    fn switches(&self) -> LossSwitches {
        let a = &self.ablation;
        LossSwitches {
            lambda: self.lambda,
            use_co: !a.drop_co_loss,
            use_neg: !a.drop_neg_loss,
            use_support: a.add_support_loss,
        }
    }
}

/// One fine-tuning iteration, as recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Ids of the models stepped in this iteration.
    pub active: Vec<u8>,
    /// Total loss per stepped model, same order as `active`.
    pub total_loss: Vec<f64>,
    pub co_loss: Vec<f64>,
    pub neg_loss: Vec<f64>,
    /// WMA rate of each model after this iteration.
    pub alpha: [f64; 2],
    pub mean_weight: f64,
    pub clamped: usize,
    pub neg_floored: bool,
}

/// Snapshot of the co-learning state after one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshot {
    pub wma: [Matrix; 2],
    pub co_probs: Matrix,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneTrace {
    pub iterations: Vec<IterationRecord>,
    /// Rate used by each model's WMA update, one entry per update of that model.
    pub alpha_history: [Vec<f64>; 2],
    pub snapshots: Vec<StateSnapshot>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub models: [ProtoModel; 2],
    pub wma: [WmaState; 2],
    pub co_probs: Matrix,
    pub trace: FinetuneTrace,
}

impl FinetuneOutcome {
    /// Accuracy of the co-prediction and of each model's WMA predictions.
    pub fn accuracies(&self, episode: &Episode) -> Result<[f64; 3]> {
        Ok([
            evaluate(&self.co_probs, episode)?,
            evaluate(&self.wma[0].probs, episode)?,
            evaluate(&self.wma[1].probs, episode)?,
        ])
    }
}

/// Fine-tunes both models on one target task with alternating adaptive
/// weighted co-learning. Only the unlabeled [`Task`] view is visible here.
pub fn finetune(
    m1: &ProtoModel,
    m2: &ProtoModel,
    task: &Task,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if m1.model_id() == m2.model_id() {
        return Err(Error::config("co-learning needs models 1 and 2"));
    }
    let mut models = [m1.clone(), m2.clone()];
    if models[0].model_id() == 2 {
        models.swap(0, 1);
    }
    for m in &mut models {
        // each target task gets a fresh optimizer
        m.adam = AdamState::new(&m.encoder, cfg.learning_rate);
    }

    let (nq, n_way) = (task.n_query(), task.n_way());
    let a = cfg.ablation;
    let alpha0 = if a.no_wma { 1.0 } else { cfg.schedule.alpha0 };
    let mut wma = [WmaState::new(nq, n_way, alpha0), WmaState::new(nq, n_way, alpha0)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let switches = cfg.switches();
    let independent = a.no_colearn;
    let both_every_iteration = a.simultaneous_update || a.no_colearn;
    let mut trace = FinetuneTrace::default();

    for t in 0..cfg.total_iterations {
        let active: Vec<usize> = if both_every_iteration {
            vec![0, 1]
        } else {
            vec![(t / cfg.beta) % 2]
        };

        let mut forwards = Vec::with_capacity(active.len());
        for &m in &active {
            let fwd = TaskForward::run(&models[m].encoder, task)
                .map_err(|e| annotate(e, t, m))?;
            let fresh = fwd.query_probs();
            trace.alpha_history[m].push(wma[m].alpha);
            wma_update(&mut wma[m], &fresh)?;
            if !a.no_wma {
                wma[m].alpha = anneal_alpha(wma[m].alpha, &cfg.schedule);
            }
            if !both_every_iteration && t < cfg.beta {
                // the fixed model starts from the updated model's predictions
                wma[1 - m].seed_with(&fresh)?;
            }
            forwards.push(fwd);
        }

        let batches: Vec<PseudoBatch> = if independent {
            let mut out = Vec::with_capacity(2);
            for m in 0..2 {
                let co = co_predict(&wma[m], &wma[m])?;
                out.push(make_pseudo_batch(&co, &mut rng)?);
            }
            out
        } else {
            let co = co_predict(&wma[0], &wma[1])?;
            vec![make_pseudo_batch(&co, &mut rng)?]
        };
        let batches: Vec<PseudoBatch> = if a.unit_weights {
            batches.iter().map(PseudoBatch::with_unit_weights).collect()
        } else {
            batches
        };

        let mut record = IterationRecord {
            iteration: t,
            active: active.iter().map(|&m| models[m].model_id()).collect(),
            total_loss: Vec::new(),
            co_loss: Vec::new(),
            neg_loss: Vec::new(),
            alpha: [0.0; 2],
            mean_weight: 0.0,
            clamped: 0,
            neg_floored: false,
        };
        for (&m, fwd) in active.iter().zip(&forwards) {
            let batch = if independent { &batches[m] } else { &batches[0] };
            let terms = objective(fwd, &models[m].encoder, task, batch, switches)
                .map_err(|e| annotate(e, t, m))?;
            if !terms.total.is_finite() || !terms.grads.is_finite() {
                return Err(annotate(
                    Error::numeric(format!("total loss {} or its gradient is not finite", terms.total)),
                    t,
                    m,
                ));
            }
            record.total_loss.push(terms.total);
            record.co_loss.push(terms.co);
            record.neg_loss.push(terms.neg);
            record.clamped += terms.clamped;
            record.neg_floored |= terms.neg_floored;
            models[m].step(&terms.grads)?;
        }
        let first = &batches[0];
        record.mean_weight = first.weights.iter().sum::<f64>() / first.len() as f64;
        record.alpha = [wma[0].alpha, wma[1].alpha];
        trace.iterations.push(record);

        if cfg.record_states {
            let co = co_predict(&wma[0], &wma[1])?;
            trace.snapshots.push(StateSnapshot {
                wma: [wma[0].probs.clone(), wma[1].probs.clone()],
                co_probs: co,
                positive: first.positive.clone(),
                negative: first.negative.clone(),
                weights: first.weights.clone(),
            });
        }
    }

    for (m, state) in wma.iter_mut().enumerate() {
        if !state.initialized {
            let fwd = TaskForward::run(&models[m].encoder, task)?;
            state.seed_with(&fwd.query_probs())?;
        }
    }
    let co_probs = co_predict_probs(&wma[0].probs, &wma[1].probs)?;
    Ok(FinetuneOutcome {
        models,
        wma,
        co_probs,
        trace,
    })
}

fn annotate(e: Error, iteration: usize, model_index: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::numeric(format!(
            "fine-tuning iteration {iteration}, model {}: {msg}",
            model_index + 1
        )),
        other => other,
    }
}

/// Fraction of query instances whose predicted argmax equals the ground truth.
pub fn evaluate(probs: &Matrix, episode: &Episode) -> Result<f64> {
    if probs.rows() != episode.query_labels().len() || probs.cols() != episode.n_way() {
        return Err(Error::shape(format!(
            "predictions are {}x{}, episode has {} queries over {} classes",
            probs.rows(),
            probs.cols(),
            episode.query_labels().len(),
            episode.n_way()
        )));
    }
    Ok(accuracy(probs, episode.query_labels()))
}
