//! Prototypical classifier and source-domain episodic pretraining.
//!
//! A class prototype is the mean support embedding of that class; an
//! instance is classified by a softmax over negative squared Euclidean
//! distances to the prototypes. Everything downstream (pretraining and
//! co-learning fine-tuning) differentiates through both the query
//! embeddings and the prototypes via [`TaskForward`].

use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, encoder_backward, encoder_forward, softmax_into, squared_distance, AdamState,
    EncoderParams, ForwardCache, Gradients, Matrix,
};

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// The unlabeled-query view of an N-way K-shot task: what fine-tuning sees.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    n_way: usize,
    k_shot: usize,
    support_x: Matrix,
    support_labels: Vec<usize>,
    query_x: Matrix,
}

impl Task {
    pub fn new(
        n_way: usize,
        k_shot: usize,
        support_x: Matrix,
        support_labels: Vec<usize>,
        query_x: Matrix,
    ) -> Result<Self> {
        if n_way == 0 || k_shot == 0 {
            return Err(Error::Episode("n_way and k_shot must be positive".into()));
        }
        if support_x.rows() != support_labels.len() {
            return Err(Error::Episode(format!(
                "{} support rows but {} support labels",
                support_x.rows(),
                support_labels.len()
            )));
        }
        if support_labels.len() != n_way * k_shot {
            return Err(Error::Episode(format!(
                "support has {} instances, expected {n_way}x{k_shot}",
                support_labels.len()
            )));
        }
        let mut counts = vec![0usize; n_way];
        for &y in &support_labels {
            if y >= n_way {
                return Err(Error::Episode(format!("support label {y} >= n_way {n_way}")));
            }
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&c| c != k_shot) {
            return Err(Error::Episode(format!(
                "class {c} has {} support instances, expected {k_shot}",
                counts[c]
            )));
        }
        if query_x.rows() == 0 {
            return Err(Error::Episode("query set is empty".into()));
        }
        if query_x.cols() != support_x.cols() {
            return Err(Error::Episode(format!(
                "query features have {} dims, support has {}",
                query_x.cols(),
                support_x.cols()
            )));
        }
        Ok(Task {
            n_way,
            k_shot,
            support_x,
            support_labels,
            query_x,
        })
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn k_shot(&self) -> usize {
        self.k_shot
    }

    pub fn feature_dim(&self) -> usize {
        self.support_x.cols()
    }

    pub fn support_x(&self) -> &Matrix {
        &self.support_x
    }

    pub fn support_labels(&self) -> &[usize] {
        &self.support_labels
    }

    pub fn query_x(&self) -> &Matrix {
        &self.query_x
    }

    pub fn n_support(&self) -> usize {
        self.support_x.rows()
    }

    pub fn n_query(&self) -> usize {
        self.query_x.rows()
    }
}

/// A task together with its query ground truth, which only evaluation reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    task: Task,
    query_labels: Vec<usize>,
}

impl Episode {
    pub fn new(task: Task, query_labels: Vec<usize>) -> Result<Self> {
        if query_labels.len() != task.n_query() {
            return Err(Error::Episode(format!(
                "{} query rows but {} query labels",
                task.n_query(),
                query_labels.len()
            )));
        }
        if let Some(&y) = query_labels.iter().find(|&&y| y >= task.n_way) {
            return Err(Error::Episode(format!("query label {y} >= n_way {}", task.n_way)));
        }
        Ok(Episode { task, query_labels })
    }

    /// The label-free view handed to fine-tuning.
    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn query_labels(&self) -> &[usize] {
        &self.query_labels
    }

    pub fn n_way(&self) -> usize {
        self.task.n_way
    }

    pub fn k_shot(&self) -> usize {
        self.task.k_shot
    }
}

/// Class prototypes, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub vectors: Matrix,
}

/// One of the two co-learned prototypical models.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtoModel {
    model_id: u8,
    pub encoder: EncoderParams,
    pub adam: AdamState,
}

impl ProtoModel {
    pub fn new(model_id: u8, encoder: EncoderParams, learning_rate: f64) -> Result<Self> {
        let adam = AdamState::new(&encoder, learning_rate);
        ProtoModel::from_parts(model_id, encoder, adam)
    }

    pub fn from_parts(model_id: u8, encoder: EncoderParams, adam: AdamState) -> Result<Self> {
        if !(1..=2).contains(&model_id) {
            return Err(Error::config(format!("model id must be 1 or 2, got {model_id}")));
        }
        adam.validate()?;
        adam.first_moment.check_congruent(&encoder)?;
        Ok(ProtoModel {
            model_id,
            encoder,
            adam,
        })
    }

    pub fn model_id(&self) -> u8 {
        self.model_id
    }

    pub fn step(&mut self, grads: &Gradients) -> Result<()> {
        adam_step(&mut self.encoder, grads, &mut self.adam)
    }
}

fn class_means(embeddings: &Matrix, labels: &[usize], n_way: usize, k_shot: usize) -> Result<Matrix> {
    // Running mean: exact when a class's embeddings coincide, so a collapsed
    // encoder sits at an exact zero of the loss gradient instead of drifting
    // on rounding noise that Adam would amplify.
    let mut means = Matrix::zeros(n_way, embeddings.cols());
    let mut counts = vec![0usize; n_way];
    for (row, &y) in embeddings.row_iter().zip(labels) {
        counts[y] += 1;
        let n = counts[y] as f64;
        for (m, v) in means.row_mut(y).iter_mut().zip(row) {
            *m += (v - *m) / n;
        }
    }
    if let Some(c) = counts.iter().position(|&c| c != k_shot) {
        return Err(Error::Episode(format!(
            "class {c} has {} support instances, expected {k_shot}",
            counts[c]
        )));
    }
    Ok(means)
}

/// Mean support embedding per class.
pub fn compute_prototypes(encoder: &EncoderParams, task: &Task) -> Result<Prototypes> {
    let (emb, _) = encoder_forward(encoder, &task.support_x)?;
    Ok(Prototypes {
        vectors: class_means(&emb, &task.support_labels, task.n_way, task.k_shot)?,
    })
}

/// `−‖e_b − c_j‖²` for every embedding row and prototype.
pub fn negative_sq_distances(embeddings: &Matrix, prototypes: &Matrix) -> Result<Matrix> {
    if embeddings.cols() != prototypes.cols() {
        return Err(Error::shape(format!(
            "embedding dim {} != prototype dim {}",
            embeddings.cols(),
            prototypes.cols()
        )));
    }
    let mut out = Matrix::zeros(embeddings.rows(), prototypes.rows());
    for (b, e) in embeddings.row_iter().enumerate() {
        for (j, c) in prototypes.row_iter().enumerate() {
            out[(b, j)] = -squared_distance(e, c);
        }
    }
    Ok(out)
}

fn softmax_in_place(logits: &mut Matrix) {
    let mut buf = vec![0.0; logits.cols()];
    for b in 0..logits.rows() {
        softmax_into(logits.row(b), &mut buf);
        logits.row_mut(b).copy_from_slice(&buf);
    }
}

/// Class probabilities for a batch of raw feature rows.
pub fn predict_probs(
    encoder: &EncoderParams,
    prototypes: &Prototypes,
    features: &Matrix,
) -> Result<Matrix> {
    let (emb, _) = encoder_forward(encoder, features)?;
    let mut logits = negative_sq_distances(&emb, &prototypes.vectors)?;
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Cross-entropy over a labeled batch, reported both summed and averaged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeLoss {
    pub sum: f64,
    pub mean: f64,
    /// Rows whose true-class probability fell below [`LOG_CLAMP`].
    pub clamped: usize,
}

pub fn ce_loss(probs: &Matrix, labels: &[usize]) -> Result<CeLoss> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(Error::shape("cross-entropy of an empty batch"));
    }
    let mut sum = 0.0;
    let mut clamped = 0;
    for (row, &y) in probs.row_iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::shape(format!("label {y} out of range for {} classes", row.len())));
        }
        let p = row[y];
        if p < LOG_CLAMP {
            clamped += 1;
        }
        sum -= p.max(LOG_CLAMP).ln();
    }
    Ok(CeLoss {
        sum,
        mean: sum / labels.len() as f64,
        clamped,
    })
}

/// Weighted cross-entropy `(1/Σw)·Σ w_b·(−ln p_b[t_b])` and its gradient
/// with respect to the logits that produced `probs`.
#[derive(Clone, Debug)]
pub struct WeightedCe {
    pub value: f64,
    pub d_logits: Matrix,
    pub clamped: usize,
}

pub fn weighted_ce(probs: &Matrix, targets: &[usize], weights: &[f64]) -> Result<WeightedCe> {
    if probs.rows() != targets.len() || targets.len() != weights.len() {
        return Err(Error::shape(format!(
            "weighted CE over {} rows with {} targets and {} weights",
            probs.rows(),
            targets.len(),
            weights.len()
        )));
    }
    let total_w: f64 = weights.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::numeric(format!("weights sum to {total_w}")));
    }
    let mut value = 0.0;
    let mut clamped = 0;
    let mut d_logits = Matrix::zeros(probs.rows(), probs.cols());
    for (b, ((row, &t), &w)) in probs.row_iter().zip(targets).zip(weights).enumerate() {
        let p = row[t];
        value += w * -p.max(LOG_CLAMP).ln();
        if p < LOG_CLAMP {
            // flat region of the clamped log: no gradient
            clamped += 1;
            continue;
        }
        let scale = w / total_w;
        for (j, (d, &pj)) in d_logits.row_mut(b).iter_mut().zip(row).enumerate() {
            *d = scale * (pj - if j == t { 1.0 } else { 0.0 });
        }
    }
    Ok(WeightedCe {
        value: value / total_w,
        d_logits,
        clamped,
    })
}

/// Differentiable forward pass of one task: support and query rows are
/// embedded in a single batch, prototypes come from the support rows, and
/// every row (support first, then query) is scored against them.
#[derive(Clone, Debug)]
pub struct TaskForward {
    embeddings: Matrix,
    cache: ForwardCache,
    prototypes: Prototypes,
    probs: Matrix,
    support_labels: Vec<usize>,
    k_shot: usize,
}

impl TaskForward {
    pub fn run(encoder: &EncoderParams, task: &Task) -> Result<Self> {
        let inputs = task.support_x.vstack(&task.query_x)?;
        let (embeddings, cache) = encoder_forward(encoder, &inputs)?;
        let support_emb = embeddings.slice_rows(0, task.n_support());
        let vectors = class_means(&support_emb, &task.support_labels, task.n_way, task.k_shot)?;
        let mut probs = negative_sq_distances(&embeddings, &vectors)?;
        softmax_in_place(&mut probs);
        if !probs.is_finite() {
            return Err(Error::numeric("non-finite class probabilities"));
        }
        Ok(TaskForward {
            embeddings,
            cache,
            prototypes: Prototypes { vectors },
            probs,
            support_labels: task.support_labels.clone(),
            k_shot: task.k_shot,
        })
    }

    fn n_support(&self) -> usize {
        self.support_labels.len()
    }

    pub fn prototypes(&self) -> &Prototypes {
        &self.prototypes
    }

    pub fn query_probs(&self) -> Matrix {
        self.probs.slice_rows(self.n_support(), self.probs.rows())
    }

    pub fn support_probs(&self) -> Matrix {
        self.probs.slice_rows(0, self.n_support())
    }

    /// Parameter gradient given loss gradients with respect to the support
    /// and/or query logits (`logit = −squared distance`).
    pub fn backward(
        &self,
        encoder: &EncoderParams,
        d_support_logits: Option<&Matrix>,
        d_query_logits: Option<&Matrix>,
    ) -> Result<Gradients> {
        let ns = self.n_support();
        let n_way = self.prototypes.vectors.rows();
        let mut d_logits = Matrix::zeros(self.probs.rows(), n_way);
        for (offset, part) in [(0, d_support_logits), (ns, d_query_logits)] {
            if let Some(g) = part {
                let expected = if offset == 0 { ns } else { self.probs.rows() - ns };
                if g.shape() != (expected, n_way) {
                    return Err(Error::shape(format!(
                        "logit gradient is {}x{}, expected {expected}x{n_way}",
                        g.rows(),
                        g.cols()
                    )));
                }
                for r in 0..g.rows() {
                    d_logits.row_mut(offset + r).copy_from_slice(g.row(r));
                }
            }
        }

        let protos = &self.prototypes.vectors;
        let dim = protos.cols();
        let mut d_emb = Matrix::zeros(self.embeddings.rows(), dim);
        let mut d_proto = Matrix::zeros(n_way, dim);
        for b in 0..self.embeddings.rows() {
            let e = self.embeddings.row(b);
            for j in 0..n_way {
                let g = d_logits[(b, j)];
                if g == 0.0 {
                    continue;
                }
                let c = protos.row(j);
                for k in 0..dim {
                    // ∂(−‖e−c‖²)/∂e = −2(e−c), ∂/∂c = 2(e−c)
                    let diff = 2.0 * g * (e[k] - c[k]);
                    d_emb[(b, k)] -= diff;
                    d_proto[(j, k)] += diff;
                }
            }
        }
        let inv_k = 1.0 / self.k_shot as f64;
        for (s, &y) in self.support_labels.iter().enumerate() {
            for k in 0..dim {
                d_emb[(s, k)] += d_proto[(y, k)] * inv_k;
            }
        }
        encoder_backward(encoder, &self.cache, &d_emb)
    }
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    let hits = probs
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| crate::numerics::argmax(row) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Per-iteration record of source pretraining.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainTrace {
    /// Mean over the iteration's tasks of the per-task mean query CE.
    pub mean_loss: Vec<f64>,
    /// Same, with the per-task summed CE.
    pub sum_loss: Vec<f64>,
    /// Mean query accuracy of the iteration's tasks, measured before each step.
    pub accuracy: Vec<f64>,
    pub clamped: usize,
}

/// Episodic pretraining: one Adam step on the mean query cross-entropy per task.
pub fn pretrain_source<F>(
    model: &mut ProtoModel,
    mut next_episode: F,
    iterations: usize,
    tasks_per_iteration: usize,
) -> Result<PretrainTrace>
where
    F: FnMut() -> Result<Episode>,
{
    let mut trace = PretrainTrace::default();
    for it in 0..iterations {
        let (mut mean_acc, mut sum_acc, mut acc_acc) = (0.0, 0.0, 0.0);
        for task_idx in 0..tasks_per_iteration {
            let episode = next_episode()?;
            let fwd = TaskForward::run(&model.encoder, episode.task())?;
            let q = fwd.query_probs();
            let labels = episode.query_labels();
            let ones = vec![1.0; labels.len()];
            let loss = weighted_ce(&q, labels, &ones)?;
            if !loss.value.is_finite() {
                return Err(Error::numeric(format!(
                    "model {} pretraining loss is {} at iteration {it}, task {task_idx}",
                    model.model_id, loss.value
                )));
            }
            trace.clamped += loss.clamped;
            mean_acc += loss.value;
            sum_acc += loss.value * labels.len() as f64;
            acc_acc += accuracy(&q, labels);
            let grads = fwd.backward(&model.encoder, None, Some(&loss.d_logits))?;
            model.step(&grads)?;
        }
        let n = tasks_per_iteration.max(1) as f64;
        trace.mean_loss.push(mean_acc / n);
        trace.sum_loss.push(sum_acc / n);
        trace.accuracy.push(acc_acc / n);
    }
    Ok(trace)
}
