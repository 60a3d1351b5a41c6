use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix};

/// Pseudo-labels and confidence weights for every query instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoBatch {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub weights: Vec<f64>,
    pub co_probs: Matrix,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    /// Copy with every weight set to 1.
    pub fn with_unit_weights(&self) -> PseudoBatch {
        PseudoBatch {
            weights: vec![1.0; self.len()],
            ..self.clone()
        }
    }
}

/// Positive label = row argmax (lowest index on ties), weight = row max,
/// negative label drawn uniformly from the remaining classes.
pub fn make_pseudo_batch<R: Rng + ?Sized>(co_probs: &Matrix, rng: &mut R) -> Result<PseudoBatch> {
    let n = co_probs.cols();
    if n < 2 {
        return Err(Error::config(format!(
            "negative pseudo-labels need at least 2 classes, got {n}"
        )));
    }
    let mut positive = Vec::with_capacity(co_probs.rows());
    let mut negative = Vec::with_capacity(co_probs.rows());
    let mut weights = Vec::with_capacity(co_probs.rows());
    for row in co_probs.row_iter() {
        let pos = argmax(row);
        let r = rng.random_range(0..n - 1);
        positive.push(pos);
        negative.push(if r >= pos { r + 1 } else { r });
        weights.push(row[pos]);
    }
    Ok(PseudoBatch {
        positive,
        negative,
        weights,
        co_probs: co_probs.clone(),
    })
}
