//! Classification head, cosine scoring and the three training losses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{kernels, Binding, Initializer, ParamId, ParamStore, PoolAxis, Tape, Tensor, Var};

pub const DEFAULT_TAU: f64 = 20.0;
pub const DEFAULT_LAMBDA_SEM: f64 = 0.5;

/// Loss weights and the cosine scaling factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sem: f64,
    pub lambda_deb: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sem: DEFAULT_LAMBDA_SEM,
            lambda_deb: 0.001,
            tau: DEFAULT_TAU,
        }
    }
}

impl LossWeights {
    /// Fine-grained preset (`λ_deb = 0.001`).
    pub fn cub() -> Self {
        LossWeights::default()
    }

    /// Coarse-grained preset (`λ_deb = 0.1`).
    pub fn awa2() -> Self {
        LossWeights {
            lambda_deb: 0.1,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda_sem, self.lambda_deb, self.tau]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lambda_sem < 0.0 || self.lambda_deb < 0.0 || self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be finite, non-negative, with tau > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-class scores for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub seen_mask: Vec<bool>,
    /// Entries that fell back to 0 because of a zero-norm vector.
    pub degenerate: Vec<bool>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, seen_mask: Vec<bool>) -> Result<Self> {
        if scores.len() != seen_mask.len() {
            return Err(Error::shape("score vector", &[scores.len()], &[seen_mask.len()]));
        }
        let degenerate = vec![false; scores.len()];
        Ok(ScoreVector {
            scores,
            seen_mask,
            degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Mean and population variance of the seen-class scores.
    pub fn seen_moments(&self) -> Result<(f64, f64)> {
        kernels::masked_moments(&self.scores, &self.seen_mask, true)
    }

    pub fn unseen_moments(&self) -> Result<(f64, f64)> {
        kernels::masked_moments(&self.scores, &self.seen_mask, false)
    }
}

/// Projects pooled visual features into attribute space.
#[derive(Clone, Debug)]
pub struct ClassHead {
    /// `D × N_s`, no bias.
    pub weight: ParamId,
}

impl ClassHead {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        width: usize,
        num_attributes: usize,
    ) -> Result<Self> {
        Ok(ClassHead {
            weight: store.add("head.weight", init.uniform(&[width, num_attributes], width))?,
        })
    }

    /// Max-pools `f_hat` over patches, then multiplies by `W`. Returns an
    /// `N_s`-vector.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, f_hat: Var) -> Result<Var> {
        let pooled = tape.gmp(f_hat, PoolAxis::Rows)?;
        let d = tape.shape(pooled)[0];
        let pooled = tape.reshape(pooled, &[1, d])?;
        let out = tape.matmul(pooled, p[self.weight])?;
        let n = tape.shape(out)[1];
        tape.reshape(out, &[n])
    }
}

/// `tau · cos(pred, a_c)` for every class prototype `a_c`.
pub fn cosine_scores(tape: &mut Tape, pred: Var, prototypes: &Arc<Tensor>, tau: f64) -> Result<Var> {
    tape.cosine_scores(pred, Arc::clone(prototypes), tau)
}

/// Detached score vector from a score node.
pub fn score_vector(tape: &Tape, scores: Var, seen_mask: &[bool]) -> Result<ScoreVector> {
    let mut sv = ScoreVector::new(tape.value(scores).data().to_vec(), seen_mask.to_vec())?;
    if let Some(d) = tape.cosine_degenerate(scores) {
        sv.degenerate = d.to_vec();
    }
    Ok(sv)
}

/// Cross-entropy over seen classes only.
pub fn classification_loss(tape: &mut Tape, scores: Var, label: usize, seen_mask: &[bool]) -> Result<Var> {
    if label >= seen_mask.len() || !seen_mask[label] {
        return Err(Error::Contract(format!(
            "classification loss needs a seen label, got class {label}"
        )));
    }
    tape.masked_nll(scores, label, seen_mask)
}

/// `‖gmp(M) − a_y‖²` with pooling over patches.
pub fn semantic_alignment_loss(tape: &mut Tape, affinity: Var, target: Var) -> Result<Var> {
    let pooled = tape.gmp(affinity, PoolAxis::Cols)?;
    let diff = tape.sub(pooled, target)?;
    Ok(tape.sum_squares(diff))
}

/// `(α_s − α_u)² + (β_s − β_u)²` over one sample's seen and unseen scores.
pub fn debias_loss(tape: &mut Tape, scores: Var, seen_mask: &[bool]) -> Result<Var> {
    let seen = seen_mask.iter().filter(|&&m| m).count();
    if seen == 0 || seen == seen_mask.len() {
        return Err(Error::Contract(
            "debias loss needs at least one seen and one unseen class".into(),
        ));
    }
    tape.moment_gap(scores, seen_mask)
}

/// `cls + λ_sem · Σ sem + λ_deb · deb`.
pub fn total_loss(
    tape: &mut Tape,
    cls: Var,
    sem_terms: &[Var],
    deb: Var,
    weights: &LossWeights,
    expected_terms: usize,
) -> Result<Var> {
    if sem_terms.len() != expected_terms {
        return Err(Error::Contract(format!(
            "expected {expected_terms} semantic alignment terms, got {}",
            sem_terms.len()
        )));
    }
    let mut total = cls;
    if !sem_terms.is_empty() {
        let sem = tape.add_all(sem_terms)?;
        let sem = tape.scale(sem, weights.lambda_sem);
        total = tape.add(total, sem)?;
    }
    let deb = tape.scale(deb, weights.lambda_deb);
    tape.add(total, deb)
}
