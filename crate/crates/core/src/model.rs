//! The full network: backbone, DSVTM stack and classification head.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::data::GzslDataset;
use crate::dsvtm::{Dsvtm, DsvtmConfig, DsvtmState, DsvtmTrace};
use crate::error::{Error, Result};
use crate::head_loss::{self, ClassHead, LossWeights, ScoreVector};
use crate::nn::Linear;
use crate::numcore::{Binding, Initializer, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub dsvtm: DsvtmConfig,
    /// Width of the shared attribute vectors. A linear adapter maps them to
    /// the model width when the two differ.
    pub semantic_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            dsvtm: DsvtmConfig::default(),
            semantic_dim: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.dsvtm.validate()?;
        self.backbone.validate(self.dsvtm.width, self.dsvtm.modules)?;
        if self.semantic_dim == 0 {
            return Err(Error::Config("semantic_dim must be positive".into()));
        }
        Ok(())
    }

    /// Checks that a dataset fits this model.
    pub fn check_dataset(&self, data: &GzslDataset) -> Result<()> {
        let pairs = [
            ("num_attributes", self.dsvtm.num_attributes, data.config.num_attributes),
            ("num_patches", self.dsvtm.num_patches, data.config.num_patches),
            ("token_dim", self.backbone.token_dim, data.config.token_dim),
            ("semantic_dim", self.semantic_dim, data.config.semantic_dim),
        ];
        for (field, model, dataset) in pairs {
            if model != dataset {
                return Err(Error::Config(format!(
                    "model {field} = {model} but dataset has {dataset}"
                )));
            }
        }
        Ok(())
    }
}

/// Class prototypes and domain membership needed for scoring.
#[derive(Clone, Debug)]
pub struct ClassContext {
    /// `A`: `C × N_s`
    pub prototypes: Arc<Tensor>,
    pub seen_mask: Vec<bool>,
    /// `S`: `N_s × D_sem`
    pub shared: Tensor,
}

impl ClassContext {
    pub fn from_dataset(data: &GzslDataset) -> Self {
        ClassContext {
            prototypes: Arc::new(data.prototypes.classes.clone()),
            seen_mask: data.seen.clone(),
            shared: data.prototypes.shared.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.seen_mask.len()
    }
}

pub struct SampleForward {
    pub traces: Vec<DsvtmTrace>,
    /// Final patch features fed to the head.
    pub features: Var,
    /// Predicted attribute vector (`N_s`).
    pub pred: Var,
}

/// Loss nodes for one sample.
pub struct SampleLoss {
    pub total: Var,
    pub cls: Var,
    pub sem: Vec<Var>,
    pub deb: Var,
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct Psvma {
    config: ModelConfig,
    params: ParamStore,
    backbone: Backbone,
    adapter: Option<Linear>,
    stack: Vec<Dsvtm>,
    head: ClassHead,
}

impl Psvma {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(config.seed);
        let d = &config.dsvtm;
        let backbone = Backbone::new(&mut params, &mut init, &config.backbone, d.num_patches, d.width)?;
        let adapter = if config.semantic_dim != d.width {
            Some(Linear::new(
                &mut params,
                &mut init,
                "semantic.adapter",
                config.semantic_dim,
                d.width,
                false,
            )?)
        } else {
            None
        };
        let stack = (0..d.modules)
            .map(|z| Dsvtm::new(&mut params, &mut init, z, d))
            .collect::<Result<Vec<_>>>()?;
        let head = ClassHead::new(&mut params, &mut init, d.width, d.num_attributes)?;
        Ok(Psvma {
            config: config.clone(),
            params,
            backbone,
            adapter,
            stack,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Semantic alignment terms per sample.
    pub fn sem_terms(&self) -> usize {
        self.config.dsvtm.affinity_count()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, tokens: Var, shared: Var) -> Result<SampleForward> {
        let s = match &self.adapter {
            Some(a) => a.forward(tape, p, shared)?,
            None => shared,
        };
        let (features, traces) = self.backbone.forward_with_dsvtm(
            tape,
            p,
            tokens,
            &self.stack,
            s,
            s,
            self.config.dsvtm.semantic_chain,
        )?;
        let pred = self.head.forward(tape, p, features)?;
        Ok(SampleForward {
            traces,
            features,
            pred,
        })
    }

    /// Builds every loss term for one labelled sample.
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        p: &Binding,
        tokens: &Tensor,
        label: usize,
        ctx: &ClassContext,
        weights: &LossWeights,
    ) -> Result<SampleLoss> {
        let t = tape.constant(tokens.clone());
        let shared = tape.constant(ctx.shared.clone());
        let out = self.forward(tape, p, t, shared)?;
        let scores = head_loss::cosine_scores(tape, out.pred, &ctx.prototypes, weights.tau)?;
        let cls = head_loss::classification_loss(tape, scores, label, &ctx.seen_mask)?;
        let target = tape.constant(Tensor::vector(ctx.prototypes.row(label).to_vec()));
        let mut sem = Vec::with_capacity(self.sem_terms());
        for trace in &out.traces {
            for &m in &trace.affinities {
                sem.push(head_loss::semantic_alignment_loss(tape, m, target)?);
            }
        }
        let deb = head_loss::debias_loss(tape, scores, &ctx.seen_mask)?;
        let total = head_loss::total_loss(tape, cls, &sem, deb, weights, self.sem_terms())?;
        Ok(SampleLoss {
            total,
            cls,
            sem,
            deb,
            scores,
        })
    }

    /// Scores one sample against every class without recording gradients.
    pub fn score(&self, tokens: &Tensor, ctx: &ClassContext, tau: f64) -> Result<ScoreVector> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let t = tape.constant(tokens.clone());
        let shared = tape.constant(ctx.shared.clone());
        let out = self.forward(&mut tape, &p, t, shared)?;
        let scores = head_loss::cosine_scores(&mut tape, out.pred, &ctx.prototypes, tau)?;
        head_loss::score_vector(&tape, scores, &ctx.seen_mask)
    }

    /// Intermediate prototypes, affinities and features of every DSVTM.
    pub fn inspect(&self, tokens: &Tensor, ctx: &ClassContext) -> Result<Vec<DsvtmState>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let t = tape.constant(tokens.clone());
        let shared = tape.constant(ctx.shared.clone());
        let out = self.forward(&mut tape, &p, t, shared)?;
        Ok(out.traces.iter().map(|tr| tr.state(&tape)).collect())
    }
}
