//! Full training loss as a plain function of the parameter values, for
//! finite-difference gradient checks.
//!
//! Tape gradients are compared against central differences of the
//! independent reference model evaluated in double-double, which keeps the
//! difference quotient clear of `f64` cancellation noise.

use serde::{Deserialize, Serialize};

use psvma_oracle::model::{self as reference, Architecture, Params, Sample, Settings};
use psvma_oracle::{finite_diff_grad_with, Coverage, Dd, GradCheckReport, NamedArray, H_RANGE};

use crate::backbone::{BackboneConfig, BackboneMode, Insertion};
use crate::data::{generate, GenConfig, GzslDataset, Split};
use crate::dsvtm::{DsvtmConfig, ResidualAnchor, SemanticChain};
use crate::error::{Error, Result};
use crate::head_loss::LossWeights;
use crate::model::{ClassContext, ModelConfig, Psvma};
use crate::numcore::{ParamStore, Tape, Tensor, DEFAULT_LN_EPS};

/// The reference model's description of `config` trained with `weights`.
pub fn reference_architecture(config: &ModelConfig, weights: &LossWeights) -> Architecture {
    let d = &config.dsvtm;
    Architecture {
        encoder: config.backbone.mode == BackboneMode::ToyEncoder,
        layers: config.backbone.num_layers,
        width: d.width,
        backbone_ln_eps: DEFAULT_LN_EPS,
        modules: d.modules,
        loops: if d.bypass_imse { 0 } else { d.loops },
        settings: Settings {
            ln_eps: d.ln_eps,
            scale: d.attn_scale.then(|| 1.0 / (d.width as f64).sqrt()),
            shared_anchor: d.residual_anchor == ResidualAnchor::Shared,
        },
        adapter: config.semantic_dim != d.width,
        progressive: d.semantic_chain == SemanticChain::Progressive,
        reentry: config.backbone.insertion == Insertion::ReEntry,
        tau: weights.tau,
        lambda_sem: weights.lambda_sem,
        lambda_deb: weights.lambda_deb,
    }
}

/// Parameter values keyed by name, as the reference model reads them.
pub fn reference_params(store: &ParamStore) -> Params {
    store
        .iter()
        .map(|p| (p.name.clone(), (p.value().shape().to_vec(), p.value().data().to_vec())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub model: ModelConfig,
    pub data: GenConfig,
    pub weights: LossWeights,
    /// Seen-train samples averaged into the loss.
    pub samples: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::small()
    }
}

impl ProbeConfig {
    /// `N_s=6, N_v=4, D=8, Z=2, R=2, C_s=3, C_u=2` on a two-layer toy encoder.
    pub fn small() -> Self {
        let model = ModelConfig {
            backbone: BackboneConfig {
                mode: BackboneMode::ToyEncoder,
                num_layers: 2,
                token_dim: 8,
                mlp_ratio: 2,
                ..BackboneConfig::default()
            },
            dsvtm: DsvtmConfig {
                num_attributes: 6,
                num_patches: 4,
                width: 8,
                num_groups: 2,
                loops: 2,
                modules: 2,
                mlp_ratio: 2,
                ..DsvtmConfig::default()
            },
            semantic_dim: 8,
            seed: 11,
        };
        let data = GenConfig {
            num_seen: 3,
            num_unseen: 2,
            num_attributes: 6,
            num_groups: 2,
            num_patches: 4,
            token_dim: 8,
            semantic_dim: 8,
            variants: 2,
            active_attributes: 2,
            samples_per_class: 2,
            seed: 5,
            ..GenConfig::default()
        };
        ProbeConfig {
            model,
            data,
            weights: LossWeights::awa2(),
            samples: 2,
        }
    }
}

pub struct LossProbe {
    model: Psvma,
    data: GzslDataset,
    ctx: ClassContext,
    weights: LossWeights,
    samples: Vec<usize>,
}

impl LossProbe {
    pub fn new(config: &ProbeConfig) -> Result<Self> {
        config.weights.validate()?;
        let model = Psvma::new(&config.model)?;
        let data = generate(&config.data)?;
        config.model.check_dataset(&data)?;
        let samples: Vec<usize> = data.indices(Split::SeenTrain).into_iter().take(config.samples).collect();
        if samples.is_empty() {
            return Err(Error::Config("gradient probe needs at least one seen-train sample".into()));
        }
        Ok(LossProbe {
            ctx: ClassContext::from_dataset(&data),
            model,
            data,
            weights: config.weights,
            samples,
        })
    }

    /// `(name, shape, values)` for every parameter, in store order.
    pub fn params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value().shape().to_vec(), p.value().data().to_vec()))
            .collect()
    }

    fn build(&self, tape: &mut Tape, frozen: bool) -> Result<(crate::numcore::Binding, crate::numcore::Var)> {
        let p = if frozen {
            self.model.params().bind_frozen(tape)
        } else {
            self.model.params().bind(tape)
        };
        let mut totals = Vec::with_capacity(self.samples.len());
        for &i in &self.samples {
            let l = self.model.sample_loss(
                tape,
                &p,
                &self.data.sample(i),
                self.data.labels[i],
                &self.ctx,
                &self.weights,
            )?;
            totals.push(l.total);
        }
        let loss = tape.mean_all(&totals)?;
        Ok((p, loss))
    }

    /// Mean training loss at the current parameters.
    pub fn loss(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let (_, loss) = self.build(&mut tape, true)?;
        Ok(tape.value(loss).item())
    }

    /// Loss with every parameter replaced by `values` (store order).
    pub fn loss_at(&mut self, values: &[Vec<f64>]) -> Result<f64> {
        for (p, v) in self.model.params_mut().iter_mut().zip(values) {
            let shape = p.value().shape().to_vec();
            p.set(Tensor::new(&shape, v.clone())?)?;
        }
        self.loss()
    }

    /// The probe's samples in reference-model form.
    pub fn reference_samples(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .map(|&i| Sample {
                tokens: self.data.sample(i).to_rows(),
                label: self.data.labels[i],
            })
            .collect()
    }

    /// Reference loss evaluated in `f64`; agrees with [`LossProbe::loss`] to
    /// rounding.
    pub fn reference_loss(&self) -> f64 {
        let arch = reference_architecture(self.model.config(), &self.weights);
        reference::mean_loss::<f64>(
            &reference_params(self.model.params()),
            &arch,
            &self.reference_samples(),
            &self.ctx.shared.to_rows(),
            &self.ctx.prototypes.to_rows(),
            &self.ctx.seen_mask,
        )
    }

    /// Compares tape gradients with central differences (step `h`) of the
    /// double-double reference loss, one scalar at a time.
    pub fn check(&self, h: f64, threshold: f64, coverage: Coverage) -> Result<GradCheckReport> {
        if !(H_RANGE.0..=H_RANGE.1).contains(&h) {
            return Err(Error::Config(format!(
                "finite-difference step {h} outside [{}, {}]",
                H_RANGE.0, H_RANGE.1
            )));
        }
        let analytic = self.gradients()?;
        let arch = reference_architecture(self.model.config(), &self.weights);
        let samples = self.reference_samples();
        let shared = self.ctx.shared.to_rows();
        let classes = self.ctx.prototypes.to_rows();
        let params: Vec<NamedArray> = self
            .params()
            .into_iter()
            .map(|(name, shape, values)| NamedArray { name, shape, values })
            .collect();
        let loss = |probe: &[NamedArray]| -> Dd {
            let p: Params = probe
                .iter()
                .map(|a| (a.name.clone(), (a.shape.clone(), a.values.clone())))
                .collect();
            reference::mean_loss::<Dd>(&p, &arch, &samples, &shared, &classes, &self.ctx.seen_mask)
        };
        Ok(finite_diff_grad_with(loss, &params, &analytic, h, threshold, coverage))
    }

    /// Tape gradients of the mean loss, in store order.
    pub fn gradients(&self) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (p, loss) = self.build(&mut tape, false)?;
        let grads = tape.backward(loss)?;
        Ok(p.collect(&grads, self.model.params())
            .into_iter()
            .map(Tensor::into_data)
            .collect())
    }
}
