//! Small trainable patch encoder with DSVTM tap points.

use serde::{Deserialize, Serialize};

use crate::dsvtm::{Dsvtm, DsvtmTrace, SemanticChain};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::numcore::{Binding, Initializer, ParamId, ParamStore, Tape, Var, DEFAULT_LN_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneMode {
    /// Linear patch embedding, positional term, pre-norm transformer blocks.
    ToyEncoder,
    /// Tokens are used as features directly at every layer.
    Identity,
}

/// How DSVTM outputs relate to the backbone stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Insertion {
    /// DSVTM `z` output replaces the stream entering the next backbone layer.
    ReEntry,
    /// DSVTMs read backbone layers but never write back into the stream.
    SideBranch,
}

/// Width and patch count come from the DSVTM configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub mode: BackboneMode,
    /// `L`
    pub num_layers: usize,
    /// Width of the raw patch tokens.
    pub token_dim: usize,
    pub mlp_ratio: usize,
    pub insertion: Insertion,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            mode: BackboneMode::ToyEncoder,
            num_layers: 4,
            token_dim: 32,
            mlp_ratio: 2,
            insertion: Insertion::ReEntry,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self, width: usize, modules: usize) -> Result<()> {
        if self.num_layers < modules {
            return Err(Error::Config(format!(
                "backbone has {} layers but {} DSVTMs need tap points",
                self.num_layers, modules
            )));
        }
        if self.mode == BackboneMode::Identity && self.token_dim != width {
            return Err(Error::Config(format!(
                "identity backbone needs token_dim ({}) == width ({width})",
                self.token_dim
            )));
        }
        if self.token_dim == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("token_dim and mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    mlp: Mlp,
    scale: f64,
}

impl Block {
    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let h = self.ln1.forward(tape, p, x)?;
        let q = self.q.forward(tape, p, h)?;
        let k = self.k.forward(tape, p, h)?;
        let v = self.v.forward(tape, p, h)?;
        let (_, a) = crate::dsvtm::attend(tape, q, k, v, Some(self.scale))?;
        let a = self.o.forward(tape, p, a)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, p, x)?;
        let h = self.mlp.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    num_patches: usize,
    embed: Option<Linear>,
    position: Option<ParamId>,
    blocks: Vec<Block>,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        config: &BackboneConfig,
        num_patches: usize,
        width: usize,
    ) -> Result<Self> {
        let mut backbone = Backbone {
            config: config.clone(),
            num_patches,
            embed: None,
            position: None,
            blocks: Vec::new(),
        };
        if config.mode == BackboneMode::Identity {
            return Ok(backbone);
        }
        backbone.embed = Some(Linear::new(store, init, "backbone.embed", config.token_dim, width, true)?);
        backbone.position =
            Some(store.add("backbone.position", init.uniform(&[num_patches, width], width))?);
        for l in 0..config.num_layers {
            let name = format!("backbone.{l}");
            let lin = |store: &mut ParamStore, init: &mut Initializer, n: &str| {
                Linear::new(store, init, &format!("{name}.attn.{n}"), width, width, true)
            };
            let block = Block {
                ln1: LayerNorm::new(store, &format!("{name}.ln1"), width, DEFAULT_LN_EPS)?,
                q: lin(store, init, "q")?,
                k: lin(store, init, "k")?,
                v: lin(store, init, "v")?,
                o: lin(store, init, "o")?,
                ln2: LayerNorm::new(store, &format!("{name}.ln2"), width, DEFAULT_LN_EPS)?,
                mlp: Mlp::new(store, init, &format!("{name}.mlp"), width, config.mlp_ratio * width)?,
                scale: 1.0 / (width as f64).sqrt(),
            };
            backbone.blocks.push(block);
        }
        Ok(backbone)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn check_tokens(&self, tape: &Tape, tokens: Var) -> Result<()> {
        let expect = [self.num_patches, self.config.token_dim];
        if tape.shape(tokens) != expect {
            return Err(Error::shape("backbone tokens", &expect, tape.shape(tokens)));
        }
        Ok(())
    }

    /// Patch embedding plus positional term; identity mode passes tokens through.
    pub fn embed(&self, tape: &mut Tape, p: &Binding, tokens: Var) -> Result<Var> {
        self.check_tokens(tape, tokens)?;
        match (&self.embed, self.position) {
            (Some(embed), Some(pos)) => {
                let x = embed.forward(tape, p, tokens)?;
                tape.add(x, p[pos])
            }
            _ => Ok(tokens),
        }
    }

    /// Backbone layer `l` (0-based).
    pub fn layer(&self, tape: &mut Tape, p: &Binding, l: usize, x: Var) -> Result<Var> {
        match self.blocks.get(l) {
            Some(block) => block.forward(tape, p, x),
            None => Ok(x),
        }
    }

    /// Per-layer features `F^1 … F^L`.
    pub fn encode(&self, tape: &mut Tape, p: &Binding, tokens: Var) -> Result<Vec<Var>> {
        let mut x = self.embed(tape, p, tokens)?;
        let mut out = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            x = self.layer(tape, p, l, x)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Runs the backbone with DSVTM `z` inserted after layer `L − Z + z`
    /// (1-based). Returns the final features for the head and one trace per
    /// module.
    pub fn forward_with_dsvtm(
        &self,
        tape: &mut Tape,
        p: &Binding,
        tokens: Var,
        stack: &[Dsvtm],
        prototypes: Var,
        shared: Var,
        chain: SemanticChain,
    ) -> Result<(Var, Vec<DsvtmTrace>)> {
        let layers = self.config.num_layers;
        let z_total = stack.len();
        if z_total == 0 || z_total > layers {
            return Err(Error::Config(format!(
                "{z_total} DSVTMs cannot be placed in {layers} layers"
            )));
        }
        let first_tap = layers - z_total;
        let mut x = self.embed(tape, p, tokens)?;
        let mut s_in = prototypes;
        let mut traces = Vec::with_capacity(z_total);
        let mut head_input = x;
        for l in 0..layers {
            x = self.layer(tape, p, l, x)?;
            if l < first_tap {
                continue;
            }
            let module = &stack[l - first_tap];
            let trace = module.forward(tape, p, x, s_in, shared)?;
            if chain == SemanticChain::Progressive {
                s_in = trace.adapted;
            }
            head_input = trace.features;
            if self.config.insertion == Insertion::ReEntry {
                x = trace.features;
            }
            traces.push(trace);
        }
        Ok((head_input, traces))
    }
}
