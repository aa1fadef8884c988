//! Dual semantic-visual transformer module.
//!
//! Each module runs an instance-motivated semantic encoder (IMSE) `loops`
//! times to adapt the shared attribute prototypes to one instance, then a
//! semantic-motivated instance decoder (SMID) that pulls the adapted
//! prototypes back into the patch features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::numcore::{
    Binding, Initializer, ParamId, ParamStore, PoolAxis, Tape, Tensor, Var, DEFAULT_LN_EPS,
};

/// What the `+ S` residual of the encoder attention refers to in loop `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualAnchor {
    /// The loop's own input (the previous loop's output).
    LoopInput,
    /// The shared prototypes `S` at every loop.
    Shared,
}

/// Which prototypes module `z > 0` starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticChain {
    /// Module `z` consumes the adapted prototypes of module `z - 1`.
    Progressive,
    /// Every module restarts from the shared prototypes.
    Restart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsvtmConfig {
    /// `N_s`
    pub num_attributes: usize,
    /// `N_v`
    pub num_patches: usize,
    /// `D`
    pub width: usize,
    /// `N_g`; the group gate bottleneck is `⌊N_s / N_g⌋` wide.
    pub num_groups: usize,
    /// `R`
    pub loops: usize,
    /// `Z`
    pub modules: usize,
    /// `N_h`; defaults to `2·N_v` when unset.
    pub expand_width: Option<usize>,
    pub mlp_ratio: usize,
    /// Scale attention logits by `1/√D`.
    pub attn_scale: bool,
    pub residual_anchor: ResidualAnchor,
    pub semantic_chain: SemanticChain,
    /// Skip the encoder entirely: the decoder sees the unadapted prototypes.
    pub bypass_imse: bool,
    pub ln_eps: f64,
}

impl Default for DsvtmConfig {
    fn default() -> Self {
        DsvtmConfig {
            num_attributes: 12,
            num_patches: 8,
            width: 32,
            num_groups: 3,
            loops: 2,
            modules: 2,
            expand_width: None,
            mlp_ratio: 4,
            attn_scale: false,
            residual_anchor: ResidualAnchor::LoopInput,
            semantic_chain: SemanticChain::Progressive,
            bypass_imse: false,
            ln_eps: DEFAULT_LN_EPS,
        }
    }
}

impl DsvtmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_attributes == 0 || self.num_patches == 0 || self.width == 0 {
            return fail("num_attributes, num_patches and width must be positive".into());
        }
        if self.num_groups == 0 || self.group_width() == 0 {
            return fail(format!(
                "num_groups = {} leaves no room in {} attributes",
                self.num_groups, self.num_attributes
            ));
        }
        if self.expand_width() <= self.num_patches {
            return fail(format!(
                "expand_width ({}) must exceed num_patches ({})",
                self.expand_width(),
                self.num_patches
            ));
        }
        if self.loops == 0 || self.modules == 0 {
            return fail("loops and modules must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be at least 1".into());
        }
        if !(self.ln_eps > 0.0) {
            return fail(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    pub fn group_width(&self) -> usize {
        if self.num_groups == 0 {
            0
        } else {
            self.num_attributes / self.num_groups
        }
    }

    pub fn expand_width(&self) -> usize {
        self.expand_width.unwrap_or(2 * self.num_patches)
    }

    fn scale(&self) -> Option<f64> {
        self.attn_scale.then(|| 1.0 / (self.width as f64).sqrt())
    }

    /// Number of affinity matrices (and semantic alignment terms) one full
    /// stack produces.
    pub fn affinity_count(&self) -> usize {
        if self.bypass_imse {
            0
        } else {
            self.modules * self.loops
        }
    }
}

/// Scores `query · keyᵀ` (optionally scaled) and attends over `value`.
/// Returns the raw score matrix and `softmax_rows(scores) · value`.
pub fn attend(
    tape: &mut Tape,
    query: Var,
    key: Var,
    value: Var,
    scale: Option<f64>,
) -> Result<(Var, Var)> {
    let kt = tape.transpose(key)?;
    let mut m = tape.matmul(query, kt)?;
    if let Some(s) = scale {
        m = tape.scale(m, s);
    }
    let a = tape.softmax_rows(m)?;
    let out = tape.matmul(a, value)?;
    Ok((m, out))
}

/// Single-head cross-attention with pre-normalized query and context.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub ln_query: LayerNorm,
    pub ln_context: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub scale: Option<f64>,
}

impl CrossAttention {
    fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        ln_names: (&str, &str),
        cfg: &DsvtmConfig,
    ) -> Result<Self> {
        let d = cfg.width;
        Ok(CrossAttention {
            ln_query: LayerNorm::new(store, &format!("{name}.{}", ln_names.0), d, cfg.ln_eps)?,
            ln_context: LayerNorm::new(store, &format!("{name}.{}", ln_names.1), d, cfg.ln_eps)?,
            q: Linear::new(store, init, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, init, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, init, &format!("{name}.v"), d, d, true)?,
            scale: cfg.scale(),
        })
    }

    /// Returns the affinity matrix and `softmax(affinity) · v(LN(context)) + residual`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        query: Var,
        context: Var,
        residual: Var,
    ) -> Result<(Var, Var)> {
        let qn = self.ln_query.forward(tape, p, query)?;
        let cn = self.ln_context.forward(tape, p, context)?;
        let q = self.q.forward(tape, p, qn)?;
        let k = self.k.forward(tape, p, cn)?;
        let v = self.v.forward(tape, p, cn)?;
        let (m, attended) = attend(tape, q, k, v, self.scale)?;
        let out = tape.add(attended, residual)?;
        Ok((m, out))
    }
}

/// Group compact attention: a per-attribute gate computed from each
/// attribute's strongest feature.
#[derive(Clone, Debug)]
pub struct GroupGate {
    pub wp1: ParamId,
    pub wp2: ParamId,
}

impl GroupGate {
    /// Returns `(gate, s_bar)` with `s_bar[i] = (1 + gate[i]) · s_attr[i]`.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, s_attr: Var) -> Result<(Var, Var)> {
        let n = tape.shape(s_attr)[0];
        let pooled = tape.gmp(s_attr, PoolAxis::Cols)?;
        let pooled = tape.reshape(pooled, &[1, n])?;
        let h = tape.matmul(pooled, p[self.wp1])?;
        let h = tape.gelu(h);
        let g = tape.matmul(h, p[self.wp2])?;
        let g = tape.sigmoid(g);
        let gate = tape.reshape(g, &[n])?;
        let gated = tape.scale_rows(s_attr, gate)?;
        let s_bar = tape.add(gated, s_attr)?;
        Ok((gate, s_bar))
    }
}

/// One encoder pass: attention, group gate, activation.
#[derive(Clone, Debug)]
pub struct ImseLoop {
    pub attention: CrossAttention,
    pub gate: GroupGate,
    pub mlp: Mlp,
}

impl ImseLoop {
    /// Instance-aware semantic attention. Returns `(M, S_attr)`.
    pub fn imse_attention(
        &self,
        tape: &mut Tape,
        p: &Binding,
        s_in: Var,
        f: Var,
        residual_base: Var,
    ) -> Result<(Var, Var)> {
        self.attention.forward(tape, p, s_in, f, residual_base)
    }

    pub fn attribute_group_gate(&self, tape: &mut Tape, p: &Binding, s_attr: Var) -> Result<Var> {
        Ok(self.gate.forward(tape, p, s_attr)?.1)
    }

    /// `MLP(s_bar) + s_bar + s_attr`.
    pub fn attribute_activate(
        &self,
        tape: &mut Tape,
        p: &Binding,
        s_bar: Var,
        s_attr: Var,
    ) -> Result<Var> {
        let h = self.mlp.forward(tape, p, s_bar)?;
        let h = tape.add(h, s_bar)?;
        tape.add(h, s_attr)
    }
}

/// Inverted residual with a linear bottleneck, mixing along the patch axis.
#[derive(Clone, Debug)]
pub struct PatchMixing {
    /// `N_v × N_h`
    pub expand: ParamId,
    /// `N_h × N_h`
    pub select: ParamId,
    /// `N_h × N_v`
    pub narrow: ParamId,
}

impl PatchMixing {
    pub fn forward(&self, tape: &mut Tape, p: &Binding, f_tilde: Var) -> Result<Var> {
        let ft = tape.transpose(f_tilde)?;
        let fe = tape.matmul(ft, p[self.expand])?;
        let fe = tape.gelu(fe);
        let fs = tape.matmul(fe, p[self.select])?;
        let fs = tape.gelu(fs);
        let fnarrow = tape.matmul(fs, p[self.narrow])?;
        let back = tape.transpose(fnarrow)?;
        tape.add(back, f_tilde)
    }
}

#[derive(Clone, Debug)]
pub struct Smid {
    pub attention: CrossAttention,
    pub mixing: PatchMixing,
    pub mlp: Mlp,
}

impl Smid {
    /// Semantic-related instance attention: `softmax(M̄) · v(LN(ŝ)) + f`.
    pub fn smid_attention(&self, tape: &mut Tape, p: &Binding, f: Var, s_hat: Var) -> Result<Var> {
        Ok(self.attention.forward(tape, p, f, s_hat, f)?.1)
    }

    pub fn patch_mixing(&self, tape: &mut Tape, p: &Binding, f_tilde: Var) -> Result<Var> {
        self.mixing.forward(tape, p, f_tilde)
    }

    /// `MLP(f_bar) + f_bar`.
    pub fn patch_activate(&self, tape: &mut Tape, p: &Binding, f_bar: Var) -> Result<Var> {
        let h = self.mlp.forward(tape, p, f_bar)?;
        tape.add(h, f_bar)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, f: Var, s_hat: Var) -> Result<Var> {
        let f_tilde = self.smid_attention(tape, p, f, s_hat)?;
        let f_bar = self.patch_mixing(tape, p, f_tilde)?;
        self.patch_activate(tape, p, f_bar)
    }
}

/// Tape handles produced by one module's forward pass.
#[derive(Clone, Debug)]
pub struct DsvtmTrace {
    /// `Ŝ^{l,r}` for every loop.
    pub prototypes: Vec<Var>,
    /// `M^{l,r}` for every loop.
    pub affinities: Vec<Var>,
    /// Prototypes handed to the decoder (`Ŝ^{l,R}`, or the input when the
    /// encoder is bypassed).
    pub adapted: Var,
    /// `F̂^l`
    pub features: Var,
}

impl DsvtmTrace {
    pub fn state(&self, tape: &Tape) -> DsvtmState {
        DsvtmState {
            prototypes: self.prototypes.iter().map(|&v| tape.value(v).clone()).collect(),
            affinities: self.affinities.iter().map(|&v| tape.value(v).clone()).collect(),
            features: tape.value(self.features).clone(),
        }
    }
}

/// Detached values of one module's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DsvtmState {
    pub prototypes: Vec<Tensor>,
    pub affinities: Vec<Tensor>,
    pub features: Tensor,
}

/// One encoder–decoder unit.
#[derive(Clone, Debug)]
pub struct Dsvtm {
    pub index: usize,
    pub loops: Vec<ImseLoop>,
    pub smid: Smid,
    anchor: ResidualAnchor,
    bypass_imse: bool,
}

impl Dsvtm {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        index: usize,
        cfg: &DsvtmConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let base = format!("dsvtm.{index}");
        let (d, ns, nv) = (cfg.width, cfg.num_attributes, cfg.num_patches);
        let hidden = cfg.mlp_ratio * d;
        let mut loops = Vec::new();
        if !cfg.bypass_imse {
            for r in 0..cfg.loops {
                let name = format!("{base}.imse.{r}");
                let attention = CrossAttention::new(store, init, &name, ("ln_s", "ln_f"), cfg)?;
                let g = cfg.group_width();
                let gate = GroupGate {
                    wp1: store.add(format!("{name}.gate.wp1"), init.uniform(&[ns, g], ns))?,
                    wp2: store.add(format!("{name}.gate.wp2"), init.uniform(&[g, ns], g))?,
                };
                let mlp = Mlp::new(store, init, &format!("{name}.mlp"), d, hidden)?;
                loops.push(ImseLoop {
                    attention,
                    gate,
                    mlp,
                });
            }
        }
        let name = format!("{base}.smid");
        let attention = CrossAttention::new(store, init, &name, ("ln_f", "ln_s"), cfg)?;
        let nh = cfg.expand_width();
        let mixing = PatchMixing {
            expand: store.add(format!("{name}.mix.we"), init.uniform(&[nv, nh], nv))?,
            select: store.add(format!("{name}.mix.ws"), init.uniform(&[nh, nh], nh))?,
            narrow: store.add(format!("{name}.mix.wn"), init.uniform(&[nh, nv], nh))?,
        };
        let mlp = Mlp::new(store, init, &format!("{name}.mlp"), d, hidden)?;
        Ok(Dsvtm {
            index,
            loops,
            smid: Smid {
                attention,
                mixing,
                mlp,
            },
            anchor: cfg.residual_anchor,
            bypass_imse: cfg.bypass_imse,
        })
    }

    /// Runs the encoder loops. Loop `r` consumes loop `r-1`'s output.
    /// Returns the per-loop prototypes and affinities.
    pub fn imse_forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        s0: Var,
        shared: Var,
        f: Var,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let mut prototypes = Vec::with_capacity(self.loops.len());
        let mut affinities = Vec::with_capacity(self.loops.len());
        let mut s_in = s0;
        for lp in &self.loops {
            let base = match self.anchor {
                ResidualAnchor::LoopInput => s_in,
                ResidualAnchor::Shared => shared,
            };
            let (m, s_attr) = lp.imse_attention(tape, p, s_in, f, base)?;
            let s_bar = lp.attribute_group_gate(tape, p, s_attr)?;
            let s_hat = lp.attribute_activate(tape, p, s_bar, s_attr)?;
            affinities.push(m);
            prototypes.push(s_hat);
            s_in = s_hat;
        }
        Ok((prototypes, affinities))
    }

    /// Encoder then decoder. `shared` is the dataset's shared prototype matrix
    /// (only consulted by [`ResidualAnchor::Shared`]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        f: Var,
        s_in: Var,
        shared: Var,
    ) -> Result<DsvtmTrace> {
        let (prototypes, affinities) = if self.bypass_imse {
            (Vec::new(), Vec::new())
        } else {
            self.imse_forward(tape, p, s_in, shared, f)?
        };
        let adapted = prototypes.last().copied().unwrap_or(s_in);
        let features = self.smid.forward(tape, p, f, adapted)?;
        Ok(DsvtmTrace {
            prototypes,
            affinities,
            adapted,
            features,
        })
    }
}
