//! Reference forward pass of the whole network and its training loss.
//!
//! Parameters are looked up by name in a flat map, using the same naming
//! scheme as the main implementation (`dsvtm.0.imse.1.q.weight`, ...).
//! Every function is generic over the scalar type so the same code runs in
//! `f64` and in double-double.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mat::{self, Mat};
use crate::real::Real;

/// Parameter name to (shape, row-major values).
pub type Params = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn get<'a>(p: &'a Params, name: &str) -> &'a (Vec<usize>, Vec<f64>) {
    p.get(name).unwrap_or_else(|| panic!("oracle: missing parameter {name}"))
}

pub fn matrix<T: Real>(p: &Params, name: &str) -> Mat<T> {
    let (shape, data) = get(p, name);
    assert_eq!(shape.len(), 2, "{name} is not a matrix");
    mat::from_flat(shape[0], shape[1], data)
}

pub fn vector<T: Real>(p: &Params, name: &str) -> Vec<T> {
    get(p, name).1.iter().map(|&v| T::from_f64(v)).collect()
}

pub fn lift<T: Real>(m: &Mat<f64>) -> Mat<T> {
    m.iter().map(|r| r.iter().map(|&v| T::from_f64(v)).collect()).collect()
}

/// Settings shared by every DSVTM attention block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub ln_eps: f64,
    /// Multiplier applied to `q·kᵀ`, if any.
    pub scale: Option<f64>,
    /// Anchor encoder residuals at the shared prototypes instead of the loop input.
    pub shared_anchor: bool,
}

fn ln<T: Real>(p: &Params, prefix: &str, x: &Mat<T>, eps: f64) -> Mat<T> {
    mat::layer_norm(
        x,
        &vector(p, &format!("{prefix}.gamma")),
        &vector(p, &format!("{prefix}.beta")),
        eps,
    )
}

fn lin<T: Real>(p: &Params, prefix: &str, x: &Mat<T>) -> Mat<T> {
    let w = matrix(p, &format!("{prefix}.weight"));
    let name = format!("{prefix}.bias");
    let b: Option<Vec<T>> = p.contains_key(&name).then(|| vector(p, &name));
    mat::linear(x, &w, b.as_deref())
}

pub fn mlp<T: Real>(p: &Params, prefix: &str, x: &Mat<T>) -> Mat<T> {
    let h = lin(p, &format!("{prefix}.fc1"), x);
    let h = mat::map(&h, mat::gelu);
    lin(p, &format!("{prefix}.fc2"), &h)
}

/// `M = q(query) · k(context)ᵀ` (optionally scaled); returns
/// `(M, softmax(M) · v(context))`.
fn attention<T: Real>(p: &Params, prefix: &str, qn: &Mat<T>, cn: &Mat<T>, scale: Option<f64>) -> (Mat<T>, Mat<T>) {
    let q = lin(p, &format!("{prefix}.q"), qn);
    let k = lin(p, &format!("{prefix}.k"), cn);
    let v = lin(p, &format!("{prefix}.v"), cn);
    let mut m = mat::zeros(q.len(), k.len());
    for i in 0..q.len() {
        for j in 0..k.len() {
            let mut acc = T::zero();
            for t in 0..q[i].len() {
                acc += q[i][t] * k[j][t];
            }
            m[i][j] = match scale {
                Some(c) => acc * T::from_f64(c),
                None => acc,
            };
        }
    }
    let a = mat::softmax_rows(&m);
    (m.clone(), mat::matmul(&a, &v))
}

/// Instance-aware semantic attention of encoder loop `prefix`: `(M, S_attr)`.
pub fn imse_attention<T: Real>(
    p: &Params,
    prefix: &str,
    s_in: &Mat<T>,
    f: &Mat<T>,
    residual: &Mat<T>,
    s: Settings,
) -> (Mat<T>, Mat<T>) {
    let sn = ln(p, &format!("{prefix}.ln_s"), s_in, s.ln_eps);
    let fnorm = ln(p, &format!("{prefix}.ln_f"), f, s.ln_eps);
    let (m, attended) = attention(p, prefix, &sn, &fnorm, s.scale);
    (m, mat::add(&attended, residual))
}

/// Returns `(gate, s_bar)`.
pub fn group_gate<T: Real>(p: &Params, prefix: &str, s_attr: &Mat<T>) -> (Vec<T>, Mat<T>) {
    let n = s_attr.len();
    let pooled = vec![mat::row_max(s_attr)];
    let h = mat::matmul(&pooled, &matrix(p, &format!("{prefix}.gate.wp1")));
    let h = mat::map(&h, mat::gelu);
    let g = mat::matmul(&h, &matrix(p, &format!("{prefix}.gate.wp2")));
    let gate: Vec<T> = (0..n).map(|i| mat::sigmoid(g[0][i])).collect();
    let mut s_bar = s_attr.clone();
    for i in 0..n {
        for j in 0..s_attr[i].len() {
            s_bar[i][j] = gate[i] * s_attr[i][j] + s_attr[i][j];
        }
    }
    (gate, s_bar)
}

pub fn attribute_activate<T: Real>(p: &Params, prefix: &str, s_bar: &Mat<T>, s_attr: &Mat<T>) -> Mat<T> {
    mat::add(&mat::add(&mlp(p, &format!("{prefix}.mlp"), s_bar), s_bar), s_attr)
}

/// Semantic-related instance attention.
pub fn smid_attention<T: Real>(p: &Params, prefix: &str, f: &Mat<T>, s_hat: &Mat<T>, s: Settings) -> Mat<T> {
    let fnorm = ln(p, &format!("{prefix}.ln_f"), f, s.ln_eps);
    let sn = ln(p, &format!("{prefix}.ln_s"), s_hat, s.ln_eps);
    mat::add(&attention(p, prefix, &fnorm, &sn, s.scale).1, f)
}

pub fn patch_mixing<T: Real>(p: &Params, prefix: &str, f_tilde: &Mat<T>) -> Mat<T> {
    let ft = mat::transpose(f_tilde);
    let fe = mat::map(&mat::matmul(&ft, &matrix(p, &format!("{prefix}.mix.we"))), mat::gelu);
    let fs = mat::map(&mat::matmul(&fe, &matrix(p, &format!("{prefix}.mix.ws"))), mat::gelu);
    let fnarrow = mat::matmul(&fs, &matrix(p, &format!("{prefix}.mix.wn")));
    mat::add(&mat::transpose(&fnarrow), f_tilde)
}

pub fn patch_activate<T: Real>(p: &Params, prefix: &str, f_bar: &Mat<T>) -> Mat<T> {
    mat::add(&mlp(p, &format!("{prefix}.mlp"), f_bar), f_bar)
}

/// Intermediate values of one encoder loop.
#[derive(Clone, Debug)]
pub struct LoopOut<T = f64> {
    pub affinity: Mat<T>,
    pub s_attr: Mat<T>,
    pub gate: Vec<T>,
    pub s_bar: Mat<T>,
    pub s_hat: Mat<T>,
}

#[derive(Clone, Debug)]
pub struct DsvtmOut<T = f64> {
    pub loops: Vec<LoopOut<T>>,
    /// Prototypes handed to the decoder (the input when there are no loops).
    pub adapted: Mat<T>,
    pub f_tilde: Mat<T>,
    pub f_bar: Mat<T>,
    pub f_hat: Mat<T>,
}

/// One DSVTM with `loops` encoder passes (0 bypasses the encoder).
pub fn dsvtm<T: Real>(
    p: &Params,
    z: usize,
    loops: usize,
    f: &Mat<T>,
    s_in: &Mat<T>,
    shared: &Mat<T>,
    s: Settings,
) -> DsvtmOut<T> {
    let mut outs = Vec::new();
    let mut cur = s_in.clone();
    for r in 0..loops {
        let prefix = format!("dsvtm.{z}.imse.{r}");
        let residual = if s.shared_anchor { shared.clone() } else { cur.clone() };
        let (affinity, s_attr) = imse_attention(p, &prefix, &cur, f, &residual, s);
        let (gate, s_bar) = group_gate(p, &prefix, &s_attr);
        let s_hat = attribute_activate(p, &prefix, &s_bar, &s_attr);
        cur = s_hat.clone();
        outs.push(LoopOut {
            affinity,
            s_attr,
            gate,
            s_bar,
            s_hat,
        });
    }
    let prefix = format!("dsvtm.{z}.smid");
    let f_tilde = smid_attention(p, &prefix, f, &cur, s);
    let f_bar = patch_mixing(p, &prefix, &f_tilde);
    let f_hat = patch_activate(p, &prefix, &f_bar);
    DsvtmOut {
        loops: outs,
        adapted: cur,
        f_tilde,
        f_bar,
        f_hat,
    }
}

/// Max over patches of `f_hat`, projected by `head.weight`.
pub fn head<T: Real>(p: &Params, f_hat: &Mat<T>) -> Vec<T> {
    let pooled = vec![mat::col_max(f_hat)];
    mat::matmul(&pooled, &matrix(p, "head.weight")).remove(0)
}

/// `τ·cos(pred, a_c)` per class row of `classes`; 0 for zero-norm vectors.
pub fn cosine_scores<T: Real>(pred: &[T], classes: &Mat<T>, tau: f64) -> Vec<T> {
    let norm = |v: &[T]| {
        let mut acc = T::zero();
        for &x in v {
            acc += x * x;
        }
        acc.sqrt()
    };
    let np = norm(pred);
    classes
        .iter()
        .map(|a| {
            let na = norm(a);
            if np == T::zero() || na == T::zero() {
                return T::zero();
            }
            let mut dot = T::zero();
            for i in 0..a.len() {
                dot += pred[i] * a[i];
            }
            T::from_f64(tau) * dot / (np * na)
        })
        .collect()
}

/// Cross-entropy of `label` among the seen classes.
pub fn cls_loss<T: Real>(scores: &[T], label: usize, seen: &[bool]) -> T {
    let mut max: Option<T> = None;
    for c in 0..scores.len() {
        if seen[c] {
            max = Some(max.map_or(scores[c], |m: T| m.max(scores[c])));
        }
    }
    let max = max.expect("at least one seen class");
    let mut total = T::zero();
    for c in 0..scores.len() {
        if seen[c] {
            total += (scores[c] - max).exp();
        }
    }
    -(scores[label] - max - total.ln())
}

/// `‖max over patches of M − a‖²`.
pub fn sem_loss<T: Real>(affinity: &Mat<T>, target: &[T]) -> T {
    let pooled = mat::row_max(affinity);
    let mut total = T::zero();
    for i in 0..pooled.len() {
        let d = pooled[i] - target[i];
        total += d * d;
    }
    total
}

fn moments<T: Real>(scores: &[T], seen: &[bool], want: bool) -> (T, T) {
    let vals: Vec<T> = (0..scores.len()).filter(|&c| seen[c] == want).map(|c| scores[c]).collect();
    let n = T::from_f64(vals.len() as f64);
    let mut mean = T::zero();
    for &v in &vals {
        mean += v;
    }
    mean = mean / n;
    let mut var = T::zero();
    for &v in &vals {
        var += (v - mean) * (v - mean);
    }
    (mean, var / n)
}

/// `(α_s − α_u)² + (β_s − β_u)²` with population variances.
pub fn deb_loss<T: Real>(scores: &[T], seen: &[bool]) -> T {
    let (as_, bs) = moments(scores, seen, true);
    let (au, bu) = moments(scores, seen, false);
    (as_ - au) * (as_ - au) + (bs - bu) * (bs - bu)
}

pub fn total_loss<T: Real>(cls: T, sem: &[T], deb: T, lambda_sem: f64, lambda_deb: f64) -> T {
    let mut sem_sum = T::zero();
    for &s in sem {
        sem_sum += s;
    }
    cls + T::from_f64(lambda_sem) * sem_sum + T::from_f64(lambda_deb) * deb
}

/// Architecture switches mirrored from the main model's configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Trainable patch encoder (`false`: tokens pass through unchanged).
    pub encoder: bool,
    pub layers: usize,
    pub width: usize,
    pub backbone_ln_eps: f64,
    pub modules: usize,
    /// Encoder loops per module; 0 bypasses the encoder.
    pub loops: usize,
    pub settings: Settings,
    /// Project `S` with `semantic.adapter.weight` first.
    pub adapter: bool,
    /// Feed module `z`'s adapted prototypes into module `z+1`.
    pub progressive: bool,
    /// Module outputs replace the backbone stream.
    pub reentry: bool,
    pub tau: f64,
    pub lambda_sem: f64,
    pub lambda_deb: f64,
}

fn backbone_block<T: Real>(p: &Params, l: usize, x: &Mat<T>, arch: &Architecture) -> Mat<T> {
    let name = format!("backbone.{l}");
    let h = ln(p, &format!("{name}.ln1"), x, arch.backbone_ln_eps);
    let scale = 1.0 / (arch.width as f64).sqrt();
    let (_, a) = attention(p, &format!("{name}.attn"), &h, &h, Some(scale));
    let a = lin(p, &format!("{name}.attn.o"), &a);
    let x = mat::add(x, &a);
    let h = ln(p, &format!("{name}.ln2"), &x, arch.backbone_ln_eps);
    mat::add(&x, &mlp(p, &format!("{name}.mlp"), &h))
}

pub struct NetworkOut<T = f64> {
    pub modules: Vec<DsvtmOut<T>>,
    pub pred: Vec<T>,
}

/// Backbone with the DSVTM stack inserted after its last `modules` layers,
/// followed by the head.
pub fn network<T: Real>(p: &Params, arch: &Architecture, tokens: &Mat<f64>, shared: &Mat<f64>) -> NetworkOut<T> {
    let mut s: Mat<T> = lift(shared);
    if arch.adapter {
        s = lin(p, "semantic.adapter", &s);
    }
    let mut x: Mat<T> = lift(tokens);
    if arch.encoder {
        x = lin(p, "backbone.embed", &x);
        x = mat::add(&x, &matrix(p, "backbone.position"));
    }
    let first_tap = arch.layers - arch.modules;
    let mut s_in = s.clone();
    let mut modules = Vec::new();
    let mut head_input = x.clone();
    for l in 0..arch.layers {
        if arch.encoder {
            x = backbone_block(p, l, &x, arch);
        }
        if l < first_tap {
            continue;
        }
        let out = dsvtm(p, l - first_tap, arch.loops, &x, &s_in, &s, arch.settings);
        if arch.progressive {
            s_in = out.adapted.clone();
        }
        head_input = out.f_hat.clone();
        if arch.reentry {
            x = out.f_hat.clone();
        }
        modules.push(out);
    }
    NetworkOut {
        pred: head(p, &head_input),
        modules,
    }
}

/// One labelled sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Mat<f64>,
    pub label: usize,
}

/// Mean over `samples` of `cls + λ_sem Σ sem + λ_deb deb`.
pub fn mean_loss<T: Real>(
    p: &Params,
    arch: &Architecture,
    samples: &[Sample],
    shared: &Mat<f64>,
    classes: &Mat<f64>,
    seen: &[bool],
) -> T {
    let classes: Mat<T> = lift(classes);
    let mut total = T::zero();
    for sample in samples {
        let out = network::<T>(p, arch, &sample.tokens, shared);
        let scores = cosine_scores(&out.pred, &classes, arch.tau);
        let cls = cls_loss(&scores, sample.label, seen);
        let target = &classes[sample.label];
        let sem: Vec<T> = out
            .modules
            .iter()
            .flat_map(|m| m.loops.iter().map(|l| sem_loss(&l.affinity, target)))
            .collect();
        let deb = deb_loss(&scores, seen);
        total += total_loss(cls, &sem, deb, arch.lambda_sem, arch.lambda_deb);
    }
    total / T::from_f64(samples.len() as f64)
}
