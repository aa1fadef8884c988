//! Small building blocks shared by the backbone and the DSVTM.

use crate::error::Result;
use crate::numcore::{Binding, Initializer, ParamId, ParamStore, Tape, Tensor, Var};

/// `x · W (+ b)` applied row-wise. `W` is stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.uniform(&[input, output], input))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[output]))?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, eps: f64) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[width]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width]))?,
            eps,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta], self.eps)
    }
}

/// Two biased linear layers with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        width: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), width, hidden, true)?,
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, width, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, p, h)
    }
}
