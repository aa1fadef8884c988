//! Seen-class training loop with Adam, per-epoch metrics and resumable state.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GzslDataset, Split};
use crate::error::{Error, Result};
use crate::head_loss::LossWeights;
use crate::model::{ClassContext, Psvma};
use crate::numcore::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiplies the rate by `factor` every `every` epochs.
    Step { every: usize, factor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, factor } => base * factor.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        if let LrSchedule::Step { every: 0, .. } = self.schedule {
            return Err(Error::Config("step schedule needs every >= 1".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(model: &Psvma) -> Self {
        let zeros: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.value().shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn update(&mut self, model: &mut Psvma, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, param) in model.params_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, w) in param.data_mut().iter_mut().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Epoch-mean losses and the running seen-train accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub cls: f64,
    pub sem: f64,
    pub deb: f64,
    pub total: f64,
    pub seen_train_acc: f64,
}

/// Sums over the samples seen so far in the current epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub samples: usize,
    pub correct: usize,
    pub cls: f64,
    pub sem: f64,
    pub deb: f64,
    pub total: f64,
}

impl EpochAccumulator {
    fn finish(&self, epoch: usize) -> EpochMetrics {
        let n = self.samples.max(1) as f64;
        EpochMetrics {
            epoch,
            cls: self.cls / n,
            sem: self.sem / n,
            deb: self.deb / n,
            total: self.total / n,
            seen_train_acc: self.correct as f64 / n,
        }
    }
}

/// Position in the schedule. `batch` is the next batch of `epoch` to run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub batch: usize,
    pub partial: EpochAccumulator,
    pub history: Vec<EpochMetrics>,
}

pub struct Trainer {
    pub model: Psvma,
    pub config: TrainConfig,
    pub adam: Adam,
    pub state: TrainState,
}

/// Deterministic order of the seen-train samples for one epoch.
pub fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order = train.to_vec();
    order.shuffle(&mut rng);
    order
}

fn argmax_seen(scores: &[f64], seen: &[bool]) -> usize {
    let mut best = usize::MAX;
    for (c, &s) in scores.iter().enumerate() {
        if seen[c] && (best == usize::MAX || s > scores[best]) {
            best = c;
        }
    }
    best
}

impl Trainer {
    pub fn new(model: Psvma, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model);
        Ok(Trainer {
            model,
            config,
            adam,
            state: TrainState::default(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.state.history
    }

    fn train_indices(data: &GzslDataset) -> Result<Vec<usize>> {
        let train = data.indices(Split::SeenTrain);
        if train.is_empty() {
            return Err(Error::Contract("dataset has no seen-train samples".into()));
        }
        Ok(train)
    }

    /// Runs one optimizer step. Returns the epoch's metrics when the step
    /// completes an epoch.
    pub fn step(&mut self, data: &GzslDataset, ctx: &ClassContext) -> Result<Option<EpochMetrics>> {
        if self.is_finished() {
            return Ok(None);
        }
        let train = Self::train_indices(data)?;
        let order = epoch_order(&train, self.config.seed, self.state.epoch);
        let bs = self.config.batch_size;
        let batches = order.len().div_ceil(bs);
        let (epoch, batch) = (self.state.epoch, self.state.batch);
        let chunk = &order[batch * bs..((batch + 1) * bs).min(order.len())];

        let mut tape = Tape::new();
        let p = self.model.params().bind(&mut tape);
        let mut totals = Vec::with_capacity(chunk.len());
        let mut acc = self.state.partial.clone();
        for &i in chunk {
            let label = data.labels[i];
            let l = self
                .model
                .sample_loss(&mut tape, &p, &data.sample(i), label, ctx, &self.config.weights)?;
            acc.samples += 1;
            acc.cls += tape.value(l.cls).item();
            acc.sem += l.sem.iter().map(|&s| tape.value(s).item()).sum::<f64>();
            acc.deb += tape.value(l.deb).item();
            acc.total += tape.value(l.total).item();
            if argmax_seen(tape.value(l.scores).data(), &ctx.seen_mask) == label {
                acc.correct += 1;
            }
            totals.push(l.total);
        }
        let loss = tape.mean_all(&totals)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch });
        }
        let grads = tape.backward(loss)?;
        let grads = p.collect(&grads, self.model.params());
        let lr = self.config.schedule.rate(self.config.lr, epoch);
        self.adam.update(&mut self.model, &grads, lr, &self.config);

        self.state.partial = acc;
        self.state.batch += 1;
        if self.state.batch < batches {
            return Ok(None);
        }
        let metrics = self.state.partial.finish(epoch);
        self.state.history.push(metrics.clone());
        self.state.partial = EpochAccumulator::default();
        self.state.batch = 0;
        self.state.epoch += 1;
        Ok(Some(metrics))
    }

    /// Runs up to `n` steps, stopping early at the end of training.
    pub fn run_steps(&mut self, data: &GzslDataset, ctx: &ClassContext, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            self.step(data, ctx)?;
        }
        Ok(())
    }

    /// Trains to the configured epoch count. `on_epoch` runs after every
    /// completed epoch, e.g. for checkpointing or early inspection.
    pub fn train_with<F>(&mut self, data: &GzslDataset, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    {
        self.model.config().check_dataset(data)?;
        let ctx = ClassContext::from_dataset(data);
        while !self.is_finished() {
            if let Some(m) = self.step(data, &ctx)? {
                on_epoch(self, &m)?;
            }
        }
        Ok(())
    }

    pub fn train(&mut self, data: &GzslDataset) -> Result<()> {
        self.train_with(data, |_, _| Ok(()))
    }
}

pub const METRICS_HEADER: &str = "epoch,L_cls,L_sem,L_deb,total,seen_train_acc";

/// Metrics log as CSV. Floats use the shortest representation that parses
/// back to the same value.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.epoch, m.cls, m.sem, m.deb, m.total, m.seen_train_acc
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let idx: Vec<usize> = (10..30).collect();
        let a = epoch_order(&idx, 7, 3);
        assert_eq!(a, epoch_order(&idx, 7, 3));
        assert_ne!(a, epoch_order(&idx, 7, 4));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, idx);
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step { every: 10, factor: 0.5 };
        assert_eq!(s.rate(1.0, 9), 1.0);
        assert_eq!(s.rate(1.0, 10), 0.5);
        assert_eq!(s.rate(1.0, 25), 0.25);
        assert_eq!(LrSchedule::Constant.rate(0.1, 100), 0.1);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: -1.0, ..TrainConfig::default() },
            TrainConfig { beta2: 1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn csv_floats_round_trip() {
        let m = EpochMetrics {
            epoch: 0,
            cls: 0.1 + 0.2,
            sem: 1.0 / 3.0,
            deb: 0.0,
            total: 1e-300,
            seen_train_acc: 0.5,
        };
        let csv = metrics_csv(&[m.clone()]);
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row[1], m.cls);
        assert_eq!(row[2], m.sem);
        assert_eq!(row[4], m.total);
    }

    #[test]
    fn seen_argmax_ignores_unseen() {
        assert_eq!(argmax_seen(&[0.1, 5.0, 0.3, 0.3], &[true, false, true, true]), 2);
    }
}
