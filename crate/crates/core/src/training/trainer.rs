//! The optimization loop: dynamic masking, gradient accumulation, scheduled
//! updates, validation and early stopping.

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss, validate_levels, LossKind, DEFAULT_QUANTILES};
use super::masks::draw_dynamic_masks;
use super::optim::{Optimizer, OptimizerKind};
use super::schedule::CosineRestarts;
use super::select::EarlyStopping;
use crate::error::{Error, Result};
use crate::graph::{mix64, Graph};
use crate::model::forward::{forward, forward_bound, ForwardOptions, ModelInput};
use crate::model::ModelWeights;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub quantile_levels: Vec<f64>,
    /// Inclusive range of nodes drawn per sample.
    pub nodes_per_batch: [usize; 2],
    pub node_mask_ratio: f64,
    pub image_mask_ratio: f64,
    /// Samples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches averaged into one update.
    pub accumulation_steps: usize,
    pub base_lr: f64,
    pub optimizer: OptimizerKind,
    pub schedule: CosineRestarts,
    /// Optimizer updates.
    pub max_steps: usize,
    /// Updates between validation passes.
    pub eval_every: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    /// Steps between consecutive training windows.
    pub window_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Pinball,
            quantile_levels: DEFAULT_QUANTILES.to_vec(),
            nodes_per_batch: [10, 16],
            node_mask_ratio: 0.15,
            image_mask_ratio: 0.95,
            batch_size: 1,
            accumulation_steps: 4,
            base_lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            schedule: CosineRestarts::default(),
            max_steps: 2000,
            eval_every: 100,
            patience: 5,
            window_stride: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss == LossKind::Pinball {
            validate_levels(&self.quantile_levels)?;
        }
        let [lo, hi] = self.nodes_per_batch;
        if lo == 0 || hi < lo {
            return Err(Error::invalid(format!("nodes_per_batch {lo}..={hi} is empty")));
        }
        for (name, r) in [
            ("node_mask_ratio", self.node_mask_ratio),
            ("image_mask_ratio", self.image_mask_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.batch_size == 0 || self.accumulation_steps == 0 || self.eval_every == 0 || self.window_stride == 0 {
            return Err(Error::invalid(
                "batch_size, accumulation_steps, eval_every and window_stride must be positive",
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!("base_lr {} must be positive", self.base_lr)));
        }
        self.schedule.validate()
    }

    /// Output heads implied by the loss.
    pub fn output_heads(&self) -> usize {
        self.loss.output_heads(&self.quantile_levels)
    }
}

/// One training or validation example in model units.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: ModelInput,
    /// `[N, H]` normalized GHI targets for every node, masked ones included.
    pub target: Tensor,
    /// Dropout stream seed.
    pub seed: u64,
}

/// Everything needed to resume training on the identical trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer updates applied.
    pub step: usize,
    /// Micro-batches accumulated toward the next update.
    pub micro: usize,
    pub optimizer: Optimizer,
    pub early: EarlyStopping,
    pub rng: ChaCha8Rng,
    /// `(step, validation loss)` of every validation pass.
    pub history: Vec<(usize, f64)>,
    loss_sum: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Mean loss of the micro-batch.
    pub loss: f64,
    /// Whether this micro-batch completed an update.
    pub updated: bool,
    /// Learning rate of the update, when one was applied.
    pub lr: Option<f64>,
    /// Mean micro-batch loss since the previous update, when one was applied.
    pub update_loss: Option<f64>,
}

pub struct Trainer {
    pub weights: ModelWeights,
    pub cfg: TrainConfig,
    pub state: TrainState,
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub struct FitSummary {
    pub best: ModelWeights,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub log: Vec<LogRow>,
    pub stopped_early: bool,
    /// Micro-batches abandoned because of non-finite values.
    pub aborted: usize,
}

const RNG_STREAM: u64 = 0x7261_696e;

impl Trainer {
    pub fn new(weights: ModelWeights, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if weights.config.output_heads != cfg.output_heads() {
            return Err(Error::invalid(format!(
                "{} loss needs {} output heads, model has {}",
                cfg.loss,
                cfg.output_heads(),
                weights.config.output_heads
            )));
        }
        let optimizer = Optimizer::new(cfg.optimizer, &weights.params);
        let state = TrainState {
            step: 0,
            micro: 0,
            optimizer,
            early: EarlyStopping::new(cfg.patience),
            rng: ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ RNG_STREAM)),
            history: Vec::new(),
            loss_sum: 0.0,
        };
        Ok(Trainer { weights, cfg, state })
    }

    /// Continues from a saved state; gradients restart from zero, so states
    /// should be taken at update boundaries.
    pub fn resume(weights: ModelWeights, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        let mut t = Self::new(weights, cfg)?;
        t.state = state;
        t.weights.params.zero_grads();
        Ok(t)
    }

    pub fn lr(&self) -> f64 {
        self.cfg.schedule.lr(self.cfg.base_lr, self.state.step)
    }

    /// Forward, loss and backward over a micro-batch; gradients are added to
    /// the parameters scaled so that a full accumulation cycle averages them.
    /// A non-finite loss or gradient leaves the state untouched.
    pub fn micro_step(&mut self, batch: &[Sample]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::invalid("empty micro-batch"));
        }
        let scale = 1.0 / (batch.len() * self.cfg.accumulation_steps) as f64;
        let mut pending: Vec<Vec<f64>> = self.weights.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        let mut total = 0.0;
        for s in batch {
            let mut g = Graph::new();
            let bound = self.weights.params.bind(&mut g)?;
            let opts = ForwardOptions {
                train: true,
                seed: s.seed,
            };
            let pred = forward_bound(&mut g, &self.weights, &bound, &s.input, opts)
                .map_err(|e| Error::Training(format!("step {}: {e}", self.state.step)))?;
            let l = loss(&mut g, self.cfg.loss, pred, &s.target, &self.cfg.quantile_levels)
                .map_err(|e| Error::Training(format!("step {}: {e}", self.state.step)))?;
            let value = g.value(l).data()[0];
            if !value.is_finite() {
                return Err(Error::Training(format!("step {}: non-finite loss", self.state.step)));
            }
            total += value;
            let scaled = g.scale(l, scale)?;
            let grads = g.backward(scaled)?;
            for (buf, &v) in pending.iter_mut().zip(bound.vars()) {
                if let Some(gr) = grads.get(v) {
                    buf.iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b);
                }
            }
        }
        if pending.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "step {}: non-finite gradient",
                self.state.step
            )));
        }
        for (p, buf) in self.weights.params.iter_mut().zip(&pending) {
            p.grad.data_mut().iter_mut().zip(buf).for_each(|(a, b)| *a += b);
        }
        let mean = total / batch.len() as f64;
        self.state.loss_sum += mean;
        self.state.micro += 1;
        let mut report = StepReport {
            loss: mean,
            updated: false,
            lr: None,
            update_loss: None,
        };
        if self.state.micro == self.cfg.accumulation_steps {
            let lr = self.lr();
            self.state.optimizer.step(&mut self.weights.params, lr)?;
            self.weights.params.zero_grads();
            report.updated = true;
            report.lr = Some(lr);
            report.update_loss = Some(self.state.loss_sum / self.state.micro as f64);
            self.state.step += 1;
            self.state.micro = 0;
            self.state.loss_sum = 0.0;
        }
        Ok(report)
    }

    /// Mean evaluation-mode loss over `samples`.
    pub fn evaluate_loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("no validation samples"));
        }
        let mut total = 0.0;
        for s in samples {
            let pred = forward(&self.weights, &s.input, ForwardOptions::default())?;
            let mut g = Graph::new();
            let p = g.constant(pred)?;
            let l = loss(&mut g, self.cfg.loss, p, &s.target, &self.cfg.quantile_levels)?;
            total += g.value(l).data()[0];
        }
        Ok(total / samples.len() as f64)
    }

    /// Draws one training sample: a window, a node subset, masks and a
    /// dropout seed, all from the trainer's generator.
    pub fn draw_sample(
        &mut self,
        windows: &[usize],
        node_count: usize,
        make: &mut dyn FnMut(usize, &[usize]) -> Result<Sample>,
    ) -> Result<Sample> {
        if windows.is_empty() || node_count == 0 {
            return Err(Error::Training("no training windows or nodes".into()));
        }
        let rng = &mut self.state.rng;
        let window = windows[rng.gen_range(0..windows.len())];
        let [lo, hi] = self.cfg.nodes_per_batch;
        let (lo, hi) = (lo.min(node_count), hi.min(node_count));
        let k = rng.gen_range(lo..=hi);
        let mut nodes = sample(rng, node_count, k).into_vec();
        nodes.sort_unstable();
        let patches = if self.weights.config.use_images {
            self.weights.config.num_patches()
        } else {
            0
        };
        let (masked_nodes, masked_patches) =
            draw_dynamic_masks(k, patches, self.cfg.node_mask_ratio, self.cfg.image_mask_ratio, rng);
        let seed = rng.next_u64();
        let mut s = make(window, &nodes)?;
        s.input.masked_nodes = masked_nodes;
        s.input.masked_patches = masked_patches;
        s.seed = seed;
        Ok(s)
    }

    /// Trains until `max_steps` updates or early stopping. `on_improve` is
    /// called with the step and weights at every validation improvement;
    /// `on_log` with every log row.
    pub fn fit(
        &mut self,
        windows: &[usize],
        node_count: usize,
        val: &[Sample],
        make: &mut dyn FnMut(usize, &[usize]) -> Result<Sample>,
        on_improve: &mut dyn FnMut(usize, &ModelWeights) -> Result<()>,
        on_log: &mut dyn FnMut(&LogRow) -> Result<()>,
    ) -> Result<FitSummary> {
        let mut log = Vec::new();
        let mut best = (self.weights.clone(), self.state.step, f64::INFINITY);
        let mut aborted = 0;
        let mut consecutive = 0;
        let mut stopped_early = false;
        while self.state.step < self.cfg.max_steps {
            let batch = (0..self.cfg.batch_size)
                .map(|_| self.draw_sample(windows, node_count, make))
                .collect::<Result<Vec<_>>>()?;
            let report = match self.micro_step(&batch) {
                Ok(r) => {
                    consecutive = 0;
                    r
                }
                Err(Error::Training(_)) if consecutive < 10 => {
                    aborted += 1;
                    consecutive += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !report.updated {
                continue;
            }
            let step = self.state.step;
            let mut row = LogRow {
                step,
                lr: report.lr.unwrap_or(0.0),
                train_loss: report.update_loss.unwrap_or(report.loss),
                val_loss: None,
            };
            let due = step.is_multiple_of(self.cfg.eval_every) || step == self.cfg.max_steps;
            if due && !val.is_empty() {
                let v = self.evaluate_loss(val)?;
                row.val_loss = Some(v);
                self.state.history.push((step, v));
                if self.state.early.observe(v) {
                    best = (self.weights.clone(), step, v);
                    on_improve(step, &self.weights)?;
                }
            }
            on_log(&row)?;
            log.push(row);
            if self.state.early.should_stop() {
                stopped_early = true;
                break;
            }
        }
        if val.is_empty() {
            best = (self.weights.clone(), self.state.step, f64::NAN);
            on_improve(self.state.step, &self.weights)?;
        }
        Ok(FitSummary {
            best: best.0,
            best_step: best.1,
            best_val_loss: best.2,
            log,
            stopped_early,
            aborted,
        })
    }
}
