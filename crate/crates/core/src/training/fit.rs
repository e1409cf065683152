use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, Dataset, DateRange, Window};
use crate::diffusion::draw_noised;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{deterministic_inputs, Model, ModelKind};
use crate::numerics::rng::label;
use crate::numerics::{gradient_of, ParamSet, RngStream, Tape};
use crate::ssm::ParamGroup;

use super::checkpoint::Checkpoint;
use super::loss::NSE_STD_FLOOR;
use super::optimizer::{lion_step, LionHyper, OptimizerState};
use super::schedule::lr_schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate of the global group after warm-up.
    pub base_lr: f64,
    /// Upper bound on the SSM kernel group learning rate.
    pub kernel_lr_cap: f64,
    /// Peak learning rate of the SSM time-step parameters.
    pub dt_lr: f64,
    pub kernel_weight_decay: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Draw this many shuffled training windows per epoch instead of all.
    pub windows_per_epoch: Option<usize>,
    /// Evaluate validation loss on this many evenly spaced windows.
    pub validation_windows: Option<usize>,
    /// Samples per gradient task. Fixed so results do not depend on the
    /// number of worker threads.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 256,
            base_lr: 3e-5,
            kernel_lr_cap: 3e-6,
            dt_lr: 1e-3,
            kernel_weight_decay: 4e-5,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.99,
            grad_clip: None,
            seed: 0,
            windows_per_epoch: None,
            validation_windows: None,
            chunk_size: 16,
        }
    }
}

impl TrainConfig {
    /// Published optimizer settings for each kind.
    pub fn for_kind(kind: ModelKind) -> Self {
        let mut cfg = Self::default();
        match kind {
            ModelKind::Hydrodiffusion | ModelKind::DiffusionLstmEncdec | ModelKind::DiffusionLstmDec => {}
            ModelKind::DeterministicSsm => {
                cfg.epochs = 50;
                cfg.base_lr = 4e-4;
                cfg.kernel_lr_cap = 4e-5;
                cfg.weight_decay = 0.03;
                cfg.kernel_weight_decay = 0.02;
            }
            ModelKind::DeterministicLstm => {
                cfg.epochs = 30;
                cfg.base_lr = 1e-4;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::arg("epochs, batch_size and chunk_size must be at least 1"));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("kernel_lr_cap", self.kernel_lr_cap),
            ("dt_lr", self.dt_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("kernel_weight_decay", self.kernel_weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::arg(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::arg(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.windows_per_epoch == Some(0) || self.validation_windows == Some(0) {
            return Err(Error::arg("window counts must be at least 1"));
        }
        Ok(())
    }

    fn hyper(&self, group: ParamGroup, step: u64, total: u64, per_epoch: u64) -> LionHyper {
        let global = lr_schedule(step, total, per_epoch, self.base_lr);
        let (lr, weight_decay) = match group {
            ParamGroup::Global => (global, self.weight_decay),
            ParamGroup::Kernel => (global.min(self.kernel_lr_cap), self.kernel_weight_decay),
            ParamGroup::TimeStep => (lr_schedule(step, total, per_epoch, self.dt_lr), 0.0),
        };
        LionHyper {
            lr,
            weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }
}

/// Losses after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Global-group learning rate at the last step of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// The model chosen by the kind's checkpoint policy.
    pub selected: Model,
    pub selected_epoch: usize,
    /// State after the last epoch, for resuming.
    pub last: Checkpoint,
    pub trace: Vec<EpochLog>,
}

/// Loss and gradient of one batch, or its loss alone when `grads` is off.
struct BatchEval<'a> {
    model: &'a Model,
    data: &'a Dataset,
    cfg: &'a TrainConfig,
}

impl BatchEval<'_> {
    /// Inputs, diffusion times, targets and row weights for a chunk.
    /// Sample `j` of the batch draws its noise from `noise_path + [j]`.
    #[allow(clippy::type_complexity)]
    fn chunk_problem(
        &self,
        windows: &[Window],
        first: usize,
        noise_path: &[u64],
    ) -> Result<(crate::numerics::RealArray, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let dims = self.data.dims;
        let horizon = dims.horizon();
        let tuples: Vec<_> = windows.iter().map(|&w| self.data.tuple(w)).collect();
        let mut xs = Vec::with_capacity(windows.len());
        let mut taus = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len() * horizon);
        let mut weights = Vec::with_capacity(windows.len());
        for (k, &w) in windows.iter().enumerate() {
            let x0 = self
                .data
                .target(w)
                .ok_or_else(|| Error::arg("training window lacks a complete target"))?;
            if self.model.kind().is_diffusion() {
                let mut path = noise_path.to_vec();
                path.push((first + k) as u64);
                let draw = draw_noised(&x0, &mut RngStream::derive(self.cfg.seed, &path));
                xs.push(draw.x_tau);
                taus.push(draw.tau);
                targets.extend(draw.target);
                weights.push(1.0 / horizon as f64);
            } else {
                let (x, tau) = deterministic_inputs(horizon);
                xs.push(x);
                taus.push(tau);
                targets.extend(x0);
                let sd = self.data.basins[w.basin].target_std.max(NSE_STD_FLOOR);
                weights.push(1.0 / (sd * sd));
            }
        }
        let refs: Vec<&_> = tuples.iter().collect();
        let xrefs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let inputs = self.model.network.batch_input(&refs, &xrefs)?;
        Ok((inputs, taus, targets, weights))
    }

    fn gradient(&self, batch: &[Window], step: u64) -> Result<(f64, ParamSet)> {
        let n = batch.len() as f64;
        let parts: Vec<Result<(f64, ParamSet)>> = batch
            .par_chunks(self.cfg.chunk_size)
            .enumerate()
            .map(|(ci, chunk)| {
                let first = ci * self.cfg.chunk_size;
                let (inputs, taus, targets, weights) = self.chunk_problem(chunk, first, &[label::NOISE, step])?;
                let mut dropout = RngStream::derive(self.cfg.seed, &[label::DROPOUT, step, ci as u64]);
                let share = chunk.len() as f64 / n;
                gradient_of(&self.model.params, |tape, vars| {
                    let out = self.model.network.forward(tape, vars, inputs, &taus, Some(&mut dropout))?;
                    let loss = tape.weighted_sse(out, &targets, &weights);
                    Ok(tape.scale(loss, share))
                })
            })
            .collect();
        let mut total = 0.0;
        let mut grads = self.model.params.zeros_like();
        for part in parts {
            let (loss, g) = part?;
            total += loss;
            for (name, acc) in grads.iter_mut() {
                acc.add_assign(g.expect(name));
            }
        }
        Ok((total, grads))
    }

    fn loss(&self, windows: &[Window]) -> Result<f64> {
        let n = windows.len() as f64;
        let parts: Vec<Result<f64>> = windows
            .par_chunks(self.cfg.chunk_size)
            .enumerate()
            .map(|(ci, chunk)| {
                let first = ci * self.cfg.chunk_size;
                let (inputs, taus, targets, weights) = self.chunk_problem(chunk, first, &[label::VALIDATION])?;
                let mut tape = Tape::inference();
                let vars = tape.params(&self.model.params);
                let out = self.model.network.forward(&mut tape, &vars, inputs, &taus, None)?;
                let loss = tape.weighted_sse(out, &targets, &weights);
                Ok(tape.value(loss).item() * chunk.len() as f64 / n)
            })
            .collect();
        parts.into_iter().sum()
    }
}

fn clip_gradients(grads: &mut ParamSet, max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Evenly spaced subset of at most `count` windows, in order.
fn spread(windows: &[Window], count: Option<usize>) -> Vec<Window> {
    match count {
        Some(c) if c < windows.len() => (0..c).map(|i| windows[i * windows.len() / c]).collect(),
        _ => windows.to_vec(),
    }
}

/// Trains `start` on windows of `train`, reporting each epoch to `on_epoch`.
///
/// Diffusion kinds minimize the velocity loss with one diffusion time per
/// window; deterministic kinds minimize the NSE loss. Training resumes from
/// `start.epochs_done` with its optimizer state and step counter.
pub fn fit(
    start: Checkpoint,
    data: &Dataset,
    train: DateRange,
    validation: Option<DateRange>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    cfg.validate()?;
    if data.dims != start.model.config.dims {
        return Err(Error::arg("dataset and model sequence dimensions differ"));
    }
    let (train_windows, _) = data.windows(train, true);
    if train_windows.is_empty() {
        return Err(Error::arg("no complete training windows in the training range"));
    }
    let val_windows = match validation {
        Some(range) => spread(&data.windows(range, true).0, cfg.validation_windows),
        None => Vec::new(),
    };
    let per_epoch_windows = cfg.windows_per_epoch.map_or(train_windows.len(), |c| c.min(train_windows.len()));
    let steps_per_epoch = per_epoch_windows.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;

    let Checkpoint {
        mut model,
        optimizer,
        epochs_done,
    } = start;
    let mut opt = optimizer.unwrap_or_else(|| OptimizerState::new(&model.params));
    opt.check_matches(&model.params)?;
    let keep_best = model.kind().keeps_best_validation() && !val_windows.is_empty();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut trace = Vec::new();
    let mut last_epoch = epochs_done as usize;

    for epoch in epochs_done as usize..cfg.epochs {
        let mut order = train_windows.clone();
        RngStream::derive(cfg.seed, &[label::SHUFFLE, epoch as u64]).shuffle(&mut order);
        order.truncate(per_epoch_windows);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let step = opt.step;
            let eval = BatchEval { model: &model, data, cfg };
            let diverged = |loss: f64| Error::Diverged {
                epoch: epoch + 1,
                step: step as usize,
                loss,
            };
            let (loss, mut grads) = eval.gradient(batch, step).map_err(|e| match e {
                Error::Numeric(_) => diverged(f64::NAN),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            if let Some(c) = cfg.grad_clip {
                clip_gradients(&mut grads, c);
            }
            for (name, p) in model.params.iter_mut() {
                let hp = cfg.hyper(model.network.param_group(name), step, total_steps, steps_per_epoch);
                let m = opt.momentum.get_mut(name).expect("momentum mirrors parameters");
                lion_step(p.data_mut(), grads.expect(name).data(), m.data_mut(), hp).map_err(|_| diverged(loss))?;
            }
            lr = cfg.hyper(ParamGroup::Global, step, total_steps, steps_per_epoch).lr;
            opt.step += 1;
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = if val_windows.is_empty() {
            None
        } else {
            let v = BatchEval { model: &model, data, cfg }.loss(&val_windows)?;
            if !v.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    step: opt.step as usize,
                    loss: v,
                });
            }
            Some(v)
        };
        let log = EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / batches as f64,
            val_loss,
            lr,
        };
        on_epoch(&log);
        trace.push(log);
        if let (true, Some(v)) = (keep_best, val_loss) {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch + 1, model.params.clone()));
            }
        }
        last_epoch = epoch + 1;
    }

    let (selected, selected_epoch) = match best {
        Some((_, e, params)) => (Model::from_parts(model.config.clone(), params)?, e),
        None => (model.clone(), last_epoch),
    };
    Ok(FitResult {
        selected,
        selected_epoch,
        last: Checkpoint {
            model,
            optimizer: Some(opt),
            epochs_done: last_epoch as u32,
        },
        trace,
    })
}

/// Writes `epoch,train_loss,val_loss,lr`; a missing validation loss is empty.
pub fn write_loss_trace(path: &Path, trace: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for log in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            log.epoch,
            format_f64(log.train_loss),
            log.val_loss.map(format_f64).unwrap_or_default(),
            format_f64(log.lr)
        ));
    }
    write_atomic(path, out.as_bytes())
}
