//! Adam training with a step-decayed learning rate and early stopping on
//! the validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::losses::{
    contour_loss_var, dist_loss_var, seg_loss_var, total_loss, LossBreakdown, LossSwitches,
    OneHotTarget,
};
use crate::tensor::{Gradients, ParamSet, Tape, Tensor, Var};
use crate::unet::{NetConfig, UNet};

/// The four training configurations compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    Dist,
    Contour,
    Both,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::Dist, Arm::Contour, Arm::Both];

    pub fn switches(self) -> LossSwitches {
        LossSwitches {
            seg: true,
            dist: matches!(self, Arm::Dist | Arm::Both),
            contour: matches!(self, Arm::Contour | Arm::Both),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Dist => "dist",
            Arm::Contour => "contour",
            Arm::Both => "both",
        }
    }

    /// Row label in the summary table.
    pub fn title(self) -> &'static str {
        match self {
            Arm::Baseline => "U-Net",
            Arm::Dist => "U-Net + distance",
            Arm::Contour => "U-Net + contour",
            Arm::Both => "U-Net + distance,contour",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown arm {s:?}")))
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub decay_interval: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum validation improvement that resets the patience counter.
    pub min_delta: f64,
    pub arm: Arm,
    /// Set from the run-level seed; not part of the `[train]` table.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            batch_size: 4,
            decay_factor: 0.5,
            decay_interval: 20,
            max_epochs: 60,
            patience: 10,
            min_delta: 1e-5,
            arm: Arm::Both,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.lr0.is_finite()
            && self.batch_size >= 1
            && self.max_epochs >= 1
            && self.patience >= 1
            && self.decay_interval >= 1
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0
            && self.min_delta >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid train config {self:?}")));
        }
        Ok(())
    }
}

/// `lr0 × decay_factor^⌊epoch / decay_interval⌋`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let halvings = (epoch / config.decay_interval) as i32;
    config.lr0 * config.decay_factor.powi(halvings)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros_like(p.value())).collect();
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients held in `params`.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if state.first.len() != params.len() {
        return Err(Error::InvalidShape("Adam state does not match the parameter set".into()));
    }
    if let Some(p) = params.iter().find(|p| !p.grad().is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient in parameter {}", p.name())));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let (value, grad) = p.parts_mut();
        if m.shape() != value.shape() {
            return Err(Error::InvalidShape(format!("Adam moments do not match {:?}", value.shape())));
        }
        for (((x, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has failed to improve by at least
/// `min_delta` for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if self.best_epoch.is_none() || loss <= self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

/// Record the enabled losses for one sample; returns the total and the
/// per-term values (disabled terms reported as 0).
pub fn sample_loss(
    tape: &mut Tape,
    model: &UNet,
    sample: &Sample,
    switches: LossSwitches,
) -> Result<(Var, LossBreakdown)> {
    let image = tape.leaf(sample.image.clone());
    let out = model.forward_on_tape(tape, image)?;
    let seg_target = OneHotTarget::from_labels(&sample.labels);
    let probs = tape.softmax_channel(out.seg_logits)?;
    let seg = seg_loss_var(tape, probs, &seg_target)?;
    let mut total = seg;
    let mut contour = None;
    let mut dist = None;
    if switches.contour {
        let target = OneHotTarget::from_contour(&sample.contour);
        let probs = tape.softmax_channel(out.contour_logits)?;
        let c = contour_loss_var(tape, probs, &target)?;
        total = tape.add(total, c)?;
        contour = Some(c);
    }
    if switches.dist {
        let d = dist_loss_var(tape, out.dist, &sample.distance)?;
        total = tape.add(total, d)?;
        dist = Some(d);
    }
    let scalar = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
    let breakdown = total_loss(
        tape.value(seg).data()[0],
        scalar(contour),
        scalar(dist),
        switches,
    )?;
    Ok((total, breakdown))
}

fn sample_gradients(model: &UNet, sample: &Sample, switches: LossSwitches) -> Result<(Gradients, LossBreakdown)> {
    let mut tape = Tape::new();
    let (loss, breakdown) = sample_loss(&mut tape, model, sample, switches)?;
    Ok((tape.backward(loss)?, breakdown))
}

/// Mean losses of `model` over `samples` without updating anything.
pub fn evaluate_losses(model: &UNet, samples: &[Sample], switches: LossSwitches) -> Result<LossBreakdown> {
    let parts: Vec<LossBreakdown> = samples
        .par_iter()
        .map(|s| sample_loss(&mut Tape::new(), model, s, switches).map(|(_, b)| b))
        .collect::<Result<_>>()?;
    Ok(mean_breakdown(&parts))
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let mut acc = LossBreakdown {
        seg: 0.0,
        contour: 0.0,
        dist: 0.0,
        total: 0.0,
    };
    for p in parts {
        acc.seg += p.seg;
        acc.contour += p.contour;
        acc.dist += p.dist;
        acc.total += p.total;
    }
    LossBreakdown {
        seg: acc.seg / n,
        contour: acc.contour / n,
        dist: acc.dist / n,
        total: acc.total / n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: LogSplit,
    pub losses: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogSplit {
    Train,
    Val,
}

impl LogSplit {
    pub fn name(self) -> &'static str {
        match self {
            LogSplit::Train => "train",
            LogSplit::Val => "val",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation loss.
    pub model: UNet,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

fn check_finite(epoch: usize, b: &LossBreakdown) -> Result<()> {
    if [b.seg, b.contour, b.dist, b.total].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training {
            epoch,
            reason: format!("non-finite loss {b:?}"),
        })
    }
}

/// Train a freshly built model. Mini-batches are drawn from a seeded
/// shuffle; per-sample gradients may be computed in parallel but are always
/// reduced in batch order, so results do not depend on the thread count.
pub fn train(train_set: &[Sample], val_set: &[Sample], net: NetConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    let mut model = UNet::build(net, config.seed)?;
    for s in train_set.iter().chain(val_set) {
        model.check_input(&s.image)?;
        if s.labels.num_classes() != net.num_classes {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, network {}",
                s.labels.num_classes(),
                net.num_classes
            )));
        }
    }
    let switches = config.arm.switches();
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = model.params().clone();
    let mut log = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        let lr = lr_schedule(epoch, config);
        order.shuffle(&mut rng);
        let mut seen = Vec::with_capacity(train_set.len());
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(Gradients, LossBreakdown)> = batch
                .par_iter()
                .map(|&i| sample_gradients(&model, &train_set[i], switches))
                .collect::<Result<_>>()?;
            let params = model.params_mut();
            params.zero_grad();
            for (grads, breakdown) in &results {
                check_finite(epoch, breakdown)?;
                grads.accumulate_into(params)?;
                seen.push(*breakdown);
            }
            params.scale_grads(1.0 / batch.len() as f64);
            adam_step(params, &mut adam, lr).map_err(|e| Error::Training {
                epoch,
                reason: e.to_string(),
            })?;
        }
        let train_losses = mean_breakdown(&seen);
        let val_losses = evaluate_losses(&model, val_set, switches)?;
        check_finite(epoch, &val_losses)?;
        log.push(EpochRecord {
            epoch,
            split: LogSplit::Train,
            losses: train_losses,
        });
        log.push(EpochRecord {
            epoch,
            split: LogSplit::Val,
            losses: val_losses,
        });
        epochs_run = epoch + 1;
        match stopper.observe(epoch, val_losses.total) {
            StopDecision::Improved => best = model.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch when max_epochs ≥ 1");
    let model = UNet::from_params(net, config.seed, best)?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_loss,
        epochs_run,
    })
}
