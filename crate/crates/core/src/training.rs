//! Losses, optimisers, the step learning-rate schedule and the epoch loops
//! for the alignment network and the depth network.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, Augmenter, Sample};
use crate::autograd::{Tape, Var};
use crate::codec::{encode, GaussianSpec};
use crate::data::checkpoint::{save_checkpoint, CheckpointMeta, ModelConfig};
use crate::data::scheme::Scheme;
use crate::error::{Error, Result};
use crate::nn::{heatmaps_to_image_resolution, DepthNet, Fan, Mode, ParamStore, Session};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epoch: usize,
    pub lr: f64,
}

/// Learning rate in effect during `epoch`: the rate of the last step whose
/// epoch is `<= epoch`.
pub fn lr_at(epoch: usize, schedule: &[LrStep]) -> f64 {
    schedule
        .iter()
        .take_while(|s| s.epoch <= epoch)
        .last()
        .or(schedule.first())
        .map_or(0.0, |s| s.lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimiserConfig {
    Sgd,
    #[serde(alias = "rmsprop")]
    RmsProp { alpha: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimiserConfig {
    fn default() -> Self {
        OptimiserConfig::RmsProp {
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared heatmap error summed over stacks.
    HeatmapMse,
    /// Mean squared depth error.
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_schedule: Vec<LrStep>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimiser: OptimiserConfig,
    pub loss: LossKind,
    pub loss_visibility_masking: bool,
    /// Stop after this many optimiser steps, even mid-epoch.
    pub max_steps: Option<usize>,
    /// Write a checkpoint every this many epochs when an output directory
    /// is given.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::fan()
    }
}

impl TrainConfig {
    /// Alignment-network protocol: 1e-4, dropped tenfold at epochs 15 and
    /// 30, 40 epochs, mini-batches of 10.
    pub fn fan() -> Self {
        TrainConfig {
            lr_schedule: vec![
                LrStep { epoch: 0, lr: 1e-4 },
                LrStep { epoch: 15, lr: 1e-5 },
                LrStep { epoch: 30, lr: 1e-6 },
            ],
            epochs: 40,
            batch_size: 10,
            optimiser: OptimiserConfig::default(),
            loss: LossKind::HeatmapMse,
            loss_visibility_masking: true,
            max_steps: None,
            checkpoint_every: None,
        }
    }

    /// Depth-network protocol: constant 1e-3 for 50 epochs with an L2 loss.
    pub fn depth() -> Self {
        TrainConfig {
            lr_schedule: vec![LrStep { epoch: 0, lr: 1e-3 }],
            epochs: 50,
            loss: LossKind::L2,
            ..TrainConfig::fan()
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, &self.lr_schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("train.max_steps must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("train.checkpoint_every must be at least 1".into()));
        }
        let first = self
            .lr_schedule
            .first()
            .ok_or_else(|| Error::Config("train.lr_schedule is empty".into()))?;
        if first.epoch != 0 {
            return Err(Error::Config("train.lr_schedule must start at epoch 0".into()));
        }
        for s in &self.lr_schedule {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {} must be positive", s.lr)));
            }
        }
        for w in self.lr_schedule.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::Config("train.lr_schedule epochs must increase".into()));
            }
            if w[1].lr > w[0].lr {
                return Err(Error::Config("train.lr_schedule rates must not increase".into()));
            }
        }
        match self.optimiser {
            OptimiserConfig::Sgd => {}
            OptimiserConfig::RmsProp { alpha, eps } => {
                if !(0.0..1.0).contains(&alpha) || eps <= 0.0 {
                    return Err(Error::Config("rms_prop needs alpha in [0,1) and eps > 0".into()));
                }
            }
            OptimiserConfig::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                    return Err(Error::Config("adam needs betas in [0,1) and eps > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// A scalar loss on the tape. `all_masked` is set when masking removed every
/// element, in which case the loss is defined as zero.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    pub value: Var,
    pub all_masked: bool,
}

/// Builds a 0/1 mask of `shape` from per-(sample, channel) flags. Every
/// trailing element of a channel shares its flag.
fn channel_mask<T: Real>(shape: &[usize], visible: &[bool]) -> Result<Tensor<T>> {
    let channels = shape[0] * shape.get(1).copied().unwrap_or(1);
    if visible.len() != channels {
        return Err(Error::Shape(format!(
            "{} visibility flags for prediction {shape:?}",
            visible.len()
        )));
    }
    let per = shape.iter().product::<usize>() / channels.max(1);
    let data = visible
        .iter()
        .flat_map(|&v| std::iter::repeat_n(if v { T::one() } else { T::zero() }, per))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Mean of squared differences over the unmasked elements of `pred`.
/// `visible` has one flag per (sample, channel); `None` keeps everything.
fn masked_mse<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    visible: Option<&[bool]>,
) -> Result<Loss> {
    let shape = tape.value(pred).shape().to_vec();
    if shape != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {shape:?} and target {:?} differ",
            target.shape()
        )));
    }
    let t = tape.leaf(target.clone());
    let mut diff = tape.sub(pred, t)?;
    let total = shape.iter().product::<usize>();
    let count = match visible {
        Some(flags) => {
            let mask = channel_mask::<T>(&shape, flags)?;
            let kept = mask.data().iter().filter(|&&v| v > T::zero()).count();
            let m = tape.leaf(mask);
            diff = tape.mul(diff, m)?;
            kept
        }
        None => total,
    };
    let sq = tape.mul(diff, diff)?;
    let sum = tape.sum(sq);
    let inv = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    Ok(Loss {
        value: tape.scale(sum, T::from_f64_lossy(inv)),
        all_masked: count == 0,
    })
}

/// Heatmap MSE: the mean squared error over every cell of the channels
/// whose landmark is visible. `visible` has `N·m` flags in sample-major
/// order; without it all channels count.
pub fn heatmap_mse<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    visible: Option<&[bool]>,
) -> Result<Loss> {
    masked_mse(tape, pred, target, visible)
}

/// Intermediate supervision: unweighted sum of the per-stack heatmap MSEs.
pub fn fan_loss<T: Real>(
    tape: &mut Tape<T>,
    stacks: &[Var],
    target: &Tensor<T>,
    visible: Option<&[bool]>,
) -> Result<Loss> {
    let (first, rest) = stacks
        .split_first()
        .ok_or_else(|| Error::Shape("loss needs at least one stack output".into()))?;
    let mut total = heatmap_mse(tape, *first, target, visible)?;
    for &p in rest {
        let l = heatmap_mse(tape, p, target, visible)?;
        total.value = tape.add(total.value, l.value)?;
    }
    Ok(total)
}

/// Mean squared depth error over visible landmarks; `pred` is (N, Nl).
pub fn depth_l2<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    visible: Option<&[bool]>,
) -> Result<Loss> {
    masked_mse(tape, pred, target, visible)
}

/// Per-parameter optimiser state, laid out in parameter registration order.
#[derive(Clone, Debug)]
pub struct Optimiser {
    pub config: OptimiserConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimiser {
    pub fn new(config: OptimiserConfig) -> Self {
        Optimiser {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    /// Updates every trainable parameter from its accumulated gradient.
    /// When any gradient is non-finite nothing is changed and the offending
    /// parameter's name is returned.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<(), String> {
        if let Some(bad) = params
            .iter()
            .find(|p| p.trainable && !p.grad.all_finite())
        {
            return Err(bad.name.clone());
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let grads = p.grad.data().to_vec();
            for (j, (w, g)) in p.tensor.data_mut().iter_mut().zip(grads).enumerate() {
                let g = g.to_f64_lossy();
                let delta = match self.config {
                    OptimiserConfig::Sgd => lr * g,
                    OptimiserConfig::RmsProp { alpha, eps } => {
                        v[j] = alpha * v[j] + (1.0 - alpha) * g * g;
                        lr * g / (v[j].sqrt() + eps)
                    }
                    OptimiserConfig::Adam { beta1, beta2, eps } => {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let mh = m[j] / (1.0 - beta1.powi(t));
                        let vh = v[j] / (1.0 - beta2.powi(t));
                        lr * mh / (vh.sqrt() + eps)
                    }
                };
                *w = T::from_f64_lossy(w.to_f64_lossy() - delta);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// One record per optimiser step.
    pub log: Vec<LossRecord>,
    pub epoch_mean_loss: Vec<f64>,
    pub steps: usize,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,step,loss\n");
        for r in &self.log {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.step, r.loss));
        }
        s
    }

    fn record(&mut self, epoch: usize, loss: f64, all_masked: bool, batch: usize) {
        if all_masked {
            self.warnings.push(format!(
                "epoch {epoch}, batch {batch}: every landmark masked, loss taken as 0"
            ));
        }
        self.log.push(LossRecord {
            epoch,
            step: self.steps,
            loss,
        });
        self.steps += 1;
    }
}

/// Where and how often to write checkpoints during training.
#[derive(Clone, Copy, Debug)]
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub scheme: &'a str,
}

/// Shared epoch/batch iteration: deterministic shuffles from `seed`, one
/// augmentation stream index per (epoch, sample) pair.
fn run_epochs(
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    mut step: impl FnMut(usize, usize, &[usize], &mut TrainReport) -> Result<()>,
    mut epoch_end: impl FnMut(usize) -> Result<()>,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let start = report.log.len();
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            step(epoch, batch, idx, &mut report)?;
        }
        let losses = &report.log[start..];
        if !losses.is_empty() {
            report
                .epoch_mean_loss
                .push(losses.iter().map(|r| r.loss).sum::<f64>() / losses.len() as f64);
            epoch_end(epoch)?;
        }
        if cfg.max_steps.is_some_and(|m| report.steps >= m) {
            break 'epochs;
        }
    }
    Ok(report)
}

fn check_samples(samples: &[Sample], scheme: &Scheme, m: usize, hw: (usize, usize)) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if scheme.m != m {
        return Err(Error::Config(format!(
            "scheme {} has {} landmarks but the model predicts {m}",
            scheme.id, scheme.m
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.landmarks.len() != m || s.landmarks.scheme != scheme.id {
            return Err(Error::Data(format!(
                "sample {i}: {} landmarks under scheme {}, expected {m} under {}",
                s.landmarks.len(),
                s.landmarks.scheme,
                scheme.id
            )));
        }
        if s.image.hw() != hw {
            return Err(Error::Data(format!(
                "sample {i}: image is {:?}, network expects {hw:?}",
                s.image.hw()
            )));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn apply_step<T: Real>(
    session: Session<T>,
    loss: Loss,
    params: &mut ParamStore<T>,
    optimiser: &mut Optimiser,
    lr: f64,
    epoch: usize,
    batch: usize,
    report: &mut TrainReport,
) -> Result<()> {
    let value = session.tape.value(loss.value).item().to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::Diverged { epoch, batch });
    }
    params.zero_grad();
    session.backward(loss.value, params)?;
    optimiser
        .step(params, lr)
        .map_err(|param| Error::NonFiniteGradient { param, epoch, batch })?;
    session.commit(params);
    report.record(epoch, value, loss.all_masked, batch);
    Ok(())
}

/// Trains the alignment network in place. Shuffling follows `seed`;
/// augmentation follows `augment.seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_fan(
    fan: &mut Fan<f32>,
    samples: &[Sample],
    scheme: &Scheme,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    codec: &GaussianSpec,
    seed: u64,
    sink: Option<CheckpointSink<'_>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.loss != LossKind::HeatmapMse {
        return Err(Error::Config("the alignment network trains with heatmap_mse".into()));
    }
    let fc = fan.config().clone();
    check_samples(samples, scheme, fc.m_landmarks, fc.input_hw)?;
    let augmenter = Augmenter::new(augment.clone(), scheme)?;
    let mut optimiser = Optimiser::new(cfg.optimiser);
    let n = samples.len();
    let fan_cell = std::cell::RefCell::new(fan);

    run_epochs(
        n,
        cfg,
        seed,
        |epoch, batch, idx, report| {
            let mut images = Vec::with_capacity(idx.len());
            let mut targets = Vec::with_capacity(idx.len());
            let mut visible = Vec::with_capacity(idx.len() * fc.m_landmarks);
            for &i in idx {
                let s = augmenter.apply(&samples[i], (epoch * n + i) as u64);
                let enc = encode::<f32>(&s.landmarks, fc.input_hw, fc.heatmap_hw, codec)?;
                for (v, oob) in s.landmarks.visible.iter().zip(&enc.out_of_bounds) {
                    visible.push(*v && !oob);
                }
                images.push(s.image.to_tensor::<f32>());
                targets.push(enc.heatmaps);
            }
            let images = Tensor::stack(&images)?;
            let target = Tensor::stack(&targets)?;
            let mut fan = fan_cell.borrow_mut();
            let mut s = Session::new(Mode::Train);
            let x = s.input(images);
            let outs = fan.forward(&mut s, x)?;
            let mask = cfg.loss_visibility_masking.then_some(visible.as_slice());
            let loss = fan_loss(&mut s.tape, &outs, &target, mask)?;
            let lr = cfg.lr_at(epoch);
            apply_step(s, loss, &mut fan.params, &mut optimiser, lr, epoch, batch, report)
        },
        |epoch| {
            let (Some(sink), Some(every)) = (sink, cfg.checkpoint_every) else {
                return Ok(());
            };
            if (epoch + 1) % every != 0 {
                return Ok(());
            }
            let fan = fan_cell.borrow();
            let meta = CheckpointMeta {
                model: ModelConfig::Fan(fan.config().clone()),
                scheme: sink.scheme.to_string(),
                epoch: epoch + 1,
            };
            save_checkpoint(&fan.params, &meta, &sink.dir.join(format!("epoch_{:04}.ckpt", epoch + 1)))
        },
    )
}

/// Trains the depth network in place on ground-truth heatmaps rendered at
/// the heatmap resolution of `heatmap_hw` and resampled to the image. Every
/// sample must carry depth values.
#[allow(clippy::too_many_arguments)]
pub fn train_depth(
    net: &mut DepthNet<f32>,
    samples: &[Sample],
    scheme: &Scheme,
    heatmap_hw: (usize, usize),
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    codec: &GaussianSpec,
    seed: u64,
    sink: Option<CheckpointSink<'_>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.loss != LossKind::L2 {
        return Err(Error::Config("the depth network trains with the l2 loss".into()));
    }
    let dc = net.config().clone();
    check_samples(samples, scheme, dc.n_landmarks, dc.input_hw)?;
    if let Some(i) = samples.iter().position(|s| s.landmarks.depth.is_none()) {
        return Err(Error::Data(format!("sample {i} has no depth values")));
    }
    let augmenter = Augmenter::new(augment.clone(), scheme)?;
    let mut optimiser = Optimiser::new(cfg.optimiser);
    let n = samples.len();
    let net_cell = std::cell::RefCell::new(net);

    run_epochs(
        n,
        cfg,
        seed,
        |epoch, batch, idx, report| {
            let mut images = Vec::with_capacity(idx.len());
            let mut heatmaps = Vec::with_capacity(idx.len());
            let mut depths = Vec::with_capacity(idx.len() * dc.n_landmarks);
            let mut visible = Vec::with_capacity(idx.len() * dc.n_landmarks);
            for &i in idx {
                let s = augmenter.apply(&samples[i], (epoch * n + i) as u64);
                let enc = encode::<f32>(&s.landmarks, dc.input_hw, heatmap_hw, codec)?;
                images.push(s.image.to_tensor::<f32>());
                heatmaps.push(enc.heatmaps);
                let z = s.landmarks.depth.as_ref().expect("checked above");
                depths.extend(z.iter().map(|&v| v as f32));
                visible.extend(&s.landmarks.visible);
            }
            let images = Tensor::stack(&images)?;
            let hm = heatmaps_to_image_resolution(&Tensor::stack(&heatmaps)?, dc.input_hw)?;
            let target = Tensor::new(vec![idx.len(), dc.n_landmarks], depths)?;
            let mut net = net_cell.borrow_mut();
            let mut s = Session::new(Mode::Train);
            let (xi, xh) = (s.input(images), s.input(hm));
            let out = net.forward(&mut s, xi, xh)?;
            let mask = cfg.loss_visibility_masking.then_some(visible.as_slice());
            let loss = depth_l2(&mut s.tape, out, &target, mask)?;
            let lr = cfg.lr_at(epoch);
            apply_step(s, loss, &mut net.params, &mut optimiser, lr, epoch, batch, report)
        },
        |epoch| {
            let (Some(sink), Some(every)) = (sink, cfg.checkpoint_every) else {
                return Ok(());
            };
            if (epoch + 1) % every != 0 {
                return Ok(());
            }
            let net = net_cell.borrow();
            let meta = CheckpointMeta {
                model: ModelConfig::Depth(net.config().clone()),
                scheme: sink.scheme.to_string(),
                epoch: epoch + 1,
            };
            save_checkpoint(&net.params, &meta, &sink.dir.join(format!("depth_epoch_{:04}.ckpt", epoch + 1)))
        },
    )
}
