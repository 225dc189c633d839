use std::fs;
use std::path::{Path, PathBuf};

use dcac_tape::{Tape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, ema_update, poly_lr, sgd_nesterov_step, zero_velocity};
use crate::data::{augment, sample_minibatch, Dataset, Patch};
use crate::error::{Error, Result};
use crate::eval::OverlapCounts;
use crate::inference::{sliding_window, InferenceConfig, Network};
use crate::losses::{cross_entropy_loss, domain_loss, soft_dice_loss, LossBreakdown};
use crate::model;
use crate::params::{Checkpoint, ParamStore};
use crate::planner::PlanConfig;
use crate::rng::seeded;

pub const BEST_CHECKPOINT: &str = "checkpoint_best.ckpt";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.ckpt";
pub const TRAINING_LOG: &str = "training_log.csv";

pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub velocity: ParamStore<f32>,
    pub ema_dice: Option<f64>,
    pub ema_domain_acc: Option<f64>,
    pub best_selection_score: f64,
    pub rng: ChaCha8Rng,
    /// Optimizer steps taken.
    pub steps: usize,
}

impl TrainState {
    pub fn new(params: &ParamStore<f32>, plan: &PlanConfig, seed: u64) -> Self {
        TrainState {
            epoch: 0,
            lr: plan.initial_lr,
            velocity: zero_velocity(params),
            ema_dice: None,
            ema_domain_acc: None,
            best_selection_score: f64::NEG_INFINITY,
            rng: seeded(seed, &[11]),
            steps: 0,
        }
    }
}

/// Stacks patches into `[B, C, P, P]` plus flat labels and domain ids.
pub fn batch_tensors(patches: &[Patch]) -> Result<(Tensor<f32>, Vec<u8>, Vec<usize>)> {
    let p = patches.first().map_or(0, |q| q.size);
    let c = patches.first().map_or(0, |q| q.image.len() / (p * p).max(1));
    let image: Vec<f32> = patches.iter().flat_map(|q| q.image.iter().copied()).collect();
    let target = patches.iter().flat_map(|q| q.mask.iter().copied()).collect();
    let domains = patches.iter().map(|q| q.domain).collect();
    let x = Tensor::from_vec(&[patches.len(), c, p, p], image).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((x, target, domains))
}

/// One optimizer step on `patches`.
pub fn train_step(
    params: &mut ParamStore<f32>,
    plan: &PlanConfig,
    patches: &[Patch],
    state: &mut TrainState,
    lr: f64,
) -> Result<LossBreakdown> {
    let (x, target, domains) = batch_tensors(patches)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let xv = tape.constant(x);
    let out = model::forward(&mut tape, &bound, plan, xv)?;
    let probs = tape.softmax(out.logits);
    let (dice, g_dice) = soft_dice_loss(tape.value(probs), &target, plan.dice_smooth)?;
    let (ce, g_ce) = cross_entropy_loss(tape.value(out.logits), &target)?;
    let mut seeds = vec![(probs, g_dice), (out.logits, g_ce)];
    let mut dom = 0.0;
    if let Some(dp) = out.domain_probs {
        let (l, mut g) = domain_loss(tape.value(dp), &domains)?;
        g.scale(plan.domain_loss_weight as f32);
        dom = l;
        seeds.push((dp, g));
    }
    let losses = LossBreakdown::new(dice, ce, dom, if plan.dcac_enabled { plan.domain_loss_weight } else { 0.0 });
    if !losses.total.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss at epoch {}", state.epoch)));
    }
    let mut grads = tape.backward(seeds);
    let mut grads = params.gradients(&bound, &mut grads);
    drop(tape);
    if let Some(max) = plan.grad_clip_norm {
        clip_grad_norm(&mut grads, max);
    }
    sgd_nesterov_step(params, &grads, &mut state.velocity, lr, plan.momentum)?;
    state.steps += 1;
    Ok(losses)
}

/// `minibatches_per_epoch` steps at the epoch's polynomial learning rate;
/// returns the mean losses.
pub fn train_epoch(params: &mut ParamStore<f32>, train: &Dataset, plan: &PlanConfig, state: &mut TrainState) -> Result<LossBreakdown> {
    let lr = poly_lr(state.epoch, plan.epochs, plan.initial_lr, plan.poly_exponent)?;
    state.lr = lr;
    let mut sum = LossBreakdown::default();
    for _ in 0..plan.minibatches_per_epoch {
        let batch = sample_minibatch(train, plan, &mut state.rng)?;
        let batch = augment(batch, &plan.augment, &mut state.rng);
        let l = train_step(params, plan, &batch, state, lr)?;
        sum.dice_loss += l.dice_loss;
        sum.ce_loss += l.ce_loss;
        sum.domain_loss += l.domain_loss;
    }
    let n = plan.minibatches_per_epoch as f64;
    let lambda = if plan.dcac_enabled { plan.domain_loss_weight } else { 0.0 };
    Ok(LossBreakdown::new(sum.dice_loss / n, sum.ce_loss / n, sum.domain_loss / n, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// Mean per-image foreground Dice of the argmax prediction.
    pub dice: f64,
    /// Fraction of images whose predicted domain is the true one; DCAC only.
    pub domain_accuracy: Option<f64>,
}

/// Sliding-window prediction without mirroring on every validation image.
pub fn validate(params: &ParamStore<f32>, plan: &PlanConfig, val: &Dataset) -> Result<Validation> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let net = Network { plan: plan.clone(), params: params.clone() };
    let cfg = InferenceConfig::without_tta();
    let (mut dice, mut correct) = (0.0, 0usize);
    for s in &val.samples {
        let pred = sliding_window(&s.image, &net, &cfg)?;
        dice += OverlapCounts::of(&pred.to_mask(None), &s.mask)?.dice();
        correct += (pred.predicted_domain() == Some(s.domain)) as usize;
    }
    let n = val.len() as f64;
    Ok(Validation { dice: dice / n, domain_accuracy: plan.dcac_enabled.then(|| correct as f64 / n) })
}

/// Updates the EMAs and reports whether the selection score strictly improved.
/// The score is `ema_dice`, or the mean of `ema_dice` and `ema_domain_acc` with DCAC.
pub fn validate_and_select(state: &mut TrainState, v: &Validation, alpha: f64) -> bool {
    let ema_dice = ema_update(state.ema_dice, v.dice, alpha);
    state.ema_dice = Some(ema_dice);
    let score = match v.domain_accuracy {
        Some(acc) => {
            let e = ema_update(state.ema_domain_acc, acc, alpha);
            state.ema_domain_acc = Some(e);
            (ema_dice + e) / 2.0
        }
        None => ema_dice,
    };
    let selected = score > state.best_selection_score;
    if selected {
        state.best_selection_score = score;
    }
    selected
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub dice_loss: f64,
    pub ce_loss: f64,
    pub domain_loss: f64,
    pub val_dice: f64,
    pub ema_dice: f64,
    pub ema_domain_acc: Option<f64>,
    pub selected: bool,
}

pub fn write_training_log(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["epoch", "lr", "dice_loss", "ce_loss", "domain_loss", "val_dice", "ema_dice", "ema_domain_acc", "selected"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub best_epoch: Option<usize>,
    pub best_selection_score: f64,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_ema_dice: Option<f64>,
    pub final_ema_domain_acc: Option<f64>,
}

/// Trains from `params` for `plan.epochs` epochs, validating after each and
/// writing the selected and final checkpoints plus the per-epoch log into `dir`.
pub fn fit(
    mut params: ParamStore<f32>,
    plan: &PlanConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
    dir: &Path,
    meta: serde_json::Value,
) -> Result<(ParamStore<f32>, FitResult)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut state = TrainState::new(&params, plan, seed);
    let mut records = Vec::with_capacity(plan.epochs);
    let mut best_epoch = None;
    let log_path = dir.join(TRAINING_LOG);
    let best_path = dir.join(BEST_CHECKPOINT);
    let checkpoint = |params: &ParamStore<f32>, epoch: usize, score: f64| Checkpoint {
        plan: plan.clone(),
        meta: serde_json::json!({ "run": meta, "epoch": epoch, "selection_score": score }),
        params: params.clone(),
    };
    for epoch in 0..plan.epochs {
        state.epoch = epoch;
        let losses = train_epoch(&mut params, train, plan, &mut state)?;
        let v = validate(&params, plan, val)?;
        let selected = validate_and_select(&mut state, &v, plan.ema_alpha);
        if selected {
            best_epoch = Some(epoch);
            checkpoint(&params, epoch, state.best_selection_score).save(&best_path)?;
        }
        log::info!(
            "epoch {epoch:>4} lr {:.5} dice {:.4} ce {:.4} dom {:.4} val_dice {:.4} ema {:.4}{}",
            state.lr,
            losses.dice_loss,
            losses.ce_loss,
            losses.domain_loss,
            v.dice,
            state.ema_dice.unwrap_or(0.0),
            if selected { " *" } else { "" }
        );
        records.push(EpochRecord {
            epoch,
            lr: state.lr,
            dice_loss: losses.dice_loss,
            ce_loss: losses.ce_loss,
            domain_loss: losses.domain_loss,
            val_dice: v.dice,
            ema_dice: state.ema_dice.unwrap_or(v.dice),
            ema_domain_acc: state.ema_domain_acc,
            selected,
        });
        write_training_log(&records, &log_path)?;
    }
    let final_path = dir.join(FINAL_CHECKPOINT);
    checkpoint(&params, plan.epochs, state.best_selection_score).save(&final_path)?;
    if best_epoch.is_none() {
        // Zero epochs: the initial parameters are the only candidate.
        checkpoint(&params, 0, f64::NAN).save(&best_path)?;
        write_training_log(&records, &log_path)?;
    }
    let result = FitResult {
        best_epoch,
        best_selection_score: state.best_selection_score,
        best_checkpoint: best_path,
        final_checkpoint: final_path,
        log: log_path,
        final_ema_dice: state.ema_dice,
        final_ema_domain_acc: state.ema_domain_acc,
    };
    Ok((params, result))
}
