//! Training and evaluation harness.
//!
//! Two training entry points share one loop: [`pretrain_digital`] updates
//! every base tensor (the desk-scale stand-in for large-corpus pretraining),
//! and [`train_ahwa_lora`] updates only the adapters (plus, optionally, the
//! classifier head) through the hardware-aware forward path while the
//! meta-weights stay frozen.

pub mod adam;
pub mod drift;
pub mod registry;
pub mod task;

pub use adam::{Adam, AdamConfig, ParamKey};
pub use drift::{
    drift_trial_metric, evaluate_drift, parse_time_label, DriftEvalPlan, DriftRow, TimePoint,
};
pub use registry::{account_params, swap_adapter, AdapterRegistry, ParamAccounting, RegisteredAdapter};
pub use task::{make_synthetic_task, Dataset, SyntheticTask, TaskKind, TaskSizes};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{ForwardMode, HwaNoiseSpec, TinyTransformer};
use crate::tile::ConverterSpec;
use crate::util::{derive_seed, stream_rng};
use crate::{Error, Result};

/// Optimization settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Also update the classifier-head meta-weights during adapter training.
    pub train_head: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            epochs: 15,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            train_head: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Config("lr must be >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss curve and bookkeeping of a completed run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub final_loss: f64,
}

/// Numerically stable softmax cross-entropy, mean over the batch. Returns
/// the loss and `d loss / d logits`.
pub fn softmax_cross_entropy(
    logits: ArrayView2<'_, f64>,
    labels: &[u8],
) -> Result<(f64, Array2<f64>)> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {} logit rows", labels.len(), b)));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::Domain(format!("label {l} >= {c} classes")));
    }
    let mut dlogits = Array2::zeros((b, c));
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label as usize];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            dlogits[(r, j)] = (p - f64::from(j == label as usize)) / b as f64;
        }
    }
    Ok((loss / b as f64, dlogits))
}

/// Batched argmax accuracy under any forward mode.
pub fn evaluate_accuracy(
    model: &TinyTransformer,
    data: &Dataset,
    mode: &ForwardMode<'_>,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut correct = 0usize;
    let bs = batch_size.max(1);
    for chunk_start in (0..data.len()).step_by(bs) {
        let end = (chunk_start + bs).min(data.len());
        let tokens = &data.inputs[chunk_start..end];
        let (logits, _) = model.forward(tokens, mode)?;
        for (r, &label) in data.labels[chunk_start..end].iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0usize;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Which tensors a run updates.
enum Trainables {
    /// Everything except the adapters: the pretraining phase.
    AllMeta,
    /// Adapters only (plus the head meta-weights when configured).
    LoraOnly { train_head: bool },
}

struct CollapseWatch {
    initial: Option<f64>,
    streak: usize,
}

impl CollapseWatch {
    fn new() -> Self {
        CollapseWatch { initial: None, streak: 0 }
    }

    /// NaN/Inf at any step, or 5x the initial loss for 50 consecutive steps.
    fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Collapse { step, loss });
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 5.0 * initial.max(1e-12) {
            self.streak += 1;
            if self.streak >= 50 {
                return Err(Error::Collapse { step, loss });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

fn run_training(
    model: &mut TinyTransformer,
    data: &Dataset,
    cfg: &TrainConfig,
    mode_spec: Option<(&HwaNoiseSpec, Option<&[ConverterSpec]>)>,
    trainables: Trainables,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
        total_steps,
    };
    let mut adam = Adam::new();
    let mut watch = CollapseWatch::new();
    let mut curve = Vec::with_capacity(total_steps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let head_slot = model.meta.slots.len() - 1;

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = stream_rng(cfg.seed, &[0xba7c, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let tokens: Vec<Vec<u16>> = chunk.iter().map(|&i| data.inputs[i].clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();

            let step_seed = derive_seed(cfg.seed, &[0x57e9, step as u64]);
            let mode = match mode_spec {
                Some((spec, convs)) => ForwardMode::TrainHwa { spec, convs, step_seed },
                None => ForwardMode::Digital,
            };
            let (logits, cache) = model.forward(&tokens, &mode)?;
            let (loss, dlogits) = softmax_cross_entropy(logits.view(), &labels)?;
            watch.observe(step, loss)?;
            curve.push(loss);

            let grads = model.backward(&cache, dlogits.view())?;
            adam.begin_step();
            match trainables {
                Trainables::AllMeta => {
                    for (i, dw) in grads.slot_dw.iter().enumerate() {
                        if let Some(dw) = dw {
                            adam.update(
                                &adam_cfg,
                                ParamKey::Meta(i),
                                model.meta.slots[i].as_slice_mut().unwrap(),
                                dw.as_slice().unwrap(),
                            );
                        }
                    }
                    adam.update(
                        &adam_cfg,
                        ParamKey::Pos,
                        model.meta.pos.as_slice_mut().unwrap(),
                        grads.dpos.as_slice().unwrap(),
                    );
                    for (i, (dg, db)) in grads.dln.iter().enumerate() {
                        adam.update(&adam_cfg, ParamKey::LnGamma(i), &mut model.meta.ln[i].0, dg);
                        adam.update(&adam_cfg, ParamKey::LnBeta(i), &mut model.meta.ln[i].1, db);
                    }
                }
                Trainables::LoraOnly { train_head } => {
                    for (i, g) in grads.lora.iter().enumerate() {
                        if let (Some((da, db)), Some(ad)) =
                            (g.as_ref(), model.lora.adapters[i].as_mut())
                        {
                            adam.update(
                                &adam_cfg,
                                ParamKey::LoraA(i),
                                ad.a.as_slice_mut().unwrap(),
                                da.as_slice().unwrap(),
                            );
                            adam.update(
                                &adam_cfg,
                                ParamKey::LoraB(i),
                                ad.b.as_slice_mut().unwrap(),
                                db.as_slice().unwrap(),
                            );
                        }
                    }
                    if train_head {
                        if let Some(dw) = &grads.slot_dw[head_slot] {
                            adam.update(
                                &adam_cfg,
                                ParamKey::Meta(head_slot),
                                model.meta.slots[head_slot].as_slice_mut().unwrap(),
                                dw.as_slice().unwrap(),
                            );
                        }
                    }
                }
            }
            step += 1;
        }
    }

    let final_loss = curve.last().copied().unwrap_or(f64::NAN);
    Ok(TrainReport { loss_curve: curve, steps: step, final_loss })
}

/// Desk-scale digital pretraining: full-precision forward, every base tensor
/// updates, adapters stay at their zero-update init.
pub fn pretrain_digital(
    model: &mut TinyTransformer,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_training(model, data, cfg, None, Trainables::AllMeta)
}

/// Adapter training under simulated hardware constraints. The meta-weights
/// must already be clipped and frozen (deployment step 1); only the LoRA
/// tensors update (plus the head meta-weights when `cfg.train_head`).
///
/// Training diverging (NaN/Inf loss, or a sustained blow-up past 5x the
/// initial loss) aborts with [`Error::Collapse`].
pub fn train_ahwa_lora(
    model: &mut TinyTransformer,
    data: &Dataset,
    cfg: &TrainConfig,
    spec: &HwaNoiseSpec,
    convs: Option<&[ConverterSpec]>,
) -> Result<TrainReport> {
    spec.validate()?;
    run_training(
        model,
        data,
        cfg,
        Some((spec, convs)),
        Trainables::LoraOnly { train_head: cfg.train_head },
    )
}
