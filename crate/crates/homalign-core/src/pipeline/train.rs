//! Two-stage unsupervised training.
//!
//! Stage 1 disables the attention role of the mask (G = F); after the
//! configured fraction of iterations, stage 2 re-enables the weighting
//! G = F⊙M. The mask keeps its loss-weighting role in both stages. Adam
//! updates follow the published schedule: the learning rate multiplies by
//! the decay factor at every decay interval, with no reset at the stage
//! boundary. Training is bit-reproducible given (seed, config) on one
//! thread; batches are processed sequentially with a fixed gradient
//! reduction order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::{PairSource, PipelineError};
use crate::checkpoint::save_model;
use crate::element::Element;
use crate::models::{ForwardOptions, ModelConfig, ModelParams};
use crate::objective::{total_loss, LossConfig};
use crate::tensor::Tensor;
#[allow(unused_imports)]
use num_traits::Float;

/// Ablation arms of the published study plus the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Neither attention weighting nor loss weighting.
    NoMask,
    /// Attention weighting only; the alignment loss is a plain mean L1.
    MaskAttentionOnly,
    /// Loss weighting only; G = F in the forward path.
    MaskRansacOnly,
    /// Drop the −λ·L(I_a, I_b) term.
    NoTripletTerm,
    /// F = I: the loss compares raw intensities.
    NoFeatureExtractor,
    /// Single-stage training: attention enabled from the first iteration.
    TrainFromScratch,
}

impl Ablation {
    /// Table-style ordering: mask roles, triplet term, feature extractor,
    /// training strategy, then the full model.
    pub const ALL: [Ablation; 7] = [
        Ablation::NoMask,
        Ablation::MaskAttentionOnly,
        Ablation::MaskRansacOnly,
        Ablation::NoTripletTerm,
        Ablation::NoFeatureExtractor,
        Ablation::TrainFromScratch,
        Ablation::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMask => "no_mask",
            Ablation::MaskAttentionOnly => "mask_attention_only",
            Ablation::MaskRansacOnly => "mask_ransac_only",
            Ablation::NoTripletTerm => "no_triplet_term",
            Ablation::NoFeatureExtractor => "no_feature_extractor",
            Ablation::TrainFromScratch => "train_from_scratch",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown ablation {s:?}")))
    }

    /// Forward switches for a given stage.
    pub fn forward_options(self, stage2: bool) -> ForwardOptions {
        let mask_attention = match self {
            Ablation::NoMask | Ablation::MaskRansacOnly => false,
            Ablation::TrainFromScratch => true,
            _ => stage2,
        };
        ForwardOptions {
            mask_attention,
            identity_features: self == Ablation::NoFeatureExtractor,
        }
    }

    /// Forward switches at evaluation time (stage-2 behavior).
    pub fn eval_options(self) -> ForwardOptions {
        self.forward_options(true)
    }

    pub fn loss_config(self, base: LossConfig) -> LossConfig {
        LossConfig {
            mask_in_loss: !matches!(self, Ablation::NoMask | Ablation::MaskAttentionOnly),
            triplet_term: self != Ablation::NoTripletTerm,
            ..base
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub total_iterations: u64,
    /// Fraction of iterations spent in stage 1 (attention disabled).
    pub stage1_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Learning-rate multiplier applied every `decay_interval` iterations.
    pub lr_decay_factor: f64,
    pub decay_interval: u64,
    pub lambda: f64,
    pub mu: f64,
    pub loss_epsilon: f64,
    pub detach_denominator: bool,
    pub ablation: Ablation,
    /// Periodic checkpoint interval; 0 keeps only the final checkpoint.
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// The published schedule: 120k iterations, batch 64, Adam at 1e-4
    /// (0.9/0.999/1e-8), 20% learning-rate decay every 12k iterations,
    /// stage 1 for the first 60k.
    pub fn paper() -> Self {
        Self {
            total_iterations: 120_000,
            stage1_fraction: 0.5,
            batch_size: 64,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            lr_decay_factor: 0.8,
            decay_interval: 12_000,
            lambda: 2.0,
            mu: 0.01,
            loss_epsilon: 1e-6,
            detach_denominator: false,
            ablation: Ablation::Full,
            checkpoint_interval: 0,
            seed: 0,
        }
    }

    /// Desk-scale counts, proportionally reduced with the stage split kept
    /// at one half.
    pub fn tiny() -> Self {
        Self {
            total_iterations: 1200,
            batch_size: 4,
            learning_rate: 2e-3,
            decay_interval: 120,
            ..Self::paper()
        }
    }

    pub fn stage1_len(&self) -> u64 {
        (self.total_iterations as f64 * self.stage1_fraction).round() as u64
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let decays = if self.decay_interval == 0 { 0 } else { step / self.decay_interval };
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 || self.total_iterations == 0 {
            return Err(PipelineError::Config(
                "batch size and iteration count must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.stage1_fraction) {
            return Err(PipelineError::Config("stage1_fraction must be in [0, 1]".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(PipelineError::Config("lr_decay_factor must be in (0, 1]".into()));
        }
        Ok(())
    }

    fn loss_base(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            mu: self.mu,
            epsilon: self.loss_epsilon,
            detach_denominator: self.detach_denominator,
            ..LossConfig::default()
        }
    }
}

pub struct TrainOutput<E: Element = f64> {
    pub params: ModelParams<E>,
    /// CSV: step, the loss breakdown fields, learning rate and stage.
    pub log_csv: String,
    /// (step, container bytes) per checkpoint; the final one is always last.
    pub checkpoints: Vec<(u64, Vec<u8>)>,
}

/// Runs the two-stage loop. `progress` observes (step, stage, batch loss).
pub fn train<E: Element>(
    cfg: &TrainConfig,
    model_cfg: ModelConfig,
    source: &dyn PairSource,
    mut progress: impl FnMut(u64, u8, f64),
) -> Result<TrainOutput<E>, PipelineError> {
    cfg.validate()?;
    let mut params = ModelParams::<E>::init(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let stage1_len = cfg.stage1_len();
    let loss_cfg = cfg.ablation.loss_config(cfg.loss_base());

    let mut log = String::from("step,ln_ab,ln_ba,feature_distance,inverse_penalty,total,lr,stage\n");
    let mut checkpoints = Vec::new();

    for step in 0..cfg.total_iterations {
        let stage: u8 = if step < stage1_len { 1 } else { 2 };
        let opts = cfg.ablation.forward_options(stage == 2);
        let lr = cfg.learning_rate_at(step);

        let mut batch_grads: Vec<Option<Tensor<E>>> = vec![None; params.tensors().len()];
        let mut sums = [0.0f64; 5]; // ln_ab, ln_ba, fd, penalty, total
        for k in 0..cfg.batch_size {
            let sample = source.get(step * cfg.batch_size as u64 + k as u64)?;
            let tape = crate::tensor::Tape::<E>::new();
            let bound = params.bind(&tape);
            let ia = tape.constant(sample.patch_a.cast::<E>());
            let ib = tape.constant(sample.patch_b.cast::<E>());
            let pipe = bound.forward_pipeline(&ia, &ib, opts)?;
            let (total, bd) = total_loss(&bound, &pipe, &ia, &ib, opts, &loss_cfg)?;
            if !bd.is_finite() {
                return Err(PipelineError::NonFiniteLoss {
                    step,
                    breakdown: bd.csv_fields(),
                });
            }
            tape.backward(&total)?;
            for (slot, grad) in batch_grads.iter_mut().zip(bound.gradients()) {
                if let Some(g) = grad {
                    *slot = Some(match slot.take() {
                        Some(acc) => acc.add_same_shape(&g),
                        None => g,
                    });
                }
            }
            sums[0] += bd.ln_ab.to_f64();
            sums[1] += bd.ln_ba.to_f64();
            sums[2] += bd.feature_distance.to_f64();
            sums[3] += bd.inverse_penalty.to_f64();
            sums[4] += bd.total.to_f64();
        }

        let inv_b = E::from_f64(1.0 / cfg.batch_size as f64);
        for g in batch_grads.iter_mut().flatten() {
            *g = g.map(|v| v * inv_b);
        }
        let hyper = AdamHyper {
            learning_rate: lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
        };
        adam_step(params.tensors_mut(), &batch_grads, &mut adam, &hyper);

        let b = cfg.batch_size as f64;
        log += &format!(
            "{step},{},{},{},{},{},{lr},{stage}\n",
            sums[0] / b,
            sums[1] / b,
            sums[2] / b,
            sums[3] / b,
            sums[4] / b,
        );
        progress(step, stage, sums[4] / b);

        if cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 {
            checkpoints.push((step + 1, save_model(&params)));
        }
    }
    if checkpoints.last().map(|(s, _)| *s) != Some(cfg.total_iterations) {
        checkpoints.push((cfg.total_iterations, save_model(&params)));
    }

    Ok(TrainOutput { params, log_csv: log, checkpoints })
}
