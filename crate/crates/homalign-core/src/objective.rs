//! The triplet objective: masked normalized alignment, anti-collapse feature
//! distance, and the inverse-consistency penalty.
//!
//! For a pair (I_a, I_b) with predicted homographies H_ab, H_ba:
//!
//! * [`masked_alignment_loss`] — per-pixel L1 distance between the warped
//!   features and the target features, weighted by M'_a·M_b (and the warp
//!   validity) and normalized by the weight sum. The warped feature map is
//!   recomputed by running f on the warped image, not by warping F_a.
//! * [`feature_distance`] — mean absolute difference between the unwarped
//!   feature maps; subtracting it keeps the extractor from collapsing to
//!   all-zero features.
//! * [`inverse_consistency`] — squared Frobenius norm of the canonically
//!   normalized product H_ab·H_ba minus the identity.
//!
//! `total = ln_ab + ln_ba − λ·feature_distance + μ·inverse_penalty`, with
//! λ = 2.0 and μ = 0.01 by default, evaluated in exactly that order so the
//! breakdown recomposes bit-for-bit.

use alloc::format;
use alloc::string::String;

use crate::element::Element;
use crate::geometry::{GeometryError, NORMALIZATION_FLOOR};
use crate::models::{BoundParams, ForwardOptions, ModelError, PipelineOut};
use crate::sampler::warp_var;
use crate::tensor::{Tensor, Var};
#[allow(unused_imports)]
use num_traits::Float;

/// Loss weights and switches.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub lambda: f64,
    pub mu: f64,
    /// Guards the alignment-loss denominator against all-zero mask products.
    pub epsilon: f64,
    /// Weight the alignment loss by M'_a·M_b; off in the "mask as attention
    /// only" and "no mask" arms, where the loss is a plain mean L1.
    pub mask_in_loss: bool,
    /// Include the −λ·L(I_a, I_b) term.
    pub triplet_term: bool,
    /// Stop gradients through the weight sum in the denominator.
    pub detach_denominator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            mu: 0.01,
            epsilon: 1e-6,
            mask_in_loss: true,
            triplet_term: true,
            detach_denominator: false,
        }
    }
}

/// Scalar components of one loss evaluation. `lambda` is the effective
/// weight (zero when the triplet term is ablated), so
/// `total = ln_ab + ln_ba − lambda·feature_distance + mu·inverse_penalty`
/// holds as an arithmetic identity.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown<E: Element = f64> {
    pub ln_ab: E,
    pub ln_ba: E,
    pub feature_distance: E,
    pub inverse_penalty: E,
    pub total: E,
    pub lambda: E,
    pub mu: E,
    pub epsilon: E,
}

impl<E: Element> LossBreakdown<E> {
    pub const CSV_HEADER: &'static str = "ln_ab,ln_ba,feature_distance,inverse_penalty,total";

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.ln_ab, self.ln_ba, self.feature_distance, self.inverse_penalty, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.ln_ab, self.ln_ba, self.feature_distance, self.inverse_penalty, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Normalized masked alignment loss:
/// `Σ M'_a·M_b·‖F'_a − F_b‖₁ / (Σ M'_a·M_b + ε)`, per-pixel L1 over channels.
pub fn masked_alignment_loss<'t, E: Element>(
    f_warped: &Var<'t, E>,
    f_target: &Var<'t, E>,
    m_warped: &Var<'t, E>,
    m_target: &Var<'t, E>,
    validity: Option<&Tensor<E>>,
    epsilon: f64,
    detach_denominator: bool,
) -> Var<'t, E> {
    assert_eq!(
        f_warped.shape(),
        f_target.shape(),
        "masked_alignment_loss: feature shapes differ"
    );
    assert_eq!(
        m_warped.shape(),
        m_target.shape(),
        "masked_alignment_loss: mask shapes differ"
    );
    let mut w = m_warped.mul(m_target);
    if let Some(v) = validity {
        let v = w.tape().constant(v.clone());
        w = w.mul(&v);
    }
    let distance = f_warped.sub(f_target).abs().sum_channels();
    let numerator = w.mul(&distance).sum();
    let weight_sum = if detach_denominator { w.detach() } else { w };
    let eps = numerator.tape().constant(Tensor::scalar(E::from_f64(epsilon)));
    let denominator = weight_sum.sum().add(&eps);
    numerator.div(&denominator)
}

/// Mean absolute elementwise difference between two feature maps.
pub fn feature_distance<'t, E: Element>(fa: &Var<'t, E>, fb: &Var<'t, E>) -> Var<'t, E> {
    assert_eq!(fa.shape(), fb.shape(), "feature_distance: shapes differ");
    fa.sub(fb).abs().mean()
}

/// Squared Frobenius norm of the canonically normalized `H_ab·H_ba` minus
/// the 3×3 identity. Both inputs are 9-entry row-major variables.
pub fn inverse_consistency<'t, E: Element>(
    hab: &Var<'t, E>,
    hba: &Var<'t, E>,
) -> Result<Var<'t, E>, GeometryError> {
    let a = hab.reshape(&[3, 3]);
    let b = hba.reshape(&[3, 3]);
    let prod = a.matmul(&b);
    let scale_value = prod.value().data()[8].to_f64();
    if scale_value.abs() < NORMALIZATION_FLOOR {
        return Err(GeometryError::DegenerateScale { value: scale_value });
    }
    let scale = prod.pick(8);
    let normalized = prod.div(&scale);
    let identity = prod.tape().constant(Tensor::from_vec(
        &[3, 3],
        [1, 0, 0, 0, 1, 0, 0, 0, 1].iter().map(|&v| E::from_usize(v)).collect(),
    )
    .expect("identity"));
    let diff = normalized.sub(&identity);
    Ok(diff.mul(&diff).sum())
}

/// Assembles the full objective from one forward pass. Warps I_a by H_ab
/// (and I_b by H_ba), re-extracts features on the warped images, warps the
/// masks with the same sampling matrices (validity folded into the warped
/// mask weights), and combines the terms per the configured switches.
pub fn total_loss<'t, E: Element>(
    bound: &BoundParams<'t, '_, E>,
    pipe: &PipelineOut<'t, E>,
    ia: &Var<'t, E>,
    ib: &Var<'t, E>,
    opts: ForwardOptions,
    cfg: &LossConfig,
) -> Result<(Var<'t, E>, LossBreakdown<E>), ModelError> {
    let (warped_a, validity_ab) = warp_var(ia, &pipe.sab);
    let (warped_b, validity_ba) = warp_var(ib, &pipe.sba);
    let (fwa, fwb) = if opts.identity_features {
        (warped_a, warped_b)
    } else {
        (
            bound.extract_features(&warped_a)?,
            bound.extract_features(&warped_b)?,
        )
    };

    let ln_ab;
    let ln_ba;
    if cfg.mask_in_loss {
        let (mwa, _) = warp_var(&pipe.ma, &pipe.sab);
        let (mwb, _) = warp_var(&pipe.mb, &pipe.sba);
        ln_ab = masked_alignment_loss(
            &fwa,
            &pipe.fb,
            &mwa,
            &pipe.mb,
            Some(&validity_ab),
            cfg.epsilon,
            cfg.detach_denominator,
        );
        ln_ba = masked_alignment_loss(
            &fwb,
            &pipe.fa,
            &mwb,
            &pipe.ma,
            Some(&validity_ba),
            cfg.epsilon,
            cfg.detach_denominator,
        );
    } else {
        ln_ab = feature_distance(&fwa, &pipe.fb);
        ln_ba = feature_distance(&fwb, &pipe.fa);
    }

    let fd = feature_distance(&pipe.fa, &pipe.fb);
    let penalty = inverse_consistency(&pipe.hab, &pipe.hba)?;

    let lambda_eff = if cfg.triplet_term { cfg.lambda } else { 0.0 };
    let total = ln_ab
        .add(&ln_ba)
        .add(&fd.affine(E::from_f64(-lambda_eff), E::zero()))
        .add(&penalty.affine(E::from_f64(cfg.mu), E::zero()));

    let breakdown = LossBreakdown {
        ln_ab: ln_ab.value().item(),
        ln_ba: ln_ba.value().item(),
        feature_distance: fd.value().item(),
        inverse_penalty: penalty.value().item(),
        total: total.value().item(),
        lambda: E::from_f64(lambda_eff),
        mu: E::from_f64(cfg.mu),
        epsilon: E::from_f64(cfg.epsilon),
    };
    Ok((total, breakdown))
}
