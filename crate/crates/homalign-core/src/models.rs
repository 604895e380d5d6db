//! The three sub-networks: feature extractor f(·), mask predictor m(·) and
//! homography estimator h(·).
//!
//! f and m are fully convolutional stacks of 3×3, stride-1, padding-1 layers
//! (spatial size preserved, any input size). h is a residual network: a
//! strided 7×7 stem, a 3×3/2 max pool, four stages of residual blocks, global
//! average pooling and a fully-connected head producing the 8 offset values.
//! The paper-faithful variant reproduces the published layer table exactly
//! (f: 4-8-C channels, m: 4-8-16-32-1, h: ResNet-34 stage widths 64/128/256/512
//! with 3/4/6/3 blocks); the tiny variant keeps the topology at reduced widths
//! so the whole model trains on a CPU.
//!
//! Hidden activations are ReLU. f has no terminal nonlinearity (the alignment
//! losses want an unbounded representation); m ends in a sigmoid so the mask
//! is a probability map. There is no batch normalization: residual blocks are
//! plain conv+ReLU with skip connections, which keeps small-batch training
//! deterministic. The final fully-connected layer is zero-initialized so
//! training starts from the identity homography.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::geometry::{Frame, GeometryError};
use crate::sampler::{homography_var, inverse_homography_var};
use crate::tensor::{Tape, Tensor, TensorError, Var};
#[allow(unused_imports)]
use num_traits::Float;

/// Parameter budget guaranteeing CPU trainability of the tiny variant.
pub const TINY_PARAMETER_BUDGET: usize = 100_000;

/// Smallest spatial extent the estimator's stride pyramid accepts.
pub const MIN_ESTIMATOR_INPUT: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("estimator input {height}×{width} is smaller than the stride pyramid minimum {MIN_ESTIMATOR_INPUT}×{MIN_ESTIMATOR_INPUT}")]
    InputTooSmall { height: usize, width: usize },
    #[error("identity-feature mode needs feature_channels = 1, config has {got}")]
    IdentityFeaturesNeedSingleChannel { got: usize },
    #[error("batch normalization is reserved and not implemented")]
    BatchNormUnsupported,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Published layer table; ResNet-34 estimator.
    Paper,
    /// Same topology at reduced widths.
    Tiny,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Feature channels C produced by f(·); the published table ends at 1.
    pub feature_channels: usize,
    /// Residual blocks per estimator stage.
    pub estimator_blocks: Vec<usize>,
    /// (height, width) the pipeline is configured for.
    pub input_size: (usize, usize),
    /// Reserved; initialization fails when set.
    pub batch_norm: bool,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            variant: Variant::Paper,
            feature_channels: 1,
            estimator_blocks: vec![3, 4, 6, 3],
            input_size: (315, 560),
            batch_norm: false,
        }
    }

    pub fn tiny() -> Self {
        Self {
            variant: Variant::Tiny,
            feature_channels: 1,
            estimator_blocks: vec![1, 1, 1, 1],
            input_size: (64, 64),
            batch_norm: false,
        }
    }

    fn feature_widths(&self) -> [usize; 2] {
        [4, 8] // published for both variants; the last layer adds C
    }

    fn mask_widths(&self) -> [usize; 4] {
        match self.variant {
            Variant::Paper => [4, 8, 16, 32],
            Variant::Tiny => [4, 8, 8, 8],
        }
    }

    fn stem_width(&self) -> usize {
        match self.variant {
            Variant::Paper => 64,
            Variant::Tiny => 8,
        }
    }

    fn stage_widths(&self) -> Vec<usize> {
        match self.variant {
            Variant::Paper => vec![64, 128, 256, 512],
            Variant::Tiny => vec![8, 16, 24, 32],
        }
    }
}

/// Indices of one convolution's weight and bias in the flat tensor list.
#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct BlockSpec {
    conv1: ConvSpec,
    conv2: ConvSpec,
    projection: Option<ConvSpec>,
}

#[derive(Clone, Debug)]
struct Layout {
    f: Vec<ConvSpec>,
    m: Vec<ConvSpec>,
    stem: ConvSpec,
    stages: Vec<Vec<BlockSpec>>,
    fc_w: usize,
    fc_b: usize,
}

/// Named parameter tensors for f, m and h. f and m are shared across both
/// input branches; there is exactly one copy of each.
#[derive(Clone, Debug)]
pub struct ModelParams<E: Element = f64> {
    cfg: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    layout: Layout,
}

struct ParamBuilder<E: Element> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    rng: ChaCha8Rng,
}

impl<E: Element> ParamBuilder<E> {
    fn conv(
        &mut self,
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> ConvSpec {
        let fan_in = (in_ch * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let rng = &mut self.rng;
        let weight = Tensor::from_fn(&[out_ch, in_ch, k, k], |_| {
            E::from_f64(rng.random_range(-bound..bound))
        });
        let w = self.push(format!("{name}.weight"), weight);
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        ConvSpec { w, b, stride, padding }
    }

    fn push(&mut self, name: String, tensor: Tensor<E>) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }
}

impl<E: Element> ModelParams<E> {
    /// Kaiming-uniform initialization (fan-in scaled); biases zero; the
    /// fully-connected head zeroed so the first prediction is the identity.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        if cfg.batch_norm {
            return Err(ModelError::BatchNormUnsupported);
        }
        let mut b = ParamBuilder::<E> {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };

        let c = cfg.feature_channels;
        let fw = cfg.feature_widths();
        let f = vec![
            b.conv("f.conv1", fw[0], 1, 3, 1, 1),
            b.conv("f.conv2", fw[1], fw[0], 3, 1, 1),
            b.conv("f.conv3", c, fw[1], 3, 1, 1),
        ];

        let mw = cfg.mask_widths();
        let m = vec![
            b.conv("m.conv1", mw[0], 1, 3, 1, 1),
            b.conv("m.conv2", mw[1], mw[0], 3, 1, 1),
            b.conv("m.conv3", mw[2], mw[1], 3, 1, 1),
            b.conv("m.conv4", mw[3], mw[2], 3, 1, 1),
            b.conv("m.conv5", 1, mw[3], 3, 1, 1),
        ];

        let stem_w = cfg.stem_width();
        let stem = b.conv("h.stem", stem_w, 2 * c, 7, 2, 3);
        let widths = cfg.stage_widths();
        let mut in_ch = stem_w;
        let mut stages = Vec::new();
        for (si, (&width, &blocks)) in widths.iter().zip(&cfg.estimator_blocks).enumerate() {
            let mut stage = Vec::new();
            for bi in 0..blocks {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let name = format!("h.stage{}.block{}", si + 1, bi);
                let conv1 = b.conv(&format!("{name}.conv1"), width, in_ch, 3, stride, 1);
                let conv2 = b.conv(&format!("{name}.conv2"), width, width, 3, 1, 1);
                let projection = (stride != 1 || in_ch != width)
                    .then(|| b.conv(&format!("{name}.proj"), width, in_ch, 1, stride, 0));
                stage.push(BlockSpec { conv1, conv2, projection });
                in_ch = width;
            }
            stages.push(stage);
        }
        let fc_w = b.push("h.fc.weight".into(), Tensor::zeros(&[in_ch, 8]));
        let fc_b = b.push("h.fc.bias".into(), Tensor::zeros(&[8]));

        Ok(Self {
            cfg,
            names: b.names,
            tensors: b.tensors,
            layout: Layout { f, m, stem, stages, fc_w, fc_b },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Number of weighted layers in the estimator's main path (stem and
    /// block convolutions plus the fully-connected head; projection
    /// shortcuts excluded).
    pub fn estimator_weighted_layers(&self) -> usize {
        1 + self.layout.stages.iter().map(|s| s.len() * 2).sum::<usize>() + 1
    }

    /// Enrolls every parameter as a gradient-tracked leaf on `tape`.
    pub fn bind<'t, 'p>(&'p self, tape: &'t Tape<E>) -> BoundParams<'t, 'p, E> {
        let vars = self.tensors.iter().map(|t| tape.var(t.clone())).collect();
        BoundParams { vars, params: self }
    }

    /// Enrolls every parameter as a constant: forward-only, no gradient
    /// bookkeeping (evaluation path).
    pub fn bind_frozen<'t, 'p>(&'p self, tape: &'t Tape<E>) -> BoundParams<'t, 'p, E> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        BoundParams { vars, params: self }
    }
}

/// Forward-path switches (training stages and ablation arms).
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// The G = F⊙M attention weighting; stage 1 trains with this disabled.
    pub mask_attention: bool,
    /// Replace F by the raw intensities (the "no feature extractor" arm).
    pub identity_features: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { mask_attention: true, identity_features: false }
    }
}

/// Everything the objective needs from one two-branch forward pass.
pub struct PipelineOut<'t, E: Element = f64> {
    pub fa: Var<'t, E>,
    pub fb: Var<'t, E>,
    pub ma: Var<'t, E>,
    pub mb: Var<'t, E>,
    pub offsets_ab: Var<'t, E>,
    pub offsets_ba: Var<'t, E>,
    /// Row-major homography entries, canonical corners to displaced ones.
    pub hab: Var<'t, E>,
    pub hba: Var<'t, E>,
    /// Entries of the exact inverses (sampling matrices for warping).
    pub sab: Var<'t, E>,
    pub sba: Var<'t, E>,
}

/// Model parameters enrolled on a tape.
pub struct BoundParams<'t, 'p, E: Element = f64> {
    vars: Vec<Var<'t, E>>,
    params: &'p ModelParams<E>,
}

impl<'t, 'p, E: Element> BoundParams<'t, 'p, E> {
    fn conv(&self, x: &Var<'t, E>, spec: &ConvSpec) -> Result<Var<'t, E>, TensorError> {
        x.conv2d(&self.vars[spec.w], &self.vars[spec.b], spec.stride, spec.padding)
    }

    /// f(·): H×W grayscale to C×H×W features, no terminal nonlinearity.
    pub fn extract_features(&self, patch: &Var<'t, E>) -> Result<Var<'t, E>, ModelError> {
        let l = &self.params.layout;
        let mut x = patch.clone();
        for (i, spec) in l.f.iter().enumerate() {
            x = self.conv(&x, spec)?;
            if i + 1 < l.f.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }

    /// m(·): inlier probability map, same spatial size as the features.
    pub fn predict_mask(&self, patch: &Var<'t, E>) -> Result<Var<'t, E>, ModelError> {
        let l = &self.params.layout;
        let mut x = patch.clone();
        for (i, spec) in l.m.iter().enumerate() {
            x = self.conv(&x, spec)?;
            if i + 1 < l.m.len() {
                x = x.relu();
            }
        }
        Ok(x.sigmoid())
    }

    fn residual_block(&self, x: &Var<'t, E>, block: &BlockSpec) -> Result<Var<'t, E>, TensorError> {
        let mut y = self.conv(x, &block.conv1)?.relu();
        y = self.conv(&y, &block.conv2)?;
        let skip = match &block.projection {
            Some(p) => self.conv(x, p)?,
            None => x.clone(),
        };
        Ok(y.add(&skip).relu())
    }

    /// h(·): concatenated weighted features to 8 offset values. Global
    /// average pooling keeps the head independent of the input extent.
    pub fn estimate_offsets(
        &self,
        ga: &Var<'t, E>,
        gb: &Var<'t, E>,
    ) -> Result<Var<'t, E>, ModelError> {
        let (_, _, h, w) = ga.value().dims4("estimate_offsets")?;
        if h < MIN_ESTIMATOR_INPUT || w < MIN_ESTIMATOR_INPUT {
            return Err(ModelError::InputTooSmall { height: h, width: w });
        }
        let l = &self.params.layout;
        let mut x = ga.concat_channels(gb);
        x = self.conv(&x, &l.stem)?.relu();
        x = x.max_pool2d(3, 2, 1)?;
        for stage in &l.stages {
            for block in stage {
                x = self.residual_block(&x, block)?;
            }
        }
        let pooled = x.global_avg_pool();
        let k = pooled.value().numel();
        let flat = pooled.reshape(&[1, k]);
        let out = flat.matmul(&self.vars[l.fc_w]).add(&self.vars[l.fc_b]);
        Ok(out.reshape(&[8]))
    }

    /// Gradients of every parameter after a backward pass, aligned with
    /// [`ModelParams::tensors`] order.
    pub fn gradients(&self) -> Vec<Option<Tensor<E>>> {
        self.vars.iter().map(Var::grad).collect()
    }

    /// Full two-branch forward pass: shared f and m on both patches,
    /// weighted features into h twice (swapped the second time), then the
    /// forward and inverse corner solves for both directions.
    pub fn forward_pipeline(
        &self,
        ia: &Var<'t, E>,
        ib: &Var<'t, E>,
        opts: ForwardOptions,
    ) -> Result<PipelineOut<'t, E>, ModelError> {
        let (fa, fb) = if opts.identity_features {
            if self.params.cfg.feature_channels != 1 {
                return Err(ModelError::IdentityFeaturesNeedSingleChannel {
                    got: self.params.cfg.feature_channels,
                });
            }
            (ia.clone(), ib.clone())
        } else {
            (self.extract_features(ia)?, self.extract_features(ib)?)
        };
        let ma = self.predict_mask(ia)?;
        let mb = self.predict_mask(ib)?;
        let (ga, gb) = if opts.mask_attention {
            (fa.mul(&ma), fb.mul(&mb))
        } else {
            (fa.clone(), fb.clone())
        };
        let offsets_ab = self.estimate_offsets(&ga, &gb)?;
        let offsets_ba = self.estimate_offsets(&gb, &ga)?;
        let (_, _, h, w) = ia.value().dims4("forward_pipeline")?;
        let frame = Frame::new(w, h);
        let hab = homography_var(&offsets_ab, frame)?;
        let hba = homography_var(&offsets_ba, frame)?;
        let sab = inverse_homography_var(&offsets_ab, frame)?;
        let sba = inverse_homography_var(&offsets_ba, frame)?;
        Ok(PipelineOut { fa, fb, ma, mb, offsets_ab, offsets_ba, hab, hba, sab, sba })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Homography;

    fn tiny_params(seed: u64) -> ModelParams {
        ModelParams::init(ModelConfig::tiny(), seed).unwrap()
    }

    fn random_patch(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, 1, h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn feature_maps_preserve_spatial_size() {
        let params = tiny_params(1);
        for (h, w) in [(8, 8), (17, 23), (64, 48)] {
            let tape: Tape = Tape::new();
            let b = params.bind_frozen(&tape);
            let x = tape.constant(random_patch(h, w, 5));
            let f = b.extract_features(&x).unwrap();
            assert_eq!(f.shape(), &[1, 1, h, w]);
            let m = b.predict_mask(&x).unwrap();
            assert_eq!(m.shape(), f.shape());
        }
    }

    #[test]
    fn identical_patches_share_weights_and_features() {
        let params = tiny_params(2);
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let x = tape.constant(random_patch(16, 16, 6));
        let y = tape.constant(x.value().clone());
        let fx = b.extract_features(&x).unwrap();
        let fy = b.extract_features(&y).unwrap();
        assert_eq!(fx.value(), fy.value());
    }

    #[test]
    fn zeroed_final_feature_conv_gives_zero_features() {
        let mut params = tiny_params(3);
        let idx_w = params.names().iter().position(|n| n == "f.conv3.weight").unwrap();
        let idx_b = params.names().iter().position(|n| n == "f.conv3.bias").unwrap();
        params.tensors_mut()[idx_w] = Tensor::zeros(params.tensors()[idx_w].shape());
        params.tensors_mut()[idx_b] = Tensor::zeros(params.tensors()[idx_b].shape());
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let f = b.extract_features(&tape.constant(random_patch(12, 12, 7))).unwrap();
        assert!(f.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masks_are_strictly_inside_unit_interval() {
        let params = tiny_params(4);
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let m = b.predict_mask(&tape.constant(random_patch(20, 20, 8))).unwrap();
        assert!(m.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zeroed_final_mask_layer_gives_half_everywhere() {
        let mut params = tiny_params(5);
        let idx_w = params.names().iter().position(|n| n == "m.conv5.weight").unwrap();
        params.tensors_mut()[idx_w] = Tensor::zeros(params.tensors()[idx_w].shape());
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let m = b.predict_mask(&tape.constant(random_patch(10, 14, 9))).unwrap();
        assert!(m.value().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn offsets_have_arity_eight_and_start_at_identity() {
        let params = tiny_params(6);
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let ia = tape.constant(random_patch(64, 64, 10));
        let ib = tape.constant(random_patch(64, 64, 11));
        let out = b.forward_pipeline(&ia, &ib, ForwardOptions::default()).unwrap();
        assert_eq!(out.offsets_ab.shape(), &[8]);
        // Zero-initialized head: identity homography downstream.
        assert!(out.offsets_ab.value().data().iter().all(|&v| v == 0.0));
        let h = Homography::from_entries_row_major(&core::array::from_fn(|i| {
            out.hab.value().data()[i]
        }))
        .unwrap();
        assert!(h.frobenius_distance(&Homography::identity()) < 1e-12);
    }

    #[test]
    fn head_shapes_are_independent_of_input_extent() {
        let params = tiny_params(7);
        for size in [64usize, 128] {
            let tape: Tape = Tape::new();
            let b = params.bind_frozen(&tape);
            let ia = tape.constant(random_patch(size, size, 12));
            let ib = tape.constant(random_patch(size, size, 13));
            let ga = b.extract_features(&ia).unwrap();
            let gb = b.extract_features(&ib).unwrap();
            let off = b.estimate_offsets(&ga, &gb).unwrap();
            assert_eq!(off.shape(), &[8]);
        }
    }

    #[test]
    fn too_small_estimator_input_names_the_minimum() {
        let params = tiny_params(8);
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let ia = tape.constant(random_patch(16, 16, 14));
        let ga = b.extract_features(&ia).unwrap();
        let err = b.estimate_offsets(&ga, &ga).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("32"), "message should state the minimum: {msg}");
    }

    #[test]
    fn attention_disabled_makes_outputs_invariant_to_mask_params() {
        let mut params = tiny_params(9);
        let ia = random_patch(64, 64, 15);
        let ib = random_patch(64, 64, 16);
        let opts = ForwardOptions { mask_attention: false, identity_features: false };

        let run = |p: &ModelParams| {
            let tape: Tape = Tape::new();
            let b = p.bind_frozen(&tape);
            let out = b
                .forward_pipeline(&tape.constant(ia.clone()), &tape.constant(ib.clone()), opts)
                .unwrap();
            out.offsets_ab.value().clone()
        };
        let before = run(&params);
        let names = params.names().to_vec();
        for (name, t) in names.iter().zip(params.tensors_mut().iter_mut()) {
            if name.starts_with("m.") {
                *t = t.map(|v| v + 0.37);
            }
        }
        let after = run(&params);
        assert_eq!(before, after);
    }

    #[test]
    fn identical_inputs_give_symmetric_homographies() {
        let params = tiny_params(10);
        let tape: Tape = Tape::new();
        let b = params.bind_frozen(&tape);
        let img = random_patch(64, 64, 17);
        let ia = tape.constant(img.clone());
        let ib = tape.constant(img);
        let out = b.forward_pipeline(&ia, &ib, ForwardOptions::default()).unwrap();
        // Swapped concatenation of identical inputs is the same input.
        assert_eq!(out.offsets_ab.value(), out.offsets_ba.value());
        assert_eq!(out.hab.value(), out.hba.value());
    }

    #[test]
    fn perturbing_f_changes_both_branches_identically() {
        let mut params = tiny_params(11);
        let img = random_patch(32, 32, 18);
        let run = |p: &ModelParams| {
            let tape: Tape = Tape::new();
            let b = p.bind_frozen(&tape);
            let fa = b.extract_features(&tape.constant(img.clone())).unwrap();
            let fb = b.extract_features(&tape.constant(img.clone())).unwrap();
            (fa.value().clone(), fb.value().clone())
        };
        let (fa0, fb0) = run(&params);
        assert_eq!(fa0, fb0);
        let names = params.names().to_vec();
        for (name, t) in names.iter().zip(params.tensors_mut().iter_mut()) {
            if name.starts_with("f.") {
                *t = t.map(|v| v * 1.1 + 0.01);
            }
        }
        let (fa1, fb1) = run(&params);
        assert_eq!(fa1, fb1);
        assert_ne!(fa0, fa1);
    }

    #[test]
    fn random_init_random_inputs_stay_finite() {
        for seed in 0..100 {
            let params = tiny_params(seed);
            let tape: Tape = Tape::new();
            let b = params.bind_frozen(&tape);
            let ia = tape.constant(random_patch(64, 64, 1000 + seed));
            let ib = tape.constant(random_patch(64, 64, 2000 + seed));
            let out = b.forward_pipeline(&ia, &ib, ForwardOptions::default()).unwrap();
            for v in [&out.fa, &out.fb, &out.ma, &out.mb, &out.hab, &out.hba] {
                assert!(v.value().data().iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn paper_variant_matches_published_layer_table() {
        let params = ModelParams::<f64>::init(ModelConfig::paper(), 0).unwrap();
        // 1 stem + 2·(3+4+6+3) block convs + 1 fc = 34 weighted layers.
        assert_eq!(params.estimator_weighted_layers(), 34);
        let l = &params.layout;
        assert_eq!(params.tensors()[l.stem.w].shape(), &[64, 2, 7, 7]);
        assert_eq!(l.stem.stride, 2);
        let widths = [64usize, 128, 256, 512];
        let blocks = [3usize, 4, 6, 3];
        assert_eq!(l.stages.len(), 4);
        for (si, stage) in l.stages.iter().enumerate() {
            assert_eq!(stage.len(), blocks[si]);
            for (bi, block) in stage.iter().enumerate() {
                let w = params.tensors()[block.conv1.w].shape()[0];
                assert_eq!(w, widths[si]);
                let expected_stride = if si > 0 && bi == 0 { 2 } else { 1 };
                assert_eq!(block.conv1.stride, expected_stride);
                assert_eq!(block.conv2.stride, 1);
            }
        }
        // f: 4-8-C and m: 4-8-16-32-1 channel ladders.
        assert_eq!(params.tensors()[l.f[0].w].shape(), &[4, 1, 3, 3]);
        assert_eq!(params.tensors()[l.f[1].w].shape(), &[8, 4, 3, 3]);
        assert_eq!(params.tensors()[l.f[2].w].shape(), &[1, 8, 3, 3]);
        let m_out: Vec<usize> = l.m.iter().map(|s| params.tensors()[s.w].shape()[0]).collect();
        assert_eq!(m_out, vec![4, 8, 16, 32, 1]);
        assert_eq!(params.tensors()[l.fc_w].shape(), &[512, 8]);
    }

    #[test]
    fn tiny_variant_fits_the_parameter_budget() {
        let params = tiny_params(12);
        let count = params.parameter_count();
        assert!(
            count < TINY_PARAMETER_BUDGET,
            "tiny variant has {count} parameters, budget is {TINY_PARAMETER_BUDGET}"
        );
    }

    #[test]
    fn batch_norm_flag_is_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.batch_norm = true;
        assert!(matches!(
            ModelParams::<f64>::init(cfg, 0),
            Err(ModelError::BatchNormUnsupported)
        ));
    }
}
