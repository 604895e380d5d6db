//! scratch: instrumented training loop
use homalign_core::geometry::Frame;
use homalign_core::models::{ForwardOptions, ModelConfig, ModelParams};
use homalign_core::objective::{total_loss, LossConfig};
use homalign_core::pipeline::{adam_step, AdamHyper, AdamState, PairSource, SyntheticSource};
use homalign_core::synth::{Category, GenConfig};
use homalign_core::tensor::{Tape, Tensor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let iters = arg(1, 300.0) as u64;
    let batch = arg(2, 4.0) as usize;
    let lr = arg(3, 2e-3);
    let lambda = arg(4, 0.0);
    let mask_in_loss = arg(5, 1.0) > 0.5;
    let gen = GenConfig { perturbation_px: 4.0, seed: 1000, ..GenConfig::default() };
    let source = SyntheticSource::new(gen, vec![Category::Regular]);
    let mut params = ModelParams::<f64>::init(ModelConfig::tiny(), 0).unwrap();
    let mut adam = AdamState::new(params.tensors());
    let hyper = AdamHyper { learning_rate: lr, ..AdamHyper::default() };
    let loss_cfg = LossConfig { lambda, mask_in_loss, ..LossConfig::default() };
    let opts = ForwardOptions { mask_attention: false, identity_features: false };
    let frame = Frame::new(64, 64);

    for step in 0..iters {
        let mut grads: Vec<Option<Tensor<f64>>> = vec![None; params.tensors().len()];
        let (mut s_ln, mut s_fd, mut s_pen, mut s_mag, mut s_err, mut s_gt) = (0.,0.,0.,0.,0.,0.);
        for k in 0..batch {
            let pair = source.get(step * batch as u64 + k as u64).unwrap();
            let tape: Tape = Tape::new();
            let bound = params.bind(&tape);
            let ia = tape.constant(pair.patch_a.clone());
            let ib = tape.constant(pair.patch_b.clone());
            let pipe = bound.forward_pipeline(&ia, &ib, opts).unwrap();
            let (total, bd) = total_loss(&bound, &pipe, &ia, &ib, opts, &loss_cfg).unwrap();
            tape.backward(&total).unwrap();
            for (s, g) in grads.iter_mut().zip(bound.gradients()) {
                if let Some(g) = g { *s = Some(match s.take() { Some(a) => a.add_same_shape(&g), None => g }); }
            }
            // diagnostics
            let off = pipe.offsets_ab.value();
            let gt_off: Vec<f64> = frame.corners().iter().flat_map(|&c| {
                let q = pair.gt.apply(c).unwrap(); [q[0]-c[0], q[1]-c[1]]
            }).collect();
            s_mag += off.data().iter().map(|v| v.abs()).sum::<f64>() / 8.0;
            s_err += off.data().iter().zip(&gt_off).map(|(a,b)| (a-b).abs()).sum::<f64>() / 8.0;
            s_gt += gt_off.iter().map(|v| v.abs()).sum::<f64>() / 8.0;
            s_ln += bd.ln_ab + bd.ln_ba; s_fd += bd.feature_distance; s_pen += bd.inverse_penalty;
        }
        let inv = 1.0 / batch as f64;
        for g in grads.iter_mut().flatten() { *g = g.map(|v| v * inv); }
        adam_step(params.tensors_mut(), &grads, &mut adam, &hyper);
        if step % 25 == 0 || step == iters-1 {
            println!("step {step:4}  ln {:.5}  fd {:.4}  pen {:.5}  |off| {:.3}  offerr {:.3}  |gt| {:.3}",
                s_ln*inv, s_fd*inv, s_pen*inv, s_mag*inv, s_err*inv, s_gt*inv);
        }
    }
}
