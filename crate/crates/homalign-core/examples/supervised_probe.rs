//! scratch: supervised regression sanity check for the tiny estimator
use homalign_core::geometry::Frame;
use homalign_core::models::{ForwardOptions, ModelConfig, ModelParams};
use homalign_core::pipeline::{adam_step, AdamHyper, AdamState, PairSource, SyntheticSource};
use homalign_core::synth::{Category, GenConfig};
use homalign_core::tensor::{Tape, Tensor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let iters = arg(1, 500.0) as u64;
    let batch = arg(2, 4.0) as usize;
    let lr = arg(3, 1e-3);
    let attention = arg(4, 0.0) > 0.5;
    let gen = GenConfig { perturbation_px: 4.0, seed: 1000, ..GenConfig::default() };
    let source = SyntheticSource::new(gen, vec![Category::Regular]);
    let mut params = ModelParams::<f64>::init(ModelConfig::tiny(), 0).unwrap();
    let mut adam = AdamState::new(params.tensors());
    let hyper = AdamHyper { learning_rate: lr, ..AdamHyper::default() };
    let opts = ForwardOptions { mask_attention: attention, identity_features: false };
    let frame = Frame::new(64, 64);

    for step in 0..iters {
        let mut grads: Vec<Option<Tensor<f64>>> = vec![None; params.tensors().len()];
        let mut s_err = 0.0;
        for k in 0..batch {
            let pair = source.get(step * batch as u64 + k as u64).unwrap();
            let gt_off: Vec<f64> = frame.corners().iter().flat_map(|&c| {
                let q = pair.gt.apply(c).unwrap(); [q[0]-c[0], q[1]-c[1]]
            }).collect();
            let tape: Tape = Tape::new();
            let bound = params.bind(&tape);
            let ia = tape.constant(pair.patch_a.clone());
            let ib = tape.constant(pair.patch_b.clone());
            let pipe = bound.forward_pipeline(&ia, &ib, opts).unwrap();
            let gt = tape.constant(Tensor::from_vec(&[8], gt_off.clone()).unwrap());
            let diff = pipe.offsets_ab.sub(&gt);
            let loss = diff.mul(&diff).mean();
            tape.backward(&loss).unwrap();
            for (s, g) in grads.iter_mut().zip(bound.gradients()) {
                if let Some(g) = g { *s = Some(match s.take() { Some(a) => a.add_same_shape(&g), None => g }); }
            }
            s_err += pipe.offsets_ab.value().data().iter().zip(&gt_off)
                .map(|(a,b)| (a-b).abs()).sum::<f64>() / 8.0;
        }
        let inv = 1.0 / batch as f64;
        for g in grads.iter_mut().flatten() { *g = g.map(|v| v * inv); }
        adam_step(params.tensors_mut(), &grads, &mut adam, &hyper);
        if step % 50 == 0 || step == iters - 1 {
            println!("step {step:4}  train offset err {:.3}", s_err * inv);
        }
    }
    // held-out
    let eval = SyntheticSource::new(GenConfig { perturbation_px: 4.0, seed: 9000, ..GenConfig::default() }, vec![Category::Regular]);
    let mut err = 0.0; let mut base = 0.0;
    for i in 0..50 {
        let pair = eval.get(i).unwrap();
        let gt_off: Vec<f64> = frame.corners().iter().flat_map(|&c| {
            let q = pair.gt.apply(c).unwrap(); [q[0]-c[0], q[1]-c[1]]
        }).collect();
        let tape: Tape = Tape::new();
        let bound = params.bind_frozen(&tape);
        let ia = tape.constant(pair.patch_a.clone());
        let ib = tape.constant(pair.patch_b.clone());
        let pipe = bound.forward_pipeline(&ia, &ib, opts).unwrap();
        err += pipe.offsets_ab.value().data().iter().zip(&gt_off).map(|(a,b)| (a-b).abs()).sum::<f64>() / 8.0;
        base += gt_off.iter().map(|v| v.abs()).sum::<f64>() / 8.0;
    }
    println!("held-out offset err {:.3}  identity baseline {:.3}  ratio {:.1}%", err/50.0, base/50.0, 100.0*err/base);
}
