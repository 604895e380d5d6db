//! scratch: direct offset optimization through the warp
use homalign_core::geometry::Frame;
use homalign_core::pipeline::{PairSource, SyntheticSource};
use homalign_core::sampler::{inverse_homography_var, warp_var};
use homalign_core::synth::{Category, GenConfig};
use homalign_core::tensor::{Tape, Tensor};

fn main() {
    let gen = GenConfig { perturbation_px: 4.0, seed: 1000, ..GenConfig::default() };
    let source = SyntheticSource::new(gen, vec![Category::Regular]);
    for sample_idx in 0..3u64 {
        let pair = source.get(sample_idx).unwrap();
        let frame = Frame::new(64, 64);
        let gt_off: Vec<f64> = {
            // recover gt offsets from gt homography corner action
            frame.corners().iter().flat_map(|&c| {
                let q = pair.gt.apply(c).unwrap();
                [q[0]-c[0], q[1]-c[1]]
            }).collect()
        };
        let mut offs = vec![0.0f64; 8];
        let (mut m, mut v) = (vec![0.0;8], vec![0.0;8]);
        let lr = 0.3; let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        for step in 1..=120 {
            let tape: Tape = Tape::new();
            let ov = tape.var(Tensor::from_vec(&[8], offs.clone()).unwrap());
            let ia = tape.constant(pair.patch_a.clone());
            let ib = tape.constant(pair.patch_b.clone());
            let inv = inverse_homography_var(&ov, frame).unwrap();
            let (wa, validity) = warp_var(&ia, &inv);
            // masked photometric L1: sum(valid*|wa-ib|)/sum(valid)
            let vc = tape.constant(validity);
            let d = wa.sub(&ib).abs();
            let num = d.mul(&vc).sum();
            let den = vc.sum();
            let loss = num.div(&den);
            tape.backward(&loss).unwrap();
            let g = ov.grad().unwrap();
            for i in 0..8 {
                m[i] = b1*m[i] + (1.0-b1)*g.data()[i];
                v[i] = b2*v[i] + (1.0-b2)*g.data()[i]*g.data()[i];
                let mh = m[i]/(1.0- (b1 as f64).powi(step)); let vh = v[i]/(1.0- (b2 as f64).powi(step));
                offs[i] -= lr*mh/(vh.sqrt()+eps);
            }
            if step % 30 == 0 {
                let err: f64 = (0..8).map(|i| (offs[i]-gt_off[i]).powi(2)).sum::<f64>().sqrt();
                eprintln!("sample {sample_idx} step {step:3} loss {:.5} offset-err {err:.3}", loss.value().item());
            }
        }
        let err: f64 = (0..8).map(|i| (offs[i]-gt_off[i]).powi(2)).sum::<f64>().sqrt() / 8f64.sqrt();
        println!("sample {sample_idx}: rms offset error {err:.3} (gt magnitude {:.3})", (gt_off.iter().map(|x|x*x).sum::<f64>()/8.0).sqrt());
    }
}
