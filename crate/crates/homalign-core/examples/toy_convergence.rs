//! Trains the tiny variant on synthetic pairs and reports the held-out
//! corner error against the identity-prediction baseline.
//!
//! ```text
//! cargo run --release -p homalign-core --example toy_convergence -- \
//!     [iterations] [batch] [lr] [perturbation_px] [category] [seed]
//! ```

use homalign_core::geometry::{offsets_to_homography, CornerOffsets, Frame};
use homalign_core::models::ModelConfig;
use homalign_core::pipeline::{
    evaluate, held_out_pairs, train, Estimator, PairSource, SyntheticSource, TrainConfig,
};
use homalign_core::synth::{Category, GenConfig, PairSample};
use homalign_core::tensor::Tape;

fn corner_error(
    params: &homalign_core::models::ModelParams,
    pair: &PairSample,
    opts: homalign_core::models::ForwardOptions,
) -> f64 {
    let tape: Tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let ia = tape.constant(pair.patch_a.clone());
    let ib = tape.constant(pair.patch_b.clone());
    let out = bound.forward_pipeline(&ia, &ib, opts).unwrap();
    let flat: [f64; 8] = core::array::from_fn(|i| out.offsets_ab.value().data()[i]);
    let frame = Frame::new(64, 64);
    let h = offsets_to_homography(&CornerOffsets::from_flat(&flat, frame)).unwrap();
    frame
        .corners()
        .iter()
        .map(|&c| {
            let p = h.apply(c).unwrap();
            let q = pair.gt.apply(c).unwrap();
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 4.0
}

fn identity_baseline(pair: &PairSample) -> f64 {
    let frame = Frame::new(64, 64);
    frame
        .corners()
        .iter()
        .map(|&c| {
            let q = pair.gt.apply(c).unwrap();
            ((c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 4.0
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, default: f64| -> f64 {
        args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
    };
    let iterations = arg(1, 1200.0) as u64;
    let batch = arg(2, 4.0) as usize;
    let lr = arg(3, 2e-3);
    let perturb = arg(4, 4.0);
    let category = args
        .get(5)
        .map(|s| Category::parse(s).unwrap())
        .unwrap_or(Category::Regular);
    let seed = arg(6, 0.0) as u64;
    let lambda = arg(7, 2.0);
    let mu = arg(8, 0.01);
    let ablation = args
        .get(9)
        .map(|s| homalign_core::pipeline::Ablation::parse(s).unwrap())
        .unwrap_or(homalign_core::pipeline::Ablation::Full);

    let gen = GenConfig {
        perturbation_px: perturb,
        seed: 1000 + seed,
        ..GenConfig::default()
    };
    let source = SyntheticSource::new(gen.clone(), vec![category]);
    let eval_gen = GenConfig { seed: 9000 + seed, ..gen };
    let eval_source = SyntheticSource::new(eval_gen, vec![category]);
    let held_out = held_out_pairs(&eval_source, 0, 50).unwrap();

    let cfg = TrainConfig {
        total_iterations: iterations,
        batch_size: batch,
        learning_rate: lr,
        decay_interval: (iterations / 10).max(1),
        lambda,
        mu,
        ablation,
        seed,
        ..TrainConfig::tiny()
    };
    eprintln!(
        "training: {iterations} iterations, batch {batch}, lr {lr}, ±{perturb} px, {category:?}, lambda {lambda}, mu {mu}",
    );

    let t0 = std::time::Instant::now();
    let out = train::<f64>(&cfg, ModelConfig::tiny(), &source, |step, stage, loss| {
        if step % 50 == 0 {
            eprintln!("  step {step:5}  stage {stage}  loss {loss:.5}");
        }
    })
    .unwrap();
    let train_secs = t0.elapsed().as_secs_f64();

    let baseline: f64 =
        held_out.iter().map(identity_baseline).sum::<f64>() / held_out.len() as f64;
    let error: f64 =
        held_out.iter().map(|p| corner_error(&out.params, p, ablation.eval_options())).sum::<f64>() / held_out.len() as f64;

    let (_, report) = evaluate::<f64>(
        &Estimator::Model { params: &out.params, opts: ablation.eval_options() },
        &held_out,
        3.0,
    );

    println!("train time        : {train_secs:.1}s");
    println!("identity baseline : {baseline:.4} px");
    println!("held-out corner   : {error:.4} px ({:.1}% of baseline)", 100.0 * error / baseline);
    println!(
        "point error       : {:.4} px, inliers {:.1}%",
        report.average_error_px, report.average_inlier_percent
    );

    // Mask statistics on SF pairs for the content-awareness check.
    if category == Category::SmallForeground {
        let mut inside = 0.0;
        let mut outside = 0.0;
        let mut n = 0.0;
        for pair in &held_out {
            let Some(dyn_mask) = &pair.dynamic_region else { continue };
            let tape: Tape = Tape::new();
            let bound = out.params.bind_frozen(&tape);
            let ia = tape.constant(pair.patch_a.clone());
            let mask = bound.predict_mask(&ia).unwrap();
            let (mut s_in, mut c_in, mut s_out, mut c_out) = (0.0, 0.0, 0.0, 0.0);
            for (m, d) in mask.value().data().iter().zip(dyn_mask.data()) {
                if *d > 0.0 {
                    s_in += m;
                    c_in += 1.0;
                } else {
                    s_out += m;
                    c_out += 1.0;
                }
            }
            inside += s_in / c_in;
            outside += s_out / c_out;
            n += 1.0;
        }
        println!(
            "mask inside dyn   : {:.4}   outside: {:.4}   margin {:.4}",
            inside / n,
            outside / n,
            (outside - inside) / n
        );
    }
}
