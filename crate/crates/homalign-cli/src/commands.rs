//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use homalign_core::checkpoint::{load_model, save_model};
use homalign_core::element::Element;
use homalign_core::geometry::{offsets_to_homography, CornerOffsets, Frame, Homography};
use homalign_core::models::{ForwardOptions, ModelParams};
use homalign_core::pipeline::{
    evaluate, evaluation_csv, held_out_pairs, run_ablation_suite, train, Estimator, PairSource,
    SyntheticSource,
};
use homalign_core::pipeline::EvalMetric;
use homalign_core::sampler::warp;
use homalign_core::synth::{write_annotation, Annotation};
use homalign_core::tensor::{Tape, Tensor};

use crate::config::Config;
use crate::error::{usage, CliResult};
use crate::imagery::{ghost_overlay, load_gray, resize_gray, save_gray, ImageFormat};

fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_snapshot(config: &Config, out: &Path) -> Result<()> {
    let text = crate::config::snapshot(config)?;
    fs::write(out.join("config_resolved.toml"), text).context("cannot write config snapshot")
}

pub fn generate(config: &Config, out: &Path, count: usize) -> CliResult {
    let source = config.data.source().map_err(usage)?;
    let format = ImageFormat::parse(&config.output.image_format).map_err(usage)?;
    ensure_out(out)?;
    write_snapshot(config, out)?;
    let ext = format.extension();
    let mut manifest = String::new();
    for i in 0..count {
        let pair = source.get(i as u64).map_err(anyhow::Error::from)?;
        let a_name = format!("{i:05}_a.{ext}");
        let b_name = format!("{i:05}_b.{ext}");
        save_gray(&out.join(&a_name), &pair.patch_a, format)?;
        save_gray(&out.join(&b_name), &pair.patch_b, format)?;
        if let Some(mask) = &pair.dynamic_region {
            save_gray(&out.join(format!("{i:05}_dyn.{ext}")), mask, format)?;
        }
        let ann = Annotation {
            patch_a: a_name,
            patch_b: b_name,
            category: pair.category,
            points: pair.gt_points.clone(),
        };
        let ann_name = format!("{i:05}.txt");
        fs::write(out.join(&ann_name), write_annotation(&ann))?;
        // Ground truth in the serialized row-major text form.
        fs::write(out.join(format!("{i:05}_gt.txt")), format!("{}\n", pair.gt))?;
        manifest.push_str(&ann_name);
        manifest.push('\n');
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}

pub fn train_cmd(config: &Config, out: &Path) -> CliResult {
    match config.train.precision.as_str() {
        "f64" => train_typed::<f64>(config, out),
        "f32" => train_typed::<f32>(config, out),
        other => Err(usage(anyhow!("train.precision must be f64 or f32, got {other:?}"))),
    }
}

fn train_typed<E: Element>(config: &Config, out: &Path) -> CliResult {
    let train_cfg = config.train.to_core().map_err(usage)?;
    let model_cfg = {
        let mut m = config.model.to_core().map_err(usage)?;
        m.input_size = (config.data.patch_height, config.data.patch_width);
        m
    };
    let source = config.data.source().map_err(usage)?;
    ensure_out(out)?;
    write_snapshot(config, out)?;

    let every = (train_cfg.total_iterations / 20).max(1);
    let result = train::<E>(&train_cfg, model_cfg, &source, |step, stage, loss| {
        if step % every == 0 {
            eprintln!("step {step:6}  stage {stage}  loss {loss:.6}");
        }
    })
    .map_err(anyhow::Error::from)?;

    fs::write(out.join("train_log.csv"), &result.log_csv)?;
    for (step, bytes) in &result.checkpoints {
        fs::write(out.join(format!("checkpoint_{step:07}.bin")), bytes)?;
    }
    fs::write(out.join("model.bin"), save_model(&result.params))?;
    println!(
        "trained {} iterations; wrote model.bin and train_log.csv to {}",
        train_cfg.total_iterations,
        out.display()
    );
    Ok(())
}

fn read_checkpoint(path: &Path) -> CliResult2<Vec<u8>> {
    if !path.exists() {
        return Err(usage(anyhow!("checkpoint not found: {}", path.display())));
    }
    Ok(fs::read(path).with_context(|| format!("cannot read {}", path.display()))?)
}

type CliResult2<T> = Result<T, crate::error::CliError>;

pub fn estimate(
    config: &Config,
    image_a: &Path,
    image_b: &Path,
    checkpoint: &Path,
    overlay: Option<&Path>,
) -> CliResult {
    match config.train.precision.as_str() {
        "f64" => estimate_typed::<f64>(image_a, image_b, checkpoint, overlay),
        "f32" => estimate_typed::<f32>(image_a, image_b, checkpoint, overlay),
        other => Err(usage(anyhow!("train.precision must be f64 or f32, got {other:?}"))),
    }
}

fn estimate_typed<E: Element>(
    image_a: &Path,
    image_b: &Path,
    checkpoint: &Path,
    overlay: Option<&Path>,
) -> CliResult {
    let bytes = read_checkpoint(checkpoint)?;
    let params = load_model::<E>(&bytes).map_err(anyhow::Error::from)?;
    let (h, w) = params.config().input_size;

    let a = resize_gray(&load_gray(image_a)?, h, w)?;
    let b = resize_gray(&load_gray(image_b)?, h, w)?;

    let tape: Tape<E> = Tape::new();
    let bound = params.bind_frozen(&tape);
    let ia = tape.constant(a.cast::<E>());
    let ib = tape.constant(b.cast::<E>());
    let pipe = bound
        .forward_pipeline(&ia, &ib, ForwardOptions::default())
        .map_err(anyhow::Error::from)?;
    let flat: [f64; 8] = core::array::from_fn(|i| pipe.offsets_ab.value().data()[i].to_f64());
    let offsets = CornerOffsets::from_flat(&flat, Frame::new(w, h));
    let homography = offsets_to_homography(&offsets).map_err(anyhow::Error::from)?;

    println!("{homography}");
    println!(
        "{}",
        flat.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    );

    if let Some(path) = overlay {
        let warped = warp(&a, &homography).map_err(anyhow::Error::from)?;
        let img = ghost_overlay(&warped.warped, &b)?;
        img.save(path).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

pub fn evaluate_cmd(config: &Config, out: &Path, checkpoint: Option<&Path>) -> CliResult {
    match config.train.precision.as_str() {
        "f64" => evaluate_typed::<f64>(config, out, checkpoint),
        "f32" => evaluate_typed::<f32>(config, out, checkpoint),
        other => Err(usage(anyhow!("train.precision must be f64 or f32, got {other:?}"))),
    }
}

fn evaluate_typed<E: Element>(config: &Config, out: &Path, checkpoint: Option<&Path>) -> CliResult {
    let source = SyntheticSource::new(
        config.data.gen_config(config.eval.data_seed),
        config.data.categories().map_err(usage)?,
    );
    let pairs =
        held_out_pairs(&source, 0, config.eval.pairs).map_err(anyhow::Error::from)?;
    ensure_out(out)?;
    write_snapshot(config, out)?;

    let loaded;
    let estimator: Estimator<'_, E> = match config.eval.method.as_str() {
        "identity" => Estimator::Identity,
        "ground_truth" => Estimator::GroundTruth,
        "ransac_dlt" => Estimator::RansacDlt {
            ransac: config.ransac.to_core(),
            correspondences: config.eval.correspondences(config.ransac.seed),
        },
        "model" => {
            let path = checkpoint
                .ok_or_else(|| usage(anyhow!("eval.method = model needs --checkpoint")))?;
            let bytes = read_checkpoint(path)?;
            loaded = load_model::<E>(&bytes).map_err(anyhow::Error::from)?;
            Estimator::Model { params: &loaded, opts: ForwardOptions::default() }
        }
        other => {
            return Err(usage(anyhow!(
                "eval.method must be identity, ground_truth, model or ransac_dlt, got {other:?}"
            )))
        }
    };

    let (records, report) = evaluate(&estimator, &pairs, config.eval.threshold_px);

    let mut rows = String::from("pair,category,mean_error_px,inliers,points,failed\n");
    for r in &records {
        rows += &format!(
            "{},{},{},{},{},{}\n",
            r.index,
            r.category.tag(),
            if r.mean_error_px.is_finite() { r.mean_error_px.to_string() } else { String::new() },
            r.inlier_flags.iter().filter(|&&f| f).count(),
            r.inlier_flags.len(),
            r.failed
        );
    }
    fs::write(out.join("eval_records.csv"), rows)?;
    fs::write(
        out.join("report_errors.csv"),
        evaluation_csv(core::slice::from_ref(&report), EvalMetric::ErrorPx),
    )?;
    fs::write(
        out.join("report_inliers.csv"),
        evaluation_csv(core::slice::from_ref(&report), EvalMetric::InlierPercent),
    )?;
    println!(
        "{}: avg error {:.4} px, inliers {:.1}% at {} px, failures {:.1}%",
        report.method,
        report.average_error_px,
        report.average_inlier_percent,
        report.threshold_px,
        100.0 * report.failure_rate
    );
    Ok(())
}

pub fn ablate(config: &Config, out: &Path) -> CliResult {
    match config.train.precision.as_str() {
        "f64" => ablate_typed::<f64>(config, out),
        "f32" => ablate_typed::<f32>(config, out),
        other => Err(usage(anyhow!("train.precision must be f64 or f32, got {other:?}"))),
    }
}

fn ablate_typed<E: Element>(config: &Config, out: &Path) -> CliResult {
    let base = config.train.to_core().map_err(usage)?;
    let model_cfg = {
        let mut m = config.model.to_core().map_err(usage)?;
        m.input_size = (config.data.patch_height, config.data.patch_width);
        m
    };
    let source = config.data.source().map_err(usage)?;
    let eval_source = SyntheticSource::new(
        config.data.gen_config(config.eval.data_seed),
        config.data.categories().map_err(usage)?,
    );
    let pairs =
        held_out_pairs(&eval_source, 0, config.eval.pairs).map_err(anyhow::Error::from)?;
    ensure_out(out)?;
    write_snapshot(config, out)?;

    let every = (base.total_iterations / 4).max(1);
    let suite = run_ablation_suite::<E>(
        &base,
        &model_cfg,
        &source,
        &pairs,
        config.eval.threshold_px,
        |arm, step| {
            if step % every == 0 {
                eprintln!("{arm}: step {step}");
            }
        },
    )
    .map_err(anyhow::Error::from)?;

    fs::write(out.join("ablation_errors.csv"), &suite.errors_csv)?;
    fs::write(out.join("ablation_inliers.csv"), &suite.inliers_csv)?;
    print!("{}", suite.errors_csv);
    Ok(())
}

pub fn visualize(
    config: &Config,
    image_a: &Path,
    image_b: &Path,
    checkpoint: Option<&Path>,
    out_image: &Path,
) -> CliResult {
    let a = load_gray(image_a)?;
    let b = load_gray(image_b)?;
    let warped = match checkpoint {
        None => a,
        Some(path) => {
            // Estimate with the model, then warp a onto b before mixing.
            let bytes = read_checkpoint(path)?;
            match config.train.precision.as_str() {
                "f64" => warp_with_model::<f64>(&bytes, &a, &b)?,
                "f32" => warp_with_model::<f32>(&bytes, &a, &b)?,
                other => {
                    return Err(usage(anyhow!(
                        "train.precision must be f64 or f32, got {other:?}"
                    )))
                }
            }
        }
    };
    let target = resize_gray(&b, warped.shape()[2], warped.shape()[3])?;
    let img = ghost_overlay(&warped, &target)?;
    img.save(out_image)
        .with_context(|| format!("cannot write {}", out_image.display()))?;
    println!("wrote {}", out_image.display());
    Ok(())
}

fn warp_with_model<E: Element>(
    bytes: &[u8],
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> CliResult2<Tensor<f64>> {
    let params = load_model::<E>(bytes).map_err(anyhow::Error::from)?;
    let (h, w) = params.config().input_size;
    let ra = resize_gray(a, h, w)?;
    let rb = resize_gray(b, h, w)?;
    let homography = estimate_pair::<E>(&params, &ra, &rb)?;
    Ok(warp(&ra, &homography).map_err(anyhow::Error::from)?.warped)
}

fn estimate_pair<E: Element>(
    params: &ModelParams<E>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> CliResult2<Homography> {
    let tape: Tape<E> = Tape::new();
    let bound = params.bind_frozen(&tape);
    let ia = tape.constant(a.cast::<E>());
    let ib = tape.constant(b.cast::<E>());
    let pipe = bound
        .forward_pipeline(&ia, &ib, ForwardOptions::default())
        .map_err(anyhow::Error::from)?;
    let flat: [f64; 8] = core::array::from_fn(|i| pipe.offsets_ab.value().data()[i].to_f64());
    let (hh, ww) = (a.shape()[2], a.shape()[3]);
    let offsets = CornerOffsets::from_flat(&flat, Frame::new(ww, hh));
    Ok(offsets_to_homography(&offsets).map_err(anyhow::Error::from)?)
}

pub fn apply_seed(config: &mut Config, seed: Option<u64>) {
    if let Some(s) = seed {
        config.train.seed = s;
        config.data.seed = s;
        config.ransac.seed = s;
    }
}
