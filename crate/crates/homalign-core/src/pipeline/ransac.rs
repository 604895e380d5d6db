//! RANSAC over the 4-point DLT: hypothesize-and-verify with a least-squares
//! refit on the consensus set.

use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::geometry::{dlt_from_correspondences, Homography};
#[allow(unused_imports)]
use num_traits::Float;

pub const MIN_SAMPLE_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct RansacConfig {
    /// Iteration budget; the adaptive bound may stop earlier.
    pub iterations: usize,
    /// Point-transfer error below which a correspondence counts as an inlier.
    pub threshold_px: f64,
    /// Confidence level for the adaptive early exit.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 1000, threshold_px: 3.0, confidence: 0.995, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    pub homography: Homography,
    /// Indices of the consensus set under the final (refit) model.
    pub inliers: Vec<usize>,
    pub iterations_run: usize,
}

fn transfer_error(h: &Homography, src: [f64; 2], dst: [f64; 2]) -> f64 {
    match h.apply(src) {
        Ok(p) => ((p[0] - dst[0]).powi(2) + (p[1] - dst[1]).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

fn consensus(h: &Homography, src: &[[f64; 2]], dst: &[[f64; 2]], threshold: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut error_sum = 0.0;
    for i in 0..src.len() {
        let e = transfer_error(h, src[i], dst[i]);
        if e <= threshold {
            inliers.push(i);
            error_sum += e;
        }
    }
    (inliers, error_sum)
}

/// Adaptive iteration bound for the running inlier ratio.
fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let p_good = inlier_ratio.powi(MIN_SAMPLE_SIZE as i32);
    if p_good <= 1e-12 {
        return cap;
    }
    let denom = (1.0 - p_good).ln();
    if denom >= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / denom).ceil();
    if n.is_finite() && n >= 0.0 {
        (n as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Robust homography estimation. Hypotheses come from minimal 4-point DLT
/// solves on random samples; the best consensus set is refit with the full
/// least-squares DLT and the inliers recounted under the refit model.
/// Deterministic under the configured seed.
pub fn ransac_dlt(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
    cfg: &RansacConfig,
) -> Result<RansacResult, PipelineError> {
    if src.len() != dst.len() || src.len() < MIN_SAMPLE_SIZE {
        return Err(PipelineError::Config(alloc::format!(
            "need at least {MIN_SAMPLE_SIZE} correspondences, got {}",
            src.len().min(dst.len())
        )));
    }
    if cfg.threshold_px <= 0.0 || cfg.iterations == 0 {
        return Err(PipelineError::Config(
            "threshold must be positive and iterations at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = src.len();
    let mut best: Option<(Vec<usize>, f64, Homography)> = None;
    let mut bound = cfg.iterations;
    let mut iterations_run = 0;

    while iterations_run < bound {
        iterations_run += 1;
        // Four distinct indices.
        let mut sample = [0usize; MIN_SAMPLE_SIZE];
        let mut filled = 0;
        while filled < MIN_SAMPLE_SIZE {
            let candidate = rng.random_range(0..n);
            if !sample[..filled].contains(&candidate) {
                sample[filled] = candidate;
                filled += 1;
            }
        }
        let s: Vec<[f64; 2]> = sample.iter().map(|&i| src[i]).collect();
        let d: Vec<[f64; 2]> = sample.iter().map(|&i| dst[i]).collect();
        let Ok(hypothesis) = dlt_from_correspondences(&s, &d) else {
            continue;
        };
        let (inliers, error_sum) = consensus(&hypothesis, src, dst, cfg.threshold_px);
        if inliers.len() < MIN_SAMPLE_SIZE {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bi, be, _)) => {
                inliers.len() > bi.len() || (inliers.len() == bi.len() && error_sum < *be)
            }
        };
        if better {
            let ratio = inliers.len() as f64 / n as f64;
            bound = adaptive_iterations(ratio, cfg.confidence, cfg.iterations).max(iterations_run);
            best = Some((inliers, error_sum, hypothesis));
        }
    }

    let Some((inliers, _, hypothesis)) = best else {
        return Err(PipelineError::NoConsensus);
    };

    // Least-squares refit on the consensus set; keep the minimal-sample
    // model when the refit degenerates.
    let rs: Vec<[f64; 2]> = inliers.iter().map(|&i| src[i]).collect();
    let rd: Vec<[f64; 2]> = inliers.iter().map(|&i| dst[i]).collect();
    let refit = dlt_from_correspondences(&rs, &rd).unwrap_or(hypothesis);
    let (final_inliers, _) = consensus(&refit, src, dst, cfg.threshold_px);
    Ok(RansacResult {
        homography: refit,
        inliers: final_inliers,
        iterations_run,
    })
}
