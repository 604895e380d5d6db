//! The ablation suite: trains every arm on the same seed and data, then
//! evaluates all of them on one shared pair list.

#[allow(unused_imports)]
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::eval::{evaluate, evaluation_csv, Estimator, EvalMetric, Report};
use super::train::{train, Ablation, TrainConfig};
use super::{PipelineError, SyntheticSource};
use crate::element::Element;
use crate::models::ModelConfig;
use crate::synth::PairSample;

pub struct AblationReport {
    /// One report per arm, in [`Ablation::ALL`] order (full model last).
    pub reports: Vec<Report>,
    pub errors_csv: String,
    pub inliers_csv: String,
}

/// Trains the six ablation arms plus the full model with a shared seed and
/// training stream, and evaluates each on the same held-out pairs.
pub fn run_ablation_suite<E: Element>(
    base: &TrainConfig,
    model_cfg: &ModelConfig,
    source: &SyntheticSource,
    eval_pairs: &[PairSample],
    threshold_px: f64,
    mut progress: impl FnMut(&'static str, u64),
) -> Result<AblationReport, PipelineError> {
    let mut reports = Vec::with_capacity(Ablation::ALL.len());
    for arm in Ablation::ALL {
        let cfg = TrainConfig { ablation: arm, ..base.clone() };
        let out = train::<E>(&cfg, model_cfg.clone(), source, |step, _, _| {
            progress(arm.label(), step);
        })?;
        let estimator = Estimator::Model { params: &out.params, opts: arm.eval_options() };
        let (_, mut report) = evaluate(&estimator, eval_pairs, threshold_px);
        report.method = arm.label().to_string();
        reports.push(report);
    }
    let errors_csv = evaluation_csv(&reports, EvalMetric::ErrorPx);
    let inliers_csv = evaluation_csv(&reports, EvalMetric::InlierPercent);
    Ok(AblationReport { reports, errors_csv, inliers_csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::held_out_pairs;
    use crate::synth::{Category, GenConfig};

    #[test]
    fn suite_runs_seven_arms_on_shared_pairs() {
        let base = TrainConfig {
            total_iterations: 2,
            batch_size: 1,
            seed: 3,
            ..TrainConfig::tiny()
        };
        let source = SyntheticSource::new(
            GenConfig { seed: 50, ..GenConfig::default() },
            vec![Category::Regular],
        );
        let eval_source = SyntheticSource::new(
            GenConfig { seed: 51, ..GenConfig::default() },
            vec![Category::Regular, Category::SmallForeground],
        );
        let pairs = held_out_pairs(&eval_source, 0, 4).unwrap();
        let suite = run_ablation_suite::<f64>(
            &base,
            &ModelConfig::tiny(),
            &source,
            &pairs,
            3.0,
            |_, _| {},
        )
        .unwrap();
        assert_eq!(suite.reports.len(), 7);
        let labels: Vec<&str> = suite.reports.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "no_mask",
                "mask_attention_only",
                "mask_ransac_only",
                "no_triplet_term",
                "no_feature_extractor",
                "train_from_scratch",
                "full"
            ]
        );
        // All arms saw the same evaluation pairs.
        for r in &suite.reports {
            for (cat, agg) in &r.per_category {
                let reference = suite.reports[0].category(*cat).unwrap();
                assert_eq!(agg.pairs, reference.pairs);
            }
        }
        assert_eq!(suite.errors_csv.lines().count(), 8);
    }
}
