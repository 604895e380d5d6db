//! Run configuration: a TOML file with one section per subsystem, plus
//! `--set key.path=value` overrides. Unknown keys are rejected, and every
//! run writes the resolved configuration next to its outputs so experiments
//! stay diffable.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use homalign_core::models::{ModelConfig, Variant};
use homalign_core::objective::LossConfig;
use homalign_core::pipeline::{
    Ablation, CorrespondenceConfig, RansacConfig, SyntheticSource, TrainConfig,
};
use homalign_core::synth::{Category, GenConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub ransac: RansacSection,
    pub output: OutputSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            eval: EvalSection::default(),
            ransac: RansacSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: String,
    pub feature_channels: usize,
    pub estimator_blocks: Vec<usize>,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let tiny = ModelConfig::tiny();
        Self {
            variant: "tiny".into(),
            feature_channels: tiny.feature_channels,
            estimator_blocks: tiny.estimator_blocks,
            input_height: tiny.input_size.0,
            input_width: tiny.input_size.1,
        }
    }
}

impl ModelSection {
    pub fn to_core(&self) -> Result<ModelConfig> {
        let variant = match self.variant.as_str() {
            "tiny" => Variant::Tiny,
            "paper" => Variant::Paper,
            other => bail!("model.variant must be `tiny` or `paper`, got {other:?}"),
        };
        let mut cfg = match variant {
            Variant::Tiny => ModelConfig::tiny(),
            Variant::Paper => ModelConfig::paper(),
        };
        cfg.feature_channels = self.feature_channels;
        cfg.estimator_blocks = self.estimator_blocks.clone();
        cfg.input_size = (self.input_height, self.input_width);
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: u64,
    pub stage1_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub lr_decay_factor: f64,
    pub decay_interval: u64,
    pub lambda: f64,
    pub mu: f64,
    pub loss_epsilon: f64,
    pub detach_denominator: bool,
    pub ablation: String,
    pub checkpoint_interval: u64,
    pub seed: u64,
    pub precision: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let tiny = TrainConfig::tiny();
        Self {
            iterations: tiny.total_iterations,
            stage1_fraction: tiny.stage1_fraction,
            batch_size: tiny.batch_size,
            learning_rate: tiny.learning_rate,
            adam_beta1: tiny.adam_beta1,
            adam_beta2: tiny.adam_beta2,
            adam_epsilon: tiny.adam_epsilon,
            lr_decay_factor: tiny.lr_decay_factor,
            decay_interval: tiny.decay_interval,
            lambda: tiny.lambda,
            mu: tiny.mu,
            loss_epsilon: tiny.loss_epsilon,
            detach_denominator: tiny.detach_denominator,
            ablation: "full".into(),
            checkpoint_interval: 0,
            seed: 0,
            precision: "f64".into(),
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            total_iterations: self.iterations,
            stage1_fraction: self.stage1_fraction,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            lr_decay_factor: self.lr_decay_factor,
            decay_interval: self.decay_interval,
            lambda: self.lambda,
            mu: self.mu,
            loss_epsilon: self.loss_epsilon,
            detach_denominator: self.detach_denominator,
            ablation: Ablation::parse(&self.ablation)
                .map_err(|e| anyhow!("train.ablation: {e}"))?,
            checkpoint_interval: self.checkpoint_interval,
            seed: self.seed,
        })
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            mu: self.mu,
            epsilon: self.loss_epsilon,
            detach_denominator: self.detach_denominator,
            ..LossConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub patch_height: usize,
    pub patch_width: usize,
    pub perturbation_px: f64,
    pub texture_richness: f64,
    pub luminance_gain: [f64; 2],
    pub luminance_offset: [f64; 2],
    pub illumination_variation: bool,
    pub low_light_level: f64,
    pub low_texture_amplitude: f64,
    pub low_texture_energy_fraction: f64,
    pub sf_fraction: [f64; 2],
    pub lf_fraction: [f64; 2],
    pub noise_level: f64,
    pub seed: u64,
    pub categories: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            patch_height: g.patch_size.0,
            patch_width: g.patch_size.1,
            perturbation_px: g.perturbation_px,
            texture_richness: g.texture_richness,
            luminance_gain: [g.luminance_gain.0, g.luminance_gain.1],
            luminance_offset: [g.luminance_offset.0, g.luminance_offset.1],
            illumination_variation: g.illumination_variation,
            low_light_level: g.low_light_level,
            low_texture_amplitude: g.low_texture_amplitude,
            low_texture_energy_fraction: g.low_texture_energy_fraction,
            sf_fraction: [g.sf_fraction.0, g.sf_fraction.1],
            lf_fraction: [g.lf_fraction.0, g.lf_fraction.1],
            noise_level: g.noise_level,
            seed: 0,
            categories: vec!["RE".into()],
        }
    }
}

impl DataSection {
    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            patch_size: (self.patch_height, self.patch_width),
            perturbation_px: self.perturbation_px,
            texture_richness: self.texture_richness,
            luminance_gain: (self.luminance_gain[0], self.luminance_gain[1]),
            luminance_offset: (self.luminance_offset[0], self.luminance_offset[1]),
            illumination_variation: self.illumination_variation,
            low_light_level: self.low_light_level,
            low_texture_amplitude: self.low_texture_amplitude,
            low_texture_energy_fraction: self.low_texture_energy_fraction,
            sf_fraction: (self.sf_fraction[0], self.sf_fraction[1]),
            lf_fraction: (self.lf_fraction[0], self.lf_fraction[1]),
            noise_level: self.noise_level,
            seed,
        }
    }

    pub fn categories(&self) -> Result<Vec<Category>> {
        if self.categories.is_empty() {
            bail!("data.categories must not be empty");
        }
        self.categories
            .iter()
            .map(|s| Category::parse(s).map_err(|e| anyhow!("data.categories: {e}")))
            .collect()
    }

    pub fn source(&self) -> Result<SyntheticSource> {
        Ok(SyntheticSource::new(self.gen_config(self.seed), self.categories()?))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub pairs: usize,
    pub threshold_px: f64,
    pub method: String,
    /// Seed for the held-out generator (kept apart from the training seed).
    pub data_seed: u64,
    pub correspondence_points: usize,
    pub correspondence_noise_sigma: f64,
    pub correspondence_outlier_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let c = CorrespondenceConfig::default();
        Self {
            pairs: 50,
            threshold_px: homalign_core::pipeline::INLIER_THRESHOLD_PX,
            method: "model".into(),
            data_seed: 9001,
            correspondence_points: c.points,
            correspondence_noise_sigma: c.noise_sigma,
            correspondence_outlier_fraction: c.outlier_fraction,
        }
    }
}

impl EvalSection {
    pub fn correspondences(&self, seed: u64) -> CorrespondenceConfig {
        CorrespondenceConfig {
            points: self.correspondence_points,
            noise_sigma: self.correspondence_noise_sigma,
            outlier_fraction: self.correspondence_outlier_fraction,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacSection {
    pub iterations: usize,
    pub threshold_px: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacSection {
    fn default() -> Self {
        let r = RansacConfig::default();
        Self {
            iterations: r.iterations,
            threshold_px: r.threshold_px,
            confidence: r.confidence,
            seed: r.seed,
        }
    }
}

impl RansacSection {
    pub fn to_core(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.iterations,
            threshold_px: self.threshold_px,
            confidence: self.confidence,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// png16 | png8 | pgm
    pub image_format: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { image_format: "png16".into() }
    }
}

/// Loads the config file (when given), applies `--set` overrides, and
/// deserializes with unknown keys rejected.
pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Config> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            text.parse()
                .with_context(|| format!("cannot parse config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| anyhow!("override {entry:?} is not of the form key.path=value"))?;
        let value = parse_override_value(raw);
        insert_path(&mut table, key.trim(), value)?;
    }
    let config: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e| anyhow!("invalid configuration: {e}"))?;
    Ok(config)
}

/// Parses an override as a TOML literal, falling back to a plain string.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    if let Ok(t) = wrapped.parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.trim().to_string())
}

fn insert_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path {path:?} crosses a non-table value"))?;
    }
    bail!("empty override path")
}

/// Serializes the resolved configuration (no timestamps, byte-stable).
pub fn snapshot(config: &Config) -> Result<String> {
    toml::to_string_pretty(config).context("cannot serialize resolved config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let text = snapshot(&c).unwrap();
        let parsed: Config = toml::from_str(&text).unwrap();
        assert_eq!(snapshot(&parsed).unwrap(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nnot_a_key = 3\n").unwrap();
        assert!(load(Some(&p), &[]).is_err());
    }

    #[test]
    fn overrides_win_over_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\niterations = 10\n").unwrap();
        let c = load(Some(&p), &["train.iterations=99".into(), "model.variant=paper".into()])
            .unwrap();
        assert_eq!(c.train.iterations, 99);
        assert_eq!(c.model.variant, "paper");
    }

    #[test]
    fn override_values_parse_as_toml_literals() {
        let c = load(
            None,
            &[
                "data.sf_fraction=[0.2, 0.3]".into(),
                "train.learning_rate=1e-3".into(),
                "train.detach_denominator=true".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.data.sf_fraction, [0.2, 0.3]);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert!(c.train.detach_denominator);
    }
}
