use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use uatr_core::contrastive::TrainConfig;
use uatr_core::data::SegmentConfig;
use uatr_core::encoders::EncoderConfig;
use uatr_core::inference::{ClassMap, TuneConfig};
use uatr_core::text::TemplateSpec;

use crate::UsageError;

/// Everything a run needs besides its data, read from one JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub tune: TuneConfig,
    pub segment: SegmentConfig,
    /// Inference template, one clause per line; label clause only if absent.
    pub test_template: Option<String>,
    /// Vessel type to evaluation class; the five-class Shipsear merge if absent.
    pub class_map: Option<ClassMap>,
    pub fold_seed: u64,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        cfg.encoder
            .validate()
            .with_context(|| format!("config {}", path.display()))?;
        cfg.train
            .validate()
            .with_context(|| format!("config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn test_template(&self) -> anyhow::Result<TemplateSpec> {
        Ok(match &self.test_template {
            Some(t) => TemplateSpec::parse(t)?,
            None => TemplateSpec::label_only(),
        })
    }

    pub fn class_map(&self) -> ClassMap {
        self.class_map.clone().unwrap_or_default()
    }
}
