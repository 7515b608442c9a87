//! The JSON configuration file. Every key is optional; anything missing
//! takes its default, and unknown keys are rejected with their path.

use serde::{Deserialize, Serialize};

use scsa_core::{Error, ScsaConfig};
use scsa_harness::{Attention, BackboneSpec, DatasetSpec, TrainSpec};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub scsa: ScsaConfig,
    pub train: TrainSpec,
    pub dataset: DatasetSpec,
    pub backbone: BackboneSpec,
}

fn message(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

impl CliConfig {
    /// Parses `text`, naming the offending key path on failure.
    pub fn parse(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("{path}: {}", e.into_inner())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Backbone spec with attention switched on (using `scsa`) or off.
    pub fn backbone_spec(&self, attention: bool) -> BackboneSpec {
        let mut spec = self.backbone.clone();
        spec.attention = if attention { Attention::Scsa(self.scsa.clone()) } else { Attention::None };
        spec
    }

    pub fn validate(&self) -> Result<(), String> {
        self.scsa.validate(None).map_err(|e| format!("scsa.{}", message(e)))?;
        for &c in &self.backbone.stage_channels {
            self.scsa.validate(Some(c)).map_err(|e| format!("scsa.{} (backbone stage of {c} channels)", message(e)))?;
        }
        self.train.validate().map_err(message)?;
        self.dataset.validate().map_err(message)?;
        self.backbone.clone().without_attention().validate().map_err(message)?;
        if self.backbone.in_channels != self.dataset.image_size[0] {
            return Err(format!(
                "backbone.in_channels = {} but dataset.image_size has {} channels",
                self.backbone.in_channels, self.dataset.image_size[0]
            ));
        }
        if self.backbone.num_classes != self.dataset.num_classes {
            return Err(format!(
                "backbone.num_classes = {} but dataset.num_classes = {}",
                self.backbone.num_classes, self.dataset.num_classes
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(CliConfig::parse("{}").unwrap(), CliConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let d = CliConfig::default();
        assert_eq!(CliConfig::parse(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn unknown_key_names_path() {
        let err = CliConfig::parse(r#"{"scsa": {"smsa": {"kernal_sizes": [3]}}}"#).unwrap_err();
        assert!(err.starts_with("scsa.smsa.kernal_sizes:"), "{err}");
    }

    #[test]
    fn wrong_type_names_path() {
        let err = CliConfig::parse(r#"{"train": {"lr": "fast"}}"#).unwrap_err();
        assert!(err.starts_with("train.lr:"), "{err}");
    }

    #[test]
    fn semantic_errors_name_keys() {
        let mut c = CliConfig::default();
        c.scsa.smsa.kernel_sizes = vec![3, 4, 5, 7];
        assert!(c.validate().unwrap_err().starts_with("scsa.smsa.kernel_sizes"));
        let mut c = CliConfig::default();
        c.backbone.num_classes = 3;
        assert!(c.validate().unwrap_err().contains("num_classes"));
    }
}
