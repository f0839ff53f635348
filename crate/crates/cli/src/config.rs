use std::path::Path;

use serde::{Serialize, Serializer};

/// Resolved settings of one run. Written as `config.toml` next to the
/// outputs and echoed at the top of every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub manifests: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_transform: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_reg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub with_prior_term: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "seed_value")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blur_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blur_angle_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_scenes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_detections: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truths_per_scene: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_link: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_logit_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_logit_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

// TOML integers are signed 64-bit; larger seeds are written as strings.
fn seed_value<S: Serializer>(seed: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
    match seed {
        Some(v) if *v <= i64::MAX as u64 => s.serialize_i64(*v as i64),
        Some(v) => s.serialize_str(&v.to_string()),
        None => s.serialize_none(),
    }
}

impl RunConfig {
    pub fn new(subcommand: &str) -> Self {
        RunConfig {
            subcommand: subcommand.to_string(),
            ..Default::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config holds only TOML-representable values")
    }

    /// `(key, value)` pairs in key order, for report preambles.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config holds only TOML-representable values");
        let table = value.as_table().expect("struct serializes to a table");
        table
            .iter()
            .map(|(k, v)| {
                let text = match v {
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Array(items) => items
                        .iter()
                        .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                        .collect::<Vec<_>>()
                        .join(", "),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> detcal::Result<()> {
        detcal::io::write_atomic(&dir.join("config.toml"), self.to_toml().as_bytes())
    }
}
