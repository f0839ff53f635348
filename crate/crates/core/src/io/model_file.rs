//! Calibration model files.
//!
//! TOML with one key per parameter. Floats are written in shortest
//! round-trip form so a load reproduces every stored value bit for bit.
//! Covariances are row-major `d × d` arrays.
//!
//! ```toml
//! version = 1
//! feature_spec = "conf,cx,cy"
//! confidence_transform = "raw"
//! d = 3
//! mu_plus = [0.81, 0.5, 0.49]
//! ...
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{ConfidenceTransform, FeatureSpec, GaussianLrModel, ModelParts};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    version: u32,
    feature_spec: String,
    confidence_transform: String,
    d: usize,
    mu_plus: Vec<f64>,
    mu_minus: Vec<f64>,
    sigma_plus: Vec<f64>,
    sigma_minus: Vec<f64>,
    c: f64,
    #[serde(default)]
    prior_offset: f64,
    lambda_reg: f64,
    epsilon_clamp: f64,
}

pub fn model_to_string(model: &GaussianLrModel) -> String {
    let p = model.to_parts();
    let raw = RawModel {
        version: MODEL_FORMAT_VERSION,
        feature_spec: p.spec.feature_list(),
        confidence_transform: p.spec.confidence_transform.as_str().to_string(),
        d: p.spec.dimension(),
        mu_plus: p.mu_plus,
        mu_minus: p.mu_minus,
        sigma_plus: p.sigma_plus,
        sigma_minus: p.sigma_minus,
        c: p.c,
        prior_offset: p.prior_offset,
        lambda_reg: p.lambda_reg,
        epsilon_clamp: p.epsilon_clamp,
    };
    let body = toml::to_string(&raw).expect("model serialization is infallible");
    format!("# Gaussian log-likelihood-ratio calibration model\n{body}")
}

pub fn model_from_str(text: &str) -> Result<GaussianLrModel> {
    let raw: RawModel = toml::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    if raw.version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported version {} (expected {MODEL_FORMAT_VERSION})",
            raw.version
        )));
    }
    let transform: ConfidenceTransform = raw.confidence_transform.parse()?;
    let spec = FeatureSpec::parse_list(&raw.feature_spec)?.with_transform(transform);
    if spec.dimension() != raw.d {
        return Err(Error::Model(format!(
            "d = {} but feature_spec `{}` has {} features",
            raw.d,
            raw.feature_spec,
            spec.dimension()
        )));
    }
    GaussianLrModel::from_parts(ModelParts {
        spec,
        mu_plus: raw.mu_plus,
        mu_minus: raw.mu_minus,
        sigma_plus: raw.sigma_plus,
        sigma_minus: raw.sigma_minus,
        c: raw.c,
        prior_offset: raw.prior_offset,
        lambda_reg: raw.lambda_reg,
        epsilon_clamp: raw.epsilon_clamp,
    })
}

pub fn save_model(model: &GaussianLrModel, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, model_to_string(model).as_bytes())
}

pub fn load_model(path: &Path) -> Result<GaussianLrModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{fit, FitOptions, LabeledSample};

    fn fitted() -> GaussianLrModel {
        let samples: Vec<_> = (0..400)
            .map(|i| {
                let x = ((i * 7919) % 1009) as f64 / 1009.0;
                let y = ((i * 104_729) % 1013) as f64 / 1013.0;
                let z = ((i * 1299) % 997) as f64 / 997.0;
                LabeledSample::new(vec![x, y, z * 0.3 + x * 0.1], (i * 31) % 5 < 2)
            })
            .collect();
        fit(
            &samples,
            FeatureSpec::default(),
            FitOptions {
                with_prior_term: true,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_field_identical() {
        let m = fitted();
        let text = model_to_string(&m);
        let back = model_from_str(&text).unwrap();
        assert_eq!(back, m);
        let (a, b) = (m.to_parts(), back.to_parts());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.sigma_plus), bits(&b.sigma_plus));
        assert_eq!(a.c.to_bits(), b.c.to_bits());
        assert_eq!(model_to_string(&back), text);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        let m = fitted();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    fn base() -> String {
        "version = 1\nfeature_spec = \"conf,cx\"\nconfidence_transform = \"raw\"\nd = 2\n\
         mu_plus = [0.8, 0.5]\nmu_minus = [0.3, 0.5]\n\
         sigma_plus = [0.05, 0.01, 0.01, 0.02]\nsigma_minus = [0.08, 0.0, 0.0, 0.04]\n\
         c = 0.1\nlambda_reg = 1e-6\nepsilon_clamp = 1e-6\n"
            .to_string()
    }

    #[test]
    fn hand_written_file_loads() {
        let m = model_from_str(&base()).unwrap();
        assert_eq!(m.dimension(), 2);
        assert_eq!(m.prior_offset(), 0.0);
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let text = base().replace("[0.05, 0.01, 0.01, 0.02]", "[0.05, 0.01, 0.02, 0.02]");
        assert!(matches!(model_from_str(&text), Err(Error::Model(m)) if m.contains("symmetric")));
    }

    #[test]
    fn dimension_errors() {
        let text = base().replace("mu_plus = [0.8, 0.5]", "mu_plus = [0.8, 0.5, 0.1]");
        assert!(matches!(model_from_str(&text), Err(Error::Model(m)) if m.contains("mu_plus")));
        let text = base().replace("d = 2", "d = 3");
        assert!(matches!(model_from_str(&text), Err(Error::Model(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = base().replace("version = 1", "version = 2");
        assert!(matches!(model_from_str(&text), Err(Error::Model(m)) if m.contains("version")));
    }

    #[test]
    fn non_positive_definite_rejected() {
        let text = base().replace("[0.08, 0.0, 0.0, 0.04]", "[0.08, 0.0, 0.0, -0.04]");
        assert!(matches!(model_from_str(&text), Err(Error::Numeric(_))));
    }
}
