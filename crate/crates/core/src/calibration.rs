//! Dependent logistic calibration.
//!
//! Each detection is mapped to a feature vector (by default its confidence
//! and box center). Correct and incorrect detections are modeled as two
//! multivariate Gaussians, and the calibrated confidence is the logistic
//! sigmoid of the log-likelihood ratio between them:
//!
//! ```text
//! lr(s) = ½ [ (s-μ₋)ᵀ Σ₋⁻¹ (s-μ₋) − (s-μ₊)ᵀ Σ₊⁻¹ (s-μ₊) ] + c
//! c     = ½ (log det Σ₋ − log det Σ₊)
//! g(s)  = 1 / (1 + exp(−lr(s)))
//! ```
//!
//! Full covariance matrices let the map use correlations between confidence
//! and box position. An optional prior term `log(n₊ / n₋)` is added to `lr`
//! when fitted with [`FitOptions::with_prior_term`]; it is stored separately
//! from `c` so `c` always equals the log-volume ratio.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::annotations::Detection;

pub const DEFAULT_LAMBDA_REG: f64 = 1e-6;
pub const DEFAULT_EPSILON_CLAMP: f64 = 1e-6;

/// Calibrated outputs saturate this far from 0 and 1.
const OUTPUT_MARGIN: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceTransform {
    #[default]
    Raw,
    Logit,
}

impl ConfidenceTransform {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceTransform::Raw => "raw",
            ConfidenceTransform::Logit => "logit",
        }
    }
}

impl FromStr for ConfidenceTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ConfidenceTransform::Raw),
            "logit" => Ok(ConfidenceTransform::Logit),
            other => Err(Error::Spec(format!("unknown confidence transform `{other}`"))),
        }
    }
}

/// Which detection attributes feed the calibration map.
///
/// Enabled features always appear in the order confidence, cx, cy, w, h.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub use_confidence: bool,
    pub use_center_x: bool,
    pub use_center_y: bool,
    pub use_width: bool,
    pub use_height: bool,
    pub confidence_transform: ConfidenceTransform,
}

impl Default for FeatureSpec {
    /// Confidence plus box center, raw confidence.
    fn default() -> Self {
        FeatureSpec {
            use_confidence: true,
            use_center_x: true,
            use_center_y: true,
            use_width: false,
            use_height: false,
            confidence_transform: ConfidenceTransform::Raw,
        }
    }
}

const FEATURE_NAMES: [&str; 5] = ["conf", "cx", "cy", "w", "h"];

impl FeatureSpec {
    fn flags(&self) -> [bool; 5] {
        [
            self.use_confidence,
            self.use_center_x,
            self.use_center_y,
            self.use_width,
            self.use_height,
        ]
    }

    pub fn dimension(&self) -> usize {
        self.flags().iter().filter(|f| **f).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension() == 0 {
            return Err(Error::Spec("feature spec enables no features".into()));
        }
        Ok(())
    }

    /// Parse a comma list such as `conf,cx,cy` (transform stays raw).
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut spec = FeatureSpec {
            use_confidence: false,
            use_center_x: false,
            use_center_y: false,
            use_width: false,
            use_height: false,
            confidence_transform: ConfidenceTransform::Raw,
        };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let slot = match name {
                "conf" | "confidence" => &mut spec.use_confidence,
                "cx" => &mut spec.use_center_x,
                "cy" => &mut spec.use_center_y,
                "w" => &mut spec.use_width,
                "h" => &mut spec.use_height,
                other => return Err(Error::Spec(format!("unknown feature `{other}`"))),
            };
            if *slot {
                return Err(Error::Spec(format!("feature `{name}` listed twice")));
            }
            *slot = true;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_transform(mut self, t: ConfidenceTransform) -> Self {
        self.confidence_transform = t;
        self
    }

    /// Comma list of enabled feature names, in feature order.
    pub fn feature_list(&self) -> String {
        FEATURE_NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.feature_list())?;
        if self.use_confidence && self.confidence_transform == ConfidenceTransform::Logit {
            write!(f, " (logit confidence)")?;
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Project a detection onto the enabled features.
///
/// With the logit transform, confidence is clamped to `[ε, 1-ε]` first so the
/// result is always finite.
pub fn extract_features(det: &Detection, spec: &FeatureSpec, epsilon: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.dimension());
    if spec.use_confidence {
        let c = det.confidence();
        out.push(match spec.confidence_transform {
            ConfidenceTransform::Raw => c,
            ConfidenceTransform::Logit => logit(c.clamp(epsilon, 1.0 - epsilon)),
        });
    }
    let b = &det.bbox;
    for (on, v) in [
        (spec.use_center_x, b.cx()),
        (spec.use_center_y, b.cy()),
        (spec.use_width, b.w()),
        (spec.use_height, b.h()),
    ] {
        if on {
            out.push(v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub correct: bool,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, correct: bool) -> Self {
        LabeledSample { features, correct }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lambda_reg: f64,
    pub epsilon_clamp: f64,
    /// Add `log(n₊/n₋)` so the map estimates the posterior under the
    /// observed class frequencies instead of equal priors.
    pub with_prior_term: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda_reg: DEFAULT_LAMBDA_REG,
            epsilon_clamp: DEFAULT_EPSILON_CLAMP,
            with_prior_term: false,
        }
    }
}

/// Symmetric positive-definite matrix with its precomputed inverse.
#[derive(Debug, Clone)]
struct Precision {
    inverse: Vec<f64>,
    log_det: f64,
}

impl Precision {
    fn new(sigma: &DMatrix<f64>, which: &str) -> Result<Self> {
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            Error::Numeric(format!("{which} covariance is not positive definite"))
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        let d = sigma.nrows();
        let mut inverse = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                // symmetrize against round-off in the inverse
                inverse[i * d + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        if !log_det.is_finite() || inverse.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{which} covariance is ill-conditioned")));
        }
        Ok(Precision { inverse, log_det })
    }

    fn quadratic_form(&self, diff: &[f64]) -> f64 {
        let d = diff.len();
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.inverse[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * diff[j];
            }
            q += diff[i] * acc;
        }
        q
    }
}

/// A fitted calibration map. Immutable; safe to share across threads.
#[derive(Debug, Clone)]
pub struct GaussianLrModel {
    spec: FeatureSpec,
    mu_plus: DVector<f64>,
    mu_minus: DVector<f64>,
    sigma_plus: DMatrix<f64>,
    sigma_minus: DMatrix<f64>,
    c: f64,
    prior_offset: f64,
    lambda_reg: f64,
    epsilon_clamp: f64,
    plus: Precision,
    minus: Precision,
}

impl PartialEq for GaussianLrModel {
    fn eq(&self, o: &Self) -> bool {
        self.spec == o.spec
            && self.mu_plus == o.mu_plus
            && self.mu_minus == o.mu_minus
            && self.sigma_plus == o.sigma_plus
            && self.sigma_minus == o.sigma_minus
            && self.c == o.c
            && self.prior_offset == o.prior_offset
            && self.lambda_reg == o.lambda_reg
            && self.epsilon_clamp == o.epsilon_clamp
    }
}

/// Raw model parameters, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub spec: FeatureSpec,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    /// Row-major `d × d`.
    pub sigma_plus: Vec<f64>,
    pub sigma_minus: Vec<f64>,
    pub c: f64,
    pub prior_offset: f64,
    pub lambda_reg: f64,
    pub epsilon_clamp: f64,
}

fn check_symmetric(m: &DMatrix<f64>, which: &str) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Model(format!(
                    "{which} is not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

impl GaussianLrModel {
    /// Assemble a model from stored parameters, checking every invariant.
    pub fn from_parts(p: ModelParts) -> Result<Self> {
        p.spec.validate()?;
        let d = p.spec.dimension();
        for (name, len, want) in [
            ("mu_plus", p.mu_plus.len(), d),
            ("mu_minus", p.mu_minus.len(), d),
            ("sigma_plus", p.sigma_plus.len(), d * d),
            ("sigma_minus", p.sigma_minus.len(), d * d),
        ] {
            if len != want {
                return Err(Error::Model(format!(
                    "{name} has {len} entries, expected {want} for d = {d}"
                )));
            }
        }
        let all = p
            .mu_plus
            .iter()
            .chain(&p.mu_minus)
            .chain(&p.sigma_plus)
            .chain(&p.sigma_minus)
            .chain([&p.c, &p.prior_offset, &p.lambda_reg, &p.epsilon_clamp]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        if p.lambda_reg.is_nan() || p.lambda_reg <= 0.0 || !(p.epsilon_clamp > 0.0 && p.epsilon_clamp < 0.5) {
            return Err(Error::Model(format!(
                "lambda_reg = {} and epsilon_clamp = {} must be positive (epsilon < 0.5)",
                p.lambda_reg, p.epsilon_clamp
            )));
        }
        let sigma_plus = DMatrix::from_row_slice(d, d, &p.sigma_plus);
        let sigma_minus = DMatrix::from_row_slice(d, d, &p.sigma_minus);
        check_symmetric(&sigma_plus, "sigma_plus")?;
        check_symmetric(&sigma_minus, "sigma_minus")?;
        let plus = Precision::new(&sigma_plus, "correct-class")?;
        let minus = Precision::new(&sigma_minus, "incorrect-class")?;
        Ok(GaussianLrModel {
            spec: p.spec,
            mu_plus: DVector::from_vec(p.mu_plus),
            mu_minus: DVector::from_vec(p.mu_minus),
            sigma_plus,
            sigma_minus,
            c: p.c,
            prior_offset: p.prior_offset,
            lambda_reg: p.lambda_reg,
            epsilon_clamp: p.epsilon_clamp,
            plus,
            minus,
        })
    }

    /// Build a model from known parameters with `c` set to the log-volume ratio.
    pub fn from_gaussians(
        spec: FeatureSpec,
        mu_plus: Vec<f64>,
        sigma_plus: Vec<f64>,
        mu_minus: Vec<f64>,
        sigma_minus: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::from_parts(ModelParts {
            spec,
            mu_plus,
            mu_minus,
            sigma_plus,
            sigma_minus,
            c: 0.0,
            prior_offset: 0.0,
            lambda_reg: DEFAULT_LAMBDA_REG,
            epsilon_clamp: DEFAULT_EPSILON_CLAMP,
        })?;
        m.c = 0.5 * (m.minus.log_det - m.plus.log_det);
        Ok(m)
    }

    pub fn to_parts(&self) -> ModelParts {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        ModelParts {
            spec: self.spec,
            mu_plus: self.mu_plus.as_slice().to_vec(),
            mu_minus: self.mu_minus.as_slice().to_vec(),
            sigma_plus: row_major(&self.sigma_plus),
            sigma_minus: row_major(&self.sigma_minus),
            c: self.c,
            prior_offset: self.prior_offset,
            lambda_reg: self.lambda_reg,
            epsilon_clamp: self.epsilon_clamp,
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn mu_plus(&self) -> &[f64] {
        self.mu_plus.as_slice()
    }

    pub fn mu_minus(&self) -> &[f64] {
        self.mu_minus.as_slice()
    }

    pub fn sigma_plus(&self) -> &DMatrix<f64> {
        &self.sigma_plus
    }

    pub fn sigma_minus(&self) -> &DMatrix<f64> {
        &self.sigma_minus
    }

    /// Log-volume offset `½(log det Σ₋ − log det Σ₊)`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `log(n₊/n₋)` when fitted with the prior term, else 0.
    pub fn prior_offset(&self) -> f64 {
        self.prior_offset
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn epsilon_clamp(&self) -> f64 {
        self.epsilon_clamp
    }

    /// Same model with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        GaussianLrModel {
            spec: self.spec,
            mu_plus: self.mu_minus.clone(),
            mu_minus: self.mu_plus.clone(),
            sigma_plus: self.sigma_minus.clone(),
            sigma_minus: self.sigma_plus.clone(),
            c: -self.c,
            prior_offset: -self.prior_offset,
            lambda_reg: self.lambda_reg,
            epsilon_clamp: self.epsilon_clamp,
            plus: self.minus.clone(),
            minus: self.plus.clone(),
        }
    }

    fn check_dim(&self, s: &[f64]) -> Result<()> {
        let d = self.dimension();
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: s.len(),
            });
        }
        Ok(())
    }

    pub fn log_likelihood_ratio(&self, s: &[f64]) -> Result<f64> {
        self.check_dim(s)?;
        let mut diff = [0.0f64; 5];
        let d = s.len();
        for i in 0..d {
            diff[i] = s[i] - self.mu_minus[i];
        }
        let q_minus = self.minus.quadratic_form(&diff[..d]);
        for i in 0..d {
            diff[i] = s[i] - self.mu_plus[i];
        }
        let q_plus = self.plus.quadratic_form(&diff[..d]);
        Ok(0.5 * (q_minus - q_plus) + self.c + self.prior_offset)
    }

    /// Calibrated probability that a detection with features `s` is correct.
    /// Always strictly inside `(0, 1)`.
    pub fn calibrate(&self, s: &[f64]) -> Result<f64> {
        let lr = self.log_likelihood_ratio(s)?;
        Ok(sigmoid(lr).clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN))
    }

    pub fn features(&self, det: &Detection) -> Vec<f64> {
        extract_features(det, &self.spec, self.epsilon_clamp)
    }

    /// Replace each detection's confidence with its calibrated value. Boxes,
    /// classes and order are unchanged.
    pub fn calibrate_detections(&self, dets: &[Detection]) -> Result<Vec<Detection>> {
        dets.iter()
            .map(|d| d.with_confidence(self.calibrate(&self.features(d))?))
            .collect()
    }
}

struct ClassMoments {
    n: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Mean and unbiased covariance in two passes over the samples, in input order.
fn class_moments(samples: &[LabeledSample], correct: bool, d: usize) -> ClassMoments {
    let mut n = 0usize;
    let mut sum = vec![0.0; d];
    for s in samples.iter().filter(|s| s.correct == correct) {
        n += 1;
        for (acc, v) in sum.iter_mut().zip(&s.features) {
            *acc += v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for s in samples.iter().filter(|s| s.correct == correct) {
        for i in 0..d {
            diff[i] = s.features[i] - mean[i];
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += diff[i] * diff[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    ClassMoments {
        n,
        mean: DVector::from_vec(mean),
        cov,
    }
}

/// Fit the two class-conditional Gaussians and assemble the calibration map.
pub fn fit(samples: &[LabeledSample], spec: FeatureSpec, opts: FitOptions) -> Result<GaussianLrModel> {
    spec.validate()?;
    let d = spec.dimension();
    if let Some(bad) = samples.iter().find(|s| s.features.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.features.len(),
        });
    }
    if samples.iter().any(|s| s.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    if opts.lambda_reg.is_nan() || opts.lambda_reg <= 0.0 {
        return Err(Error::Spec(format!("lambda_reg = {} must be positive", opts.lambda_reg)));
    }
    let n_plus = samples.iter().filter(|s| s.correct).count();
    let n_minus = samples.len() - n_plus;
    for (class, have) in [("correct", n_plus), ("incorrect", n_minus)] {
        if have < d + 1 {
            return Err(Error::InsufficientData {
                class,
                have,
                need: d + 1,
            });
        }
    }

    let mut plus = class_moments(samples, true, d);
    let mut minus = class_moments(samples, false, d);
    for i in 0..d {
        plus.cov[(i, i)] += opts.lambda_reg;
        minus.cov[(i, i)] += opts.lambda_reg;
    }
    let p_plus = Precision::new(&plus.cov, "correct-class")?;
    let p_minus = Precision::new(&minus.cov, "incorrect-class")?;
    let c = 0.5 * (p_minus.log_det - p_plus.log_det);
    let prior_offset = if opts.with_prior_term {
        (plus.n as f64 / minus.n as f64).ln()
    } else {
        0.0
    };
    Ok(GaussianLrModel {
        spec,
        mu_plus: plus.mean,
        mu_minus: minus.mean,
        sigma_plus: plus.cov,
        sigma_minus: minus.cov,
        c,
        prior_offset,
        lambda_reg: opts.lambda_reg,
        epsilon_clamp: opts.epsilon_clamp,
        plus: p_plus,
        minus: p_minus,
    })
}

/// Fit directly from detections paired with their correctness labels.
pub fn fit_detections(
    labeled: &[(Detection, bool)],
    spec: FeatureSpec,
    opts: FitOptions,
) -> Result<GaussianLrModel> {
    let samples: Vec<LabeledSample> = labeled
        .iter()
        .map(|(d, ok)| LabeledSample::new(extract_features(d, &spec, opts.epsilon_clamp), *ok))
        .collect();
    fit(&samples, spec, opts)
}
