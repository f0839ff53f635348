//! Synthetic detection data with known calibration behavior.
//!
//! Two generators:
//!
//! * [`generate_feature_stream`] draws labeled feature vectors from two known
//!   Gaussians. [`bayes_posterior`] gives the exact posterior for such a
//!   stream, which is the target a fitted calibration map should approach.
//! * [`generate_scenes`] builds per-image ground truth and detections whose
//!   confidence is miscalibrated in a prescribed way: a detection reporting
//!   confidence `c` is correct with probability `link(c)`.
//!
//! All randomness comes from [`crate::rng`]; scene `i` uses substream `i` of
//! the master seed, so output does not depend on thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::calibration::{sigmoid, FeatureSpec, GaussianLrModel, LabeledSample};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::annotations::{Detection, GroundTruth};
use crate::rng::{self, SplitMix64};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStreamSpec {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    /// Row-major `d × d`, symmetric positive definite.
    pub sigma_plus: Vec<f64>,
    pub sigma_minus: Vec<f64>,
    pub prior_correct: f64,
    pub n: usize,
    pub seed: u64,
}

/// Validated stream parameters with Cholesky factors for sampling.
struct PreparedStream {
    mu_plus: DVector<f64>,
    mu_minus: DVector<f64>,
    l_plus: DMatrix<f64>,
    l_minus: DMatrix<f64>,
}

impl GaussianStreamSpec {
    pub fn dimension(&self) -> usize {
        self.mu_plus.len()
    }

    fn prepare(&self) -> Result<PreparedStream> {
        let d = self.dimension();
        if d == 0 || self.mu_minus.len() != d {
            return Err(Error::Spec("mean vectors must be non-empty and equal length".into()));
        }
        if self.sigma_plus.len() != d * d || self.sigma_minus.len() != d * d {
            return Err(Error::Spec(format!("covariances must have {} entries", d * d)));
        }
        if !(self.prior_correct > 0.0 && self.prior_correct < 1.0) {
            return Err(Error::Spec(format!(
                "prior_correct = {} must be in (0, 1)",
                self.prior_correct
            )));
        }
        let factor = |v: &[f64], which: &str| -> Result<DMatrix<f64>> {
            let m = DMatrix::from_row_slice(d, d, v);
            if m != m.transpose() {
                return Err(Error::Spec(format!("{which} covariance is not symmetric")));
            }
            m.cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::Spec(format!("{which} covariance is not positive definite")))
        };
        Ok(PreparedStream {
            mu_plus: DVector::from_column_slice(&self.mu_plus),
            mu_minus: DVector::from_column_slice(&self.mu_minus),
            l_plus: factor(&self.sigma_plus, "correct-class")?,
            l_minus: factor(&self.sigma_minus, "incorrect-class")?,
        })
    }

    /// The true calibration map for this stream, without the prior term.
    pub fn true_model(&self, spec: FeatureSpec) -> Result<GaussianLrModel> {
        if spec.dimension() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: spec.dimension(),
                found: self.dimension(),
            });
        }
        GaussianLrModel::from_gaussians(
            spec,
            self.mu_plus.clone(),
            self.sigma_plus.clone(),
            self.mu_minus.clone(),
            self.sigma_minus.clone(),
        )
    }
}

fn draw_gaussian(rng: &mut SplitMix64, mu: &DVector<f64>, l: &DMatrix<f64>) -> Vec<f64> {
    let z = DVector::from_iterator(mu.len(), (0..mu.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    (mu + l * z).as_slice().to_vec()
}

/// Labels ~ Bernoulli(prior_correct), features from the label's Gaussian.
pub fn generate_feature_stream(spec: &GaussianStreamSpec) -> Result<Vec<LabeledSample>> {
    let p = spec.prepare()?;
    let mut rng = rng::stream(spec.seed);
    Ok((0..spec.n)
        .map(|_| {
            let correct = rng.gen::<f64>() < spec.prior_correct;
            let features = if correct {
                draw_gaussian(&mut rng, &p.mu_plus, &p.l_plus)
            } else {
                draw_gaussian(&mut rng, &p.mu_minus, &p.l_minus)
            };
            LabeledSample::new(features, correct)
        })
        .collect())
}

/// Exact `P(correct | s)` for a Gaussian stream:
/// `sigmoid(lr_true(s) + log(prior / (1 - prior)))`.
pub fn bayes_posterior(spec: &GaussianStreamSpec, s: &[f64]) -> Result<f64> {
    spec.prepare()?;
    let d = spec.dimension();
    let generic = FeatureSpec::parse_list(&["conf", "cx", "cy", "w", "h"][..d.min(5)].join(","))
        .map_err(|_| Error::Spec(format!("dimension {d} not supported (max 5)")))?;
    if d > 5 {
        return Err(Error::Spec(format!("dimension {d} not supported (max 5)")));
    }
    let model = spec.true_model(generic)?;
    let lr = model.log_likelihood_ratio(s)?;
    let prior = spec.prior_correct;
    Ok(sigmoid(lr + (prior / (1.0 - prior)).ln()))
}

/// `P(correct | reported confidence c)` for a simulated detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceLink {
    /// Calibrated: `c`.
    Identity,
    /// `c^γ`. `γ > 1` is overconfident, `γ < 1` underconfident.
    Power(f64),
    /// `clamp(a·c + b, 0, 1)`.
    Affine(f64, f64),
}

impl ConfidenceLink {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConfidenceLink::Identity => Ok(()),
            ConfidenceLink::Power(g) if g.is_finite() && g > 0.0 => Ok(()),
            ConfidenceLink::Power(g) => Err(Error::Spec(format!("power link needs γ > 0, got {g}"))),
            ConfidenceLink::Affine(a, b) if a.is_finite() && b.is_finite() => Ok(()),
            ConfidenceLink::Affine(a, b) => Err(Error::Spec(format!("affine link ({a}, {b}) not finite"))),
        }
    }

    pub fn prob_correct(&self, c: f64) -> f64 {
        match *self {
            ConfidenceLink::Identity => c,
            ConfidenceLink::Power(g) => c.powf(g),
            ConfidenceLink::Affine(a, b) => (a * c + b).clamp(0.0, 1.0),
        }
    }

    /// Parse `identity`, `power:2`, `affine:0.8,0.1`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let nums: std::result::Result<Vec<f64>, _> =
            args.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse::<f64>()).collect();
        let nums = nums.map_err(|_| Error::Spec(format!("bad link arguments in `{text}`")))?;
        let link = match (name.trim(), nums.as_slice()) {
            ("identity", []) => ConfidenceLink::Identity,
            ("power", [g]) => ConfidenceLink::Power(*g),
            ("affine", [a, b]) => ConfidenceLink::Affine(*a, *b),
            _ => {
                return Err(Error::Spec(format!(
                    "unknown link `{text}` (identity | power:G | affine:A,B)"
                )))
            }
        };
        link.validate()?;
        Ok(link)
    }
}

impl std::fmt::Display for ConfidenceLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfidenceLink::Identity => write!(f, "identity"),
            ConfidenceLink::Power(g) => write!(f, "power:{g}"),
            ConfidenceLink::Affine(a, b) => write!(f, "affine:{a},{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneStreamSpec {
    pub n_scenes: usize,
    /// Inclusive range of ground-truth boxes per scene.
    pub truths_per_scene: (usize, usize),
    /// Std-dev of the Gaussian noise added to each true box's center.
    pub jitter_sigma: f64,
    pub confidence_link: ConfidenceLink,
    /// Reported confidences are `sigmoid(N(mean, sd))` before conditioning
    /// on correctness.
    pub confidence_logit_mean: f64,
    pub confidence_logit_sd: f64,
    pub iou_threshold: f64,
    pub seed: u64,
}

impl Default for SceneStreamSpec {
    fn default() -> Self {
        SceneStreamSpec {
            n_scenes: 1000,
            truths_per_scene: (1, 4),
            jitter_sigma: 0.01,
            confidence_link: ConfidenceLink::Identity,
            confidence_logit_mean: 1.0,
            confidence_logit_sd: 1.0,
            iou_threshold: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub truths: Vec<GroundTruth>,
    pub detections: Vec<Detection>,
}

const SIZE_RANGE: (f64, f64) = (0.08, 0.25);
const PLACEMENT_TRIES: usize = 200;

impl SceneStreamSpec {
    pub fn validate(&self) -> Result<()> {
        self.confidence_link.validate()?;
        let (lo, hi) = self.truths_per_scene;
        if lo > hi || hi > 8 {
            return Err(Error::Spec(format!(
                "truths_per_scene ({lo}, {hi}) must satisfy lo <= hi <= 8"
            )));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Spec(format!("jitter_sigma = {} must be >= 0", self.jitter_sigma)));
        }
        if !(self.confidence_logit_sd >= 0.0 && self.confidence_logit_sd.is_finite())
            || !self.confidence_logit_mean.is_finite()
        {
            return Err(Error::Spec("confidence logit mean/sd must be finite, sd >= 0".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Spec(format!("iou_threshold = {} must be in (0, 1)", self.iou_threshold)));
        }
        let pi = self.correct_fraction();
        if pi.is_nan() || pi <= 0.0 {
            return Err(Error::Spec(format!("link {} never yields a correct detection", self.confidence_link)));
        }
        Ok(())
    }

    /// Expected fraction of correct detections, `E[link(c)]` under the
    /// reported-confidence distribution (Gauss-Hermite-free midpoint rule on
    /// the latent normal, accurate to ~1e-9).
    pub fn correct_fraction(&self) -> f64 {
        let n = 20_000;
        let (lo, hi) = (-8.0, 8.0);
        let step = (hi - lo) / n as f64;
        let mut acc = 0.0;
        let mut mass = 0.0;
        for i in 0..n {
            let z = lo + (i as f64 + 0.5) * step;
            let pdf = (-0.5 * z * z).exp();
            let c = sigmoid(self.confidence_logit_mean + self.confidence_logit_sd * z);
            acc += pdf * self.confidence_link.prob_correct(c);
            mass += pdf;
        }
        acc / mass
    }
}

fn draw_confidence(rng: &mut SplitMix64, spec: &SceneStreamSpec) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigmoid(spec.confidence_logit_mean + spec.confidence_logit_sd * z)
}

/// Sample a confidence conditioned on the detection being correct (or not),
/// by rejection against the link. The accepted values have density
/// proportional to `link(c) f(c)` (resp. `(1 - link(c)) f(c)`).
fn draw_conditional_confidence(rng: &mut SplitMix64, spec: &SceneStreamSpec, correct: bool) -> f64 {
    loop {
        let c = draw_confidence(rng, spec);
        let p = spec.confidence_link.prob_correct(c);
        let accept = if correct { p } else { 1.0 - p };
        if rng.gen::<f64>() < accept {
            return c;
        }
    }
}

fn random_box(rng: &mut SplitMix64) -> BBox {
    let w = rng.gen_range(SIZE_RANGE.0..SIZE_RANGE.1);
    let h = rng.gen_range(SIZE_RANGE.0..SIZE_RANGE.1);
    let cx = rng.gen_range(w / 2.0..=1.0 - w / 2.0);
    let cy = rng.gen_range(h / 2.0..=1.0 - h / 2.0);
    BBox::new(cx, cy, w, h).expect("sampled inside the unit square")
}

fn jittered(rng: &mut SplitMix64, b: &BBox, sigma: f64) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let dx: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    let dy: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    BBox::new(
        (b.cx() + dx).clamp(0.0, 1.0),
        (b.cy() + dy).clamp(0.0, 1.0),
        b.w(),
        b.h(),
    )
    .expect("clamped center, unchanged size")
}

fn generate_scene(spec: &SceneStreamSpec, index: usize, fp_per_tp: f64) -> Scene {
    let mut rng = rng::substream(spec.seed, index as u64);
    let (lo, hi) = spec.truths_per_scene;
    let k = rng.gen_range(lo..=hi);

    // Non-overlapping truths: a detection can then clear the IoU threshold
    // against at most one of them.
    let mut truths: Vec<GroundTruth> = Vec::with_capacity(k);
    for _ in 0..PLACEMENT_TRIES {
        if truths.len() == k {
            break;
        }
        let b = random_box(&mut rng);
        if truths.iter().all(|t| t.bbox.iou(&b) == 0.0) {
            truths.push(GroundTruth::new(0, b));
        }
    }

    // One jittered hit per truth. A hit that drifts onto a different truth is
    // redrawn; one that falls below the threshold on its own truth stays as
    // an incorrect detection.
    let mut hits: Vec<(BBox, bool)> = Vec::with_capacity(truths.len());
    for (i, t) in truths.iter().enumerate() {
        let mut b = jittered(&mut rng, &t.bbox, spec.jitter_sigma);
        for _ in 0..PLACEMENT_TRIES {
            let strays = truths
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && o.bbox.iou(&b) >= spec.iou_threshold);
            if !strays {
                break;
            }
            b = jittered(&mut rng, &t.bbox, spec.jitter_sigma);
        }
        hits.push((b, t.bbox.iou(&b) >= spec.iou_threshold));
    }
    let n_correct = hits.iter().filter(|h| h.1).count();
    let n_missed = hits.len() - n_correct;

    // Incorrect detections needed to realize the link's correct fraction,
    // stochastically rounded so the expectation is exact.
    let quota = n_correct as f64 * fp_per_tp;
    let mut n_incorrect = quota.floor() as usize;
    if rng.gen::<f64>() < quota - quota.floor() {
        n_incorrect += 1;
    }

    let mut boxes: Vec<(BBox, bool)> = Vec::new();
    let mut kept_missed = 0usize;
    for (b, ok) in hits {
        if ok {
            boxes.push((b, true));
        } else if kept_missed < n_incorrect {
            kept_missed += 1;
            boxes.push((b, false));
        }
    }
    debug_assert!(kept_missed <= n_missed);
    for _ in kept_missed..n_incorrect {
        let mut b = random_box(&mut rng);
        for _ in 0..PLACEMENT_TRIES {
            if truths.iter().all(|t| t.bbox.iou(&b) < spec.iou_threshold) {
                break;
            }
            b = random_box(&mut rng);
        }
        if truths.iter().all(|t| t.bbox.iou(&b) < spec.iou_threshold) {
            boxes.push((b, false));
        }
    }

    let mut detections: Vec<Detection> = boxes
        .into_iter()
        .map(|(b, ok)| {
            let c = draw_conditional_confidence(&mut rng, spec, ok);
            Detection::new(0, c, b).expect("sigmoid output lies in [0, 1]")
        })
        .collect();
    use rand::seq::SliceRandom;
    detections.shuffle(&mut rng);
    Scene { truths, detections }
}

/// Generate `n_scenes` scenes in parallel; the result is identical to a
/// serial run.
pub fn generate_scenes(spec: &SceneStreamSpec) -> Result<Vec<Scene>> {
    spec.validate()?;
    let pi = spec.correct_fraction();
    let fp_per_tp = (1.0 - pi) / pi;
    Ok((0..spec.n_scenes)
        .into_par_iter()
        .map(|i| generate_scene(spec, i, fp_per_tp))
        .collect())
}

/// Generate scenes until at least `n_detections` detections exist, in
/// batches, then truncate to whole scenes.
pub fn generate_scenes_with_detections(spec: &SceneStreamSpec, n_detections: usize) -> Result<Vec<Scene>> {
    spec.validate()?;
    let pi = spec.correct_fraction();
    let fp_per_tp = (1.0 - pi) / pi;
    let mut scenes: Vec<Scene> = Vec::new();
    let mut total = 0usize;
    let batch = 4096;
    while total < n_detections {
        let start = scenes.len();
        let next: Vec<Scene> = (start..start + batch)
            .into_par_iter()
            .map(|i| generate_scene(spec, i, fp_per_tp))
            .collect();
        for s in next {
            if total >= n_detections {
                break;
            }
            total += s.detections.len();
            scenes.push(s);
        }
    }
    Ok(scenes)
}
