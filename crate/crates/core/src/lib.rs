//! Detection evaluation and confidence calibration.
//!
//! Boxes are normalized center-format ([`BBox`]). Detections are matched to
//! ground truth greedily by confidence ([`matching`]), scored with precision,
//! recall, F1 and expected calibration error ([`ece`]), and recalibrated with
//! a two-Gaussian log-likelihood-ratio model ([`calibration`]).

pub mod augment;
pub mod calibration;
pub mod ece;
pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod rng;
pub mod simulator;

pub use calibration::{
    fit, fit_detections, ConfidenceTransform, FeatureSpec, FitOptions, GaussianLrModel, LabeledSample,
};
pub use ece::{ece, BinStatistics};
pub use error::{Error, Result};
pub use geometry::{iou, BBox};
pub use io::annotations::{Detection, GroundTruth};
pub use io::manifest::{DatasetManifest, ManifestEntry};
pub use io::split::SplitSpec;
pub use matching::{match_scene, MatchOutcome, MatchSummary};
