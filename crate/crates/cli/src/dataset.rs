use rayon::prelude::*;

use detcal::io::annotations::{read_detections, read_ground_truth};
use detcal::{match_scene, DatasetManifest, Detection, Error, MatchSummary, Result};

pub struct ImageResult {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub summary: MatchSummary,
}

/// Load and match every entry. Work is spread over the current pool; results
/// and the reported error (the first failing entry) follow manifest order.
pub fn match_dataset(manifest: &DatasetManifest, iou_threshold: f64) -> Result<Vec<ImageResult>> {
    let results: Vec<Result<ImageResult>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = e
                .detection_path
                .as_ref()
                .ok_or_else(|| Error::Manifest(format!("entry `{}` has no detections file", e.image_id)))?;
            let truths = read_ground_truth(&e.truth_path)?;
            let detections = read_detections(path)?;
            let summary = match_scene(&detections, &truths, iou_threshold);
            Ok(ImageResult {
                image_id: e.image_id.clone(),
                detections,
                summary,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Every detection with its correctness label, in manifest then file order.
pub fn labeled_detections(results: &[ImageResult]) -> Vec<(Detection, bool)> {
    results
        .iter()
        .flat_map(|r| {
            r.summary
                .outcomes
                .iter()
                .map(move |o| (r.detections[o.detection_index], o.correct))
        })
        .collect()
}
