//! Training-set augmentation: one motion-blurred and one horizontally
//! flipped copy of every image.
//!
//! Vertical flips and rotations are deliberately absent. The imaging beam
//! enters from a fixed side of the frame, so only left-right mirroring and
//! lateral blur yield plausible images.

mod raster;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use raster::{encode_image, read_image, write_image, BitDepth, ImageRaster};

use crate::error::{Error, Result};
use crate::io::annotations::{format_ground_truth, read_ground_truth, GroundTruth};
use crate::io::manifest::{DatasetManifest, ManifestEntry};
use crate::io::write_atomic;

pub const DEFAULT_BLUR_LENGTH: usize = 7;
pub const DEFAULT_BLUR_ANGLE: f64 = 0.0;

/// The complete set of transforms this module can apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentationKind {
    MotionBlur,
    HorizontalFlip,
}

pub const AUGMENTATIONS: [AugmentationKind; 2] =
    [AugmentationKind::MotionBlur, AugmentationKind::HorizontalFlip];

impl AugmentationKind {
    pub fn suffix(self) -> &'static str {
        match self {
            AugmentationKind::MotionBlur => "blur",
            AugmentationKind::HorizontalFlip => "flip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    length: usize,
    angle_deg: f64,
}

impl BlurSpec {
    /// `length` must be odd and at least 3.
    pub fn new(length: usize, angle_deg: f64) -> Result<Self> {
        if length < 3 || length.is_multiple_of(2) {
            return Err(Error::Spec(format!(
                "blur length {length} must be odd and >= 3"
            )));
        }
        if !angle_deg.is_finite() {
            return Err(Error::Spec(format!("blur angle {angle_deg} is not finite")));
        }
        Ok(BlurSpec { length, angle_deg })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }
}

impl Default for BlurSpec {
    fn default() -> Self {
        BlurSpec {
            length: DEFAULT_BLUR_LENGTH,
            angle_deg: DEFAULT_BLUR_ANGLE,
        }
    }
}

/// Line kernel as integer tap counts over a common denominator.
///
/// Counts sum to exactly `denominator`, so the weights `count / denominator`
/// sum to one in exact arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineKernel {
    /// `(dx, dy, count)` with offsets relative to the kernel center.
    pub taps: Vec<(isize, isize, u32)>,
    pub denominator: u32,
}

impl LineKernel {
    /// Sample `length` points along a line through the center at `angle_deg`
    /// (counter-clockwise from +x, y pointing down in the image) and snap each
    /// to the nearest pixel.
    pub fn new(spec: &BlurSpec) -> Self {
        let half = (spec.length / 2) as isize;
        let (sin, cos) = spec.angle_deg.to_radians().sin_cos();
        let mut taps: Vec<(isize, isize, u32)> = Vec::new();
        for t in -half..=half {
            let dx = (t as f64 * cos).round() as isize;
            let dy = (-(t as f64) * sin).round() as isize;
            match taps.iter_mut().find(|(x, y, _)| *x == dx && *y == dy) {
                Some(tap) => tap.2 += 1,
                None => taps.push((dx, dy, 1)),
            }
        }
        taps.sort_unstable();
        LineKernel {
            taps,
            denominator: spec.length as u32,
        }
    }

    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        self.taps
            .iter()
            .find(|(x, y, _)| *x == dx && *y == dy)
            .map_or(0.0, |t| t.2 as f64 / self.denominator as f64)
    }
}

/// Mirror an out-of-range index back into `0..n`, repeating the edge sample
/// (`-1 -> 0`, `n -> n-1`).
fn reflect(p: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = p.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Convolve with a normalized line kernel; borders use mirrored padding.
///
/// For horizontal or vertical blur the padding keeps the global mean intensity
/// unchanged up to rounding.
pub fn motion_blur(img: &ImageRaster, spec: &BlurSpec) -> ImageRaster {
    let kernel = LineKernel::new(spec);
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return img.clone();
    }
    let src = img.intensities();
    let denom = kernel.denominator as f64;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dx, dy, count) in &kernel.taps {
                let sx = reflect(x as isize + dx, w);
                let sy = reflect(y as isize + dy, h);
                acc += count as f64 * src[sy * w + sx];
            }
            out[y * w + x] = (acc / denom).clamp(0.0, 1.0);
        }
    }
    ImageRaster::from_raw(w, h, out)
}

/// Mirror pixels left-right: `(x, y) -> (width-1-x, y)`.
pub fn flip_image(img: &ImageRaster) -> ImageRaster {
    let (w, h) = (img.width(), img.height());
    let src = img.intensities();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        out.extend(src[y * w..(y + 1) * w].iter().rev());
    }
    ImageRaster::from_raw(w, h, out)
}

/// Flip an image together with its annotations (`cx -> 1 - cx`).
pub fn flip_horizontal_pair(img: &ImageRaster, truths: &[GroundTruth]) -> (ImageRaster, Vec<GroundTruth>) {
    let boxes = truths
        .iter()
        .map(|t| GroundTruth::new(t.class_id, t.bbox.flip_horizontal()))
        .collect();
    (flip_image(img), boxes)
}

#[derive(Debug)]
pub struct AugmentReport {
    /// Originals followed by their blurred and flipped copies, entry by entry.
    pub manifest: DatasetManifest,
    /// Entries that could not be processed; they are left out of `manifest`.
    pub failures: Vec<(String, Error)>,
}

fn copy_name(id: &str, kind: AugmentationKind) -> String {
    format!("{id}_{}", kind.suffix())
}

fn augment_entry(entry: &ManifestEntry, spec: &BlurSpec, out_dir: &Path) -> Result<[ManifestEntry; 3]> {
    let image_path = entry
        .image_path
        .as_ref()
        .ok_or_else(|| Error::Manifest(format!("entry `{}` has no image", entry.image_id)))?;
    let (img, depth) = read_image(image_path)?;
    let truth_bytes = std::fs::read(&entry.truth_path).map_err(|e| Error::io(&entry.truth_path, e))?;
    let truths = read_ground_truth(&entry.truth_path)?;
    let ext = image_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("png")
        .to_ascii_lowercase();

    let paths = |kind: AugmentationKind| -> (String, PathBuf, PathBuf) {
        let id = copy_name(&entry.image_id, kind);
        let img = out_dir.join("images").join(format!("{id}.{ext}"));
        let gt = out_dir.join("labels").join(format!("{id}.txt"));
        (id, img, gt)
    };

    let (blur_id, blur_img, blur_gt) = paths(AugmentationKind::MotionBlur);
    write_image(&blur_img, &motion_blur(&img, spec), depth)?;
    write_atomic(&blur_gt, &truth_bytes)?;

    let (flip_id, flip_img, flip_gt) = paths(AugmentationKind::HorizontalFlip);
    let (flipped, flipped_truths) = flip_horizontal_pair(&img, &truths);
    write_image(&flip_img, &flipped, depth)?;
    write_atomic(&flip_gt, format_ground_truth(&flipped_truths).as_bytes())?;

    let copy = |image_id: String, image: PathBuf, truth: PathBuf| ManifestEntry {
        image_id,
        image_path: Some(image),
        truth_path: truth,
        detection_path: None,
    };
    Ok([
        entry.clone(),
        copy(blur_id, blur_img, blur_gt),
        copy(flip_id, flip_img, flip_gt),
    ])
}

/// Write a blurred and a flipped copy of every manifest entry under
/// `out_dir/images` and `out_dir/labels`.
///
/// Entries are processed in parallel on the current rayon pool. A failing
/// entry is reported and skipped; the others still complete.
pub fn augment_dataset(manifest: &DatasetManifest, spec: &BlurSpec, out_dir: &Path) -> Result<AugmentReport> {
    for sub in ["images", "labels"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let results: Vec<Result<[ManifestEntry; 3]>> = manifest
        .entries
        .par_iter()
        .map(|e| augment_entry(e, spec, out_dir))
        .collect();

    let mut entries = Vec::with_capacity(manifest.len() * 3);
    let mut failures = Vec::new();
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(three) => entries.extend(three),
            Err(e) => failures.push((entry.image_id.clone(), e)),
        }
    }
    Ok(AugmentReport {
        manifest: DatasetManifest::new(entries)?,
        failures,
    })
}
