use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Single-channel image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    intensities: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != width * height {
            return Err(Error::Spec(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                intensities.len()
            )));
        }
        if let Some(v) = intensities.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Spec(format!("intensity {v} outside [0, 1]")));
        }
        Ok(ImageRaster {
            width,
            height,
            intensities,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.intensities[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.intensities.is_empty() {
            return 0.0;
        }
        self.intensities.iter().sum::<f64>() / self.intensities.len() as f64
    }

    pub(crate) fn from_raw(width: usize, height: usize, intensities: Vec<f64>) -> Self {
        debug_assert_eq!(intensities.len(), width * height);
        ImageRaster {
            width,
            height,
            intensities,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => u8::MAX as f64,
            BitDepth::Sixteen => u16::MAX as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Png,
    Pgm,
}

fn file_kind(path: &Path) -> Result<FileKind> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(FileKind::Png),
        Some("pgm") | Some("pnm") => Ok(FileKind::Pgm),
        _ => Err(Error::Image {
            path: path.to_path_buf(),
            message: "unsupported extension (expected .png or .pgm)".into(),
        }),
    }
}

/// Decode a grayscale PNG or PGM. Color inputs are converted to luma.
pub fn read_image(path: &Path) -> Result<(ImageRaster, BitDepth)> {
    file_kind(path)?;
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = match &img {
        DynamicImage::ImageLuma8(_) => false,
        DynamicImage::ImageLuma16(_) => true,
        other => other.color().bytes_per_pixel() / other.color().channel_count() > 1,
    };
    if sixteen {
        let buf = img.into_luma16();
        let max = BitDepth::Sixteen.max_value();
        let data = buf.into_raw().into_iter().map(|v| v as f64 / max).collect();
        Ok((ImageRaster::from_raw(w, h, data), BitDepth::Sixteen))
    } else {
        let buf = img.into_luma8();
        let max = BitDepth::Eight.max_value();
        let data = buf.into_raw().into_iter().map(|v| v as f64 / max).collect();
        Ok((ImageRaster::from_raw(w, h, data), BitDepth::Eight))
    }
}

/// Encode at the given bit depth; format follows the file extension.
pub fn encode_image(path: &Path, raster: &ImageRaster, depth: BitDepth) -> Result<Vec<u8>> {
    let kind = file_kind(path)?;
    let max = depth.max_value();
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * max).round();
    if kind == FileKind::Pgm {
        return Ok(encode_pgm(raster, depth));
    }
    let (bytes, color): (Vec<u8>, ExtendedColorType) = match depth {
        BitDepth::Eight => (
            raster.intensities.iter().map(|&v| quantize(v) as u8).collect(),
            ExtendedColorType::L8,
        ),
        BitDepth::Sixteen => (
            raster
                .intensities
                .iter()
                .flat_map(|&v| (quantize(v) as u16).to_ne_bytes())
                .collect(),
            ExtendedColorType::L16,
        ),
    };
    let (w, h) = (raster.width as u32, raster.height as u32);
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(&bytes, w, h, color)
        .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(out.into_inner())
}

/// Binary PGM (P5); 16-bit samples are big-endian.
fn encode_pgm(raster: &ImageRaster, depth: BitDepth) -> Vec<u8> {
    let max = depth.max_value();
    let mut out = format!("P5\n{} {}\n{}\n", raster.width, raster.height, max as u32).into_bytes();
    for &v in &raster.intensities {
        let q = (v.clamp(0.0, 1.0) * max).round();
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn write_image(path: &Path, raster: &ImageRaster, depth: BitDepth) -> Result<()> {
    let bytes = encode_image(path, raster, depth)?;
    crate::io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize, max: f64) -> ImageRaster {
        let data = (0..w * h).map(|i| ((i * 37) % (max as usize + 1)) as f64 / max).collect();
        ImageRaster::new(w, h, data).unwrap()
    }

    #[test]
    fn rejects_bad_rasters() {
        assert!(ImageRaster::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageRaster::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn png_and_pgm_round_trip_at_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        for (name, depth, max) in [
            ("a.png", BitDepth::Eight, 255.0),
            ("b.png", BitDepth::Sixteen, 65535.0),
            ("c.pgm", BitDepth::Eight, 255.0),
            ("d.pgm", BitDepth::Sixteen, 65535.0),
        ] {
            let img = gradient(13, 7, max);
            let path = dir.path().join(name);
            write_image(&path, &img, depth).unwrap();
            let (back, d) = read_image(&path).unwrap();
            assert_eq!(d, depth, "{name}");
            assert_eq!(back, img, "{name}");
        }
    }

    #[test]
    fn unsupported_extension() {
        let img = gradient(2, 2, 255.0);
        assert!(matches!(
            encode_image(Path::new("x.jpg"), &img, BitDepth::Eight),
            Err(Error::Image { .. })
        ));
    }

    #[test]
    fn unreadable_file_is_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Image { .. })));
    }
}
