//! 8-bit RGB PNG I/O with values mapped linearly to [0,1].

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use super::ImageTensor;
use crate::error::{Error, Result};

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

pub fn to_rgb8(img: &ImageTensor) -> Result<RgbImage> {
    if img.channels != 3 {
        return Err(Error::UnsupportedFormat(format!(
            "png output needs 3 channels, got {}",
            img.channels
        )));
    }
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::Internal("rgb buffer size".into()))
}

pub fn write_png(img: &ImageTensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    to_rgb8(img)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Quantises through 8 bits, as a PNG write/read round trip would.
pub fn quantize_8bit(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    out
}

/// Sorted `*.png` paths directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    out.sort();
    Ok(out)
}
