//! Pixel-level image operations and the seeded degradation engine.

mod blur;
mod chain;
pub mod io;
mod jpeg;
mod noise;
mod resize;

pub use blur::{apply_blur, blur_kernel_size, gaussian_kernel, Kernel2d};
pub use chain::{apply_chain, apply_chain_to_size, apply_step, sample_degradation, DegradationSpace};
pub use jpeg::{jpeg_degrade, quant_tables};
pub use noise::add_gaussian_noise;
pub use resize::{resize, resize_to, ResizeMethod};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param, Error, Result};
use crate::nn::Feat;

/// H×W×C image with values in [0,1], row-major, channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return param("image dimensions must be positive");
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedFormat(format!("{channels} channels")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image given {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return param("image contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds an image from `f(y, x, c)`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn clamp_(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    pub fn clamped(mut self) -> Self {
        self.clamp_();
        self
    }

    /// Crops the window starting at (`y`, `x`).
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width || h == 0 || w == 0 {
            return param(format!(
                "crop {h}x{w}+{y}+{x} outside {}x{}",
                self.height, self.width
            ));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for r in y..y + h {
            let start = (r * self.width + x) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }

    pub fn to_feat(&self) -> Feat {
        Feat {
            h: self.height,
            w: self.width,
            c: self.channels,
            data: self.data.clone(),
        }
    }

    /// Wraps a feature map as an image, clamping into [0,1].
    pub fn from_feat_clamped(f: &Feat) -> Result<Self> {
        let mut img = Self::new(f.h, f.w, f.c, f.data.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect())?;
        img.clamp_();
        Ok(img)
    }

    /// SHA-256 over values quantised to 1e-9, as lowercase hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update((self.channels as u64).to_le_bytes());
        for v in &self.data {
            h.update(((v * 1e9).round() as i64).to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mse(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One parameterised degradation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationStep {
    /// Isotropic Gaussian blur with standard deviation `sigma` pixels.
    Blur { sigma: f64 },
    /// Additive Gaussian noise; `sigma255` is expressed on the 0–255 scale.
    GaussianNoise { sigma255: f64 },
    Jpeg { quality: u8 },
    Resize { scale: f64, method: ResizeMethod },
}

impl DegradationStep {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Blur { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                param(format!("blur sigma {sigma} must be positive"))
            }
            Self::GaussianNoise { sigma255 } if !(sigma255 >= 0.0 && sigma255.is_finite()) => {
                param(format!("noise sigma {sigma255} must be non-negative"))
            }
            Self::Jpeg { quality } if !(1..=100).contains(&quality) => {
                param(format!("jpeg quality {quality} outside 1..=100"))
            }
            Self::Resize { scale, .. } if !(scale > 0.0 && scale.is_finite()) => {
                param(format!("resize scale {scale} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Ordered, seeded degradation chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub seed: u64,
    pub steps: Vec<DegradationStep>,
}

impl DegradationSpec {
    pub fn identity(seed: u64) -> Self {
        Self { seed, steps: vec![] }
    }

    pub fn new(seed: u64, steps: Vec<DegradationStep>) -> Self {
        Self { seed, steps }
    }

    pub fn validate(&self) -> Result<()> {
        self.steps.iter().try_for_each(DegradationStep::validate)
    }

    /// Product of all resize factors.
    pub fn total_scale(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match s {
                DegradationStep::Resize { scale, .. } => *scale,
                _ => 1.0,
            })
            .product()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_layout() {
        let spec = DegradationSpec::new(
            7,
            vec![
                DegradationStep::Blur { sigma: 1.5 },
                DegradationStep::GaussianNoise { sigma255: 10.0 },
                DegradationStep::Jpeg { quality: 40 },
                DegradationStep::Resize {
                    scale: 0.5,
                    method: ResizeMethod::Bicubic,
                },
            ],
        );
        let json = spec.to_json().unwrap();
        assert_eq!(
            json,
            r#"{"seed":7,"steps":[{"kind":"blur","sigma":1.5},{"kind":"gaussian_noise","sigma255":10.0},{"kind":"jpeg","quality":40},{"kind":"resize","scale":0.5,"method":"bicubic"}]}"#
        );
        assert_eq!(DegradationSpec::from_json(&json).unwrap(), spec);
    }

    #[test]
    fn out_of_range_steps_are_rejected() {
        for bad in [
            r#"{"seed":1,"steps":[{"kind":"jpeg","quality":0}]}"#,
            r#"{"seed":1,"steps":[{"kind":"blur","sigma":-1.0}]}"#,
            r#"{"seed":1,"steps":[{"kind":"gaussian_noise","sigma255":-0.5}]}"#,
            r#"{"seed":1,"steps":[{"kind":"resize","scale":0.0,"method":"nearest"}]}"#,
        ] {
            assert!(DegradationSpec::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn new_rejects_bad_images() {
        assert!(ImageTensor::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
    }
}
