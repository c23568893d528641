use super::ImageTensor;
use crate::error::{param, Result};

/// Square convolution kernel. Gaussian kernels also carry their 1-D factor
/// so blurring can run as two passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    pub size: usize,
    pub data: Vec<f64>,
    separable: Option<Vec<f64>>,
}

impl Kernel2d {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || data.len() != size * size {
            return param(format!("kernel must be odd-sized and square, got size {size} with {} taps", data.len()));
        }
        Ok(Self {
            size,
            data,
            separable: None,
        })
    }

    pub fn at(&self, dy: usize, dx: usize) -> f64 {
        self.data[dy * self.size + dx]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Kernel width used for a blur step: 2·⌈3σ⌉ + 1, at least 3.
pub fn blur_kernel_size(sigma: f64) -> usize {
    (2 * (3.0 * sigma).ceil() as usize + 1).max(3)
}

/// Normalised isotropic Gaussian sampled on a `size`×`size` grid.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Kernel2d> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return param(format!("gaussian sigma {sigma} must be positive"));
    }
    if size < 3 || size % 2 == 0 {
        return param(format!("gaussian kernel size {size} must be odd and >= 3"));
    }
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / z).collect();
    let mut data = Vec::with_capacity(size * size);
    for gy in &g {
        for gx in &g {
            data.push(gy * gx);
        }
    }
    Ok(Kernel2d {
        size,
        data,
        separable: Some(g),
    })
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Convolves every channel with `kernel`, replicating edge pixels.
pub fn apply_blur(img: &ImageTensor, kernel: &Kernel2d) -> ImageTensor {
    let mut out = match &kernel.separable {
        Some(g) => blur_separable(img, g),
        None => blur_direct(img, kernel),
    };
    out.clamp_();
    out
}

fn blur_direct(img: &ImageTensor, kernel: &Kernel2d) -> ImageTensor {
    let r = (kernel.size / 2) as isize;
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut out = ImageTensor::constant(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for ky in 0..kernel.size {
                    let sy = clamp_idx(y as isize + ky as isize - r, h);
                    for kx in 0..kernel.size {
                        let sx = clamp_idx(x as isize + kx as isize - r, w);
                        s += kernel.at(ky, kx) * img.get(sy, sx, ch);
                    }
                }
                out.set(y, x, ch, s);
            }
        }
    }
    out
}

fn blur_separable(img: &ImageTensor, g: &[f64]) -> ImageTensor {
    let r = (g.len() / 2) as isize;
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut tmp = ImageTensor::constant(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    s += gk * img.get(y, clamp_idx(x as isize + k as isize - r, w), ch);
                }
                tmp.set(y, x, ch, s);
            }
        }
    }
    let mut out = ImageTensor::constant(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    s += gk * tmp.get(clamp_idx(y as isize + k as isize - r, h), x, ch);
                }
                out.set(y, x, ch, s);
            }
        }
    }
    out
}
