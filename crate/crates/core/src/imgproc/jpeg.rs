//! Quantisation-only JPEG round trip: colour transform, 8×8 DCT, table
//! quantisation, and the inverse path. No entropy coding; the loss comes
//! entirely from coefficient rounding, same as a real baseline codec
//! without chroma subsampling.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::ImageTensor;
use crate::error::{Error, Result};

#[rustfmt::skip]
const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Luminance and chrominance tables scaled for `quality` (IJG convention).
pub fn quant_tables(quality: u8) -> ([f64; 64], [f64; 64]) {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let make = |base: &[u16; 64]| {
        let mut t = [0.0; 64];
        for (dst, &b) in t.iter_mut().zip(base) {
            *dst = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
        }
        t
    };
    (make(&LUMA), make(&CHROMA))
}

/// cos((2x+1)uπ/16) · c(u) / 2, indexed [u][x].
fn basis() -> &'static [[f64; 8]; 8] {
    static B: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

fn to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0,
        0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0,
    ]
}

fn to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [
        y + 1.402 * cr,
        y - 0.344_136 * cb - 0.714_136 * cr,
        y + 1.772 * cb,
    ]
}

/// Encodes and decodes `img` at `quality`; output is clamped to [0,1].
pub fn jpeg_degrade(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::UnsupportedFormat(format!(
            "jpeg needs 3 channels, got {}",
            img.channels
        )));
    }
    if !(1..=100).contains(&quality) {
        return Err(Error::Param(format!("jpeg quality {quality} outside 1..=100")));
    }
    let (h, w) = (img.height, img.width);
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    // Edge-replicated planes on the 0–255 scale, level-shifted.
    let mut planes = vec![vec![0.0; ph * pw]; 3];
    for y in 0..ph {
        for x in 0..pw {
            let (sy, sx) = (y.min(h - 1), x.min(w - 1));
            let ycc = to_ycbcr(
                img.get(sy, sx, 0) * 255.0,
                img.get(sy, sx, 1) * 255.0,
                img.get(sy, sx, 2) * 255.0,
            );
            for c in 0..3 {
                planes[c][y * pw + x] = ycc[c] - 128.0;
            }
        }
    }
    let (ql, qc) = quant_tables(quality);
    for (c, plane) in planes.iter_mut().enumerate() {
        let table = if c == 0 { &ql } else { &qc };
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = plane[(by + y) * pw + bx + x];
                    }
                }
                let mut coef = fdct(&block);
                for (v, q) in coef.iter_mut().zip(table) {
                    *v = (*v / q).round() * q;
                }
                let rec = idct(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        plane[(by + y) * pw + bx + x] = rec[y * 8 + x];
                    }
                }
            }
        }
    }
    let mut out = ImageTensor::constant(h, w, 3, 0.0);
    for y in 0..h {
        for x in 0..w {
            let i = y * pw + x;
            let rgb = to_rgb(planes[0][i] + 128.0, planes[1][i] + 128.0, planes[2][i] + 128.0);
            for c in 0..3 {
                out.set(y, x, c, rgb[c] / 255.0);
            }
        }
    }
    out.clamp_();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient() -> ImageTensor {
        ImageTensor::from_fn(24, 20, 3, |y, x, c| {
            (0.1 + 0.8 * (x as f64 / 19.0) * (0.5 + 0.5 * y as f64 / 23.0) + 0.03 * c as f64).min(1.0)
        })
    }

    fn textured() -> ImageTensor {
        ImageTensor::from_fn(32, 32, 3, |y, x, c| {
            let t = (x as f64 * 0.7 + c as f64).sin() * (y as f64 * 0.45).cos();
            0.5 + 0.35 * t + if (x / 4 + y / 4) % 2 == 0 { 0.1 } else { -0.1 }
        })
    }

    #[test]
    fn dct_round_trip_is_exact() {
        let block: [f64; 64] = std::array::from_fn(|i| (i as f64 * 1.7).sin() * 100.0);
        let back = idct(&fdct(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn tables_follow_quality_scaling() {
        let (l, c) = quant_tables(50);
        assert_eq!(l[0], 16.0);
        assert_eq!(c[63], 99.0);
        let (l, _) = quant_tables(100);
        assert!(l.iter().all(|v| *v == 1.0));
        let (l, _) = quant_tables(10);
        assert_eq!(l[0], 80.0);
    }

    #[test]
    fn max_quality_gradient_error_is_small() {
        let img = gradient();
        let out = jpeg_degrade(&img, 100).unwrap();
        assert!(out.max_abs_diff(&img) <= 2.0 / 255.0);
    }

    #[test]
    fn lower_quality_never_reduces_error() {
        for img in [gradient(), textured()] {
            let e10 = jpeg_degrade(&img, 10).unwrap().mse(&img);
            let e90 = jpeg_degrade(&img, 90).unwrap().mse(&img);
            assert!(e10 >= e90, "{e10} < {e90}");
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageTensor::from_fn(13, 9, 3, |_, _, c| [0.2, 0.55, 0.9][c]);
        for q in [1, 10, 50, 95, 100] {
            let out = jpeg_degrade(&img, q).unwrap();
            // DC-only blocks: every pixel decodes to the same colour.
            for c in 0..3 {
                let v0 = out.get(0, 0, c);
                for y in 0..13 {
                    for x in 0..9 {
                        assert!((out.get(y, x, c) - v0).abs() <= 1.0 / 255.0, "q={q}");
                    }
                }
            }
        }
        assert!(jpeg_degrade(&img, 100).unwrap().max_abs_diff(&img) <= 1.0 / 255.0);
    }

    #[test]
    fn max_quality_is_idempotent() {
        let img = textured();
        let once = jpeg_degrade(&img, 100).unwrap();
        let twice = jpeg_degrade(&once, 100).unwrap();
        assert!(twice.max_abs_diff(&once) <= 1.0 / 255.0);
    }

    #[test]
    fn grayscale_is_unsupported() {
        let img = ImageTensor::constant(8, 8, 1, 0.5);
        assert!(matches!(jpeg_degrade(&img, 50), Err(Error::UnsupportedFormat(_))));
    }
}
