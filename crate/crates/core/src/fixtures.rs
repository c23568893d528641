//! Seeded procedural image corpus: gradients, checkerboards, wave textures,
//! stripes, discs, value noise, rings, and Voronoi mosaics.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::Result;
use crate::imgproc::io::write_png;
use crate::imgproc::ImageTensor;
use crate::rng::{substream, Stream};

pub const KINDS: usize = 8;

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn colour(rng: &mut Stream) -> [f64; 3] {
    hsv(rng.gen(), rng.gen_range(0.08..0.7), rng.gen_range(0.2..0.9))
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn paint(size: usize, mut f: impl FnMut(f64, f64) -> [f64; 3]) -> ImageTensor {
    let mut img = ImageTensor::constant(size, size, 3, 0.0);
    for y in 0..size {
        for x in 0..size {
            let p = f(y as f64 / size as f64, x as f64 / size as f64);
            for (c, v) in p.iter().enumerate() {
                img.set(y, x, c, *v);
            }
        }
    }
    img.clamped()
}

/// Image `index` of the corpus drawn from `seed`; the kind cycles with the
/// index so any prefix of the corpus mixes all kinds.
pub fn fixture_image(seed: u64, index: usize, size: usize) -> ImageTensor {
    let mut rng = substream(seed, "fixture", index as u64);
    let (c0, c1, c2) = (colour(&mut rng), colour(&mut rng), colour(&mut rng));
    match index % KINDS {
        0 => {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dy, dx) = th.sin_cos();
            paint(size, |y, x| {
                let t = 0.5 + (x - 0.5) * dx + (y - 0.5) * dy;
                if t < 0.5 {
                    mix(c0, c1, t * 2.0)
                } else {
                    mix(c1, c2, t * 2.0 - 1.0)
                }
            })
        }
        1 => {
            let cells = [8.0, 12.0, 16.0, 20.0][rng.gen_range(0..4)];
            paint(size, |y, x| {
                if ((y * cells) as i64 + (x * cells) as i64) % 2 == 0 {
                    c0
                } else {
                    c1
                }
            })
        }
        2 => {
            let waves: Vec<(f64, f64, f64, usize)> = (0..6)
                .map(|i| {
                    let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    let f = rng.gen_range(3.0..14.0);
                    (f * th.cos(), f * th.sin(), rng.gen_range(0.0..std::f64::consts::TAU), i % 3)
                })
                .collect();
            paint(size, |y, x| {
                let mut p = mix(c0, c1, 0.5);
                for &(fx, fy, ph, ch) in &waves {
                    p[ch] += 0.18 * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin();
                }
                p
            })
        }
        3 => {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let period = rng.gen_range(0.04..0.12);
            let (dy, dx) = th.sin_cos();
            paint(size, |y, x| {
                let t = ((x * dx + y * dy) / period).rem_euclid(1.0);
                if t < 0.5 {
                    c0
                } else {
                    c1
                }
            })
        }
        4 => {
            let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..24)
                .map(|_| {
                    (
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.03..0.12),
                        colour(&mut rng),
                    )
                })
                .collect();
            paint(size, |y, x| {
                let mut p = mix(c0, c1, y);
                for &(cy, cx, r, col) in &discs {
                    if (y - cy).powi(2) + (x - cx).powi(2) < r * r {
                        p = col;
                    }
                }
                p
            })
        }
        5 => {
            const G: usize = 9;
            let grid: Vec<[f64; 3]> = (0..G * G).map(|_| colour(&mut rng)).collect();
            paint(size, |y, x| {
                let (gy, gx) = (y * (G - 1) as f64, x * (G - 1) as f64);
                let (iy, ix) = ((gy as usize).min(G - 2), (gx as usize).min(G - 2));
                let (ty, tx) = (smoothstep(gy - iy as f64), smoothstep(gx - ix as f64));
                let top = mix(grid[iy * G + ix], grid[iy * G + ix + 1], tx);
                let bot = mix(grid[(iy + 1) * G + ix], grid[(iy + 1) * G + ix + 1], tx);
                mix(top, bot, ty)
            })
        }
        6 => {
            let (cy, cx) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
            let f = rng.gen_range(5.0..15.0);
            paint(size, |y, x| {
                let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                let base = mix(c0, c1, (r * 1.4).min(1.0));
                mix(base, c2, 0.5 + 0.5 * (std::f64::consts::TAU * f * r).sin() * 0.6)
            })
        }
        _ => {
            let seeds: Vec<(f64, f64, [f64; 3])> = (0..40)
                .map(|_| (rng.gen(), rng.gen(), colour(&mut rng)))
                .collect();
            paint(size, |y, x| {
                let mut best = (f64::INFINITY, c0);
                for &(sy, sx, col) in &seeds {
                    let d = (y - sy).powi(2) + (x - sx).powi(2);
                    if d < best.0 {
                        best = (d, col);
                    }
                }
                best.1
            })
        }
    }
}

pub fn fixture_corpus(seed: u64, count: usize, size: usize) -> Vec<ImageTensor> {
    (0..count).map(|i| fixture_image(seed, i, size)).collect()
}

/// Writes the corpus as `fixture_NNN.png` files and returns their paths.
pub fn write_corpus(dir: &Path, seed: u64, count: usize, size: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("fixture_{i:03}.png"));
            write_png(&fixture_image(seed, i, size), &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_varied() {
        let a = fixture_corpus(3, 16, 32);
        let b = fixture_corpus(3, 16, 32);
        assert_eq!(a, b);
        let digests: std::collections::HashSet<_> = a.iter().map(|i| i.digest()).collect();
        assert_eq!(digests.len(), 16);
        assert!(a.iter().all(|i| i.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(0.0, 0.0, 0.5), [0.5, 0.5, 0.5]);
    }
}
