//! Deterministic statistics-based tagger standing in for a learned one.
//! Tokens come from colour, edge, orientation, and brightness statistics of
//! the image resampled to a fixed canonical size.

use serde::{Deserialize, Serialize};

use super::{TagSet, Tagger};
use crate::error::{param, Error, Result};
use crate::imgproc::{resize_to, ImageTensor, ResizeMethod};

/// Smallest side accepted by the tagger.
pub const MIN_SIZE: usize = 32;
/// Every input is resampled to this square size before measuring, so tags
/// of a quarter-size degraded image are comparable with its source.
pub const CANONICAL_SIZE: usize = 32;

const HUE_BINS: usize = 12;
const GRAY: usize = HUE_BINS;
const ORIENT_BINS: usize = 8;
const GRID: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTagger {
    /// Side of the square every input is resampled to before measuring.
    pub canonical_size: usize,
    /// Pixels with chroma below this fall in the achromatic bin.
    pub gray_chroma: f64,
    pub hue_min_mass: f64,
    /// Width of one edge-density level (Sobel magnitude mean).
    pub edge_step: f64,
    pub edge_levels: usize,
    /// Magnitude a pixel needs to vote in the orientation histogram.
    pub orient_min_magnitude: f64,
    pub orient_min_mass: f64,
    pub lum_levels: usize,
    /// Width of one level of luminance standard deviation.
    pub var_step: f64,
    pub var_levels: usize,
}

impl Default for SurrogateTagger {
    fn default() -> Self {
        Self {
            canonical_size: CANONICAL_SIZE,
            gray_chroma: 0.06,
            hue_min_mass: 0.05,
            edge_step: 0.012,
            edge_levels: 8,
            orient_min_magnitude: 0.03,
            orient_min_mass: 0.10,
            lum_levels: 6,
            var_step: 0.03,
            var_levels: 6,
        }
    }
}

fn hue_bin(r: f64, g: f64, b: f64, gray_chroma: f64) -> usize {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    if chroma < gray_chroma {
        return GRAY;
    }
    let h = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    ((h / 6.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1)
}

fn hue_token(bin: usize) -> String {
    if bin == GRAY {
        "gray".to_string()
    } else {
        bin.to_string()
    }
}

fn level(v: f64, step: f64, levels: usize) -> usize {
    ((v / step).max(0.0) as usize).min(levels - 1)
}

impl SurrogateTagger {
    pub fn tags(&self, img: &ImageTensor) -> Result<TagSet> {
        if img.channels != 3 {
            return Err(Error::UnsupportedFormat(format!(
                "tagger needs 3 channels, got {}",
                img.channels
            )));
        }
        if img.height < MIN_SIZE || img.width < MIN_SIZE {
            return param(format!(
                "tagger needs at least {MIN_SIZE}x{MIN_SIZE}, got {}x{}",
                img.height, img.width
            ));
        }
        let s = self.canonical_size;
        let img = if img.height == s && img.width == s {
            img.clone()
        } else {
            resize_to(img, s, s, ResizeMethod::Bicubic)?
        };
        let n = (s * s) as f64;
        let mut tags = TagSet::new();

        let mut bins = vec![0usize; s * s];
        let mut lum = vec![0.0; s * s];
        for i in 0..s * s {
            let (r, g, b) = (img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
            bins[i] = hue_bin(r, g, b, self.gray_chroma);
            lum[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        }

        let mut hist = [0usize; HUE_BINS + 1];
        for &b in &bins {
            hist[b] += 1;
        }
        for (k, &count) in hist.iter().enumerate() {
            if count as f64 >= self.hue_min_mass * n {
                tags.insert(format!("hue_{}", hue_token(k)));
            }
        }

        let at = |y: isize, x: isize| {
            let yy = y.clamp(0, s as isize - 1) as usize;
            let xx = x.clamp(0, s as isize - 1) as usize;
            lum[yy * s + xx]
        };
        let mut mag_sum = 0.0;
        let mut orient = [0usize; ORIENT_BINS];
        let mut strong = 0usize;
        for y in 0..s as isize {
            for x in 0..s as isize {
                let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y, x - 1)
                    - at(y + 1, x - 1))
                    / 8.0;
                let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y - 1, x)
                    - at(y - 1, x + 1))
                    / 8.0;
                let m = (gx * gx + gy * gy).sqrt();
                mag_sum += m;
                if m >= self.orient_min_magnitude {
                    let th = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                    let k = ((th / std::f64::consts::PI * ORIENT_BINS as f64) as usize).min(ORIENT_BINS - 1);
                    orient[k] += 1;
                    strong += 1;
                }
            }
        }
        tags.insert(format!("edge_{}", level(mag_sum / n, self.edge_step, self.edge_levels)));
        if strong > 0 {
            for (k, &count) in orient.iter().enumerate() {
                if count as f64 >= self.orient_min_mass * strong as f64 {
                    tags.insert(format!("orient_{k}"));
                }
            }
        }

        let mean = lum.iter().sum::<f64>() / n;
        let std = (lum.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        tags.insert(format!(
            "lum_{}",
            level(mean, 1.0 / self.lum_levels as f64, self.lum_levels)
        ));
        tags.insert(format!("var_{}", level(std, self.var_step, self.var_levels)));

        let cell = s / GRID;
        for r in 0..GRID {
            for c in 0..GRID {
                let mut h = [0usize; HUE_BINS + 1];
                for y in r * cell..(r + 1) * cell {
                    for x in c * cell..(c + 1) * cell {
                        h[bins[y * s + x]] += 1;
                    }
                }
                // First maximum wins ties.
                let best = h
                    .iter()
                    .enumerate()
                    .fold((0, 0), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
                    .0;
                tags.insert(format!("cell_{r}_{c}_hue_{}", hue_token(best)));
            }
        }
        Ok(tags)
    }
}

impl Tagger for SurrogateTagger {
    fn name(&self) -> &str {
        "surrogate"
    }

    fn tag(&self, img: &ImageTensor) -> Result<TagSet> {
        self.tags(img)
    }
}

/// Tags `img` with the default surrogate settings.
pub fn surrogate_tag(img: &ImageTensor) -> Result<TagSet> {
    SurrogateTagger::default().tags(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_image;
    use crate::imgproc::{apply_blur, gaussian_kernel};

    #[test]
    fn identical_images_identical_tags() {
        let img = fixture_image(1, 2, 64);
        assert_eq!(surrogate_tag(&img).unwrap(), surrogate_tag(&img.clone()).unwrap());
    }

    #[test]
    fn constant_gray_image() {
        let t = surrogate_tag(&ImageTensor::constant(40, 48, 3, 0.5)).unwrap();
        assert!(t.contains("edge_0"));
        assert_eq!(t.count_prefix("lum_"), 1);
        assert_eq!(t.count_prefix("hue_"), 1);
        assert!(t.contains("hue_gray"));
        assert_eq!(t.count_prefix("orient_"), 0);
    }

    #[test]
    fn primary_hues_land_in_expected_bins() {
        assert_eq!(hue_bin(1.0, 0.0, 0.0, 0.1), 0);
        assert_eq!(hue_bin(0.0, 1.0, 0.0, 0.1), 4);
        assert_eq!(hue_bin(0.0, 0.0, 1.0, 0.1), 8);
        assert_eq!(hue_bin(0.5, 0.52, 0.5, 0.1), GRAY);
    }

    #[test]
    fn heavy_blur_never_adds_structure_tokens() {
        // Wave-texture fixture (kind 2).
        let img = fixture_image(0, 2, 128);
        let k = gaussian_kernel(3.0, 19).unwrap();
        let blurred = apply_blur(&img, &k);
        let (a, b) = (surrogate_tag(&img).unwrap(), surrogate_tag(&blurred).unwrap());
        let edge = |t: &TagSet| t.iter().find_map(|s| s.strip_prefix("edge_")?.parse::<usize>().ok()).unwrap();
        assert!(edge(&b) < edge(&a), "{a:?} {b:?}");
        assert!(b.count_prefix("orient_") <= a.count_prefix("orient_"));
    }

    #[test]
    fn rejects_small_and_gray_inputs() {
        assert!(surrogate_tag(&ImageTensor::constant(31, 64, 3, 0.5)).is_err());
        assert!(surrogate_tag(&ImageTensor::constant(64, 64, 1, 0.5)).is_err());
    }
}
