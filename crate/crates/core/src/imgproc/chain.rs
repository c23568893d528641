use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    add_gaussian_noise, apply_blur, blur_kernel_size, gaussian_kernel, jpeg_degrade, resize, resize_to,
    DegradationSpec, DegradationStep, ImageTensor, ResizeMethod,
};
use crate::error::Result;
use crate::rng::substream;

/// Applies one step. `index` selects the step's random sub-stream.
pub fn apply_step(img: &ImageTensor, step: &DegradationStep, seed: u64, index: usize) -> Result<ImageTensor> {
    step.validate()?;
    match *step {
        DegradationStep::Blur { sigma } => {
            let k = gaussian_kernel(sigma, blur_kernel_size(sigma))?;
            Ok(apply_blur(img, &k))
        }
        DegradationStep::GaussianNoise { sigma255 } => {
            let mut rng = substream(seed, "degradation-step", index as u64);
            Ok(add_gaussian_noise(img, sigma255, &mut rng))
        }
        DegradationStep::Jpeg { quality } => jpeg_degrade(img, quality),
        DegradationStep::Resize { scale, method } => resize(img, scale, method),
    }
}

/// Runs every step of `spec` in order.
pub fn apply_chain(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    let mut cur = img.clone();
    for (i, step) in spec.steps.iter().enumerate() {
        cur = apply_step(&cur, step, spec.seed, i)?;
    }
    Ok(cur)
}

/// [`apply_chain`] followed by a bicubic snap to exactly `height`×`width`,
/// absorbing the ±1 pixel drift of intermediate rounding.
pub fn apply_chain_to_size(img: &ImageTensor, spec: &DegradationSpec, height: usize, width: usize) -> Result<ImageTensor> {
    let out = apply_chain(img, spec)?;
    resize_to(&out, height, width, ResizeMethod::Bicubic)
}

/// Sampling intervals for the two-round degradation model. Every draw is
/// uniform over its closed interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpace {
    pub blur_sigma: (f64, f64),
    pub resize_scale: (f64, f64),
    pub noise_sigma255: (f64, f64),
    pub jpeg_quality: (u8, u8),
    /// Overall spatial factor of a sampled chain.
    pub total_scale: f64,
}

impl Default for DegradationSpace {
    fn default() -> Self {
        Self {
            blur_sigma: (0.2, 3.0),
            resize_scale: (0.25, 1.0),
            noise_sigma255: (1.0, 30.0),
            jpeg_quality: (30, 95),
            total_scale: 0.25,
        }
    }
}

impl DegradationSpace {
    /// Draws blur → resize → noise → jpeg twice, then a final bicubic resize
    /// that brings the total scale to `total_scale`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DegradationSpec {
        let seed: u64 = rng.gen();
        let mut steps = Vec::with_capacity(9);
        let mut scale = 1.0;
        for _ in 0..2 {
            let s = rng.gen_range(self.resize_scale.0..=self.resize_scale.1);
            scale *= s;
            steps.push(DegradationStep::Blur {
                sigma: rng.gen_range(self.blur_sigma.0..=self.blur_sigma.1),
            });
            steps.push(DegradationStep::Resize {
                scale: s,
                method: ResizeMethod::Bicubic,
            });
            steps.push(DegradationStep::GaussianNoise {
                sigma255: rng.gen_range(self.noise_sigma255.0..=self.noise_sigma255.1),
            });
            steps.push(DegradationStep::Jpeg {
                quality: rng.gen_range(self.jpeg_quality.0..=self.jpeg_quality.1),
            });
        }
        steps.push(DegradationStep::Resize {
            scale: self.total_scale / scale,
            method: ResizeMethod::Bicubic,
        });
        DegradationSpec { seed, steps }
    }
}

/// Samples from the default degradation space.
pub fn sample_degradation<R: Rng>(rng: &mut R) -> DegradationSpec {
    DegradationSpace::default().sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use std::collections::HashSet;

    fn fixture() -> ImageTensor {
        ImageTensor::from_fn(40, 48, 3, |y, x, c| {
            0.5 + 0.4 * ((x as f64 * 0.31 + c as f64).sin() * (y as f64 * 0.23).cos())
        })
    }

    #[test]
    fn empty_chain_is_identity() {
        let img = fixture();
        assert_eq!(apply_chain(&img, &DegradationSpec::identity(3)).unwrap(), img);
    }

    #[test]
    fn near_identity_steps_stay_close() {
        let img = ImageTensor::from_fn(40, 48, 3, |y, x, c| {
            0.5 + 0.3 * ((x as f64 * 0.11 + c as f64).sin() * (y as f64 * 0.07).cos())
        });
        let spec = DegradationSpec::new(
            1,
            vec![
                DegradationStep::GaussianNoise { sigma255: 0.0 },
                DegradationStep::Jpeg { quality: 100 },
                DegradationStep::Resize {
                    scale: 1.0,
                    method: ResizeMethod::Bicubic,
                },
            ],
        );
        assert!(apply_chain(&img, &spec).unwrap().max_abs_diff(&img) <= 2.0 / 255.0);
    }

    #[test]
    fn reordering_steps_changes_output() {
        let img = fixture();
        let a = DegradationSpec::new(
            5,
            vec![
                DegradationStep::GaussianNoise { sigma255: 10.0 },
                DegradationStep::Blur { sigma: 1.0 },
            ],
        );
        let b = DegradationSpec::new(5, a.steps.iter().rev().cloned().collect());
        assert_ne!(apply_chain(&img, &a).unwrap(), apply_chain(&img, &b).unwrap());
        assert_eq!(apply_chain(&img, &a).unwrap(), apply_chain(&img, &a).unwrap());
    }

    #[test]
    fn sampled_specs_are_distinct_and_in_range() {
        let space = DegradationSpace::default();
        let mut seen = HashSet::new();
        for i in 0..1000 {
            let spec = sample_degradation(&mut substream(42, "sample", i));
            assert!(seen.insert(spec.to_json().unwrap()));
            assert_eq!(spec.steps.len(), 9);
            for (j, step) in spec.steps.iter().enumerate() {
                match *step {
                    DegradationStep::Blur { sigma } => {
                        assert!((space.blur_sigma.0..=space.blur_sigma.1).contains(&sigma))
                    }
                    DegradationStep::GaussianNoise { sigma255 } => {
                        assert!((space.noise_sigma255.0..=space.noise_sigma255.1).contains(&sigma255))
                    }
                    DegradationStep::Jpeg { quality } => {
                        assert!((space.jpeg_quality.0..=space.jpeg_quality.1).contains(&quality))
                    }
                    DegradationStep::Resize { scale, method } => {
                        assert_eq!(method, ResizeMethod::Bicubic);
                        if j != 8 {
                            assert!((space.resize_scale.0..=space.resize_scale.1).contains(&scale));
                        }
                    }
                }
            }
            assert!((spec.total_scale() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_chain_lands_on_quarter_size() {
        let img = ImageTensor::from_fn(64, 64, 3, |y, x, c| ((x * 3 + y * 5 + c) % 17) as f64 / 16.0);
        for i in 0..12 {
            let spec = sample_degradation(&mut substream(8, "sample", i));
            let out = apply_chain(&img, &spec).unwrap();
            assert!(out.height.abs_diff(16) <= 1 && out.width.abs_diff(16) <= 1);
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let snapped = apply_chain_to_size(&img, &spec, 16, 16).unwrap();
            assert_eq!((snapped.height, snapped.width), (16, 16));
        }
    }
}
