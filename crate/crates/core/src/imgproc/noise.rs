use rand::Rng;
use rand_distr::StandardNormal;

use super::ImageTensor;

/// Adds i.i.d. Gaussian noise of standard deviation `sigma255 / 255` to every
/// sample, then clamps.
pub fn add_gaussian_noise<R: Rng>(img: &ImageTensor, sigma255: f64, rng: &mut R) -> ImageTensor {
    if sigma255 == 0.0 {
        return img.clone();
    }
    let s = sigma255 / 255.0;
    let mut out = img.clone();
    for v in &mut out.data {
        *v += s * rng.sample::<f64, _>(StandardNormal);
    }
    out.clamp_();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn zero_sigma_is_identity() {
        let img = ImageTensor::from_fn(4, 4, 3, |y, x, c| (y + x + c) as f64 / 10.0);
        assert_eq!(add_gaussian_noise(&img, 0.0, &mut substream(1, "n", 0)), img);
    }

    #[test]
    fn sample_std_tracks_sigma() {
        let img = ImageTensor::constant(64, 64, 1, 0.5);
        let out = add_gaussian_noise(&img, 20.0, &mut substream(5, "n", 0));
        let n = out.data.len() as f64;
        let mean = out.data.iter().sum::<f64>() / n;
        let std = (out.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // 3σ band on the sample std for 4096 draws is about ±1.3/255.
        assert!((18.0 / 255.0..=22.0 / 255.0).contains(&std), "std {}", std * 255.0);
    }

    #[test]
    fn same_seed_same_bits() {
        let img = ImageTensor::constant(8, 8, 3, 0.3);
        let a = add_gaussian_noise(&img, 12.0, &mut substream(9, "n", 3));
        let b = add_gaussian_noise(&img, 12.0, &mut substream(9, "n", 3));
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
