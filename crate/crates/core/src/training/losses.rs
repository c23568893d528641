use crate::error::{shape, Result};
use crate::imgproc::ImageTensor;
use crate::nn::{sigmoid, softplus, Feat};
use crate::ree::{encode, encode_backward, encode_feat, rep_mse_grad, rep_mse_loss, EncoderWeights};

fn check(a: &Feat, b: &Feat) -> Result<()> {
    if a.same_shape(b) && !a.data.is_empty() {
        Ok(())
    } else {
        shape(format!("{}x{}x{} vs {}x{}x{}", a.h, a.w, a.c, b.h, b.w, b.c))
    }
}

/// Mean absolute difference.
pub fn l1_pixel_loss(sr: &Feat, hr: &Feat) -> Result<f64> {
    check(sr, hr)?;
    Ok(sr.data.iter().zip(&hr.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / sr.data.len() as f64)
}

/// Subgradient of [`l1_pixel_loss`] w.r.t. `sr` (0 where equal).
pub fn l1_pixel_grad(sr: &Feat, hr: &Feat) -> Result<Feat> {
    check(sr, hr)?;
    let n = sr.data.len() as f64;
    let data = sr
        .data
        .iter()
        .zip(&hr.data)
        .map(|(a, b)| if a == b { 0.0 } else { (a - b).signum() / n })
        .collect();
    Feat::from_vec(sr.h, sr.w, sr.c, data)
}

/// Embedding distance under the frozen encoder, with its gradient w.r.t.
/// `sr`. Both maps must have sides that are multiples of 16.
pub fn perceptual_proxy_grad(sr: &Feat, hr: &Feat, base: &EncoderWeights) -> Result<(f64, Feat)> {
    check(sr, hr)?;
    let (fs, cache) = encode_feat(sr, base, None)?;
    let (fh, _) = encode_feat(hr, base, None)?;
    let loss = rep_mse_loss(&fs, &fh)?;
    let dx = encode_backward(base, None, &cache, &rep_mse_grad(&fs, &fh), None, true)
        .expect("input gradient requested");
    Ok((loss, dx))
}

pub fn perceptual_proxy_loss(sr: &Feat, hr: &Feat, base: &EncoderWeights) -> Result<f64> {
    check(sr, hr)?;
    rep_mse_loss(&encode_feat(sr, base, None)?.0, &encode_feat(hr, base, None)?.0)
}

/// Proxy metric on whole images of any size (reflect-padded as needed).
pub fn perceptual_proxy(sr: &ImageTensor, hr: &ImageTensor, base: &EncoderWeights) -> Result<f64> {
    check(&sr.to_feat(), &hr.to_feat())?;
    rep_mse_loss(&encode(sr, base, None)?.map, &encode(hr, base, None)?.map)
}

/// Non-saturating logistic GAN losses, `(g_loss, d_loss)`:
/// d = mean softplus(−real) + mean softplus(fake), g = mean softplus(−fake).
pub fn adversarial_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|x| f(*x)).sum::<f64>() / v.len().max(1) as f64;
    let g = mean(d_fake, &|x| softplus(-x));
    let d = mean(d_real, &|x| softplus(-x)) + mean(d_fake, &softplus);
    (g, d)
}

/// d d_loss / d real and d d_loss / d fake.
pub fn d_loss_grads(d_real: &[f64], d_fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nr = d_real.len().max(1) as f64;
    let nf = d_fake.len().max(1) as f64;
    (
        d_real.iter().map(|x| -sigmoid(-x) / nr).collect(),
        d_fake.iter().map(|x| sigmoid(*x) / nf).collect(),
    )
}

/// d g_loss / d fake; strictly negative.
pub fn g_loss_grad(d_fake: &[f64]) -> Vec<f64> {
    let n = d_fake.len().max(1) as f64;
    d_fake.iter().map(|x| -sigmoid(-x) / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_image;
    use crate::imgproc::{apply_blur, blur_kernel_size, gaussian_kernel};
    use crate::nn::gradcheck::{check_slice, DEFAULT_EPS};
    use crate::nn::Tensor;
    use crate::ree::{EncoderConfig, EncoderWeights};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(v: Vec<f64>) -> Feat {
        let n = v.len();
        Feat::from_vec(1, n, 1, v).unwrap()
    }

    #[test]
    fn l1_cases() {
        let a = feat(vec![0.1, 0.5, 0.9]);
        assert_eq!(l1_pixel_loss(&a, &a).unwrap(), 0.0);
        let b = feat(vec![0.2, 0.6, 1.0]);
        assert!((l1_pixel_loss(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        assert!(l1_pixel_loss(&a, &feat(vec![0.0; 2])).is_err());
    }

    #[test]
    fn l1_matches_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = feat(Tensor::randn(&[101], 1.0, &mut rng).data);
        let b = feat(Tensor::randn(&[101], 1.0, &mut rng).data);
        let mut pairs: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).collect();
        pairs.sort_by(f64::total_cmp);
        let want = pairs.iter().sum::<f64>() / 101.0;
        assert!((l1_pixel_loss(&a, &b).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn adversarial_closed_forms() {
        let ln2 = std::f64::consts::LN_2;
        let (g, d) = adversarial_losses(&[0.0; 4], &[0.0; 4]);
        assert!((d - 2.0 * ln2).abs() < 1e-15 && (g - ln2).abs() < 1e-15);
        let (_, d) = adversarial_losses(&[50.0], &[-50.0]);
        assert!(d < 1e-20);
    }

    proptest! {
        #[test]
        fn generator_gradient_is_negative(v in proptest::collection::vec(-40.0f64..40.0, 1..16)) {
            prop_assert!(g_loss_grad(&v).iter().all(|g| *g < 0.0));
        }

        #[test]
        fn d_loss_grads_match_finite_differences(r in -5.0f64..5.0, f in -5.0f64..5.0) {
            let (gr, gf) = d_loss_grads(&[r], &[f]);
            let e = 1e-6;
            let nr = (adversarial_losses(&[r + e], &[f]).1 - adversarial_losses(&[r - e], &[f]).1) / (2.0 * e);
            let nf = (adversarial_losses(&[r], &[f + e]).1 - adversarial_losses(&[r], &[f - e]).1) / (2.0 * e);
            prop_assert!((gr[0] - nr).abs() < 1e-7 && (gf[0] - nf).abs() < 1e-7);
        }
    }

    #[test]
    fn proxy_is_zero_on_identical_inputs() {
        let base = EncoderWeights::init(&EncoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let x = fixture_image(0, 1, 32).to_feat();
        assert_eq!(perceptual_proxy_loss(&x, &x, &base).unwrap(), 0.0);
    }

    #[test]
    fn proxy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = EncoderWeights::init(&EncoderConfig { embed_dim: 8 }, &mut rng);
        let hr = fixture_image(1, 3, 32).to_feat();
        let mut sr = hr.clone();
        for v in &mut sr.data {
            *v += 0.1 * rng.gen_range(-1.0..1.0);
        }
        let (_, g) = perceptual_proxy_grad(&sr, &hr, &base).unwrap();
        let rep = check_slice(
            &sr.data,
            &g.data,
            |x| perceptual_proxy_loss(&Feat::from_vec(32, 32, 3, x.to_vec()).unwrap(), &hr, &base).unwrap(),
            30,
            DEFAULT_EPS,
            "sr",
            &mut rng,
        );
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn proxy_grows_with_blur() {
        let base = EncoderWeights::init(&EncoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        for i in 0..4 {
            let hr = fixture_image(2, i, 64);
            let blur = |s: f64| apply_blur(&hr, &gaussian_kernel(s, blur_kernel_size(s)).unwrap());
            let light = perceptual_proxy(&blur(0.5), &hr, &base).unwrap();
            let heavy = perceptual_proxy(&blur(2.0), &hr, &base).unwrap();
            assert!(heavy > light, "fixture {i}: {heavy} <= {light}");
        }
    }
}
