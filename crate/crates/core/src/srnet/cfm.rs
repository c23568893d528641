//! Conditional feature modulation: out = α ⊙ x + β, with α and β produced
//! by two 1×1 convolutions from the condition map resized to x's grid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, ConvCache, Feat, Params, Tensor};

/// Spatial embedding emitted by the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEmbedding {
    pub map: Feat,
}

impl ConditionEmbedding {
    pub fn new(map: Feat) -> Result<Self> {
        if map.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("condition embedding has non-finite values".into()));
        }
        Ok(Self { map })
    }

    pub fn zeros(h: usize, w: usize, d: usize) -> Self {
        Self {
            map: Feat::zeros(h, w, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.map.c
    }
}

/// Bilinear resampling with pixel-centre alignment and clamped borders.
pub fn resize_bilinear(f: &Feat, h: usize, w: usize) -> Feat {
    if f.h == h && f.w == w {
        return f.clone();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let (ty, tx) = (taps(h, f.h), taps(w, f.w));
    let mut out = Feat::zeros(h, w, f.c);
    for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
            for c in 0..f.c {
                let top = f.at(y0, x0, c) * (1.0 - fx) + f.at(y0, x1, c) * fx;
                let bot = f.at(y1, x0, c) * (1.0 - fx) + f.at(y1, x1, c) * fx;
                out.data[(y * w + x) * f.c + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CfmWeights {
    pub alpha: Conv2d,
    pub beta: Conv2d,
}

impl CfmWeights {
    /// α ≡ 1, β ≡ 0: modulation disabled.
    pub fn identity(cond_dim: usize, channels: usize) -> Self {
        let mut alpha = Conv2d::same(cond_dim, channels, 1);
        alpha.bias.fill(1.0);
        Self {
            alpha,
            beta: Conv2d::same(cond_dim, channels, 1),
        }
    }

    /// Identity plus small random weights on both heads.
    pub fn init<R: Rng>(cond_dim: usize, channels: usize, gain: f64, rng: &mut R) -> Self {
        let mut w = Self::identity(cond_dim, channels);
        w.alpha.init_(gain, rng);
        w.beta.init_(gain, rng);
        w
    }

    pub fn channels(&self) -> usize {
        self.alpha.out_channels()
    }
}

impl Params for CfmWeights {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.alpha.named(&join(prefix, "alpha"), out);
        self.beta.named(&join(prefix, "beta"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.alpha.named_mut(&join(prefix, "alpha"), out);
        self.beta.named_mut(&join(prefix, "beta"), out);
    }
}

/// α and β maps for one feature grid; they depend only on the condition, so
/// one set serves every use at that resolution.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub alpha: Feat,
    pub beta: Feat,
    a_cache: ConvCache,
    b_cache: ConvCache,
}

pub fn modulation(cond: &ConditionEmbedding, w: &CfmWeights, h: usize, wd: usize) -> Result<Modulation> {
    if cond.dim() != w.alpha.in_channels() {
        return Err(Error::Config(format!(
            "condition has {} channels, modulator expects {}",
            cond.dim(),
            w.alpha.in_channels()
        )));
    }
    let up = resize_bilinear(&cond.map, h, wd);
    let (alpha, a_cache) = w.alpha.forward(&up);
    let (beta, b_cache) = w.beta.forward(&up);
    Ok(Modulation {
        alpha,
        beta,
        a_cache,
        b_cache,
    })
}

fn apply(x: &Feat, m: &Modulation) -> Result<Feat> {
    if x.h != m.alpha.h || x.w != m.alpha.w || x.c != m.alpha.c {
        return Err(Error::Config(format!(
            "features {}x{}x{} do not match modulation {}x{}x{}",
            x.h, x.w, x.c, m.alpha.h, m.alpha.w, m.alpha.c
        )));
    }
    let data = x
        .data
        .iter()
        .zip(&m.alpha.data)
        .zip(&m.beta.data)
        .map(|((v, a), b)| a * v + b)
        .collect();
    Feat::from_vec(x.h, x.w, x.c, data)
}

/// α ⊙ x + β with α, β computed from `cond`.
pub fn cfm(x: &Feat, cond: &ConditionEmbedding, w: &CfmWeights) -> Result<Feat> {
    apply(x, &modulation(cond, w, x.h, x.w)?)
}

pub(crate) fn cfm_apply(x: &Feat, m: &Modulation) -> Result<Feat> {
    apply(x, m)
}

/// Gradient of α ⊙ x + β. Accumulates into `grad` and returns dL/dx.
pub(crate) fn cfm_backward(x: &Feat, m: &Modulation, w: &CfmWeights, dy: &Feat, grad: &mut CfmWeights) -> Feat {
    let mut da = dy.clone();
    for (g, v) in da.data.iter_mut().zip(&x.data) {
        *g *= v;
    }
    w.alpha.backward(&m.a_cache, &da, Some(&mut grad.alpha), false);
    w.beta.backward(&m.b_cache, dy, Some(&mut grad.beta), false);
    let mut dx = dy.clone();
    for (g, a) in dx.data.iter_mut().zip(&m.alpha.data) {
        *g *= a;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_feat(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Feat {
        Feat::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_weights_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand_feat(5, 4, 3, &mut rng);
        let cond = ConditionEmbedding::new(rand_feat(2, 2, 6, &mut rng)).unwrap();
        assert_eq!(cfm(&x, &cond, &CfmWeights::identity(6, 3)).unwrap(), x);
    }

    #[test]
    fn zero_alpha_gives_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = CfmWeights::init(6, 3, 1.0, &mut rng);
        w.alpha.weight.fill(0.0);
        w.alpha.bias.fill(0.0);
        let cond = ConditionEmbedding::new(rand_feat(2, 2, 6, &mut rng)).unwrap();
        let a = cfm(&rand_feat(4, 4, 3, &mut rng), &cond, &w).unwrap();
        let b = cfm(&rand_feat(4, 4, 3, &mut rng), &cond, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = CfmWeights::init(5, 3, 1.0, &mut rng);
        let cond = ConditionEmbedding::new(rand_feat(3, 3, 5, &mut rng)).unwrap();
        let x = rand_feat(6, 6, 3, &mut rng);
        let out = cfm(&x, &cond, &w).unwrap();
        let up = resize_bilinear(&cond.map, 6, 6);
        for p in 0..36 {
            for c in 0..3 {
                let mut a = w.alpha.bias.data[c];
                let mut b = w.beta.bias.data[c];
                for k in 0..5 {
                    a += w.alpha.weight.data[c * 5 + k] * up.data[p * 5 + k];
                    b += w.beta.weight.data[c * 5 + k] * up.data[p * 5 + k];
                }
                let want = a * x.data[p * 3 + c] + b;
                assert!((out.data[p * 3 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let w = CfmWeights::identity(4, 3);
        let cond = ConditionEmbedding::zeros(2, 2, 5);
        assert!(matches!(cfm(&Feat::zeros(2, 2, 3), &cond, &w), Err(Error::Config(_))));
    }

    #[test]
    fn bilinear_keeps_constants_and_identity() {
        let f = Feat::from_vec(2, 3, 1, vec![0.7; 6]).unwrap();
        assert!(resize_bilinear(&f, 8, 5).data.iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert_eq!(resize_bilinear(&f, 2, 3), f);
    }
}
