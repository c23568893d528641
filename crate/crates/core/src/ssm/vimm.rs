//! ViMM: LayerNorm, channel expansion, causal depthwise conv, selective scan,
//! SiLU gate, projection back, residual. Tokens are taken in raster order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scan::{selective_scan, selective_scan_backward, ScanCache, SsmParams};
use crate::error::{param, Result};
use crate::nn::{join, silu, silu_grad, Feat, LayerNorm, LayerNormCache, Linear, Params, Tensor};

/// Width of the causal depthwise convolution.
pub const CONV_WIDTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VimmConfig {
    pub channels: usize,
    /// Inner width is `expand × channels`.
    pub expand: usize,
    pub state: usize,
    pub selective: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VimmWeights {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    /// [D, CONV_WIDTH]; tap k multiplies token t − (CONV_WIDTH − 1) + k.
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub ssm: SsmParams,
    pub gate_proj: Linear,
    pub out_proj: Linear,
}

impl VimmWeights {
    pub fn zeros(cfg: &VimmConfig) -> Self {
        let (c, d) = (cfg.channels, cfg.channels * cfg.expand);
        let mut ssm = SsmParams::zeros(d, cfg.state);
        ssm.selective = cfg.selective;
        Self {
            norm: LayerNorm::new(c),
            in_proj: Linear::zeros(c, d, false),
            conv_w: Tensor::zeros(&[d, CONV_WIDTH]),
            conv_b: Tensor::zeros(&[d]),
            ssm,
            gate_proj: Linear::zeros(c, d, false),
            out_proj: Linear::zeros(d, c, false),
        }
    }

    /// Random init with `out_gain` on the output projection; 0 makes the
    /// block an exact identity.
    pub fn init<R: Rng>(cfg: &VimmConfig, out_gain: f64, rng: &mut R) -> Self {
        let (c, d) = (cfg.channels, cfg.channels * cfg.expand);
        let mut w = Self::zeros(cfg);
        w.in_proj = Linear::init(c, d, false, 1.0, rng);
        let bound = (3.0 / CONV_WIDTH as f64).sqrt();
        for v in &mut w.conv_w.data {
            *v = rng.gen_range(-bound..bound);
        }
        w.ssm = SsmParams::init(d, cfg.state, rng);
        w.ssm.selective = cfg.selective;
        w.gate_proj = Linear::init(c, d, false, 1.0, rng);
        w.out_proj = Linear::init(d, c, false, out_gain, rng);
        w
    }

    pub fn channels(&self) -> usize {
        self.norm.channels()
    }

    pub fn inner_dim(&self) -> usize {
        self.in_proj.output_dim()
    }
}

impl Params for VimmWeights {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.norm.named(&join(prefix, "norm"), out);
        self.in_proj.named(&join(prefix, "in_proj"), out);
        out.push((join(prefix, "conv_w"), &self.conv_w));
        out.push((join(prefix, "conv_b"), &self.conv_b));
        self.ssm.named(&join(prefix, "ssm"), out);
        self.gate_proj.named(&join(prefix, "gate_proj"), out);
        self.out_proj.named(&join(prefix, "out_proj"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.norm.named_mut(&join(prefix, "norm"), out);
        self.in_proj.named_mut(&join(prefix, "in_proj"), out);
        out.push((join(prefix, "conv_w"), &mut self.conv_w));
        out.push((join(prefix, "conv_b"), &mut self.conv_b));
        self.ssm.named_mut(&join(prefix, "ssm"), out);
        self.gate_proj.named_mut(&join(prefix, "gate_proj"), out);
        self.out_proj.named_mut(&join(prefix, "out_proj"), out);
    }
}

#[derive(Clone, Debug)]
pub struct VimmCache {
    h: usize,
    w: usize,
    norm: LayerNormCache,
    n: Vec<f64>,
    u0: Vec<f64>,
    u1: Vec<f64>,
    scan: ScanCache,
    y: Vec<f64>,
    z: Vec<f64>,
    m: Vec<f64>,
}

fn causal_conv(u0: &[f64], len: usize, d: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for t in 0..len {
        for di in 0..d {
            let mut acc = b.data[di];
            for k in 0..CONV_WIDTH {
                if let Some(src) = (t + k).checked_sub(CONV_WIDTH - 1) {
                    acc += w.data[di * CONV_WIDTH + k] * u0[src * d + di];
                }
            }
            out[t * d + di] = acc;
        }
    }
    out
}

pub fn vimm_forward(x: &Feat, w: &VimmWeights) -> Result<(Feat, VimmCache)> {
    if x.c != w.channels() {
        return param(format!("ViMM expects {} channels, got {}", w.channels(), x.c));
    }
    let (len, d) = (x.tokens(), w.inner_dim());
    let (n, norm) = w.norm.forward(&x.data);
    let u0 = w.in_proj.forward(&n, len);
    let u1 = causal_conv(&u0, len, d, &w.conv_w, &w.conv_b);
    let u: Vec<f64> = u1.iter().map(|&v| silu(v)).collect();
    let (y, scan) = selective_scan(&u, len, &w.ssm)?;
    let z = w.gate_proj.forward(&n, len);
    let m: Vec<f64> = y.iter().zip(&z).map(|(a, &b)| a * silu(b)).collect();
    let mut out = w.out_proj.forward(&m, len);
    for (o, xi) in out.iter_mut().zip(&x.data) {
        *o += xi;
    }
    let cache = VimmCache {
        h: x.h,
        w: x.w,
        norm,
        n,
        u0,
        u1,
        scan,
        y,
        z,
        m,
    };
    Ok((Feat::from_vec(x.h, x.w, x.c, out)?, cache))
}

/// Accumulates parameter gradients into `grad` and returns dL/dX.
pub fn vimm_backward(w: &VimmWeights, cache: &VimmCache, dy: &Feat, grad: &mut VimmWeights) -> Result<Feat> {
    let (len, d, c) = (cache.h * cache.w, w.inner_dim(), w.channels());
    if dy.data.len() != len * c {
        return param("ViMM upstream gradient has the wrong shape".to_string());
    }
    let dm = w
        .out_proj
        .backward(&cache.m, &dy.data, len, Some(&mut grad.out_proj), true)
        .unwrap_or_default();
    let mut d_scan = vec![0.0; len * d];
    let mut dz = vec![0.0; len * d];
    for i in 0..len * d {
        let z = cache.z[i];
        d_scan[i] = dm[i] * silu(z);
        dz[i] = dm[i] * cache.y[i] * silu_grad(z);
    }
    let mut dn = w
        .gate_proj
        .backward(&cache.n, &dz, len, Some(&mut grad.gate_proj), true)
        .unwrap_or_default();
    let (du, gs) = selective_scan_backward(&w.ssm, &cache.scan, &d_scan)?;
    grad.ssm.accumulate(&gs);
    let du1: Vec<f64> = du.iter().zip(&cache.u1).map(|(g, &v)| g * silu_grad(v)).collect();
    let mut du0 = vec![0.0; len * d];
    for t in 0..len {
        for di in 0..d {
            let g = du1[t * d + di];
            grad.conv_b.data[di] += g;
            for k in 0..CONV_WIDTH {
                if let Some(src) = (t + k).checked_sub(CONV_WIDTH - 1) {
                    grad.conv_w.data[di * CONV_WIDTH + k] += g * cache.u0[src * d + di];
                    du0[src * d + di] += g * w.conv_w.data[di * CONV_WIDTH + k];
                }
            }
        }
    }
    let dn_in = w
        .in_proj
        .backward(&cache.n, &du0, len, Some(&mut grad.in_proj), true)
        .unwrap_or_default();
    for (a, b) in dn.iter_mut().zip(&dn_in) {
        *a += b;
    }
    let mut dx = w.norm.backward(&cache.norm, &dn, Some(&mut grad.norm));
    for (a, b) in dx.iter_mut().zip(&dy.data) {
        *a += b;
    }
    Feat::from_vec(cache.h, cache.w, c, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::hex;
    use crate::nn::gradcheck::{check_params, check_slice, DEFAULT_EPS};
    use crate::nn::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sha2::{Digest, Sha256};

    fn cfg() -> VimmConfig {
        VimmConfig {
            channels: 4,
            expand: 2,
            state: 3,
            selective: true,
        }
    }

    fn random_feat(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Feat {
        Feat::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = VimmWeights::init(&cfg(), 0.0, &mut rng);
        let x = random_feat(3, 5, 4, &mut rng);
        let (y, _) = vimm_forward(&x, &w).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let w = VimmWeights::zeros(&cfg());
        assert!(vimm_forward(&Feat::zeros(2, 2, 3), &w).is_err());
    }

    #[test]
    fn single_pixel_is_a_single_scan_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = VimmWeights::init(&cfg(), 1.0, &mut rng);
        let x = random_feat(1, 1, 4, &mut rng);
        let (y, _) = vimm_forward(&x, &w).unwrap();
        // Only the last conv tap sees a token; the scan starts from rest.
        let (n, _) = w.norm.forward(&x.data);
        let u0 = w.in_proj.forward(&n, 1);
        let u: Vec<f64> = (0..8)
            .map(|d| silu(w.conv_b.data[d] + w.conv_w.data[d * CONV_WIDTH + CONV_WIDTH - 1] * u0[d]))
            .collect();
        let (s, _) = selective_scan(&u, 1, &w.ssm).unwrap();
        let z = w.gate_proj.forward(&n, 1);
        let m: Vec<f64> = s.iter().zip(&z).map(|(a, &b)| a * silu(b)).collect();
        let o = w.out_proj.forward(&m, 1);
        for i in 0..4 {
            assert!((y.data[i] - (o[i] + x.data[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn output_is_causal_in_raster_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = VimmWeights::init(&cfg(), 1.0, &mut rng);
        let x = random_feat(3, 3, 4, &mut rng);
        let (y0, _) = vimm_forward(&x, &w).unwrap();
        let mut x2 = x.clone();
        // Perturb the last token: earlier outputs must not move.
        for v in &mut x2.data[8 * 4..] {
            *v += 0.5;
        }
        let (y1, _) = vimm_forward(&x2, &w).unwrap();
        assert_eq!(y0.data[..8 * 4], y1.data[..8 * 4]);
        assert_ne!(y0.data[8 * 4..], y1.data[8 * 4..]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = VimmWeights::init(&cfg(), 1.0, &mut rng);
        w.ssm.delta_proj = Linear::init(8, 8, true, 1.0, &mut rng);
        for v in w.norm.gamma.data.iter_mut().chain(&mut w.norm.beta.data) {
            *v += rng.gen_range(-0.3..0.3);
        }
        let x = random_feat(2, 3, 4, &mut rng);
        let r = random_feat(2, 3, 4, &mut rng);
        let loss = |x: &Feat, w: &VimmWeights| -> f64 {
            let (y, _) = vimm_forward(x, w).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = vimm_forward(&x, &w).unwrap();
        let mut g = zeros_like(&w);
        let dx = vimm_backward(&w, &cache, &r, &mut g).unwrap();
        let rep = check_params(&w, &g, |ww| loss(&x, ww), 12, DEFAULT_EPS, &mut rng);
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
        let rep = check_slice(
            &x.data,
            &dx.data,
            |xx| loss(&Feat::from_vec(2, 3, 4, xx.to_vec()).unwrap(), &w),
            24,
            DEFAULT_EPS,
            "x",
            &mut rng,
        );
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn golden_output_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = VimmWeights::init(&cfg(), 1.0, &mut rng);
        let x = random_feat(4, 4, 4, &mut rng);
        let (y, _) = vimm_forward(&x, &w).unwrap();
        let mut h = Sha256::new();
        for v in &y.data {
            h.update(((v * 1e9).round() as i64).to_le_bytes());
        }
        assert_eq!(hex(&h.finalize()), GOLDEN);
    }

    const GOLDEN: &str = "7040bb45e66086821b337052aa81c5548e33f7f59c16d2a0ff975782fe4770c2";
}
