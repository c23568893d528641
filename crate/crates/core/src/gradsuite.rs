//! Finite-difference checks of every hand-written backward pass, on random
//! instances drawn from a seed. Used by the `gradcheck` command.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::imgproc::ImageTensor;
use crate::nn::gradcheck::{check_params, check_slice, GradCheck, DEFAULT_EPS};
use crate::nn::{Feat, Linear, Params, Tensor};
use crate::ree::{encode_backward, encode_feat, rep_mse_grad, rep_mse_loss, EncoderConfig, EncoderWeights, LoraAdapter};
use crate::rng::substream;
use crate::srnet::{forward_train, net_backward, CfmWeights, ConditionEmbedding, NetworkConfig, SrWeights};
use crate::ssm::{selective_scan, selective_scan_backward, SsmParams};
use crate::training::{perceptual_proxy_grad, perceptual_proxy_loss};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

impl SuiteEntry {
    fn new(name: &str, instances: usize, g: GradCheck) -> Self {
        Self {
            name: name.into(),
            instances,
            checked: g.checked,
            max_rel_err: g.max_rel_err,
            worst: g.worst,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// One random selective-scan instance: parameters and input.
pub fn scan_instance<R: Rng>(rng: &mut R) -> GradCheck {
    let (len, d, n) = (rng.gen_range(2..=8), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let mut p = SsmParams::init(d, n, rng);
    p.delta_proj = Linear::init(d, d, true, 1.0, rng);
    for v in &mut p.a_log.data {
        *v += rng.gen_range(-0.5..0.5);
    }
    p.selective = rng.gen_bool(0.75);
    let x = uniform(len * d, rng);
    let r = uniform(len * d, rng);
    let loss = |x: &[f64], p: &SsmParams| dot(&selective_scan(x, len, p).unwrap().0, &r);
    let (_, cache) = selective_scan(&x, len, &p).unwrap();
    let (dx, g) = selective_scan_backward(&p, &cache, &r).unwrap();
    let mut rep = check_params(&p, &g, |pp| loss(&x, pp), 8, DEFAULT_EPS, rng);
    rep.merge(check_slice(&x, &dx, |xx| loss(xx, &p), 16, DEFAULT_EPS, "x", rng));
    rep
}

/// FD step for the network check. Its loss sums thousands of outputs, so
/// round-off in the loss is large next to the smallest scan gradients
/// (about 1e-7); the network is smooth, and the five-point stencil keeps
/// truncation near ε⁴ at this step.
pub const NET_EPS: f64 = 1e-2;

/// Two-block network with 8 channels on an 8×8 input. Every layer gets
/// non-zero weights so each path carries gradient.
pub fn net_config() -> NetworkConfig {
    NetworkConfig {
        n_rssb: 2,
        vimm_per_rssb: 2,
        channels: 8,
        scale: 4,
        state_size: 4,
        cond_dim: 8,
        ..NetworkConfig::default()
    }
}

pub fn net_instance<R: Rng>(rng: &mut R) -> GradCheck {
    let cfg = net_config();
    let mut w = SrWeights::init(&cfg, rng).unwrap();
    w.fuse.init_(0.5, rng);
    for b in &mut w.blocks {
        b.conv.init_(0.5, rng);
        b.cfm = Some(CfmWeights::init(cfg.cond_dim, cfg.channels, 0.5, rng));
    }
    let lr = ImageTensor::from_fn(8, 8, 3, |_, _, _| rng.gen_range(0.0..1.0)).to_feat();
    let cond = ConditionEmbedding::new(Feat::from_vec(2, 2, cfg.cond_dim, uniform(4 * cfg.cond_dim, rng)).unwrap())
        .unwrap();
    let (out, cache) = forward_train(&w, &lr, Some(&cond)).unwrap();
    let r = uniform(out.data.len(), rng);
    let d_out = Feat::from_vec(out.h, out.w, out.c, r.clone()).unwrap();
    let g = net_backward(&w, &cache, &d_out).unwrap();
    let loss = |ww: &SrWeights| dot(&forward_train(ww, &lr, Some(&cond)).unwrap().0.data, &r);
    check_params(&w, &g, loss, 2, NET_EPS, rng)
}

fn small_encoder<R: Rng>(rng: &mut R) -> EncoderWeights {
    EncoderWeights::init(&EncoderConfig { embed_dim: 8 }, rng)
}

fn random_feat<R: Rng>(side: usize, rng: &mut R) -> Feat {
    Feat::from_vec(side, side, 3, (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Adapter parameters (with a random down-projection so both factors carry
/// gradient) under the paired embedding MSE.
pub fn adapter_instance<R: Rng>(rng: &mut R) -> GradCheck {
    let base = small_encoder(rng);
    let mut a = LoraAdapter::new(&base, 2, rng).unwrap();
    for l in &mut a.layers {
        l.down = Tensor::randn(&l.down.shape, 0.5, rng);
    }
    let x = random_feat(16, rng);
    let (emb, cache) = encode_feat(&x, &base, Some(&a)).unwrap();
    let target = Feat::from_vec(emb.h, emb.w, emb.c, Tensor::randn(&[emb.data.len()], 0.5, rng).data).unwrap();
    let mut g = a.clone();
    g.zero_();
    encode_backward(&base, Some(&a), &cache, &rep_mse_grad(&emb, &target), Some(&mut g), false);
    let loss = |aa: &LoraAdapter| rep_mse_loss(&encode_feat(&x, &base, Some(aa)).unwrap().0, &target).unwrap();
    check_params(&a, &g, loss, 4, DEFAULT_EPS, rng)
}

/// Embedding-distance loss with respect to the SR image.
pub fn proxy_instance<R: Rng>(rng: &mut R) -> GradCheck {
    let base = small_encoder(rng);
    let hr = random_feat(16, rng);
    let mut sr = hr.clone();
    for v in &mut sr.data {
        *v += 0.1 * rng.gen_range(-1.0..1.0);
    }
    let (_, g) = perceptual_proxy_grad(&sr, &hr, &base).unwrap();
    let loss = |x: &[f64]| perceptual_proxy_loss(&Feat::from_vec(16, 16, 3, x.to_vec()).unwrap(), &hr, &base).unwrap();
    check_slice(&sr.data, &g.data, loss, 24, DEFAULT_EPS, "sr", rng)
}

/// Runs `instances` random instances of each check.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<SuiteEntry>> {
    type Check = fn(&mut crate::rng::Stream) -> GradCheck;
    let checks: [(&str, Check); 4] = [
        ("selective_scan", scan_instance),
        ("net", net_instance),
        ("ree_adapter", adapter_instance),
        ("perceptual_proxy", proxy_instance),
    ];
    Ok(checks
        .iter()
        .map(|(name, f)| {
            let mut total = GradCheck::default();
            for i in 0..instances {
                total.merge(f(&mut substream(seed, name, i as u64)));
            }
            SuiteEntry::new(name, instances, total)
        })
        .collect())
}
