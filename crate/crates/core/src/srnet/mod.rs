//! Conditional super-resolution network: shallow conv, a stack of residual
//! state-space blocks each modulated by the condition, a global residual
//! sum, and a pixel-shuffle reconstruction head.

mod cfm;
mod shuffle;

pub use cfm::{cfm, modulation, resize_bilinear, CfmWeights, ConditionEmbedding, Modulation};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use rand::Rng;
use serde::{Deserialize, Serialize};

use cfm::{cfm_apply, cfm_backward};
use crate::error::{Error, Result};
use crate::imgproc::ImageTensor;
use crate::nn::{join, Conv2d, ConvCache, Feat, Params, Tensor};
use crate::ssm::{vimm_backward, vimm_forward, VimmCache, VimmConfig, VimmWeights};

/// Where each block applies its modulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfmPlacement {
    /// x + conv(cfm(chain(x))).
    #[default]
    BeforeConv,
    /// cfm(x + conv(chain(x))).
    AfterResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub n_rssb: usize,
    pub vimm_per_rssb: usize,
    pub channels: usize,
    pub scale: usize,
    pub lambda_expand: usize,
    pub state_size: usize,
    /// Input-dependent Δ, B, C; false gives the time-invariant scan.
    pub selective: bool,
    /// Channels of the condition embedding.
    pub cond_dim: usize,
    pub use_condition: bool,
    pub cfm_placement: CfmPlacement,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_rssb: 4,
            vimm_per_rssb: 2,
            channels: 32,
            scale: 4,
            lambda_expand: 2,
            state_size: 8,
            selective: true,
            cond_dim: 32,
            use_condition: true,
            cfm_placement: CfmPlacement::BeforeConv,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if ![2, 4].contains(&self.scale) {
            return Err(Error::Config(format!("scale {} not in {{2, 4}}", self.scale)));
        }
        let sizes = [
            self.n_rssb,
            self.vimm_per_rssb,
            self.channels,
            self.lambda_expand,
            self.state_size,
            self.cond_dim,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn vimm(&self) -> VimmConfig {
        VimmConfig {
            channels: self.channels,
            expand: self.lambda_expand,
            state: self.state_size,
            selective: self.selective,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RssbWeights {
    pub vimms: Vec<VimmWeights>,
    pub cfm: Option<CfmWeights>,
    pub conv: Conv2d,
}

impl Params for RssbWeights {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, v) in self.vimms.iter().enumerate() {
            v.named(&join(prefix, &format!("vimm{i}")), out);
        }
        if let Some(c) = &self.cfm {
            c.named(&join(prefix, "cfm"), out);
        }
        self.conv.named(&join(prefix, "conv"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, v) in self.vimms.iter_mut().enumerate() {
            v.named_mut(&join(prefix, &format!("vimm{i}")), out);
        }
        if let Some(c) = &mut self.cfm {
            c.named_mut(&join(prefix, "cfm"), out);
        }
        self.conv.named_mut(&join(prefix, "conv"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrWeights {
    pub config: NetworkConfig,
    pub shallow: Conv2d,
    pub blocks: Vec<RssbWeights>,
    pub fuse: Conv2d,
    pub head: Conv2d,
}

impl SrWeights {
    /// All-zero weights with identity modulators.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let blocks = (0..config.n_rssb)
            .map(|_| RssbWeights {
                vimms: (0..config.vimm_per_rssb)
                    .map(|_| VimmWeights::zeros(&config.vimm()))
                    .collect(),
                cfm: config
                    .use_condition
                    .then(|| CfmWeights::identity(config.cond_dim, c)),
                conv: Conv2d::same_replicate(c, c, 3),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            shallow: Conv2d::same_replicate(3, c, 3),
            blocks,
            fuse: Conv2d::same_replicate(c, c, 3),
            head: Conv2d::same_replicate(c, 3 * config.scale * config.scale, 3),
        })
    }

    /// Random initialisation with modulators at identity. The first three
    /// shallow channels copy the RGB input and the head starts as a
    /// bilinear ×scale interpolator of them, so an untrained network
    /// already upsamples and training learns the residual detail.
    pub fn init<R: Rng>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        w.shallow.init_(1.0, rng);
        for b in &mut w.blocks {
            for v in &mut b.vimms {
                *v = VimmWeights::init(&config.vimm(), 0.5, rng);
            }
            b.conv.init_(0.2, rng);
        }
        // The deep path enters through `fuse`, which starts at zero so the
        // untrained output is the interpolation alone.
        w.head.init_(0.01, rng);
        if config.channels >= 3 {
            w.seed_interpolation();
        } else {
            w.head.bias.fill(0.5);
        }
        Ok(w)
    }

    fn seed_interpolation(&mut self) {
        let c = self.config.channels;
        let r = self.config.scale;
        for ch in 0..3 {
            let base = ch * 9 * 3;
            for (o, v) in self.shallow.weight.data[base..base + 9 * 3].iter_mut().enumerate() {
                *v = if o == 4 * 3 + ch { 1.0 } else { 0.0 };
            }
            self.shallow.bias.data[ch] = 0.0;
        }
        // 1-D bilinear taps over the neighbours (-1, 0, +1) for sub-pixel i.
        let taps = |i: usize| -> [f64; 3] {
            let d = (i as f64 + 0.5) / r as f64 - 0.5;
            if d < 0.0 {
                [-d, 1.0 + d, 0.0]
            } else {
                [0.0, 1.0 - d, d]
            }
        };
        for ch in 0..3 {
            for i in 0..r {
                for j in 0..r {
                    let out = ch * r * r + i * r + j;
                    let (ty, tx) = (taps(i), taps(j));
                    for ky in 0..3 {
                        for kx in 0..3 {
                            self.head.weight.data[((out * 3 + ky) * 3 + kx) * c + ch] += ty[ky] * tx[kx];
                        }
                    }
                }
            }
        }
    }
}

impl Params for SrWeights {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.shallow.named(&join(prefix, "shallow"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&join(prefix, &format!("rssb{i}")), out);
        }
        self.fuse.named(&join(prefix, "fuse"), out);
        self.head.named(&join(prefix, "head"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.shallow.named_mut(&join(prefix, "shallow"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.named_mut(&join(prefix, &format!("rssb{i}")), out);
        }
        self.fuse.named_mut(&join(prefix, "fuse"), out);
        self.head.named_mut(&join(prefix, "head"), out);
    }
}

#[derive(Clone, Debug)]
struct RssbCache {
    vimms: Vec<VimmCache>,
    modulation: Option<Modulation>,
    /// Input of the modulator.
    pre_mod: Feat,
    conv: ConvCache,
}

/// Activations saved by [`forward_train`].
#[derive(Clone, Debug)]
pub struct NetCache {
    shallow: ConvCache,
    blocks: Vec<RssbCache>,
    fuse: ConvCache,
    head: ConvCache,
}

fn rssb_forward(x: &Feat, w: &RssbWeights, m: Option<Modulation>, placement: CfmPlacement) -> Result<(Feat, RssbCache)> {
    let mut z = x.clone();
    let mut vimms = Vec::with_capacity(w.vimms.len());
    for v in &w.vimms {
        let (next, c) = vimm_forward(&z, v)?;
        vimms.push(c);
        z = next;
    }
    let modulate = |f: &Feat| match &m {
        Some(m) => cfm_apply(f, m),
        None => Ok(f.clone()),
    };
    let (out, pre_mod, conv) = match placement {
        CfmPlacement::BeforeConv => {
            let mz = modulate(&z)?;
            let (mut y, cc) = w.conv.forward(&mz);
            y.add_assign(x);
            (y, z, cc)
        }
        CfmPlacement::AfterResidual => {
            let (mut s, cc) = w.conv.forward(&z);
            s.add_assign(x);
            (modulate(&s)?, s, cc)
        }
    };
    Ok((
        out,
        RssbCache {
            vimms,
            modulation: m,
            pre_mod,
            conv,
        },
    ))
}

/// The block's forward pass, for callers working below the network level.
pub fn rssb_forward_feat(x: &Feat, cond: Option<&ConditionEmbedding>, w: &RssbWeights, placement: CfmPlacement) -> Result<Feat> {
    let m = match (&w.cfm, cond) {
        (Some(cw), Some(c)) => Some(modulation(c, cw, x.h, x.w)?),
        _ => None,
    };
    Ok(rssb_forward(x, w, m, placement)?.0)
}

fn rssb_backward(
    w: &RssbWeights,
    cache: &RssbCache,
    dy: &Feat,
    grad: &mut RssbWeights,
    placement: CfmPlacement,
) -> Result<Feat> {
    let demod = |d: &Feat, g: &mut RssbWeights| -> Feat {
        match (&cache.modulation, &w.cfm, &mut g.cfm) {
            (Some(m), Some(cw), Some(cg)) => cfm_backward(&cache.pre_mod, m, cw, d, cg),
            _ => d.clone(),
        }
    };
    let (mut dx, mut dz) = match placement {
        CfmPlacement::BeforeConv => {
            let dm = w
                .conv
                .backward(&cache.conv, dy, Some(&mut grad.conv), true)
                .ok_or_else(|| Error::Internal("conv dx".into()))?;
            (dy.clone(), demod(&dm, grad))
        }
        CfmPlacement::AfterResidual => {
            let ds = demod(dy, grad);
            let dz = w
                .conv
                .backward(&cache.conv, &ds, Some(&mut grad.conv), true)
                .ok_or_else(|| Error::Internal("conv dx".into()))?;
            (ds, dz)
        }
    };
    for ((v, c), g) in w.vimms.iter().zip(&cache.vimms).zip(grad.vimms.iter_mut()).rev() {
        dz = vimm_backward(v, c, &dz, g)?;
    }
    dx.add_assign(&dz);
    Ok(dx)
}

fn forward_inner(
    w: &SrWeights,
    lr: &Feat,
    cond: Option<&ConditionEmbedding>,
    global_residual: bool,
) -> Result<(Feat, NetCache)> {
    if lr.c != 3 {
        return Err(Error::UnsupportedFormat(format!("network input has {} channels", lr.c)));
    }
    let cfg = &w.config;
    let cond = match (cfg.use_condition, cond) {
        (true, Some(c)) => Some(c),
        (true, None) => return Err(Error::Config("conditioned network needs a condition".into())),
        (false, _) => None,
    };
    let (x0, shallow) = w.shallow.forward(lr);
    let mut x = x0.clone();
    let mut blocks = Vec::with_capacity(w.blocks.len());
    for b in &w.blocks {
        let m = match (&b.cfm, cond) {
            (Some(cw), Some(c)) => Some(modulation(c, cw, x.h, x.w)?),
            _ => None,
        };
        let (next, c) = rssb_forward(&x, b, m, cfg.cfm_placement)?;
        blocks.push(c);
        x = next;
    }
    let (mut fused, fuse) = w.fuse.forward(&x);
    if global_residual {
        fused.add_assign(&x0);
    }
    let (hd, head) = w.head.forward(&fused);
    let raw = pixel_shuffle(&hd, cfg.scale)?;
    Ok((
        raw,
        NetCache {
            shallow,
            blocks,
            fuse,
            head,
        },
    ))
}

/// Unclamped output and saved activations, for training.
pub fn forward_train(w: &SrWeights, lr: &Feat, cond: Option<&ConditionEmbedding>) -> Result<(Feat, NetCache)> {
    forward_inner(w, lr, cond, true)
}

/// Super-resolves `lr`; output is clamped to [0,1] and `scale` times larger.
pub fn net_forward(lr: &ImageTensor, cond: Option<&ConditionEmbedding>, w: &SrWeights) -> Result<ImageTensor> {
    let (raw, _) = forward_train(w, &lr.to_feat(), cond)?;
    ImageTensor::from_feat_clamped(&raw)
}

/// Parameter gradients of a loss whose gradient w.r.t. the unclamped output
/// is `d_out`.
pub fn net_backward(w: &SrWeights, cache: &NetCache, d_out: &Feat) -> Result<SrWeights> {
    if cache.blocks.len() != w.blocks.len() {
        return Err(Error::Internal("saved state does not match the network".into()));
    }
    let mut grad = w.clone();
    grad.zero_();
    let dhd = pixel_unshuffle(d_out, w.config.scale)?;
    let dfused = w
        .head
        .backward(&cache.head, &dhd, Some(&mut grad.head), true)
        .ok_or_else(|| Error::Internal("head dx".into()))?;
    let mut dx = w
        .fuse
        .backward(&cache.fuse, &dfused, Some(&mut grad.fuse), true)
        .ok_or_else(|| Error::Internal("fuse dx".into()))?;
    for ((b, c), g) in w.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
        dx = rssb_backward(b, c, &dx, g, w.config.cfm_placement)?;
    }
    dx.add_assign(&dfused);
    w.shallow.backward(&cache.shallow, &dx, Some(&mut grad.shallow), false);
    Ok(grad)
}
