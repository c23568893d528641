//! Embedding extractor: a small strided CNN whose output map conditions the
//! SR network, plus low-rank adapters that pull embeddings of degraded
//! images towards those of their clean sources.

mod train;

pub use train::{
    degraded_pairs, finetune_ree, pair_mse, pretrain_base, random_crops, FinetuneConfig, FinetuneResult, PretrainConfig,
    PretrainResult,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::imgproc::ImageTensor;
use crate::nn::{gemm, join, silu, silu_grad, Conv2d, ConvCache, Feat, Params, Tensor};
use crate::srnet::ConditionEmbedding;

/// Total spatial reduction of the encoder.
pub const DOWNSAMPLE: usize = 16;
const WIDTHS: [usize; 3] = [16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { embed_dim: 32 }
    }
}

/// Four stride-2 3×3 convolutions, 3 → 16 → 32 → 64 → d, SiLU
/// between them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub convs: Vec<Conv2d>,
}

impl EncoderWeights {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let chans = [3, WIDTHS[0], WIDTHS[1], WIDTHS[2], cfg.embed_dim];
        Self {
            convs: chans.windows(2).map(|p| Conv2d::zeros(p[0], p[1], 3, 2, 1)).collect(),
        }
    }

    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let mut w = Self::zeros(cfg);
        for c in &mut w.convs {
            c.init_(1.0, rng);
        }
        w
    }

    pub fn embed_dim(&self) -> usize {
        self.convs.last().map_or(0, |c| c.out_channels())
    }
}

impl Params for EncoderWeights {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.named(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.named_mut(&join(prefix, &format!("conv{i}")), out);
        }
    }
}

/// Low-rank update of one conv: ΔW = scale · down · up, with `down`
/// `[out, r]` and `up` `[r, k·k·in]` in the conv's weight layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraLayer {
    pub down: Tensor,
    pub up: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub scale: f64,
    pub layers: Vec<LoraLayer>,
}

impl LoraAdapter {
    /// Adapter for every conv of `base` with a zero `down` factor, so it
    /// starts as an exact no-op. Scale defaults to 1/rank.
    pub fn new<R: Rng>(base: &EncoderWeights, rank: usize, rng: &mut R) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("adapter rank must be at least 1".into()));
        }
        let layers = base
            .convs
            .iter()
            .map(|c| {
                let kl = c.patch_len();
                let bound = (3.0 / kl as f64).sqrt();
                LoraLayer {
                    down: Tensor::zeros(&[c.out_channels(), rank]),
                    up: Tensor::from_vec(&[rank, kl], (0..rank * kl).map(|_| rng.gen_range(-bound..bound)).collect())
                        .expect("shape"),
                }
            })
            .collect();
        Ok(Self {
            rank,
            scale: 1.0 / rank as f64,
            layers,
        })
    }

    fn check(&self, base: &EncoderWeights) -> Result<()> {
        let ok = self.layers.len() == base.convs.len()
            && self.layers.iter().zip(&base.convs).all(|(l, c)| {
                l.down.shape == [c.out_channels(), self.rank] && l.up.shape == [self.rank, c.patch_len()]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Config("adapter does not match the encoder".into()))
        }
    }
}

impl Params for LoraAdapter {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((join(prefix, &format!("conv{i}.down")), &l.down));
            out.push((join(prefix, &format!("conv{i}.up")), &l.up));
        }
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((join(prefix, &format!("conv{i}.down")), &mut l.down));
            out.push((join(prefix, &format!("conv{i}.up")), &mut l.up));
        }
    }
}

fn effective_weight(conv: &Conv2d, layer: Option<&LoraLayer>, rank: usize, scale: f64) -> Vec<f64> {
    let mut w = conv.weight.data.clone();
    if let Some(l) = layer {
        let (oc, kl) = (conv.out_channels(), conv.patch_len());
        let mut delta = vec![0.0; oc * kl];
        gemm(oc, rank, kl, &l.down.data, false, &l.up.data, false, &mut delta, 0.0);
        for (a, d) in w.iter_mut().zip(&delta) {
            *a += scale * d;
        }
    }
    w
}

/// Saved activations of [`encode_feat`].
#[derive(Clone, Debug)]
pub struct EncoderCache {
    weights: Vec<Vec<f64>>,
    convs: Vec<ConvCache>,
    pre_act: Vec<Feat>,
}

/// Encoder forward on a map whose sides are multiples of [`DOWNSAMPLE`].
pub fn encode_feat(x: &Feat, base: &EncoderWeights, adapter: Option<&LoraAdapter>) -> Result<(Feat, EncoderCache)> {
    if x.c != 3 {
        return Err(Error::UnsupportedFormat(format!("encoder input has {} channels", x.c)));
    }
    if x.h % DOWNSAMPLE != 0 || x.w % DOWNSAMPLE != 0 || x.h == 0 || x.w == 0 {
        return shape(format!("{}x{} is not a positive multiple of {DOWNSAMPLE}", x.h, x.w));
    }
    if let Some(a) = adapter {
        a.check(base)?;
    }
    let last = base.convs.len() - 1;
    let mut cur = x.clone();
    let mut cache = EncoderCache {
        weights: Vec::new(),
        convs: Vec::new(),
        pre_act: Vec::new(),
    };
    for (i, conv) in base.convs.iter().enumerate() {
        let w = match adapter {
            Some(a) => effective_weight(conv, Some(&a.layers[i]), a.rank, a.scale),
            None => conv.weight.data.clone(),
        };
        let (mut y, cc) = conv.forward_with(&w, &cur);
        cache.weights.push(w);
        cache.convs.push(cc);
        if i < last {
            cache.pre_act.push(y.clone());
            y.data.iter_mut().for_each(|v| *v = silu(*v));
        }
        cur = y;
    }
    Ok((cur, cache))
}

/// Backward through [`encode_feat`]. Accumulates adapter gradients into
/// `grad` when given and returns dL/dx when `need_dx`. Base weights get no
/// gradient.
pub fn encode_backward(
    base: &EncoderWeights,
    adapter: Option<&LoraAdapter>,
    cache: &EncoderCache,
    d_emb: &Feat,
    mut grad: Option<&mut LoraAdapter>,
    need_dx: bool,
) -> Option<Feat> {
    let mut dy = d_emb.clone();
    for i in (0..base.convs.len()).rev() {
        let conv = &base.convs[i];
        if i < cache.pre_act.len() {
            for (g, p) in dy.data.iter_mut().zip(&cache.pre_act[i].data) {
                *g *= silu_grad(*p);
            }
        }
        let wants_dw = adapter.is_some() && grad.is_some();
        let mut dw = if wants_dw { vec![0.0; conv.weight.len()] } else { Vec::new() };
        let need = i > 0 || need_dx;
        let dx = conv.backward_with(
            &cache.weights[i],
            &cache.convs[i],
            &dy,
            wants_dw.then_some(dw.as_mut_slice()),
            None,
            need,
        );
        if let (Some(a), Some(g)) = (adapter, grad.as_deref_mut()) {
            let (oc, kl, r) = (conv.out_channels(), conv.patch_len(), a.rank);
            let l = &a.layers[i];
            let gl = &mut g.layers[i];
            let mut dd = vec![0.0; oc * r];
            gemm(oc, kl, r, &dw, false, &l.up.data, true, &mut dd, 0.0);
            let mut du = vec![0.0; r * kl];
            gemm(r, oc, kl, &l.down.data, true, &dw, false, &mut du, 0.0);
            for (a_, d) in gl.down.data.iter_mut().zip(&dd) {
                *a_ += a.scale * d;
            }
            for (a_, d) in gl.up.data.iter_mut().zip(&du) {
                *a_ += a.scale * d;
            }
        }
        match dx {
            Some(d) => dy = d,
            None => return None,
        }
    }
    Some(dy)
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect-pads `img` up to the next multiple of `m` on each side (bottom
/// and right).
pub fn pad_reflect_to_multiple(img: &ImageTensor, m: usize) -> ImageTensor {
    let h = img.height.div_ceil(m) * m;
    let w = img.width.div_ceil(m) * m;
    if h == img.height && w == img.width {
        return img.clone();
    }
    ImageTensor::from_fn(h, w, img.channels, |y, x, c| {
        img.get(reflect(y as isize, img.height), reflect(x as isize, img.width), c)
    })
}

/// Condition embedding of `img`. Sides that are not multiples of 16 are
/// reflect-padded and the embedding is cropped to ⌈H/16⌉×⌈W/16⌉.
pub fn encode(img: &ImageTensor, base: &EncoderWeights, adapter: Option<&LoraAdapter>) -> Result<ConditionEmbedding> {
    let padded = pad_reflect_to_multiple(img, DOWNSAMPLE);
    let (emb, _) = encode_feat(&padded.to_feat(), base, adapter)?;
    let (h, w) = (img.height.div_ceil(DOWNSAMPLE), img.width.div_ceil(DOWNSAMPLE));
    if (h, w) == (emb.h, emb.w) {
        return ConditionEmbedding::new(emb);
    }
    let mut data = Vec::with_capacity(h * w * emb.c);
    for y in 0..h {
        let row = y * emb.w * emb.c;
        data.extend_from_slice(&emb.data[row..row + w * emb.c]);
    }
    ConditionEmbedding::new(Feat::from_vec(h, w, emb.c, data)?)
}

/// Mean squared difference of two embeddings.
pub fn rep_mse_loss(fx: &Feat, fy: &Feat) -> Result<f64> {
    if !fx.same_shape(fy) {
        return shape(format!(
            "embeddings {}x{}x{} vs {}x{}x{}",
            fx.h, fx.w, fx.c, fy.h, fy.w, fy.c
        ));
    }
    if fx.data.is_empty() {
        return shape("empty embeddings");
    }
    let s: f64 = fx.data.iter().zip(&fy.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / fx.data.len() as f64)
}

/// d rep_mse_loss / d fx.
pub fn rep_mse_grad(fx: &Feat, fy: &Feat) -> Feat {
    let n = fx.data.len() as f64;
    Feat {
        h: fx.h,
        w: fx.w,
        c: fx.c,
        data: fx.data.iter().zip(&fy.data).map(|(a, b)| 2.0 * (a - b) / n).collect(),
    }
}
