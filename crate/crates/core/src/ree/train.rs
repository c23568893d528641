use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    encode_backward, encode_feat, rep_mse_grad, rep_mse_loss, EncoderConfig, EncoderWeights, LoraAdapter,
};
use crate::error::{Error, Result};
use crate::imgproc::{apply_chain_to_size, resize_to, DegradationSpec, ImageTensor, ResizeMethod};
use crate::nn::{join, Adam, AdamConfig, Conv2d, Feat, Params, Tensor};
use crate::rng::substream;
use crate::srnet::{pixel_shuffle, pixel_unshuffle};

/// Fewest clean crops the autoencoder pretraining accepts.
pub const MIN_PRETRAIN_CROPS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub crop_size: usize,
    pub crops_per_image: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            crop_size: 64,
            crops_per_image: 4,
            epochs: 8,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub rank: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            iterations: 300,
            batch_size: 8,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// `per_image` random square crops from each image, in image order.
pub fn random_crops(images: &[ImageTensor], size: usize, per_image: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(images.len() * per_image);
    for (i, img) in images.iter().enumerate() {
        if img.height < size || img.width < size {
            return Err(Error::Data(format!(
                "image {i} is {}x{}, smaller than the {size}px crop",
                img.height, img.width
            )));
        }
        let mut rng = substream(seed, "crop", i as u64);
        for _ in 0..per_image {
            let y = rng.gen_range(0..=img.height - size);
            let x = rng.gen_range(0..=img.width - size);
            out.push(img.crop(y, x, size, size)?);
        }
    }
    Ok(out)
}

/// (clean, degraded) pairs: each crop goes through one spec drawn from
/// `specs`, down to 1/`scale`, then back up with bicubic so both sides
/// share a shape.
pub fn degraded_pairs(
    crops: &[ImageTensor],
    specs: &[DegradationSpec],
    scale: usize,
    seed: u64,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    if specs.is_empty() {
        return Err(Error::Config(
            "no degradations selected for fine-tuning; lower tau2 so the severe set is non-empty".into(),
        ));
    }
    if scale == 0 {
        return Err(Error::Config("scale must be positive".into()));
    }
    crops
        .par_iter()
        .enumerate()
        .map(|(i, crop)| {
            let mut rng = substream(seed, "pair-spec", i as u64);
            let spec = &specs[rng.gen_range(0..specs.len())];
            let lr = apply_chain_to_size(crop, spec, crop.height / scale, crop.width / scale)?;
            let up = resize_to(&lr, crop.height, crop.width, ResizeMethod::Bicubic)?.clamped();
            Ok((crop.clone(), up))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
struct AutoEncoder {
    enc: EncoderWeights,
    dec: Conv2d,
}

impl Params for AutoEncoder {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.enc.named(&join(prefix, "enc"), out);
        self.dec.named(&join(prefix, "dec"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.enc.named_mut(&join(prefix, "enc"), out);
        self.dec.named_mut(&join(prefix, "dec"), out);
    }
}

impl AutoEncoder {
    /// L1 reconstruction loss of one crop and its gradient.
    fn loss_grad(&self, x: &Feat) -> Result<(f64, AutoEncoder)> {
        let (emb, ecache) = encode_feat(x, &self.enc, None)?;
        let (code, dcache) = self.dec.forward(&emb);
        let rec = pixel_shuffle(&code, super::DOWNSAMPLE)?;
        let n = rec.data.len() as f64;
        let mut loss = 0.0;
        let mut d = Feat::zeros(rec.h, rec.w, rec.c);
        for ((g, r), t) in d.data.iter_mut().zip(&rec.data).zip(&x.data) {
            loss += (r - t).abs();
            *g = (r - t).signum() / n;
        }
        let mut grad = self.clone();
        grad.zero_();
        let demb = self
            .dec
            .backward(&dcache, &pixel_unshuffle(&d, super::DOWNSAMPLE)?, Some(&mut grad.dec), true)
            .ok_or_else(|| Error::Internal("decoder dx".into()))?;
        encode_backward_base(&self.enc, &ecache, &demb, &mut grad.enc);
        Ok((loss / n, grad))
    }
}

/// Base-weight gradients, used only during pretraining.
fn encode_backward_base(base: &EncoderWeights, cache: &super::EncoderCache, d_emb: &Feat, grad: &mut EncoderWeights) {
    let mut dy = d_emb.clone();
    for i in (0..base.convs.len()).rev() {
        if i < cache.pre_act.len() {
            for (g, p) in dy.data.iter_mut().zip(&cache.pre_act[i].data) {
                *g *= crate::nn::silu_grad(*p);
            }
        }
        match base.convs[i].backward(&cache.convs[i], &dy, Some(&mut grad.convs[i]), i > 0) {
            Some(d) => dy = d,
            None => break,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub weights: EncoderWeights,
    /// Mean reconstruction loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the encoder with a throwaway 1×1-conv + pixel-shuffle decoder as
/// an L1 autoencoder on clean crops. The decoder is dropped afterwards.
pub fn pretrain_base(clean: &[ImageTensor], cfg: &PretrainConfig) -> Result<PretrainResult> {
    if cfg.crop_size == 0 || cfg.crop_size % super::DOWNSAMPLE != 0 {
        return Err(Error::Config(format!("crop size {} is not a multiple of 16", cfg.crop_size)));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config("pretraining needs positive batch size, epochs and lr".into()));
    }
    let crops = random_crops(clean, cfg.crop_size, cfg.crops_per_image, cfg.seed)?;
    if crops.len() < MIN_PRETRAIN_CROPS {
        return Err(Error::Data(format!(
            "{} clean crops, pretraining needs at least {MIN_PRETRAIN_CROPS}",
            crops.len()
        )));
    }
    let crops: Vec<Feat> = crops.iter().map(|c| c.to_feat()).collect();
    let mut rng = substream(cfg.seed, "pretrain-init", 0);
    let enc = EncoderWeights::init(&cfg.encoder, &mut rng);
    let stride = super::DOWNSAMPLE * super::DOWNSAMPLE;
    let mut dec = Conv2d::same(cfg.encoder.embed_dim, 3 * stride, 1);
    dec.init_(0.5, &mut rng);
    dec.bias.fill(0.5);
    let mut model = AutoEncoder { enc, dec };
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..crops.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, "pretrain-order", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let parts: Vec<(f64, AutoEncoder)> = batch
                .par_iter()
                .map(|&i| model.loss_grad(&crops[i]))
                .collect::<Result<_>>()?;
            let mut grad = parts[0].1.clone();
            for (_, g) in &parts[1..] {
                grad.accumulate(g);
            }
            grad.scale_(1.0 / batch.len() as f64);
            total += parts.iter().map(|(l, _)| l).sum::<f64>();
            adam.step(&mut model, &grad);
        }
        let mean = total / crops.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NanLoss { iteration: epoch });
        }
        log::debug!("pretrain epoch {epoch}: l1 {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(PretrainResult {
        weights: model.enc,
        epoch_losses,
    })
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub adapter: LoraAdapter,
    /// Batch loss at each iteration.
    pub losses: Vec<f64>,
}

/// Fits a LoRA adapter so that encode(degraded, base + adapter) matches
/// encode(clean, base). Only adapter parameters change.
pub fn finetune_ree(
    pairs: &[(ImageTensor, ImageTensor)],
    base: &EncoderWeights,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config("fine-tuning needs a positive batch size and lr".into()));
    }
    let targets: Vec<Feat> = pairs
        .par_iter()
        .map(|(clean, _)| Ok(encode_feat(&clean.to_feat(), base, None)?.0))
        .collect::<Result<_>>()?;
    let inputs: Vec<Feat> = pairs.iter().map(|(_, d)| d.to_feat()).collect();
    let mut adapter = LoraAdapter::new(base, cfg.rank, &mut substream(cfg.seed, "lora-init", 0))?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rng = substream(cfg.seed, "lora-batch", it as u64);
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..pairs.len())).collect();
        let parts: Vec<(f64, LoraAdapter)> = batch
            .par_iter()
            .map(|&i| {
                let (emb, cache) = encode_feat(&inputs[i], base, Some(&adapter))?;
                let loss = rep_mse_loss(&emb, &targets[i])?;
                let mut g = adapter.clone();
                g.zero_();
                encode_backward(base, Some(&adapter), &cache, &rep_mse_grad(&emb, &targets[i]), Some(&mut g), false);
                Ok((loss, g))
            })
            .collect::<Result<_>>()?;
        let mut grad = parts[0].1.clone();
        for (_, g) in &parts[1..] {
            grad.accumulate(g);
        }
        grad.scale_(1.0 / batch.len() as f64);
        let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NanLoss { iteration: it });
        }
        losses.push(loss);
        adam.step(&mut adapter, &grad);
    }
    Ok(FinetuneResult { adapter, losses })
}

/// Mean embedding MSE between clean and degraded sides of `pairs`.
pub fn pair_mse(pairs: &[(ImageTensor, ImageTensor)], base: &EncoderWeights, adapter: Option<&LoraAdapter>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs".into()));
    }
    let parts: Vec<f64> = pairs
        .par_iter()
        .map(|(c, d)| {
            let t = encode_feat(&c.to_feat(), base, None)?.0;
            let e = encode_feat(&d.to_feat(), base, adapter)?.0;
            rep_mse_loss(&e, &t)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / parts.len() as f64)
}
