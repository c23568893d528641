//! Losses and the two-stage training loop: a pixel-loss stage, then a
//! fine-tuning stage adding the embedding-distance and adversarial terms.

mod disc;
mod losses;

pub use disc::{DiscCache, DiscriminatorWeights};
pub use losses::{
    adversarial_losses, d_loss_grads, g_loss_grad, l1_pixel_grad, l1_pixel_loss, perceptual_proxy,
    perceptual_proxy_grad, perceptual_proxy_loss,
};

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{apply_chain_to_size, resize_to, sample_degradation, ImageTensor, ResizeMethod};
use crate::nn::{reduce_ordered, Adam, AdamConfig, Feat, Params};
use crate::ree::{encode, EncoderWeights, LoraAdapter};
use crate::rng::substream;
use crate::srnet::{forward_train, net_backward, ConditionEmbedding, SrWeights};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Psnr,
    Gan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Side of the HR training patch.
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the embedding-distance term.
    pub lambda1: f64,
    /// Weight of the adversarial term.
    pub lambda2: f64,
    pub flip_prob: f64,
    /// Iterations of linear learning-rate warm-up.
    pub warmup: usize,
    /// Cosine-anneal the learning rate from `lr` towards zero.
    pub cosine_decay: bool,
    pub seed: u64,
    pub stage: Stage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            batch_size: 16,
            iterations: 2000,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            lambda1: 1.0,
            lambda2: 0.1,
            flip_prob: 0.5,
            warmup: 100,
            cosine_decay: true,
            seed: 0,
            stage: Stage::Psnr,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, scale: usize) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % (4 * scale) != 0 {
            return Err(Error::Config(format!(
                "patch size {} must be a positive multiple of {}",
                self.patch_size,
                4 * scale
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config("batch size and iterations must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimiser settings".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("loss weights must be non-negative, flip_prob in [0,1]".into()));
        }
        Ok(())
    }

    /// Learning rate at iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        let warm = if it < self.warmup {
            (it + 1) as f64 / self.warmup as f64
        } else {
            1.0
        };
        let decay = if self.cosine_decay {
            0.5 * (1.0 + (std::f64::consts::PI * it as f64 / self.iterations as f64).cos())
        } else {
            1.0
        };
        self.lr * warm * decay
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Frozen encoder plus an optional adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct Ree {
    pub base: EncoderWeights,
    pub adapter: Option<LoraAdapter>,
}

impl Ree {
    /// Condition for an LR image: encode its bicubic upsampling by `scale`.
    pub fn condition(&self, lr: &ImageTensor, scale: usize) -> Result<ConditionEmbedding> {
        let up = resize_to(lr, lr.height * scale, lr.width * scale, ResizeMethod::Bicubic)?.clamped();
        encode(&up, &self.base, self.adapter.as_ref())
    }
}

/// One synthesised training pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub hr: ImageTensor,
    pub lr: ImageTensor,
}

/// Sample `index` of a run: image choice, crop, flip and degradation all
/// come from the sub-stream of that index, so samples do not depend on the
/// order they are produced in.
pub fn synth_sample(dataset: &[ImageTensor], patch: usize, scale: usize, flip_prob: f64, seed: u64, index: u64) -> Result<Sample> {
    let mut rng = substream(seed, "train-sample", index);
    let img = &dataset[rng.gen_range(0..dataset.len())];
    let y = rng.gen_range(0..=img.height - patch);
    let x = rng.gen_range(0..=img.width - patch);
    let mut hr = img.crop(y, x, patch, patch)?;
    if rng.gen_bool(flip_prob) {
        hr = hr.flip_horizontal();
    }
    let spec = sample_degradation(&mut rng);
    let lr = apply_chain_to_size(&hr, &spec, patch / scale, patch / scale)?.clamped();
    Ok(Sample { hr, lr })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub total: f64,
    pub wall_seconds: f64,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("iteration,pixel,perceptual,adversarial_g,adversarial_d,total,wall_seconds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.3}\n",
            r.iteration, r.pixel, r.perceptual, r.adversarial_g, r.adversarial_d, r.total, r.wall_seconds
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub weights: SrWeights,
    pub discriminator: Option<DiscriminatorWeights>,
    pub log: Vec<LogRow>,
}

struct Forward {
    sample: Sample,
    sr: Feat,
    cache: crate::srnet::NetCache,
}

/// Runs one training stage from `model`. `ree` supplies the condition
/// (when the network uses one) and, for the fine-tuning stage, the frozen
/// base used by the embedding-distance loss.
pub fn train_stage(model: SrWeights, ree: &Ree, dataset: &[ImageTensor], cfg: &TrainConfig) -> Result<TrainOutput> {
    train_stage_with(model, None, ree, dataset, cfg, |_| {})
}

/// [`train_stage`] with an optional starting discriminator and a callback
/// receiving every log row.
pub fn train_stage_with(
    mut model: SrWeights,
    disc: Option<DiscriminatorWeights>,
    ree: &Ree,
    dataset: &[ImageTensor],
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutput> {
    let scale = model.config.scale;
    cfg.validate(scale)?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(i) = dataset.iter().position(|d| d.height < cfg.patch_size || d.width < cfg.patch_size) {
        return Err(Error::Data(format!("training image {i} is smaller than the {}px patch", cfg.patch_size)));
    }
    let gan = cfg.stage == Stage::Gan;
    let mut disc = match (gan, disc) {
        (true, Some(d)) => Some(d),
        (true, None) => Some(DiscriminatorWeights::init(&mut substream(cfg.seed, "disc-init", 0))),
        (false, _) => None,
    };
    let mut g_opt = Adam::new(cfg.adam());
    let mut d_opt = Adam::new(cfg.adam());
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.iterations);
    let bs = cfg.batch_size;
    for it in 0..cfg.iterations {
        let fwd: Vec<Forward> = (0..bs)
            .into_par_iter()
            .map(|b| {
                let sample = synth_sample(dataset, cfg.patch_size, scale, cfg.flip_prob, cfg.seed, (it * bs + b) as u64)?;
                let cond = if model.config.use_condition {
                    Some(ree.condition(&sample.lr, scale)?)
                } else {
                    None
                };
                let (sr, cache) = forward_train(&model, &sample.lr.to_feat(), cond.as_ref())?;
                Ok(Forward { sample, sr, cache })
            })
            .collect::<Result<_>>()?;

        // Discriminator first, on logits of this step's outputs; the
        // generator step below re-scores them with the updated weights.
        let mut d_loss = 0.0;
        if let Some(d) = disc.as_mut() {
            let parts: Vec<(f64, DiscriminatorWeights)> = fwd
                .par_iter()
                .map(|f| {
                    let (real, rc) = d.forward(&f.sample.hr.to_feat());
                    let (fake, fc) = d.forward(&f.sr);
                    let (_, dl) = adversarial_losses(&real.data, &fake.data);
                    let (gr, gf) = d_loss_grads(&real.data, &fake.data);
                    let mut g = d.clone();
                    g.zero_();
                    d.backward(&rc, &Feat { data: gr, ..real }, Some(&mut g), false);
                    d.backward(&fc, &Feat { data: gf, ..fake }, Some(&mut g), false);
                    (dl, g)
                })
                .collect();
            let mut grad = reduce_ordered(&parts.iter().map(|p| p.1.clone()).collect::<Vec<_>>()).expect("batch");
            grad.scale_(1.0 / bs as f64);
            d_loss = parts.iter().map(|p| p.0).sum::<f64>() / bs as f64;
            d_opt.config.lr = cfg.lr_at(it);
            d_opt.step(d, &grad);
        }

        let parts: Vec<([f64; 3], SrWeights)> = fwd
            .par_iter()
            .map(|f| {
                let hr = f.sample.hr.to_feat();
                let pixel = l1_pixel_loss(&f.sr, &hr)?;
                let mut dsr = l1_pixel_grad(&f.sr, &hr)?;
                let (mut perc, mut adv) = (0.0, 0.0);
                if let Some(d) = disc.as_ref() {
                    let (p, pg) = perceptual_proxy_grad(&f.sr, &hr, &ree.base)?;
                    perc = p;
                    let (fake, fc) = d.forward(&f.sr);
                    adv = adversarial_losses(&[], &fake.data).0;
                    let dfake = Feat {
                        data: g_loss_grad(&fake.data),
                        ..fake
                    };
                    let ag = d.backward(&fc, &dfake, None, true).expect("input gradient");
                    for ((a, p), q) in dsr.data.iter_mut().zip(&pg.data).zip(&ag.data) {
                        *a += cfg.lambda1 * p + cfg.lambda2 * q;
                    }
                }
                Ok(([pixel, perc, adv], net_backward(&model, &f.cache, &dsr)?))
            })
            .collect::<Result<_>>()?;
        let mut sums = [0.0; 3];
        for (l, _) in &parts {
            for k in 0..3 {
                sums[k] += l[k] / bs as f64;
            }
        }
        let total = sums[0] + cfg.lambda1 * sums[1] + cfg.lambda2 * sums[2];
        if !total.is_finite() || !d_loss.is_finite() {
            return Err(Error::NanLoss { iteration: it });
        }
        let mut grad = reduce_ordered(&parts.into_iter().map(|p| p.1).collect::<Vec<_>>()).expect("batch");
        grad.scale_(1.0 / bs as f64);
        g_opt.config.lr = cfg.lr_at(it);
        g_opt.step(&mut model, &grad);
        let row = LogRow {
            iteration: it,
            pixel: sums[0],
            perceptual: sums[1],
            adversarial_g: sums[2],
            adversarial_d: d_loss,
            total,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        log.push(row);
    }
    Ok(TrainOutput {
        weights: model,
        discriminator: disc,
        log,
    })
}
