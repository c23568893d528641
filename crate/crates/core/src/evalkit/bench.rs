use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{param, Error, Result};
use crate::imgproc::io::{quantize_8bit, read_png};
use crate::imgproc::{apply_chain_to_size, resize_to, DegradationSpec, ImageTensor, ResizeMethod};
use crate::ree::EncoderWeights;
use crate::srnet::{net_forward, SrWeights};
use crate::tagging::SeverityClasses;
use crate::training::{perceptual_proxy, Ree};

use super::psnr_y;

pub const REPORT_VERSION: u32 = 1;

/// Degradation level of an evaluation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    I,
    II,
    III,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::I, Level::II, Level::III];

    /// 0-based severity classes feeding this level.
    pub fn classes(self) -> &'static [usize] {
        match self {
            Level::I => &[0],
            Level::II => &[1, 2],
            Level::III => &[3],
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Level::I => "I",
            Level::II => "II",
            Level::III => "III",
        };
        write!(f, "Level-{s}")
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches("Level-") {
            "I" | "1" => Ok(Level::I),
            "II" | "2" => Ok(Level::II),
            "III" | "3" => Ok(Level::III),
            other => param(format!("unknown level `{other}`")),
        }
    }
}

/// Parses a comma separated list such as `I,II,III`.
pub fn parse_levels(s: &str) -> Result<Vec<Level>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// A level and the fixed degradation chains that realise it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSpecs {
    pub level: Level,
    pub specs: Vec<DegradationSpec>,
}

/// Builds each requested level from the severity classes. `specs[i]` must be
/// the chain scored as spec id `i`. At most `per_level` chains are kept,
/// taken at an even stride through the class members in id order.
pub fn level_specs(
    classes: &SeverityClasses,
    specs: &[DegradationSpec],
    levels: &[Level],
    per_level: usize,
) -> Result<Vec<LevelSpecs>> {
    if per_level == 0 {
        return param("per_level must be positive");
    }
    levels
        .iter()
        .map(|&level| {
            let mut ids: Vec<usize> = level.classes().iter().flat_map(|&c| classes.classes[c].iter().copied()).collect();
            ids.sort_unstable();
            if ids.is_empty() {
                return param(format!("{level} has no specs"));
            }
            let n = per_level.min(ids.len());
            let picked = (0..n)
                .map(|k| {
                    let id = ids[k * ids.len() / n];
                    specs
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::Param(format!("spec id {id} out of range ({})", specs.len())))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LevelSpecs { level, specs: picked })
        })
        .collect()
}

/// Anything that maps an LR image to an HR estimate.
pub trait Upscaler: Sync {
    fn name(&self) -> String;
    fn scale(&self) -> usize;
    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor>;
}

/// Bicubic interpolation, the reference baseline.
#[derive(Clone, Copy, Debug)]
pub struct Bicubic {
    pub scale: usize,
}

impl Upscaler for Bicubic {
    fn name(&self) -> String {
        "bicubic".into()
    }

    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        Ok(resize_to(lr, lr.height * self.scale, lr.width * self.scale, ResizeMethod::Bicubic)?.clamped())
    }
}

/// The SR network, conditioned through `ree` when its config asks for it.
#[derive(Clone, Debug)]
pub struct SrModel {
    pub name: String,
    pub weights: SrWeights,
    pub ree: Option<Ree>,
}

impl Upscaler for SrModel {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn scale(&self) -> usize {
        self.weights.config.scale
    }

    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        let cond = match (&self.ree, self.weights.config.use_condition) {
            (Some(ree), true) => Some(ree.condition(lr, self.scale())?),
            (None, true) => return Err(Error::Config(format!("model `{}` needs an encoder", self.name))),
            _ => None,
        };
        net_forward(lr, cond.as_ref(), &self.weights)
    }
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad dB value `{t}`"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    /// `"inf"` in JSON when every image was reproduced exactly.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_y_mean: f64,
    pub proxy_mean: f64,
    pub n_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub method: String,
    pub rows: Vec<EvalRow>,
    /// Inputs that could not be read; the run continues without them.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.version != REPORT_VERSION {
            return Err(Error::UnsupportedFormat(format!("report version {}", r.version)));
        }
        Ok(r)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,name,psnr_y_mean,proxy_mean,n_images\n");
        for r in &self.rows {
            out += &format!("{},{},{},{},{}\n", self.method, r.name, r.psnr_y_mean, r.proxy_mean, r.n_images);
        }
        out
    }
}

/// HR crop with sides divisible by `scale`, and its degraded LR. The LR goes
/// through 8-bit quantisation like a stored PNG would.
pub fn make_pair(hr: &ImageTensor, spec: &DegradationSpec, scale: usize) -> Result<(ImageTensor, ImageTensor)> {
    let (h, w) = (hr.height / scale * scale, hr.width / scale * scale);
    if h == 0 || w == 0 {
        return param(format!("image {}x{} smaller than scale {scale}", hr.height, hr.width));
    }
    let hr = hr.crop(0, 0, h, w)?;
    let lr = quantize_8bit(&apply_chain_to_size(&hr, spec, h / scale, w / scale)?);
    Ok((hr, lr))
}

/// Scores `model` on every level. Image `i` of a level is degraded with that
/// level's chain `i mod len`. Scores are summed in image order.
pub fn benchmark_images(
    model: &dyn Upscaler,
    proxy: &EncoderWeights,
    images: &[ImageTensor],
    levels: &[LevelSpecs],
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Data("no evaluation images".into()));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for ls in levels {
        if ls.specs.is_empty() {
            return param(format!("{} has no specs", ls.level));
        }
        let scores = images
            .par_iter()
            .enumerate()
            .map(|(i, img)| -> Result<(f64, f64)> {
                let (hr, lr) = make_pair(img, &ls.specs[i % ls.specs.len()], model.scale())?;
                let sr = model.upscale(&lr)?;
                Ok((psnr_y(&sr, &hr)?, perceptual_proxy(&sr, &hr, proxy)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = scores.len() as f64;
        rows.push(EvalRow {
            name: ls.level.to_string(),
            psnr_y_mean: scores.iter().map(|s| s.0).sum::<f64>() / n,
            proxy_mean: scores.iter().map(|s| s.1).sum::<f64>() / n,
            n_images: scores.len(),
        });
    }
    Ok(EvalReport {
        version: REPORT_VERSION,
        method: model.name(),
        rows,
        skipped: vec![],
    })
}

/// [`benchmark_images`] over PNG files. Missing or unreadable files are
/// logged and listed in `skipped`; it is an error only if none load.
pub fn benchmark(
    model: &dyn Upscaler,
    proxy: &EncoderWeights,
    files: &[PathBuf],
    levels: &[LevelSpecs],
) -> Result<EvalReport> {
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for f in files {
        match read_png(f) {
            Ok(img) => images.push(img),
            Err(e) => {
                warn!("skipping {}: {e}", f.display());
                skipped.push(f.display().to_string());
            }
        }
    }
    let mut report = benchmark_images(model, proxy, &images, levels)?;
    report.skipped = skipped;
    Ok(report)
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.json")), report.to_json()?)?;
    std::fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
    Ok(())
}
