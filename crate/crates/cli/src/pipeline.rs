//! Staged end-to-end run. Each stage owns a fixed set of artifacts under
//! the output directory; a stage is skipped when all of them exist and no
//! earlier stage had to run.

use std::fmt;
use std::path::{Path, PathBuf};

use dacesr::error::{Error, Result};
use dacesr::evalkit::{benchmark_images, level_specs, write_report, Bicubic, EvalReport, SrModel, Upscaler};
use dacesr::fixtures::fixture_corpus;
use dacesr::imgproc::io::{list_pngs, read_png};
use dacesr::imgproc::{sample_degradation, DegradationSpec, ImageTensor};
use dacesr::nn::checkpoint;
use dacesr::ree::{
    degraded_pairs, finetune_ree, pretrain_base, random_crops, EncoderConfig, EncoderWeights, LoraAdapter,
};
use dacesr::rng::{derive, substream};
use dacesr::srnet::{NetworkConfig, SrWeights};
use dacesr::tagging::{classify_four, select_by_threshold, severity_profile, Selection, SeverityClasses, SimilarityReport, SurrogateTagger};
use dacesr::training::{log_to_csv, train_stage, train_stage_with, DiscriminatorWeights, Ree};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::ProjectConfig;

pub const SPECS: &str = "specs.jsonl";
pub const REPORT: &str = "report.jsonl";
pub const CLASSES: &str = "classes.json";
pub const SELECTION: &str = "selection.json";
pub const REE_DIR: &str = "ree";
pub const SR_DIR: &str = "sr";
pub const EVAL_DIR: &str = "eval";
/// Training logs carry wall-clock time and are not reproducible byte for
/// byte; everything else under the output directory is.
pub const LOG_DIR: &str = "logs";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    Score,
    Select,
    TrainRee,
    TrainSrPsnr,
    TrainSrGan,
    Eval,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Score => "score",
            StageKind::Select => "select",
            StageKind::TrainRee => "train-ree",
            StageKind::TrainSrPsnr => "train-sr-psnr",
            StageKind::TrainSrGan => "train-sr-gan",
            StageKind::Eval => "eval",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn ckpt(dir: &Path, stem: &str) -> [PathBuf; 2] {
    let (m, b) = checkpoint::paths(dir, stem);
    [m, b]
}

fn gan_enabled(cfg: &ProjectConfig) -> bool {
    cfg.train_gan.iterations > 0
}

/// Artifacts a stage must leave behind.
pub fn artifacts(kind: StageKind, cfg: &ProjectConfig) -> Vec<PathBuf> {
    let out = &cfg.out_dir;
    let ree = out.join(REE_DIR);
    let sr = out.join(SR_DIR);
    let ev = out.join(EVAL_DIR);
    match kind {
        StageKind::Score => vec![out.join(SPECS), out.join(REPORT), out.join(CLASSES)],
        StageKind::Select => vec![out.join(SELECTION)],
        StageKind::TrainRee => [ckpt(&ree, "base"), ckpt(&ree, "adapter")]
            .concat()
            .into_iter()
            .chain([ree.join("meta.json")])
            .collect(),
        StageKind::TrainSrPsnr => [ckpt(&sr, "psnr").to_vec(), vec![sr.join("network.json")]].concat(),
        StageKind::TrainSrGan => [ckpt(&sr, "gan"), ckpt(&sr, "disc")].concat(),
        StageKind::Eval => {
            let mut names = vec!["bicubic", "psnr"];
            if gan_enabled(cfg) {
                names.push("gan");
            }
            names
                .iter()
                .flat_map(|n| [ev.join(format!("{n}.json")), ev.join(format!("{n}.csv"))])
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanEntry {
    pub stage: StageKind,
    pub run: bool,
    pub artifacts: Vec<PathBuf>,
}

/// Stage order with the run/skip decision for each.
pub fn plan(cfg: &ProjectConfig) -> Vec<PlanEntry> {
    let mut kinds = vec![StageKind::Score, StageKind::Select, StageKind::TrainRee, StageKind::TrainSrPsnr];
    if gan_enabled(cfg) {
        kinds.push(StageKind::TrainSrGan);
    }
    kinds.push(StageKind::Eval);
    let mut dirty = false;
    kinds
        .into_iter()
        .map(|stage| {
            let artifacts = artifacts(stage, cfg);
            dirty |= !artifacts.iter().all(|p| p.exists());
            PlanEntry { stage, run: dirty, artifacts }
        })
        .collect()
}

pub fn format_plan(plan: &[PlanEntry]) -> String {
    let mut s = String::new();
    for e in plan {
        let first = e.artifacts.first().map(|p| p.display().to_string()).unwrap_or_default();
        s += &format!("{:<14} {:<4} {}\n", e.stage.name(), if e.run { "run" } else { "skip" }, first);
    }
    s
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// HR images: the PNGs of `data_dir` in name order, or the built-in corpus.
pub fn load_dataset(cfg: &ProjectConfig) -> Result<Vec<ImageTensor>> {
    match &cfg.data_dir {
        Some(dir) => list_pngs(dir)?.iter().map(|p| read_png(p)).collect(),
        None => Ok(fixture_corpus(cfg.corpus.seed, cfg.corpus.count, cfg.corpus.size)),
    }
}

/// `n` chains drawn from named sub-streams of `seed`.
pub fn sample_specs(seed: u64, n: usize) -> Vec<DegradationSpec> {
    (0..n).map(|i| sample_degradation(&mut substream(seed, "spec", i as u64))).collect()
}

pub fn specs_to_jsonl(specs: &[DegradationSpec]) -> Result<String> {
    let mut s = String::new();
    for spec in specs {
        s += &spec.to_json()?;
        s.push('\n');
    }
    Ok(s)
}

pub fn specs_from_jsonl(text: &str) -> Result<Vec<DegradationSpec>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(DegradationSpec::from_json).collect()
}

pub fn read_specs(path: &Path) -> Result<Vec<DegradationSpec>> {
    specs_from_jsonl(&std::fs::read_to_string(path)?)
}

pub fn read_report(path: &Path) -> Result<SimilarityReport> {
    SimilarityReport::from_jsonl(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ReeMeta {
    encoder: EncoderConfig,
    rank: usize,
}

pub fn save_ree(ree: &Ree, dir: &Path) -> Result<()> {
    checkpoint::save(&ree.base, dir, "base")?;
    let adapter = ree
        .adapter
        .as_ref()
        .ok_or_else(|| Error::Internal("encoder has no adapter to save".into()))?;
    checkpoint::save(adapter, dir, "adapter")?;
    let meta = ReeMeta {
        encoder: EncoderConfig { embed_dim: ree.base.embed_dim() },
        rank: adapter.rank,
    };
    write(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)
}

pub fn load_ree(dir: &Path) -> Result<Ree> {
    let meta: ReeMeta = read_json(&dir.join("meta.json"))?;
    let mut base = EncoderWeights::zeros(&meta.encoder);
    checkpoint::load_into(&mut base, dir, "base")?;
    let mut adapter = LoraAdapter::new(&base, meta.rank, &mut substream(0, "placeholder", 0))?;
    checkpoint::load_into(&mut adapter, dir, "adapter")?;
    Ok(Ree { base, adapter: Some(adapter) })
}

pub fn save_sr(w: &SrWeights, dir: &Path, stem: &str) -> Result<()> {
    checkpoint::save(w, dir, stem)?;
    write(&dir.join("network.json"), serde_json::to_string_pretty(&w.config)?)
}

pub fn load_sr(dir: &Path, stem: &str) -> Result<SrWeights> {
    let cfg: NetworkConfig = read_json(&dir.join("network.json"))?;
    let mut w = SrWeights::zeros(&cfg)?;
    checkpoint::load_into(&mut w, dir, stem)?;
    Ok(w)
}

fn train_split(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<(usize, usize)> {
    if cfg.n_train >= data.len() {
        return Err(Error::Data(format!(
            "n_train {} leaves no held-out images out of {}",
            cfg.n_train,
            data.len()
        )));
    }
    Ok((cfg.n_train, data.len()))
}

fn run_score(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<()> {
    let out = &cfg.out_dir;
    let specs = sample_specs(derive(cfg.seed, "specs", 0), cfg.scoring.n_specs);
    let n = cfg.scoring.n_images.min(cfg.n_train).min(data.len());
    let report = severity_profile(&data[..n], &specs, &SurrogateTagger::default())?;
    let classes = classify_four(&report)?;
    write(&out.join(SPECS), specs_to_jsonl(&specs)?)?;
    write(&out.join(REPORT), report.to_jsonl()?)?;
    write(&out.join(CLASSES), serde_json::to_string_pretty(&classes)?)
}

fn run_select(cfg: &ProjectConfig) -> Result<()> {
    let report = read_report(&cfg.out_dir.join(REPORT))?;
    let sel = select_by_threshold(&report, cfg.scoring.tau1, cfg.scoring.tau2)?;
    info!("selected {} mild and {} severe chains", sel.mild.len(), sel.severe.len());
    write(&cfg.out_dir.join(SELECTION), serde_json::to_string_pretty(&sel)?)
}

fn run_train_ree(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<()> {
    let out = &cfg.out_dir;
    let train = &data[..train_split(cfg, data)?.0];
    let specs = read_specs(&out.join(SPECS))?;
    let sel: Selection = read_json(&out.join(SELECTION))?;
    let severe: Vec<DegradationSpec> = sel.severe.iter().map(|&i| specs[i].clone()).collect();
    let pre = pretrain_base(train, &cfg.ree.pretrain)?;
    let crops = random_crops(
        train,
        cfg.ree.pretrain.crop_size,
        cfg.ree.pair_crops_per_image,
        derive(cfg.seed, "ree-crops", 0),
    )?;
    let pairs = degraded_pairs(&crops, &severe, cfg.network.scale, derive(cfg.seed, "ree-pairs", 0))?;
    let ft = finetune_ree(&pairs, &pre.weights, &cfg.ree.finetune)?;
    save_ree(
        &Ree {
            base: pre.weights,
            adapter: Some(ft.adapter),
        },
        &out.join(REE_DIR),
    )?;
    let csv = |vals: &[f64], col: &str| {
        let mut s = format!("step,{col}\n");
        for (i, v) in vals.iter().enumerate() {
            s += &format!("{i},{v}\n");
        }
        s
    };
    write(&out.join(REE_DIR).join("pretrain_loss.csv"), csv(&pre.epoch_losses, "l1"))?;
    write(&out.join(REE_DIR).join("finetune_loss.csv"), csv(&ft.losses, "mse"))
}

fn run_train_psnr(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<()> {
    let out = &cfg.out_dir;
    let train = &data[..train_split(cfg, data)?.0];
    let ree = load_ree(&out.join(REE_DIR))?;
    let w = SrWeights::init(&cfg.network, &mut substream(cfg.seed, "sr-init", 0))?;
    let res = train_stage(w, &ree, train, &cfg.train_psnr)?;
    save_sr(&res.weights, &out.join(SR_DIR), "psnr")?;
    write(&out.join(LOG_DIR).join("sr_psnr.csv"), log_to_csv(&res.log))
}

fn run_train_gan(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<()> {
    let out = &cfg.out_dir;
    let train = &data[..train_split(cfg, data)?.0];
    let ree = load_ree(&out.join(REE_DIR))?;
    let w = load_sr(&out.join(SR_DIR), "psnr")?;
    let res = train_stage_with(w, None, &ree, train, &cfg.train_gan, |_| {})?;
    checkpoint::save(&res.weights, &out.join(SR_DIR), "gan")?;
    let disc = res
        .discriminator
        .ok_or_else(|| Error::Internal("adversarial stage returned no discriminator".into()))?;
    checkpoint::save(&disc, &out.join(SR_DIR), "disc")?;
    write(&out.join(LOG_DIR).join("sr_gan.csv"), log_to_csv(&res.log))
}

/// Loads the discriminator saved by the adversarial stage.
pub fn load_disc(dir: &Path) -> Result<DiscriminatorWeights> {
    let mut d = DiscriminatorWeights::init(&mut substream(0, "placeholder", 0));
    checkpoint::load_into(&mut d, dir, "disc")?;
    Ok(d)
}

/// Scores bicubic and every trained checkpoint on the held-out split.
pub fn evaluate(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<Vec<EvalReport>> {
    let out = &cfg.out_dir;
    let (n_train, _) = train_split(cfg, data)?;
    let held = &data[n_train..];
    let specs = read_specs(&out.join(SPECS))?;
    let classes: SeverityClasses = read_json(&out.join(CLASSES))?;
    let levels = level_specs(&classes, &specs, &cfg.eval.levels, cfg.eval.per_level)?;
    let ree = load_ree(&out.join(REE_DIR))?;
    let sr_dir = out.join(SR_DIR);
    let mut models: Vec<Box<dyn Upscaler>> = vec![Box::new(Bicubic { scale: cfg.network.scale })];
    let mut stems = vec!["psnr"];
    if gan_enabled(cfg) {
        stems.push("gan");
    }
    for stem in stems {
        let mut weights = load_sr(&sr_dir, "psnr")?;
        if stem != "psnr" {
            checkpoint::load_into(&mut weights, &sr_dir, stem)?;
        }
        models.push(Box::new(SrModel {
            name: stem.into(),
            weights,
            ree: Some(ree.clone()),
        }));
    }
    models
        .iter()
        .map(|m| benchmark_images(m.as_ref(), &ree.base, held, &levels))
        .collect()
}

fn run_eval(cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<()> {
    for r in evaluate(cfg, data)? {
        write_report(&r, &cfg.out_dir.join(EVAL_DIR), &r.method)?;
    }
    Ok(())
}

/// Runs one stage unconditionally; failures name the stage and its first
/// artifact.
pub fn run_stage(kind: StageKind, cfg: &ProjectConfig, data: &[ImageTensor]) -> Result<()> {
    info!("stage {kind}");
    let res = match kind {
        StageKind::Score => run_score(cfg, data),
        StageKind::Select => run_select(cfg),
        StageKind::TrainRee => run_train_ree(cfg, data),
        StageKind::TrainSrPsnr => run_train_psnr(cfg, data),
        StageKind::TrainSrGan => run_train_gan(cfg, data),
        StageKind::Eval => run_eval(cfg, data),
    };
    res.map_err(|e| Error::Stage {
        stage: kind.name().into(),
        artifact: artifacts(kind, cfg)
            .first()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
        source: Box::new(e),
    })
}

/// Executes the plan. With `dry_run` nothing is read or written.
pub fn run_pipeline(cfg: &ProjectConfig, dry_run: bool) -> Result<Vec<PlanEntry>> {
    cfg.validate()?;
    let plan = plan(cfg);
    if dry_run {
        return Ok(plan);
    }
    let mut data = None;
    for e in plan.iter().filter(|e| e.run) {
        if data.is_none() {
            data = Some(load_dataset(cfg)?);
        }
        run_stage(e.stage, cfg, data.as_deref().unwrap_or_default())?;
    }
    Ok(plan)
}
