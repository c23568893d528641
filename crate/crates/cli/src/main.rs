use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dacesr::error::{Error, Result};
use dacesr::evalkit::{benchmark, level_specs, parse_levels, write_report, Bicubic, SrModel, Upscaler};
use dacesr::gradsuite::run_suite;
use dacesr::imgproc::io::{list_pngs, read_png, write_png};
use dacesr::imgproc::{apply_chain, DegradationSpec};
use dacesr::rng::derive;
use dacesr::tagging::{classify_four, select_by_threshold, severity_profile, SeverityClasses, SurrogateTagger};
use dacesr_cli::pipeline::{self, StageKind};
use dacesr_cli::ProjectConfig;
use log::{error, info};

#[derive(Parser)]
#[command(name = "dacesr", version, about = "Degradation-aware super-resolution toolkit")]
struct Cli {
    /// Project configuration (JSON). Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaggerKind {
    Surrogate,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Psnr,
    Gan,
}

#[derive(Subcommand)]
enum Cmd {
    /// Apply degradation chains to a directory of PNGs.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        /// Replay a saved chain.
        #[arg(long, conflicts_with = "sample")]
        spec: Option<PathBuf>,
        /// Sample this many chains from the seed.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Tag-agreement severity of each chain, plus the four-way classes.
    Score {
        /// Clean images (default: the configured data set).
        #[arg(long)]
        hr: Option<PathBuf>,
        /// Chains as JSON lines (default: sample `scoring.n_specs`).
        #[arg(long)]
        specs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "surrogate")]
        tagger: TaggerKind,
    },
    /// Split a severity report into mild and severe chains.
    Select {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        tau1: Option<f64>,
        #[arg(long)]
        tau2: Option<f64>,
    },
    /// Pre-train the encoder and fit its adapter on severe pairs.
    TrainRee {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        tau1: Option<f64>,
        #[arg(long)]
        tau2: Option<f64>,
    },
    /// Train the SR network (pixel stage, or adversarial fine-tuning).
    TrainSr {
        #[arg(long, value_enum, default_value = "psnr")]
        stage: StageArg,
    },
    /// Upscale one PNG.
    Infer {
        /// Directory holding `network.json` and the checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "psnr")]
        stem: String,
        #[arg(long)]
        ree: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Benchmark a checkpoint and bicubic on held-out PNGs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "psnr")]
        stem: String,
        #[arg(long)]
        ree: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "I,II,III")]
        levels: String,
    },
    /// Finite-difference checks of all backward passes.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Score, select, train-ree, train-sr and eval, resuming from artifacts.
    Pipeline {
        #[arg(long)]
        dry_run: bool,
    },
}

fn project(cli: &Cli) -> Result<ProjectConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.resolve_seeds();
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    Ok(std::fs::write(path, text)?)
}

fn degrade(cfg: &ProjectConfig, input: &Path, spec: Option<&Path>, sample: Option<usize>) -> Result<()> {
    let specs = match (spec, sample) {
        (Some(p), _) => vec![DegradationSpec::from_json(&std::fs::read_to_string(p)?)?],
        (None, Some(n)) => pipeline::sample_specs(derive(cfg.seed, "degrade", 0), n),
        (None, None) => return Err(Error::Config("give --spec or --sample".into())),
    };
    let files = if input.is_dir() { list_pngs(input)? } else { vec![input.to_path_buf()] };
    let out = &cfg.out_dir;
    for (k, s) in specs.iter().enumerate() {
        write(&out.join("specs").join(format!("spec_{k:03}.json")), &s.to_json()?)?;
    }
    let mut ok = 0;
    for f in &files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let res = read_png(f).and_then(|img| {
            specs.iter().enumerate().try_for_each(|(k, s)| {
                write_png(&apply_chain(&img, s)?, &out.join("images").join(format!("{stem}_{k:03}.png")))
            })
        });
        match res {
            Ok(()) => ok += 1,
            Err(e) => error!("{}: {e}", f.display()),
        }
    }
    if ok == 0 {
        return Err(Error::Data(format!("no image of {} could be degraded", input.display())));
    }
    info!("degraded {ok}/{} images with {} chains", files.len(), specs.len());
    Ok(())
}

fn score(cfg: &ProjectConfig, hr: Option<&Path>, specs: Option<&Path>) -> Result<()> {
    let images = match hr {
        Some(d) => list_pngs(d)?.iter().map(|p| read_png(p)).collect::<Result<Vec<_>>>()?,
        None => pipeline::load_dataset(cfg)?,
    };
    let images = &images[..cfg.scoring.n_images.min(images.len())];
    let specs = match specs {
        Some(p) => pipeline::read_specs(p)?,
        None => pipeline::sample_specs(derive(cfg.seed, "specs", 0), cfg.scoring.n_specs),
    };
    let report = severity_profile(images, &specs, &SurrogateTagger::default())?;
    let out = &cfg.out_dir;
    write(&out.join(pipeline::SPECS), &pipeline::specs_to_jsonl(&specs)?)?;
    write(&out.join(pipeline::REPORT), &report.to_jsonl()?)?;
    write(&out.join("report.csv"), &report.to_csv())?;
    if let Ok(classes) = classify_four(&report) {
        write(&out.join(pipeline::CLASSES), &serde_json::to_string_pretty(&classes)?)?;
    }
    info!("scored {} chains on {} images", specs.len(), images.len());
    Ok(())
}

fn select(cfg: &ProjectConfig, report: Option<&Path>) -> Result<()> {
    let default = cfg.out_dir.join(pipeline::REPORT);
    let report = pipeline::read_report(report.unwrap_or(&default))?;
    let sel = select_by_threshold(&report, cfg.scoring.tau1, cfg.scoring.tau2)?;
    info!("{} mild, {} severe", sel.mild.len(), sel.severe.len());
    write(&cfg.out_dir.join(pipeline::SELECTION), &serde_json::to_string_pretty(&sel)?)
}

fn infer(model: &Path, stem: &str, ree: Option<&Path>, input: &Path, output: &Path) -> Result<()> {
    let weights = pipeline::load_sr(model, stem)?;
    let ree = ree.map(pipeline::load_ree).transpose()?;
    let m = SrModel {
        name: stem.into(),
        weights,
        ree,
    };
    write_png(&m.upscale(&read_png(input)?)?, output)
}

fn eval(cfg: &ProjectConfig, model: &Path, stem: &str, ree: &Path, data: &Path, levels: &str) -> Result<()> {
    let levels = parse_levels(levels)?;
    let out = &cfg.out_dir;
    let specs = pipeline::read_specs(&out.join(pipeline::SPECS))?;
    let classes: SeverityClasses = serde_json::from_str(&std::fs::read_to_string(out.join(pipeline::CLASSES))?)?;
    let levels = level_specs(&classes, &specs, &levels, cfg.eval.per_level)?;
    let ree = pipeline::load_ree(ree)?;
    let files = list_pngs(data)?;
    let sr = SrModel {
        name: stem.into(),
        weights: pipeline::load_sr(model, stem)?,
        ree: Some(ree.clone()),
    };
    let bic = Bicubic { scale: sr.scale() };
    for m in [&sr as &dyn Upscaler, &bic] {
        let r = benchmark(m, &ree.base, &files, &levels)?;
        for row in &r.rows {
            println!("{:<8} {:<10} psnr_y {:8.3}  proxy {:.6}  n={}", r.method, row.name, row.psnr_y_mean, row.proxy_mean, row.n_images);
        }
        if !r.skipped.is_empty() {
            println!("{}: {} file(s) skipped", r.method, r.skipped.len());
        }
        write_report(&r, &out.join(pipeline::EVAL_DIR), &r.method)?;
    }
    Ok(())
}

fn gradcheck(seed: u64, instances: usize, tol: f64) -> Result<bool> {
    let mut ok = true;
    for e in run_suite(seed, instances)? {
        let pass = e.max_rel_err < tol;
        ok &= pass;
        println!(
            "{:<18} {} instances={} checked={} max_rel_err={:.3e}",
            e.name,
            if pass { "PASS" } else { "FAIL" },
            e.instances,
            e.checked,
            e.max_rel_err
        );
        if !pass {
            println!("  worst: {}", e.worst.unwrap_or_default());
        }
    }
    Ok(ok)
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = project(cli)?;
    match &cli.cmd {
        Cmd::Degrade { input, spec, sample } => degrade(&cfg, input, spec.as_deref(), *sample)?,
        Cmd::Score { hr, specs, tagger: TaggerKind::Surrogate } => score(&cfg, hr.as_deref(), specs.as_deref())?,
        Cmd::Select { report, tau1, tau2 } => {
            cfg.scoring.tau1 = tau1.unwrap_or(cfg.scoring.tau1);
            cfg.scoring.tau2 = tau2.unwrap_or(cfg.scoring.tau2);
            select(&cfg, report.as_deref())?;
        }
        Cmd::TrainRee { report, tau1, tau2 } => {
            cfg.scoring.tau1 = tau1.unwrap_or(cfg.scoring.tau1);
            cfg.scoring.tau2 = tau2.unwrap_or(cfg.scoring.tau2);
            cfg.validate()?;
            select(&cfg, report.as_deref())?;
            pipeline::run_stage(StageKind::TrainRee, &cfg, &pipeline::load_dataset(&cfg)?)?;
        }
        Cmd::TrainSr { stage } => {
            cfg.validate()?;
            let kind = match stage {
                StageArg::Psnr => StageKind::TrainSrPsnr,
                StageArg::Gan => StageKind::TrainSrGan,
            };
            pipeline::run_stage(kind, &cfg, &pipeline::load_dataset(&cfg)?)?;
        }
        Cmd::Infer { model, stem, ree, input, output } => infer(model, stem, ree.as_deref(), input, output)?,
        Cmd::Eval { model, stem, ree, data, levels } => eval(&cfg, model, stem, ree, data, levels)?,
        Cmd::Gradcheck { instances, tol } => return gradcheck(cfg.seed, *instances, *tol),
        Cmd::Pipeline { dry_run } => {
            let plan = pipeline::run_pipeline(&cfg, *dry_run)?;
            print!("{}", pipeline::format_plan(&plan));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DACESR_LOG", "info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("cannot size the worker pool: {e}");
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                error!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}
