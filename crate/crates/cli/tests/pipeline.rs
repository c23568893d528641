use std::collections::BTreeMap;
use std::path::Path;

use dacesr_cli::pipeline::{self, StageKind, LOG_DIR};
use dacesr_cli::ProjectConfig;

fn smoke(dir: &Path) -> ProjectConfig {
    let mut c = ProjectConfig::smoke(dir);
    c.resolve_seeds();
    c
}

/// Relative path to contents for every file outside the log directory.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if p.is_dir() {
                if rel != LOG_DIR {
                    walk(root, &p, out);
                }
            } else {
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn dry_run_has_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(&dir.path().join("run"));
    let plan = pipeline::run_pipeline(&cfg, true).unwrap();
    assert!(plan.iter().all(|e| e.run));
    assert_eq!(plan.len(), 6);
    assert!(!cfg.out_dir.exists());
    assert!(pipeline::format_plan(&plan).contains("train-ree"));
}

#[test]
fn smoke_pipeline_completes_and_resumes_eval_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    pipeline::run_pipeline(&cfg, false).unwrap();
    let plan = pipeline::plan(&cfg);
    assert!(plan.iter().all(|e| !e.run), "{}", pipeline::format_plan(&plan));
    for e in &plan {
        assert!(e.artifacts.iter().all(|p| p.exists()), "{}", e.stage);
    }
    let before = snapshot(dir.path());
    std::fs::remove_file(cfg.out_dir.join("eval/psnr.json")).unwrap();
    let plan = pipeline::plan(&cfg);
    let runs: Vec<StageKind> = plan.iter().filter(|e| e.run).map(|e| e.stage).collect();
    assert_eq!(runs, vec![StageKind::Eval]);
    pipeline::run_pipeline(&cfg, false).unwrap();
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn stage_failure_names_stage_and_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let data = pipeline::load_dataset(&cfg).unwrap();
    let err = pipeline::run_stage(StageKind::Select, &cfg, &data).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("select") && msg.contains("selection.json"), "{msg}");
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    pipeline::run_pipeline(&cfg, false).unwrap();
    let ree = pipeline::load_ree(&cfg.out_dir.join(pipeline::REE_DIR)).unwrap();
    let sr = pipeline::load_sr(&cfg.out_dir.join(pipeline::SR_DIR), "psnr").unwrap();
    assert_eq!(sr.config, cfg.network);
    assert_eq!(ree.base.embed_dim(), cfg.network.cond_dim);
    pipeline::load_disc(&cfg.out_dir.join(pipeline::SR_DIR)).unwrap();
}
