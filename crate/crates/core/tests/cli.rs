//! End-to-end runs of the command-line surface on a tiny synthetic profile.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use signfuse::cli::{main_with_args, RunConfig, RunManifest, COMPARISON_TXT, MANIFESTS_DIR, REPORT_JSON};
use signfuse::data::SyntheticSpec;
use signfuse::metrics::MetricReport;
use signfuse::train::{load_checkpoint, Hyperparams};

fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk(out, vec![3]);
    cfg.data.synthetic = Some(SyntheticSpec { image_size: 64, ..SyntheticSpec::with_counts(16, 6, 6, 2) });
    cfg.model.trunk = "probe".into();
    cfg.hyperparams = Hyperparams { epochs_stage1: 1, epochs_stage2: 1, batch_size: 4, ..Default::default() };
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("signfuse").chain(args.iter().copied()))
}

fn files_under(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out
}

fn manifests(out: &Path) -> Vec<RunManifest> {
    std::fs::read_dir(out.join(MANIFESTS_DIR))
        .unwrap()
        .map(|e| serde_json::from_str(&std::fs::read_to_string(e.unwrap().path()).unwrap()).unwrap())
        .collect()
}

#[test]
fn missing_config_exits_3_and_bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["gen-data", "--config", missing.to_str().unwrap()]), 3);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data.synthetic]\ntrain = 4\nvalid = 2\ntest = 2\n[hyperparams]\nlr = 0.1\n").unwrap();
    assert_eq!(run(&["gen-data", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &tiny_config(&out));
    let ghost = dir.path().join("ghost.ckpt");
    let code = run(&["evaluate", "--config", cfg.to_str().unwrap(), "--checkpoint", ghost.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert_eq!(run(&["train", "--config", cfg.to_str().unwrap()]), 3);
}

#[test]
fn stage_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &tiny_config(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["pretrain", "--config", c, "--branch", "F"]), 0);
    let f = out.join("seed-3").join("signs-F.ckpt");
    let code = run(&["train", "--config", c, "--fundus", f.to_str().unwrap(), "--oct", f.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn full_workflow_records_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_struct = tiny_config(&out);
    let cfg = write_config(dir.path(), &cfg_struct);
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["gen-data", "--config", c],
        vec!["pretrain", "--config", c, "--branch", "F"],
        vec!["pretrain", "--config", c, "--branch", "O"],
        vec!["train", "--config", c],
        vec!["evaluate", "--config", c],
        vec!["explain", "--config", c],
        vec!["ablate", "--config", c],
    ] {
        assert_eq!(run(&args), 0, "{args:?}");
    }

    // ablation table: one row per arm, the five diagnosis columns
    let table = std::fs::read_to_string(out.join("seed-3/ablate").join(COMPARISON_TXT)).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    for col in ["AUROC", "Precision", "Recall", "F1", "Kappa"] {
        assert!(lines[0].contains(col), "{table}");
    }
    assert!(lines.iter().any(|l| l.starts_with("with-knowledge")), "{table}");
    assert!(lines.iter().any(|l| l.starts_with("w/o-knowledge")), "{table}");

    // every file except the manifests themselves is listed in some manifest
    let listed: BTreeSet<PathBuf> = manifests(&out).iter().flat_map(|m| m.outputs.clone()).collect();
    let on_disk: BTreeSet<PathBuf> = files_under(&out).into_iter().filter(|p| !p.starts_with(MANIFESTS_DIR)).collect();
    assert_eq!(on_disk, listed);

    // one config hash across the run's artifacts
    let hash = cfg_struct.hash();
    assert!(manifests(&out).iter().all(|m| m.config_hash.as_deref() == Some(hash.as_str())));
    for p in on_disk.iter().filter(|p| p.extension().is_some_and(|e| e == "ckpt")) {
        assert_eq!(load_checkpoint(&out.join(p)).unwrap().config_hash, hash, "{}", p.display());
    }
    for p in on_disk.iter().filter(|p| p.file_name().is_some_and(|n| n == REPORT_JSON)) {
        let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(out.join(p)).unwrap()).unwrap();
        assert_eq!(r.config_hash, hash);
    }

    // explain overlays follow <group>_<branch>_<class>.png
    let pngs: Vec<_> = on_disk.iter().filter(|p| p.starts_with("seed-3/explain")).filter(|p| p.extension().is_some_and(|e| e == "png")).collect();
    assert!(!pngs.is_empty());
    for p in pngs {
        let name = p.file_stem().unwrap().to_str().unwrap();
        let parts: Vec<&str> = name.split('_').collect();
        assert_eq!(parts.len(), 3, "{name}");
        assert!(parts[1] == "F" || parts[1] == "O");
        assert!(["NeovascularAMD", "PCV"].contains(&parts[2]));
    }
    assert!(out.join("seed-3/explain/diagnosis/localization.json").exists());
}

#[test]
fn evaluate_is_byte_identical_and_report_emits_improve_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &tiny_config(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["ablate", "--config", c]), 0);
    let ckpt = out.join("seed-3/ablate/with-knowledge.ckpt");
    let report = out.join("seed-3/eval/with-knowledge-test").join(REPORT_JSON);
    assert_eq!(run(&["evaluate", "--config", c, "--checkpoint", ckpt.to_str().unwrap()]), 0);
    let first = std::fs::read(&report).unwrap();
    assert_eq!(run(&["evaluate", "--config", c, "--checkpoint", ckpt.to_str().unwrap()]), 0);
    assert_eq!(first, std::fs::read(&report).unwrap());

    let merged = dir.path().join("merged");
    let k = out.join("seed-3/ablate/with-knowledge");
    let s = out.join("seed-3/ablate/wo-knowledge");
    let code = run(&["report", k.to_str().unwrap(), s.to_str().unwrap(), "--out", merged.to_str().unwrap()]);
    assert_eq!(code, 0);
    let table = std::fs::read_to_string(merged.join(COMPARISON_TXT)).unwrap();
    assert!(table.lines().any(|l| l.starts_with("Improve")), "{table}");
    assert!(merged.join(MANIFESTS_DIR).join("report.json").exists());
}
