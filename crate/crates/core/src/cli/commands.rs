use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::write_atomic;
use crate::data::{generate_synthetic_dataset, DiseaseLabel, LoadedDataset, Modality, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::explain::{evaluate_localization, gradcam, localization_score, median, original_size, render_overlay, LocalizationEntry, LocalizationSummary};
use crate::metrics::{build_report, render_table, MetricReport, ReportStage};
use crate::seed::sha256_hex;
use crate::train::{
    evaluate_diagnosis, evaluate_signs, finetune_diagnosis, load_checkpoint, load_checkpoint_as, pretrain_signs,
    train_scratch_baseline, Checkpoint, Stage, TrainOptions, TrainOutcome,
};

pub const DATA_DIR: &str = "data";
pub const MANIFESTS_DIR: &str = "manifests";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_TXT: &str = "comparison.txt";
pub const LOCALIZATION_JSON: &str = "localization.json";

/// Ablation arms in table order: (row label, directory name).
pub const ARMS: [(&str, &str); 2] = [("with-knowledge", "with-knowledge"), ("w/o-knowledge", "wo-knowledge")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputArtifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, written last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub seeds: Vec<u64>,
    /// Extra command-line arguments needed to repeat the invocation.
    pub arguments: BTreeMap<String, String>,
    pub inputs: Vec<InputArtifact>,
    /// Produced files, relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub timings_s: BTreeMap<String, f64>,
}

/// Collects inputs, outputs and timings while a command runs.
struct Recorder {
    out: PathBuf,
    manifest: RunManifest,
}

impl Recorder {
    fn new(command: &str, out: &Path, cfg: Option<&RunConfig>) -> Self {
        Recorder {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: cfg.map(RunConfig::hash),
                config: cfg.cloned(),
                seeds: cfg.map(|c| c.seeds.clone()).unwrap_or_default(),
                arguments: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings_s: BTreeMap::new(),
            },
        }
    }

    fn argument(&mut self, key: &str, value: impl ToString) {
        self.manifest.arguments.insert(key.to_string(), value.to_string());
    }

    fn relative(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.out).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
    }

    fn produced(&mut self, path: &Path) {
        let rel = self.relative(path);
        if !self.manifest.outputs.contains(&rel) {
            self.manifest.outputs.push(rel);
        }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.produced(path);
        Ok(())
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let entry = InputArtifact { path: path.to_path_buf(), sha256: sha256_hex(&bytes) };
        if !self.manifest.inputs.contains(&entry) {
            self.manifest.inputs.push(entry);
        }
        Ok(())
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let r = f(self)?;
        *self.manifest.timings_s.entry(label.to_string()).or_default() += t0.elapsed().as_secs_f64();
        Ok(r)
    }

    fn save_checkpoint(&mut self, c: &Checkpoint, path: &Path) -> Result<()> {
        self.write(path, &c.to_bytes()?)
    }

    fn save_training(&mut self, outcome: &TrainOutcome, ckpt: &Path, log: &Path) -> Result<()> {
        self.save_checkpoint(&outcome.checkpoint, ckpt)?;
        self.write(log, outcome.log_jsonl()?.as_bytes())
    }

    fn finish(self, name: &str) -> Result<RunManifest> {
        let path = self.out.join(MANIFESTS_DIR).join(format!("{name}.json"));
        write_atomic(&path, (serde_json::to_string_pretty(&self.manifest)? + "\n").as_bytes())?;
        Ok(self.manifest)
    }
}

fn branch_tag(b: Modality) -> &'static str {
    b.tag()
}

pub fn signs_checkpoint_path(cfg: &RunConfig, seed: u64, branch: Modality) -> PathBuf {
    cfg.seed_dir(seed).join(format!("{}.ckpt", Stage::signs(branch)))
}

pub fn diagnosis_checkpoint_path(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.seed_dir(seed).join("diagnosis.ckpt")
}

fn log_path(cfg: &RunConfig, seed: u64, name: &str) -> PathBuf {
    cfg.seed_dir(seed).join("logs").join(format!("{name}.jsonl"))
}

/// Opens the configured dataset. A synthetic source reuses the directory
/// written by `gen-data` when present and otherwise generates in memory.
pub fn load_dataset(cfg: &RunConfig) -> Result<(LoadedDataset, Option<PathBuf>)> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(dir), _) => {
            let manifest = dir.join(MANIFEST_FILE);
            if !manifest.exists() {
                return Err(Error::MissingArtifact(manifest));
            }
            Ok((LoadedDataset::open(dir)?, Some(manifest)))
        }
        (None, Some(spec)) => {
            let dir = cfg.out.join(DATA_DIR);
            let manifest = dir.join(MANIFEST_FILE);
            if manifest.exists() {
                let data = LoadedDataset::open(&dir)?;
                let same = data.manifest.generator.as_ref().map(|g| g.spec_hash == spec.hash()).unwrap_or(false);
                if !same {
                    return Err(Error::config(format!(
                        "{} was generated from a different synthetic spec; rerun gen-data",
                        dir.display()
                    )));
                }
                Ok((data, Some(manifest)))
            } else {
                Ok((LoadedDataset::from_manifest(generate_synthetic_dataset(spec)?, None)?, None))
            }
        }
        (None, None) => Err(Error::config("data: one of `path` or `synthetic` is required")),
    }
}

fn dataset(rec: &mut Recorder, cfg: &RunConfig) -> Result<LoadedDataset> {
    let (data, manifest) = rec.time("load_data", |_| load_dataset(cfg))?;
    if let Some(m) = manifest {
        rec.input(&m)?;
    }
    Ok(data)
}

fn options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions { freeze_encoders: cfg.freeze_encoders, class_weights: cfg.class_weights, config_hash: cfg.hash() }
}

fn warn_foreign(c: &Checkpoint, path: &Path, cfg: &RunConfig) {
    if c.config_hash != cfg.hash() {
        eprintln!("warning: {} was produced under a different configuration", path.display());
    }
}

/// Writes the synthetic dataset to `<out>/data`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<RunManifest> {
    let spec = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::config("gen-data needs a [data.synthetic] section"))?;
    let mut rec = Recorder::new("gen-data", &cfg.out, Some(cfg));
    let dir = cfg.out.join(DATA_DIR);
    let written = rec.time("generate", |_| {
        let manifest = generate_synthetic_dataset(spec)?;
        let (_, written) = manifest.write(&dir)?;
        Ok(written)
    })?;
    for p in &written {
        rec.produced(p);
    }
    eprintln!("wrote {} groups to {}", spec.total(), dir.display());
    rec.finish("gen-data")
}

fn pretrain_one(rec: &mut Recorder, cfg: &RunConfig, data: &LoadedDataset, seed: u64, branch: Modality) -> Result<Checkpoint> {
    let stage = Stage::signs(branch);
    let outcome = rec.time(&format!("pretrain-{}/seed-{seed}", branch_tag(branch)), |_| {
        pretrain_signs(branch, data, &cfg.model, &cfg.hyperparams_for(seed), &cfg.hash())
    })?;
    rec.save_training(&outcome, &signs_checkpoint_path(cfg, seed, branch), &log_path(cfg, seed, stage.as_str()))?;
    eprintln!(
        "seed {seed} {stage}: best epoch {} valid AUROC {}",
        outcome.checkpoint.epoch,
        fmt_opt(outcome.checkpoint.metrics.get("valid_auroc").copied())
    );
    Ok(outcome.checkpoint)
}

/// Stage one for one branch and every configured seed.
pub fn cmd_pretrain(cfg: &RunConfig, branch: Modality) -> Result<RunManifest> {
    let name = format!("pretrain-{}", branch_tag(branch));
    let mut rec = Recorder::new(&name, &cfg.out, Some(cfg));
    rec.argument("branch", branch_tag(branch));
    let data = dataset(&mut rec, cfg)?;
    for &seed in &cfg.seeds {
        pretrain_one(&mut rec, cfg, &data, seed, branch)?;
    }
    rec.finish(&name)
}

/// Stage two, knowledge arm, from the stage-one checkpoints. Defaults to
/// the checkpoints `pretrain` wrote for each seed.
pub fn cmd_train(cfg: &RunConfig, fundus: Option<&Path>, oct: Option<&Path>) -> Result<RunManifest> {
    let mut rec = Recorder::new("train", &cfg.out, Some(cfg));
    if let Some(p) = fundus {
        rec.argument("fundus", p.display());
    }
    if let Some(p) = oct {
        rec.argument("oct", p.display());
    }
    let data = dataset(&mut rec, cfg)?;
    for &seed in &cfg.seeds {
        let pf = fundus.map(Path::to_path_buf).unwrap_or_else(|| signs_checkpoint_path(cfg, seed, Modality::Fundus));
        let po = oct.map(Path::to_path_buf).unwrap_or_else(|| signs_checkpoint_path(cfg, seed, Modality::Oct));
        let cf = load_checkpoint_as(&pf, Stage::SignsF)?;
        let co = load_checkpoint_as(&po, Stage::SignsO)?;
        rec.input(&pf)?;
        rec.input(&po)?;
        warn_foreign(&cf, &pf, cfg);
        warn_foreign(&co, &po, cfg);
        let outcome = rec.time(&format!("train/seed-{seed}"), |_| {
            finetune_diagnosis(&cf, &co, &data, &cfg.hyperparams_for(seed), &options(cfg))
        })?;
        rec.save_training(&outcome, &diagnosis_checkpoint_path(cfg, seed), &log_path(cfg, seed, "diagnosis"))?;
        eprintln!("seed {seed} diagnosis: best epoch {}", outcome.checkpoint.epoch);
    }
    rec.finish("train")
}

fn report_for(c: &Checkpoint, data: &LoadedDataset, split: Split) -> Result<MetricReport> {
    let batch = match c.stage {
        Stage::Diagnosis => evaluate_diagnosis(&c.diagnosis_model()?, data, split)?,
        Stage::SignsF | Stage::SignsO => evaluate_signs(&c.sign_model()?, data, split)?,
    };
    build_report(&batch, &c.config_hash, c.seed)
}

fn write_report(rec: &mut Recorder, dir: &Path, report: &MetricReport) -> Result<()> {
    rec.write(&dir.join(REPORT_JSON), report.to_json()?.as_bytes())?;
    let label = report.label.clone().unwrap_or_default();
    rec.write(&dir.join(REPORT_TXT), report.to_table(&label).as_bytes())
}

/// Pre-trains (or reuses) both branches, then trains the knowledge and
/// scratch arms with identical budgets and compares them on the test split.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<RunManifest> {
    let mut rec = Recorder::new("ablate", &cfg.out, Some(cfg));
    let data = dataset(&mut rec, cfg)?;
    let hash = cfg.hash();
    let mut per_arm: Vec<Vec<MetricReport>> = vec![Vec::new(), Vec::new()];
    for &seed in &cfg.seeds {
        let mut stage1 = Vec::new();
        for branch in Modality::ALL {
            let path = signs_checkpoint_path(cfg, seed, branch);
            let reusable = match load_checkpoint_as(&path, Stage::signs(branch)) {
                Ok(c) if c.config_hash == hash && c.seed == seed => Some(c),
                Ok(_) | Err(Error::MissingArtifact(_)) => None,
                Err(e) => return Err(e),
            };
            stage1.push(match reusable {
                Some(c) => {
                    rec.input(&path)?;
                    c
                }
                None => pretrain_one(&mut rec, cfg, &data, seed, branch)?,
            });
        }
        let h = cfg.hyperparams_for(seed);
        let opts = options(cfg);
        let dir = cfg.seed_dir(seed).join("ablate");
        let knowledge = rec.time(&format!("ablate/with-knowledge/seed-{seed}"), |_| {
            finetune_diagnosis(&stage1[0], &stage1[1], &data, &h, &opts)
        })?;
        let scratch = rec.time(&format!("ablate/wo-knowledge/seed-{seed}"), |_| {
            train_scratch_baseline(&cfg.model, &data, &h, &opts)
        })?;
        let mut rows = Vec::new();
        for ((label, name), outcome) in ARMS.iter().zip([&knowledge, &scratch]) {
            rec.save_training(outcome, &dir.join(format!("{name}.ckpt")), &log_path(cfg, seed, &format!("ablate-{name}")))?;
            let mut report = report_for(&outcome.checkpoint, &data, Split::Test)?;
            report.label = Some(label.to_string());
            write_report(&mut rec, &dir.join(name), &report)?;
            rows.push((label.to_string(), report.metrics.clone()));
            per_arm[if *name == ARMS[0].1 { 0 } else { 1 }].push(report);
        }
        let table = render_table(&rows);
        eprintln!("seed {seed}\n{table}");
        rec.write(&dir.join(COMPARISON_TXT), table.as_bytes())?;
        rec.write(&dir.join(COMPARISON_JSON), (serde_json::to_string_pretty(&rows)? + "\n").as_bytes())?;
    }
    let summary = median_rows(&per_arm);
    let table = render_table(&summary);
    rec.write(&cfg.out.join("ablate-summary.txt"), table.as_bytes())?;
    rec.write(&cfg.out.join("ablate-summary.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    if cfg.seeds.len() > 1 {
        eprintln!("median over {} seeds\n{table}", cfg.seeds.len());
    }
    rec.finish("ablate")
}

type Row = (String, Vec<(String, Option<f64>)>);

/// Per-arm median of each metric across seeds; undefined when any seed is.
fn median_rows(per_arm: &[Vec<MetricReport>]) -> Vec<Row> {
    ARMS.iter()
        .zip(per_arm)
        .map(|((label, _), reports)| {
            let names: Vec<String> = reports[0].metrics.iter().map(|(n, _)| n.clone()).collect();
            let values = names
                .into_iter()
                .map(|n| {
                    let vals: Option<Vec<f64>> = reports.iter().map(|r| r.metric(&n)).collect();
                    let m = vals.and_then(|v| median(&v));
                    (n, m)
                })
                .collect();
            (label.to_string(), values)
        })
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into())
}

fn checkpoints_for(cfg: &RunConfig, checkpoint: Option<&Path>) -> Vec<PathBuf> {
    match checkpoint {
        Some(p) => vec![p.to_path_buf()],
        None => cfg.seeds.iter().map(|s| diagnosis_checkpoint_path(cfg, *s)).collect(),
    }
}

/// Writes `report.json` and `report.txt` for a checkpoint of any stage
/// under `<out>/seed-<seed>/eval/<checkpoint>-<split>/`.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split) -> Result<RunManifest> {
    let mut rec = Recorder::new("evaluate", &cfg.out, Some(cfg));
    rec.argument("split", split);
    if let Some(p) = checkpoint {
        rec.argument("checkpoint", p.display());
    }
    let paths = checkpoints_for(cfg, checkpoint);
    for p in &paths {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let data = dataset(&mut rec, cfg)?;
    for path in paths {
        let c = load_checkpoint(&path)?;
        rec.input(&path)?;
        let mut report = rec.time("evaluate", |_| report_for(&c, &data, split))?;
        report.label = Some(stem(&path));
        let dir = cfg.seed_dir(c.seed).join("eval").join(format!("{}-{split}", stem(&path)));
        write_report(&mut rec, &dir, &report)?;
        eprintln!("{}", report.to_table(&stem(&path)));
    }
    rec.finish("evaluate")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: String,
    /// Scores of the requested groups, on their true class.
    pub selected: Vec<LocalizationEntry>,
    /// Correctly classified lesion-bearing groups of the test split.
    pub test: LocalizationSummary,
}

fn png_bytes(t: &crate::data::Tensor224) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    t.to_rgb_image().write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Grad-CAM overlays named `<group>_<branch>_<class>.png` plus localization
/// scores. Without explicit ids the test split's lesion-bearing groups are used.
pub fn cmd_explain(cfg: &RunConfig, checkpoint: Option<&Path>, ids: &[String]) -> Result<RunManifest> {
    let mut rec = Recorder::new("explain", &cfg.out, Some(cfg));
    if let Some(p) = checkpoint {
        rec.argument("checkpoint", p.display());
    }
    if !ids.is_empty() {
        rec.argument("ids", ids.join(","));
    }
    let paths = checkpoints_for(cfg, checkpoint);
    for p in &paths {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let data = dataset(&mut rec, cfg)?;
    let groups = if ids.is_empty() {
        data.split(Split::Test).into_iter().filter(|g| g.disease != DiseaseLabel::Other).collect::<Vec<_>>()
    } else {
        ids.iter()
            .map(|id| data.manifest.group(id).ok_or_else(|| Error::config(format!("ids: unknown group `{id}`"))))
            .collect::<Result<Vec<_>>>()?
    };
    for path in paths {
        let c = load_checkpoint_as(&path, Stage::Diagnosis)?;
        rec.input(&path)?;
        let model = c.diagnosis_model()?;
        let dir = cfg.seed_dir(c.seed).join("explain").join(stem(&path));
        let mut selected = Vec::new();
        rec.time("explain", |rec| {
            for g in &groups {
                let (tf, to) = (data.tensor(g, Modality::Fundus)?, data.tensor(g, Modality::Oct)?);
                let (hf, ho) = gradcam(&model, tf, to, g.disease.index())?;
                for (map, branch, t) in [(hf, Modality::Fundus, tf), (ho, Modality::Oct, to)] {
                    let overlay = render_overlay(&map, t, cfg.overlay_alpha)?;
                    let name = format!("{}_{}_{}.png", g.id, branch.tag(), g.disease.name());
                    rec.write(&dir.join(name), &png_bytes(&overlay)?)?;
                    let boxes = g.evidence_boxes(branch);
                    if !boxes.is_empty() {
                        let (w, h) = original_size(&data, g, branch)?;
                        selected.push(LocalizationEntry {
                            group_id: g.id.clone(),
                            branch,
                            class: g.disease,
                            score: localization_score(&map, &boxes, h, w),
                        });
                    }
                }
            }
            Ok(())
        })?;
        let test = rec.time("localization", |_| evaluate_localization(&model, &data, Split::Test))?;
        eprintln!("seed {} median localization on test: {}", c.seed, fmt_opt(test.median));
        let metrics = ExplainMetrics { config_hash: c.config_hash.clone(), seed: c.seed, checkpoint: stem(&path), selected, test };
        rec.write(&dir.join(LOCALIZATION_JSON), (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes())?;
    }
    rec.finish("explain")
}

fn read_report(path: &Path) -> Result<(PathBuf, MetricReport)> {
    let file = if path.is_dir() { path.join(REPORT_JSON) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(Error::MissingArtifact(file));
    }
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    Ok((file, serde_json::from_str(&text)?))
}

fn row_label(file: &Path, r: &MetricReport) -> String {
    r.label.clone().unwrap_or_else(|| {
        file.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    })
}

fn delta(a: &[(String, Option<f64>)], b: &[(String, Option<f64>)]) -> Vec<(String, Option<f64>)> {
    a.iter().zip(b).map(|((n, x), (_, y))| (n.clone(), x.zip(*y).map(|(x, y)| x - y))).collect()
}

/// Comparison of several reports: the rows themselves, an `Improve` row
/// (first row minus the best of the others, per column) and every pairwise
/// difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<Row>,
    pub improve: Row,
    pub pairwise: Vec<Row>,
}

pub fn compare_reports(reports: &[(String, MetricReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::config("report: at least two runs are needed"));
    }
    let stage: ReportStage = reports[0].1.stage;
    let names = reports[0].1.metric_names();
    for (label, r) in reports {
        if r.stage != stage || r.metric_names() != names {
            return Err(Error::config(format!("report: `{label}` has different metrics from `{}`", reports[0].0)));
        }
    }
    let rows: Vec<Row> = reports.iter().map(|(l, r)| (l.clone(), r.metrics.clone())).collect();
    let improve_values = rows[0]
        .1
        .iter()
        .enumerate()
        .map(|(i, (n, first))| {
            let others: Option<Vec<f64>> = rows[1..].iter().map(|r| r.1[i].1).collect();
            let best = others.map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max));
            (n.clone(), first.zip(best).map(|(a, b)| a - b))
        })
        .collect();
    let mut pairwise = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            pairwise.push((format!("{} - {}", rows[i].0, rows[j].0), delta(&rows[i].1, &rows[j].1)));
        }
    }
    Ok(Comparison { rows, improve: ("Improve".to_string(), improve_values), pairwise })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut main = self.rows.clone();
        main.push(self.improve.clone());
        let mut out = render_table(&main);
        if self.pairwise.len() > 1 {
            out.push('\n');
            out.push_str(&render_table(&self.pairwise));
        }
        out
    }
}

/// Merges `report.json` files (or directories holding one) into
/// `<out>/comparison.{txt,json}`.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<RunManifest> {
    let mut rec = Recorder::new("report", out, None);
    let mut reports = Vec::new();
    for p in runs {
        let (file, r) = read_report(p)?;
        rec.input(&file)?;
        reports.push((row_label(&file, &r), r));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (label, _) in reports.iter_mut() {
        let base = label.clone();
        let mut k = 2;
        while !seen.insert(label.clone()) {
            *label = format!("{base} ({k})");
            k += 1;
        }
    }
    let cmp = compare_reports(&reports)?;
    let table = cmp.to_table();
    print!("{table}");
    rec.write(&out.join(COMPARISON_TXT), table.as_bytes())?;
    rec.write(&out.join(COMPARISON_JSON), (serde_json::to_string_pretty(&cmp)? + "\n").as_bytes())?;
    rec.finish("report")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}
