//! Batch drivers behind the `fuse`, `eval` and `build-vocab` subcommands.
//!
//! Runs are described by a TOML config file; relative paths inside it are
//! resolved against the config file's directory so a run directory is
//! self-contained. Command-line flags override individual config keys.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::evaluation::{self, EvalConfig, EvalReport, Task};
use crate::fusion::{self, FusionConfig, StageCounts};
use crate::ingest::{self, Detection, GroundTruthWord, Vocabulary, DEFAULT_DONT_CARE};

/// One per-model, per-scale detection input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    pub model: String,
    pub scale: f64,
}

/// Evaluation settings plus the detections file to score. When
/// `detections` is absent the fused output path is used.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub iou_threshold: f64,
    pub case_fold: bool,
    pub task: Task,
    pub dont_care_sentinel: String,
    pub detections: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            iou_threshold: e.iou_threshold,
            case_fold: e.case_fold,
            task: e.task,
            dont_care_sentinel: e.dont_care_sentinel,
            detections: None,
        }
    }
}

impl EvalSection {
    pub fn to_eval_config(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.iou_threshold,
            case_fold: self.case_fold,
            task: self.task,
            dont_care_sentinel: self.dont_care_sentinel.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub fused: PathBuf,
    pub report_text: PathBuf,
    pub report_json: PathBuf,
    pub vocabulary: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            fused: PathBuf::from("fused.jsonl"),
            report_text: PathBuf::from("report.txt"),
            report_json: PathBuf::from("report.json"),
            vocabulary: PathBuf::from("vocab.txt"),
        }
    }
}

/// Declarative description of a batch run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: Vec<InputSpec>,
    /// Two-column file: image_id and original longer side in pixels.
    pub sizes: Option<PathBuf>,
    pub gt_dir: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    /// Build the vocabulary from the ground-truth directory instead of
    /// reading a vocabulary file.
    pub build_vocab_from_gt: bool,
    pub fusion: FusionConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Loads a run config, resolving relative paths against the config
/// file's directory.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config `{}`", path.display()))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .with_context(|| format!("cannot parse config `{}`", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    for input in &mut cfg.inputs {
        resolve(&base, &mut input.path);
    }
    if let Some(p) = &mut cfg.sizes {
        resolve(&base, p);
    }
    if let Some(p) = &mut cfg.gt_dir {
        resolve(&base, p);
    }
    if let Some(p) = &mut cfg.vocabulary {
        resolve(&base, p);
    }
    if let Some(p) = &mut cfg.eval.detections {
        resolve(&base, p);
    }
    resolve(&base, &mut cfg.output.fused);
    resolve(&base, &mut cfg.output.report_text);
    resolve(&base, &mut cfg.output.report_json);
    resolve(&base, &mut cfg.output.vocabulary);
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("cannot create directory `{}`", parent.display()))?;
        }
    }
    Ok(())
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} `{}` does not exist", path.display());
    }
    Ok(())
}

/// Parses the image-size table: lines of `image_id <whitespace> longer_side`.
pub fn read_sizes(path: &Path) -> Result<BTreeMap<String, f64>> {
    let file = File::open(path)
        .with_context(|| format!("cannot open size table `{}`", path.display()))?;
    let mut sizes = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(size)) = (parts.next(), parts.next()) else {
            bail!("{}:{}: expected `image_id size`", path.display(), idx + 1);
        };
        let size: f64 = size
            .parse()
            .with_context(|| format!("{}:{}: bad size `{size}`", path.display(), idx + 1))?;
        if size.is_nan() || size <= 0.0 {
            bail!("{}:{}: size must be positive, got {size}", path.display(), idx + 1);
        }
        sizes.insert(id.to_string(), size);
    }
    Ok(sizes)
}

/// Parses every `.txt` file in a ground-truth directory. The image id is
/// the file stem with an optional `gt_` prefix stripped.
pub fn load_gt_dir(dir: &Path, sentinel: &str) -> Result<Vec<GroundTruthWord>> {
    require_exists(dir, "ground-truth directory")?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory `{}`", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for file in files {
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("bad file name `{}`", file.display()))?;
        let image_id = stem.strip_prefix("gt_").unwrap_or(stem);
        let f = File::open(&file)
            .with_context(|| format!("cannot open `{}`", file.display()))?;
        let words = ingest::parse_ground_truth(BufReader::new(f), image_id, sentinel)
            .with_context(|| format!("in `{}`", file.display()))?;
        out.extend(words);
    }
    Ok(out)
}

fn load_vocabulary(cfg: &RunConfig) -> Result<Vocabulary> {
    if cfg.build_vocab_from_gt {
        let gt_dir = cfg
            .gt_dir
            .as_deref()
            .context("build_vocab_from_gt requires gt_dir")?;
        let words = load_gt_dir(gt_dir, &cfg.eval.dont_care_sentinel)?;
        Ok(Vocabulary::build(&words, cfg.eval.case_fold))
    } else {
        let path = cfg
            .vocabulary
            .as_deref()
            .context("config needs either `vocabulary` or `build_vocab_from_gt = true`")?;
        require_exists(path, "vocabulary file")?;
        let f = File::open(path)
            .with_context(|| format!("cannot open vocabulary `{}`", path.display()))?;
        Ok(ingest::read_vocabulary(BufReader::new(f), cfg.eval.case_fold)
            .with_context(|| format!("in `{}`", path.display()))?)
    }
}

/// Runs the ensemble over all configured inputs and writes the fused
/// detection file. Stage counts go to the run log (error stream).
pub fn cmd_fuse(cfg: &RunConfig) -> Result<StageCounts> {
    if cfg.inputs.is_empty() {
        bail!("config lists no detection inputs");
    }
    let sizes_path = cfg.sizes.as_deref().context("config needs a `sizes` table")?;
    for input in &cfg.inputs {
        require_exists(&input.path, "detection file")?;
    }
    require_exists(sizes_path, "size table")?;

    let sizes = read_sizes(sizes_path)?;
    let mut batches: Vec<Vec<Detection>> = Vec::new();
    for input in &cfg.inputs {
        let f = File::open(&input.path)
            .with_context(|| format!("cannot open `{}`", input.path.display()))?;
        let dets = ingest::parse_detections(BufReader::new(f), &input.model, input.scale)
            .with_context(|| format!("in `{}`", input.path.display()))?;
        batches.push(dets);
    }

    let (fused, counts) = fusion::run_ensemble_staged(&batches, &sizes, &cfg.fusion)?;
    ensure_parent(&cfg.output.fused)?;
    let out = File::create(&cfg.output.fused)
        .with_context(|| format!("cannot create `{}`", cfg.output.fused.display()))?;
    let mut out = BufWriter::new(out);
    ingest::write_detections(&mut out, &fused)?;
    out.flush()?;
    log::info!(
        "fuse: merged={} post_nms={} post_threshold={} post_ignore={} -> {}",
        counts.merged,
        counts.post_nms,
        counts.post_threshold,
        counts.post_ignore,
        cfg.output.fused.display()
    );
    Ok(counts)
}

/// Scores a fused detection file against the ground truth and writes the
/// text and JSON reports.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let det_path = cfg
        .eval
        .detections
        .as_deref()
        .unwrap_or(cfg.output.fused.as_path());
    require_exists(det_path, "detection file")?;
    let gt_dir = cfg.gt_dir.as_deref().context("config needs `gt_dir`")?;

    let f = File::open(det_path)
        .with_context(|| format!("cannot open `{}`", det_path.display()))?;
    let dets = ingest::parse_detections_mixed(BufReader::new(f))
        .with_context(|| format!("in `{}`", det_path.display()))?;
    let gts = load_gt_dir(gt_dir, &cfg.eval.dont_care_sentinel)?;
    let vocab = load_vocabulary(cfg)?;

    let report = evaluation::evaluate(&dets, &gts, &vocab, &cfg.eval.to_eval_config())?;

    ensure_parent(&cfg.output.report_text)?;
    ensure_parent(&cfg.output.report_json)?;
    fs::write(&cfg.output.report_text, report.render_text())
        .with_context(|| format!("cannot write `{}`", cfg.output.report_text.display()))?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&cfg.output.report_json, json + "\n")
        .with_context(|| format!("cannot write `{}`", cfg.output.report_json.display()))?;
    Ok(report)
}

/// Builds a vocabulary from the ground-truth directory and writes it as
/// one normalized word per line, sorted and deduplicated.
pub fn cmd_build_vocab(cfg: &RunConfig) -> Result<usize> {
    let gt_dir = cfg.gt_dir.as_deref().context("config needs `gt_dir`")?;
    let words = load_gt_dir(gt_dir, &cfg.eval.dont_care_sentinel)?;
    let vocab = Vocabulary::build(&words, cfg.eval.case_fold);
    let mut out = String::new();
    for w in vocab.words() {
        out.push_str(w);
        out.push('\n');
    }
    ensure_parent(&cfg.output.vocabulary)?;
    fs::write(&cfg.output.vocabulary, out)
        .with_context(|| format!("cannot write `{}`", cfg.output.vocabulary.display()))?;
    Ok(vocab.len())
}

/// Default sentinel re-export for binary code.
pub fn default_dont_care() -> &'static str {
    DEFAULT_DONT_CARE
}
