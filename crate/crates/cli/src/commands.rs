//! The five pipeline commands. Each reads a [`RunConfig`] and writes its
//! artifacts under `output_dir`:
//!
//! ```text
//! <output_dir>/data/{train,eval}/   generate: manifest.json, annotations.json, features/
//! <output_dir>/train/               train: train_log.jsonl, epoch_NNN.{json,bin}
//! <output_dir>/detections.json      predict
//! <output_dir>/eval_report.json     eval
//! <output_dir>/ablate/<mode>/...    ablate: the above per fusion mode, plus summary.json
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use talkit_core::io::{self, Annotations, Manifest, MAX_DETECTIONS_PER_VIDEO};
use talkit_core::metrics::evaluate;
use talkit_core::synth::{generate as generate_synth, ANNOTATIONS_FILE, MANIFEST_FILE};
use talkit_core::EvalReport;
use talkit_nn::checkpoint::load_checkpoint;
use talkit_nn::data::{load_samples, Sample};
use talkit_nn::model::{FusionMode, Localizer};
use talkit_nn::train::{predict_all, train as train_model};

use crate::config::{derive_seed, RunConfig, SeedStream};

pub const TRAIN_DIR: &str = "train";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const ABLATE_DIR: &str = "ablate";
pub const ABLATE_SUMMARY_FILE: &str = "summary.json";

/// A failed command: bad input (exit 1) or a failure while running (exit 2).
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "invalid input: {e:#}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

trait OrRuntime<T> {
    fn runtime(self, what: &str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrRuntime<T> for std::result::Result<T, E> {
    fn runtime(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into().context(what.to_string())))
    }
}

fn invalid(msg: String) -> Failure {
    Failure::Validation(anyhow::anyhow!(msg))
}

fn require_file(path: &Path, hint: &str) -> CmdResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{} does not exist ({hint})", path.display())))
    }
}

/// A dataset split on disk.
pub struct Split {
    pub dir: PathBuf,
    pub annotations: Annotations,
    /// `(name, dim)` per source in manifest order.
    pub sources: Vec<(String, usize)>,
}

impl Split {
    pub fn open(dir: &Path) -> CmdResult<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let ann_path = dir.join(ANNOTATIONS_FILE);
        require_file(&manifest_path, "run `generate` first or set data.dir")?;
        require_file(&ann_path, "run `generate` first or set data.dir")?;
        let manifest = Manifest::read(&manifest_path).map_err(|e| Failure::Validation(e.into()))?;
        let annotations = io::read_annotations(&ann_path).map_err(|e| Failure::Validation(e.into()))?;
        let first = manifest
            .videos
            .first()
            .ok_or_else(|| invalid(format!("{} lists no videos", manifest_path.display())))?;
        let sources = first.sources.iter().map(|s| (s.name.clone(), s.dim)).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            annotations,
            sources,
        })
    }

    pub fn samples(&self, model: &Localizer, cfg: &RunConfig) -> CmdResult<Vec<Sample>> {
        load_samples(
            &self.dir.join(MANIFEST_FILE),
            &self.annotations,
            &model.config().sources,
            cfg.data.align,
        )
        .map_err(|e| Failure::Validation(anyhow::Error::new(e).context(format!("loading {}", self.dir.display()))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub train_videos: usize,
    pub eval_videos: usize,
    pub data_dir: PathBuf,
}

/// Generate the synthetic dataset and split off the held-out videos.
pub fn generate(cfg: &RunConfig) -> CmdResult<GenerateSummary> {
    let synth = cfg.synth_config();
    if cfg.data.holdout_videos >= synth.num_videos {
        return Err(invalid(format!(
            "data.holdout_videos ({}) must be smaller than data.synth.num_videos ({})",
            cfg.data.holdout_videos, synth.num_videos
        )));
    }
    synth.validate().map_err(|e| Failure::Validation(e.into()))?;
    let mut ds = generate_synth(&synth).runtime("generating synthetic data")?;
    let held_out = ds.split_off(synth.num_videos - cfg.data.holdout_videos);
    ds.write_to(cfg.train_split()).runtime("writing train split")?;
    held_out.write_to(cfg.eval_split()).runtime("writing eval split")?;
    Ok(GenerateSummary {
        train_videos: ds.videos.len(),
        eval_videos: held_out.videos.len(),
        data_dir: cfg.data_dir(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

fn train_into(cfg: &RunConfig, mode: FusionMode, out: &Path) -> CmdResult<TrainSummary> {
    let split = Split::open(&cfg.train_split())?;
    let model_cfg = cfg.model_config(&split.sources, split.annotations.num_classes, mode);
    let mut model =
        Localizer::new(model_cfg, derive_seed(cfg.seed, SeedStream::ModelInit)).map_err(|e| Failure::Validation(e.into()))?;
    let samples = split.samples(&model, cfg)?;
    let report = train_model(&samples, &mut model, &cfg.train_config(), Some(&out.join(TRAIN_DIR))).runtime("training")?;
    Ok(TrainSummary {
        epoch_losses: report.epoch_losses,
        checkpoints: report.checkpoints,
    })
}

pub fn train(cfg: &RunConfig) -> CmdResult<TrainSummary> {
    train_into(cfg, cfg.fusion.mode, &cfg.output_dir)
}

/// The highest-numbered `epoch_NNN.json` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> CmdResult<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|_| invalid(format!("no checkpoints in {} (run `train` first)", dir.display())))?;
    entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.starts_with("epoch_"))
        })
        .max()
        .ok_or_else(|| invalid(format!("no checkpoints in {} (run `train` first)", dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub checkpoint: PathBuf,
    pub detections: PathBuf,
    pub videos: usize,
    pub max_per_video: usize,
}

fn predict_into(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> CmdResult<PredictSummary> {
    let checkpoint = match checkpoint {
        Some(p) => {
            require_file(p, "checkpoint")?;
            p.to_path_buf()
        }
        None => latest_checkpoint(&out.join(TRAIN_DIR))?,
    };
    let (model, _) = load_checkpoint(&checkpoint).map_err(|e| Failure::Validation(e.into()))?;
    let split = Split::open(&cfg.eval_split())?;
    let samples = split.samples(&model, cfg)?;
    let dets = predict_all(&model, &samples, &cfg.decode).runtime("predicting")?;
    let path = out.join(DETECTIONS_FILE);
    io::write_detections(&path, &dets, MAX_DETECTIONS_PER_VIDEO).runtime("writing detections")?;
    Ok(PredictSummary {
        checkpoint,
        detections: path,
        videos: dets.len(),
        max_per_video: dets.values().map(Vec::len).max().unwrap_or(0),
    })
}

pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>) -> CmdResult<PredictSummary> {
    predict_into(cfg, checkpoint, &cfg.output_dir)
}

fn eval_into(cfg: &RunConfig, detections: Option<&Path>, out: &Path) -> CmdResult<EvalReport> {
    let det_path = detections.map(Path::to_path_buf).unwrap_or_else(|| out.join(DETECTIONS_FILE));
    require_file(&det_path, "run `predict` first or pass --detections")?;
    let ann_path = cfg.eval_split().join(ANNOTATIONS_FILE);
    require_file(&ann_path, "run `generate` first or set data.dir")?;
    let dets = io::read_detections(&det_path).map_err(|e| Failure::Validation(e.into()))?;
    let ann = io::read_annotations(&ann_path).map_err(|e| Failure::Validation(e.into()))?;
    let report = evaluate(&dets, &ann.videos, &cfg.eval);
    fs::create_dir_all(out).runtime("creating output directory")?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(out.join(EVAL_REPORT_FILE), json + "\n").runtime("writing eval report")?;
    Ok(report)
}

pub fn eval(cfg: &RunConfig, detections: Option<&Path>) -> CmdResult<EvalReport> {
    eval_into(cfg, detections, &cfg.output_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub mode: FusionMode,
    pub average_map: f64,
    pub recall_at_1x: f64,
    pub map_per_threshold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub runs: Vec<AblationEntry>,
    /// `proj_cat - cat`.
    pub delta_average_map: f64,
    pub delta_recall_at_1x: f64,
}

pub fn mode_name(mode: FusionMode) -> &'static str {
    match mode {
        FusionMode::Cat => "cat",
        FusionMode::ProjCat => "proj_cat",
    }
}

/// Train, predict and evaluate once per fusion mode on the same data and
/// seeds, generating the dataset first if it is missing.
pub fn ablate(cfg: &RunConfig) -> CmdResult<(AblationSummary, Vec<EvalReport>)> {
    if !cfg.train_split().join(MANIFEST_FILE).is_file() {
        generate(cfg)?;
    }
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for mode in [FusionMode::Cat, FusionMode::ProjCat] {
        let out = cfg.output_dir.join(ABLATE_DIR).join(mode_name(mode));
        train_into(cfg, mode, &out)?;
        predict_into(cfg, None, &out)?;
        let report = eval_into(cfg, Some(&out.join(DETECTIONS_FILE)), &out)?;
        runs.push(AblationEntry {
            mode,
            average_map: report.average_map,
            recall_at_1x: report.recall_at_1x_tiou05,
            map_per_threshold: report.map_per_threshold.clone(),
        });
        reports.push(report);
    }
    let summary = AblationSummary {
        delta_average_map: runs[1].average_map - runs[0].average_map,
        delta_recall_at_1x: runs[1].recall_at_1x - runs[0].recall_at_1x,
        runs,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(cfg.output_dir.join(ABLATE_DIR).join(ABLATE_SUMMARY_FILE), json + "\n").runtime("writing ablation summary")?;
    Ok((summary, reports))
}
