//! Seeded synthetic moment-query data with planted ground truth.
//!
//! Every class owns one signature vector per source. A source row whose clip
//! center falls inside an instance carries that instance's signature; noise
//! is added everywhere. Signatures of a source are mutually orthogonal, so
//! the task is linearly separable at zero noise.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureSequence;
use crate::io::{self, Annotations, Manifest, ManifestEntry, SourceEntry};
use crate::metrics::DetectionMap;
use crate::segment::{ActionInstance, Detection, Segment, VideoRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub name: String,
    pub dim: usize,
    pub frames_per_clip: usize,
    pub clip_stride_frames: usize,
    /// Multiplies the whole source (signal and noise).
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SynthSource {
    pub fn new(name: &str, dim: usize, frames_per_clip: usize, clip_stride_frames: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            frames_per_clip,
            clip_stride_frames,
            scale: 1.0,
        }
    }
}

/// The three clip-feature sources used by the reference system.
pub fn default_sources() -> Vec<SynthSource> {
    vec![
        SynthSource::new("slowfast", 2304, 32, 16),
        SynthSource::new("omnivore", 1536, 32, 16),
        SynthSource::new("egovlp", 256, 4, 4),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub duration_range: (f64, f64),
    pub num_classes: usize,
    pub instances_per_video: (usize, usize),
    /// Probability that an instance is shorter than `short_threshold`.
    pub short_fraction: f64,
    pub short_threshold: f64,
    pub short_min: f64,
    /// Mean of the exponential tail added on top of `short_threshold`.
    pub long_mean: f64,
    pub long_max: f64,
    pub fps: f64,
    pub sources: Vec<SynthSource>,
    /// Per-entry RMS of a class signature.
    pub signal: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    pub video_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 20,
            duration_range: (60.0, 130.0),
            num_classes: 5,
            instances_per_video: (2, 6),
            short_fraction: 0.224,
            short_threshold: 3.0,
            short_min: 1.0,
            long_mean: 8.0,
            long_max: 40.0,
            fps: 30.0,
            sources: default_sources(),
            signal: 1.0,
            noise: 1.0,
            seed: 0,
            video_prefix: "synth".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if !(0.0..=1.0).contains(&self.short_fraction) {
            return bad(format!("short_fraction {} outside [0, 1]", self.short_fraction));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be > 0".into());
        }
        if self.sources.is_empty() {
            return bad("at least one source is required".into());
        }
        for s in &self.sources {
            if s.dim == 0 || s.frames_per_clip == 0 || s.clip_stride_frames == 0 {
                return bad(format!("source `{}` has zero dim or geometry", s.name));
            }
        }
        let (dmin, dmax) = self.duration_range;
        if !(dmin > 0.0) || dmax < dmin {
            return bad(format!("invalid duration range ({dmin}, {dmax})"));
        }
        if !(self.short_min > 0.0) || self.short_min >= self.short_threshold {
            return bad("need 0 < short_min < short_threshold".into());
        }
        if self.long_max < self.short_threshold || !(self.long_mean > 0.0) {
            return bad("need long_max >= short_threshold and long_mean > 0".into());
        }
        if self.long_max > dmin {
            return bad(format!(
                "instances up to {} s do not fit videos as short as {dmin} s",
                self.long_max
            ));
        }
        if self.instances_per_video.0 > self.instances_per_video.1 {
            return bad("instances_per_video range is inverted".into());
        }
        if !(self.fps > 0.0) || self.noise < 0.0 {
            return bad("fps must be > 0 and noise >= 0".into());
        }
        Ok(())
    }
}

/// Draw one instance duration from the short/long-tail mixture.
pub fn sample_instance_duration<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> f64 {
    if rng.random::<f64>() < cfg.short_fraction {
        rng.random_range(cfg.short_min..cfg.short_threshold)
    } else {
        let tail = Exp::new(1.0 / cfg.long_mean).expect("positive rate");
        loop {
            let d = cfg.short_threshold + tail.sample(rng);
            if d <= cfg.long_max {
                return d;
            }
        }
    }
}

/// Orthogonal (when `dim >= n`) signature rows with per-entry RMS `signal`.
fn class_signatures<R: Rng>(n: usize, dim: usize, signal: f64, rng: &mut R) -> Array2<f64> {
    let mut sig = Array2::<f64>::zeros((n, dim));
    for c in 0..n {
        let mut v: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.sample(StandardNormal));
        if c < dim {
            for prev in 0..c {
                let p = sig.row(prev).to_owned();
                let proj = v.dot(&p) / p.dot(&p);
                v.scaled_add(-proj, &p);
            }
        }
        let norm = v.dot(&v).sqrt().max(1e-12);
        v *= signal * (dim as f64).sqrt() / norm;
        sig.row_mut(c).assign(&v);
    }
    sig
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub record: VideoRecord,
    pub sources: Vec<FeatureSequence>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub num_classes: usize,
    pub fps: f64,
    pub videos: Vec<SynthVideo>,
    /// `signatures[source][class]`.
    pub signatures: Vec<Array2<f64>>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let signatures: Vec<Array2<f64>> = cfg
        .sources
        .iter()
        .map(|s| class_signatures(cfg.num_classes, s.dim, cfg.signal, &mut rng))
        .collect();

    let mut videos = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let video_id = format!("{}_{v:05}", cfg.video_prefix);
        let (dmin, dmax) = cfg.duration_range;
        let duration = if dmax > dmin { rng.random_range(dmin..=dmax) } else { dmin };
        let n = rng.random_range(cfg.instances_per_video.0..=cfg.instances_per_video.1);
        let mut lengths: Vec<f64> = (0..n).map(|_| sample_instance_duration(cfg, &mut rng)).collect();
        while lengths.iter().sum::<f64>() > duration {
            lengths.pop();
        }
        let free = duration - lengths.iter().sum::<f64>();
        let mut cuts: Vec<f64> = (0..lengths.len()).map(|_| rng.random_range(0.0..=free)).collect();
        cuts.sort_by(f64::total_cmp);
        lengths.shuffle(&mut rng);
        let mut instances = Vec::with_capacity(lengths.len());
        let mut used = 0.0;
        for (len, cut) in lengths.iter().zip(&cuts) {
            let start = cut + used;
            let end = (start + len).min(duration);
            used += len;
            let label_id = rng.random_range(0..cfg.num_classes);
            instances.push(ActionInstance {
                label_id,
                segment: Segment::new(start, end)?,
            });
        }
        let record = VideoRecord::new(video_id, duration, instances)?;

        let mut sources = Vec::with_capacity(cfg.sources.len());
        for (k, src) in cfg.sources.iter().enumerate() {
            let t = io::expected_num_clips(duration, cfg.fps, src.frames_per_clip, src.clip_stride_frames);
            let mut data = Array2::<f64>::zeros((t, src.dim));
            let mut seq = FeatureSequence::new(
                src.name.clone(),
                Array2::zeros((1, 1)),
                src.frames_per_clip,
                src.clip_stride_frames,
                cfg.fps,
            )?;
            for i in 0..t {
                let center = seq.center_time(i);
                for inst in &record.instances {
                    if center >= inst.segment.start() && center <= inst.segment.end() {
                        data.row_mut(i)
                            .scaled_add(1.0, &signatures[k].row(inst.label_id));
                    }
                }
            }
            if cfg.noise > 0.0 {
                data.mapv_inplace(|x| x + cfg.noise * rng.sample::<f64, _>(StandardNormal));
            }
            // stored as float32 on disk; keep the in-memory copy identical
            data.mapv_inplace(|x| (x * src.scale) as f32 as f64);
            seq.data = data;
            sources.push(seq);
        }
        videos.push(SynthVideo { record, sources });
    }
    Ok(SynthDataset {
        num_classes: cfg.num_classes,
        fps: cfg.fps,
        videos,
        signatures,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

impl SynthDataset {
    pub fn annotations(&self) -> Annotations {
        Annotations {
            num_classes: self.num_classes,
            videos: self.videos.iter().map(|v| v.record.clone()).collect(),
        }
    }

    pub fn records(&self) -> Vec<VideoRecord> {
        self.videos.iter().map(|v| v.record.clone()).collect()
    }

    /// Move videos `at..` into a new dataset sharing the class signatures,
    /// e.g. to hold out an evaluation split drawn from the same classes.
    pub fn split_off(&mut self, at: usize) -> SynthDataset {
        SynthDataset {
            num_classes: self.num_classes,
            fps: self.fps,
            videos: self.videos.split_off(at.min(self.videos.len())),
            signatures: self.signatures.clone(),
        }
    }

    /// Write features, `manifest.json` and `annotations.json` under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        let mut entries = Vec::with_capacity(self.videos.len());
        for v in &self.videos {
            let mut sources = Vec::with_capacity(v.sources.len());
            for s in &v.sources {
                let rel = PathBuf::from("features").join(format!("{}.{}.tkf", v.record.video_id, s.source_name));
                io::write_feature_file(dir.join(&rel), &s.data.mapv(|x| x as f32))?;
                sources.push(SourceEntry {
                    name: s.source_name.clone(),
                    path: rel,
                    frames_per_clip: s.frames_per_clip,
                    clip_stride_frames: s.clip_stride_frames,
                    dim: s.dim(),
                });
            }
            entries.push(ManifestEntry {
                video_id: v.record.video_id.clone(),
                duration: v.record.duration,
                fps: self.fps,
                sources,
            });
        }
        let manifest = Manifest { videos: entries };
        manifest.write(dir.join(MANIFEST_FILE))?;
        io::write_annotations(dir.join(ANNOTATIONS_FILE), &self.annotations())?;
        Ok(manifest)
    }
}

/// Every GT instance as a score-1 detection.
pub fn oracle_detections(videos: &[VideoRecord]) -> DetectionMap {
    permuted_oracle_detections(videos, |l| l)
}

/// Oracle detections with labels remapped through `relabel`.
pub fn permuted_oracle_detections(videos: &[VideoRecord], relabel: impl Fn(usize) -> usize) -> DetectionMap {
    videos
        .iter()
        .map(|v| {
            let dets = v
                .instances
                .iter()
                .map(|i| Detection {
                    label_id: relabel(i.label_id),
                    score: 1.0,
                    segment: i.segment,
                })
                .collect();
            (v.video_id.clone(), dets)
        })
        .collect()
}
