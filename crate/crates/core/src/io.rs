//! On-disk formats: binary feature files, annotation/manifest JSON and the
//! detections file handed to evaluation.
//!
//! Feature file layout (all little-endian):
//!
//! | offset | size | field                        |
//! |--------|------|------------------------------|
//! | 0      | 4    | magic `TKF1`                 |
//! | 4      | 1    | dtype code (0 = float32)     |
//! | 5      | 4    | `T` as u32                   |
//! | 9      | 4    | `D` as u32                   |
//! | 13     | 3    | zero padding                 |
//! | 16     | 4·T·D| row-major float32 payload    |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DetectionMap;
use crate::segment::{ActionInstance, Detection, Segment, VideoRecord};

pub const FEATURE_MAGIC: &[u8; 4] = b"TKF1";
pub const FEATURE_HEADER_LEN: usize = 16;
pub const DTYPE_F32_LE: u8 = 0;

/// Encode a matrix as a feature blob (header + payload).
pub fn encode_feature_bytes(m: &Array2<f32>) -> Result<Vec<u8>> {
    let (t, d) = m.dim();
    if t == 0 || d == 0 {
        return Err(Error::Contract(format!("feature matrix must be non-empty, got {t}x{d}")));
    }
    let t32 = u32::try_from(t).map_err(|_| Error::Contract(format!("T={t} exceeds u32")))?;
    let d32 = u32::try_from(d).map_err(|_| Error::Contract(format!("D={d} exceeds u32")))?;
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * t * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.push(DTYPE_F32_LE);
    buf.extend_from_slice(&t32.to_le_bytes());
    buf.extend_from_slice(&d32.to_le_bytes());
    buf.extend_from_slice(&[0u8; 3]);
    for &v in m.iter() {
        if !v.is_finite() {
            return Err(Error::Contract("feature values must be finite".into()));
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Decode one feature blob from the front of `bytes`, returning the matrix
/// and the number of bytes consumed.
pub fn decode_feature_bytes(bytes: &[u8], path: &Path) -> Result<(Array2<f32>, usize)> {
    let fmt = |field: &'static str, reason: String| Error::Format {
        path: path.to_path_buf(),
        field,
        reason,
    };
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(fmt(
            "header",
            format!("need {FEATURE_HEADER_LEN} header bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(fmt("magic", format!("expected \"TKF1\", found {:?}", &bytes[0..4])));
    }
    if bytes[4] != DTYPE_F32_LE {
        return Err(fmt("dtype_code", format!("unsupported dtype code {}", bytes[4])));
    }
    let t = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if t == 0 {
        return Err(fmt("T", "must be > 0".into()));
    }
    if d == 0 {
        return Err(fmt("D", "must be > 0".into()));
    }
    let payload_len = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fmt("payload", format!("T={t}, D={d} overflows")))?;
    let end = FEATURE_HEADER_LEN + payload_len;
    if bytes.len() < end {
        return Err(fmt(
            "payload",
            format!(
                "truncated: expected {payload_len} bytes for {t}x{d}, found {}",
                bytes.len() - FEATURE_HEADER_LEN
            ),
        ));
    }
    let data: Vec<f32> = bytes[FEATURE_HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = Array2::from_shape_vec((t, d), data).expect("length checked above");
    Ok((m, end))
}

pub fn write_feature_file(path: impl AsRef<Path>, m: &Array2<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_bytes(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, used) = decode_feature_bytes(&bytes, path)?;
    if used != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            field: "payload",
            reason: format!("{} trailing bytes after payload", bytes.len() - used),
        });
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceJson {
    label_id: usize,
    start: f64,
    end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoJson {
    video_id: String,
    duration: f64,
    instances: Vec<InstanceJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationsJson {
    videos: Vec<VideoJson>,
    num_classes: usize,
}

/// Ground truth for a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    pub num_classes: usize,
    pub videos: Vec<VideoRecord>,
}

impl Annotations {
    pub fn from_json_str(text: &str, path: &Path) -> Result<Self> {
        let raw: AnnotationsJson = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        let mut videos = Vec::with_capacity(raw.videos.len());
        for v in raw.videos {
            let mut instances = Vec::with_capacity(v.instances.len());
            for (i, inst) in v.instances.iter().enumerate() {
                let invalid = |reason: String| Error::Validation {
                    video_id: v.video_id.clone(),
                    index: Some(i),
                    reason,
                };
                if inst.label_id >= raw.num_classes {
                    return Err(invalid(format!(
                        "label_id {} out of range for {} classes",
                        inst.label_id, raw.num_classes
                    )));
                }
                let segment =
                    Segment::new(inst.start, inst.end).map_err(|e| invalid(e.to_string()))?;
                instances.push(ActionInstance {
                    label_id: inst.label_id,
                    segment,
                });
            }
            videos.push(VideoRecord::new(v.video_id, v.duration, instances)?);
        }
        Ok(Self {
            num_classes: raw.num_classes,
            videos,
        })
    }

    pub fn to_json_string(&self) -> String {
        let raw = AnnotationsJson {
            num_classes: self.num_classes,
            videos: self
                .videos
                .iter()
                .map(|v| VideoJson {
                    video_id: v.video_id.clone(),
                    duration: v.duration,
                    instances: v
                        .instances
                        .iter()
                        .map(|i| InstanceJson {
                            label_id: i.label_id,
                            start: i.segment.start(),
                            end: i.segment.end(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("annotations serialize")
    }
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Annotations::from_json_str(&text, path)
}

pub fn write_annotations(path: impl AsRef<Path>, ann: &Annotations) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ann.to_json_string()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionJson {
    label_id: usize,
    score: f64,
    segment: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionsFileJson {
    version: String,
    detect_results: BTreeMap<String, Vec<DetectionJson>>,
}

pub const DETECTIONS_VERSION: &str = "1.0";

/// Upper bound on detections stored per video.
pub const MAX_DETECTIONS_PER_VIDEO: usize = 2000;

/// Serialize detections; every per-video list must already respect `cap`.
pub fn detections_to_json(results: &DetectionMap, cap: usize) -> Result<String> {
    let mut detect_results = BTreeMap::new();
    for (vid, list) in results {
        if list.len() > cap {
            return Err(Error::Contract(format!(
                "video `{vid}` has {} detections, cap is {cap}",
                list.len()
            )));
        }
        let mut sorted = list.clone();
        sorted.sort_by(crate::segment::detection_order);
        detect_results.insert(
            vid.clone(),
            sorted
                .into_iter()
                .map(|d| DetectionJson {
                    label_id: d.label_id,
                    score: d.score,
                    segment: d.segment.into(),
                })
                .collect(),
        );
    }
    let file = DetectionsFileJson {
        version: DETECTIONS_VERSION.into(),
        detect_results,
    };
    Ok(serde_json::to_string(&file).expect("detections serialize"))
}

pub fn write_detections(path: impl AsRef<Path>, results: &DetectionMap, cap: usize) -> Result<()> {
    let path = path.as_ref();
    let text = detections_to_json(results, cap)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn detections_from_json(text: &str, path: &Path) -> Result<DetectionMap> {
    let raw: DetectionsFileJson = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    if raw.version != DETECTIONS_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            field: "version",
            reason: format!("expected \"{DETECTIONS_VERSION}\", found \"{}\"", raw.version),
        });
    }
    let mut out = DetectionMap::new();
    for (vid, list) in raw.detect_results {
        if list.len() > MAX_DETECTIONS_PER_VIDEO {
            return Err(Error::Validation {
                video_id: vid,
                index: None,
                reason: format!("{} detections exceed the cap of {MAX_DETECTIONS_PER_VIDEO}", list.len()),
            });
        }
        let mut dets = Vec::with_capacity(list.len());
        for (i, d) in list.into_iter().enumerate() {
            let invalid = |reason: String| Error::Validation {
                video_id: vid.clone(),
                index: Some(i),
                reason,
            };
            let seg = Segment::new(d.segment[0], d.segment[1]).map_err(|e| invalid(e.to_string()))?;
            dets.push(Detection::new(d.label_id, d.score, seg).map_err(|e| invalid(e.to_string()))?);
        }
        out.insert(vid, dets);
    }
    Ok(out)
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<DetectionMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    detections_from_json(&text, path)
}

/// Number of clips a feature extractor yields for a video.
///
/// Clips start every `stride` frames and must fit inside the video; a video
/// shorter than one clip still yields a single (padded) clip.
pub fn expected_num_clips(duration: f64, fps: f64, frames_per_clip: usize, stride: usize) -> usize {
    let frames = (duration * fps).floor() as usize;
    if frames < frames_per_clip {
        1
    } else {
        (frames - frames_per_clip) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub frames_per_clip: usize,
    pub clip_stride_frames: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub duration: f64,
    pub fps: f64,
    pub sources: Vec<SourceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn entry(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }
}

impl ManifestEntry {
    /// Load every source of this video and check it against the declared
    /// dim and clip geometry.
    pub fn load_sources(&self, base_dir: &Path) -> Result<Vec<(SourceEntry, Array2<f32>)>> {
        let mut out = Vec::with_capacity(self.sources.len());
        for src in &self.sources {
            let path = base_dir.join(&src.path);
            let m = read_feature_file(&path)?;
            let (t, d) = m.dim();
            if d != src.dim {
                return Err(Error::Validation {
                    video_id: self.video_id.clone(),
                    index: None,
                    reason: format!("source `{}` declares dim {}, file has {d}", src.name, src.dim),
                });
            }
            let expect = expected_num_clips(
                self.duration,
                self.fps,
                src.frames_per_clip,
                src.clip_stride_frames,
            );
            if t != expect {
                return Err(Error::Validation {
                    video_id: self.video_id.clone(),
                    index: None,
                    reason: format!(
                        "source `{}` geometry implies {expect} clips, file has {t}",
                        src.name
                    ),
                });
            }
            out.push((src.clone(), m));
        }
        Ok(out)
    }
}
