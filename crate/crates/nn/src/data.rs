//! Turning videos with multi-source features into model-ready samples.

use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use talkit_core::fusion::{align_sources, AlignMode, FeatureSequence};
use talkit_core::io::{Annotations, Manifest};
use talkit_core::synth::SynthDataset;
use talkit_core::{ActionInstance, Segment, VideoRecord};

use crate::error::{Error, Result};
use crate::model::InputSource;

/// One video on the reference grid, sources in model order.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: VideoRecord,
    pub sources: Vec<Array2<f64>>,
    pub seconds_per_step: f64,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.sources[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty() || self.sources[0].nrows() == 0
    }
}

/// Align `seqs` onto the grid of the first model source and order them as
/// the model expects.
pub fn prepare_sample(
    record: VideoRecord,
    seqs: &[FeatureSequence],
    model_sources: &[InputSource],
    mode: AlignMode,
) -> Result<Sample> {
    let reference = &model_sources
        .first()
        .ok_or_else(|| Error::Config("model has no input sources".into()))?
        .name;
    let aligned = align_sources(seqs, reference, mode)?;
    let mut sources = Vec::with_capacity(model_sources.len());
    for ms in model_sources {
        let seq = aligned.iter().find(|s| s.source_name == ms.name).ok_or_else(|| {
            Error::Input(format!(
                "video `{}` lacks source `{}`",
                record.video_id, ms.name
            ))
        })?;
        sources.push(seq.data.clone());
    }
    let seconds_per_step = aligned
        .iter()
        .find(|s| &s.source_name == reference)
        .expect("reference aligned")
        .seconds_per_step();
    Ok(Sample {
        record,
        sources,
        seconds_per_step,
    })
}

pub fn samples_from_synth(ds: &SynthDataset, model_sources: &[InputSource], mode: AlignMode) -> Result<Vec<Sample>> {
    ds.videos
        .iter()
        .map(|v| prepare_sample(v.record.clone(), &v.sources, model_sources, mode))
        .collect()
}

/// Load every annotated video listed in the manifest.
pub fn load_samples(
    manifest_path: &Path,
    annotations: &Annotations,
    model_sources: &[InputSource],
    mode: AlignMode,
) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(annotations.videos.len());
    for record in &annotations.videos {
        let entry = manifest.entry(&record.video_id).ok_or_else(|| {
            Error::Input(format!("video `{}` missing from manifest", record.video_id))
        })?;
        let seqs = entry
            .load_sources(base)?
            .into_iter()
            .map(|(src, m)| {
                FeatureSequence::new(
                    src.name,
                    m.mapv(f64::from),
                    src.frames_per_clip,
                    src.clip_stride_frames,
                    entry.fps,
                )
            })
            .collect::<talkit_core::Result<Vec<_>>>()?;
        out.push(prepare_sample(record.clone(), &seqs, model_sources, mode)?);
    }
    Ok(out)
}

/// Crop a sample longer than `max_len` steps to a random window that
/// overlaps at least one instance; instances are shifted and re-clipped.
pub fn crop_sample<R: Rng>(sample: &Sample, max_len: usize, rng: &mut R) -> Sample {
    let t = sample.len();
    if t <= max_len {
        return sample.clone();
    }
    let dt = sample.seconds_per_step;
    let last_start = t - max_len;
    let start = match sample.record.instances.len() {
        0 => rng.random_range(0..=last_start),
        n => {
            let inst = sample.record.instances[rng.random_range(0..n)].segment;
            // windows [w, w + max_len) whose time span overlaps the instance
            let lo = ((inst.start() / dt).floor() as isize - max_len as isize + 1).max(0) as usize;
            let hi = ((inst.end() / dt).ceil() as usize).min(last_start);
            if lo <= hi {
                rng.random_range(lo..=hi)
            } else {
                rng.random_range(0..=last_start)
            }
        }
    };
    let offset = start as f64 * dt;
    let duration = max_len as f64 * dt;
    let instances = sample
        .record
        .instances
        .iter()
        .filter_map(|i| {
            let shifted = Segment::new(i.segment.start() - offset, i.segment.end() - offset).ok()?;
            Some(ActionInstance {
                label_id: i.label_id,
                segment: shifted.clip(duration)?,
            })
        })
        .collect();
    Sample {
        record: VideoRecord {
            video_id: sample.record.video_id.clone(),
            duration,
            instances,
        },
        sources: sample
            .sources
            .iter()
            .map(|x| x.slice(s![start..start + max_len, ..]).to_owned())
            .collect(),
        seconds_per_step: dt,
    }
}
