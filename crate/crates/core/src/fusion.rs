//! Multi-source feature fusion.
//!
//! Sources arrive with their own clip geometry (frames per clip and clip
//! stride) and are first resampled onto a reference source's grid. They are
//! then either concatenated raw (`cat`) or projected independently and then
//! concatenated (`proj_cat`).

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub source_name: String,
    /// `T x D`, one row per clip.
    pub data: Array2<f64>,
    pub frames_per_clip: usize,
    pub clip_stride_frames: usize,
    pub fps: f64,
}

impl FeatureSequence {
    pub fn new(
        source_name: impl Into<String>,
        data: Array2<f64>,
        frames_per_clip: usize,
        clip_stride_frames: usize,
        fps: f64,
    ) -> Result<Self> {
        let source_name = source_name.into();
        let (t, d) = data.dim();
        if t == 0 || d == 0 {
            return Err(Error::Alignment(format!("source `{source_name}` is empty ({t}x{d})")));
        }
        if frames_per_clip == 0 || clip_stride_frames == 0 || !(fps > 0.0) {
            return Err(Error::Alignment(format!(
                "source `{source_name}` has invalid geometry: {frames_per_clip} frames/clip, stride {clip_stride_frames}, {fps} fps"
            )));
        }
        Ok(Self {
            source_name,
            data,
            frames_per_clip,
            clip_stride_frames,
            fps,
        })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Clip center time of row `i` in seconds.
    pub fn center_time(&self, i: usize) -> f64 {
        (i as f64 * self.clip_stride_frames as f64 + self.frames_per_clip as f64 / 2.0) / self.fps
    }

    /// Twice the clip center in frames; integral, so nearest-neighbour search
    /// has exact ties.
    fn center2(&self, i: usize) -> i64 {
        (2 * i * self.clip_stride_frames + self.frames_per_clip) as i64
    }

    /// Seconds between consecutive rows.
    pub fn seconds_per_step(&self) -> f64 {
        self.clip_stride_frames as f64 / self.fps
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Nearest,
    Linear,
}

/// Two candidate rows of `src` bracketing the doubled center `target2`.
fn bracket(src: &FeatureSequence, target2: i64) -> (usize, usize) {
    let last = src.len() - 1;
    let num = target2 - src.frames_per_clip as i64;
    let den = 2 * src.clip_stride_frames as i64;
    let lo = num.div_euclid(den).clamp(0, last as i64) as usize;
    (lo, (lo + 1).min(last))
}

/// Resample every source onto the grid of `reference`.
pub fn align_sources(
    sources: &[FeatureSequence],
    reference: &str,
    mode: AlignMode,
) -> Result<Vec<FeatureSequence>> {
    let refseq = sources
        .iter()
        .find(|s| s.source_name == reference)
        .ok_or_else(|| Error::Alignment(format!("reference source `{reference}` not present")))?;
    let t_ref = refseq.len();
    let mut out = Vec::with_capacity(sources.len());
    for src in sources {
        if src.is_empty() {
            return Err(Error::Alignment(format!("source `{}` is empty", src.source_name)));
        }
        if src.fps != refseq.fps {
            return Err(Error::Alignment(format!(
                "source `{}` has fps {}, reference has {}",
                src.source_name, src.fps, refseq.fps
            )));
        }
        let mut data = Array2::zeros((t_ref, src.dim()));
        for j in 0..t_ref {
            let target2 = refseq.center2(j);
            let (lo, hi) = bracket(src, target2);
            let dlo = (src.center2(lo) - target2).abs();
            let dhi = (src.center2(hi) - target2).abs();
            match mode {
                AlignMode::Nearest => {
                    let pick = if dhi < dlo { hi } else { lo };
                    data.row_mut(j).assign(&src.data.row(pick));
                }
                AlignMode::Linear => {
                    let (c_lo, c_hi) = (src.center2(lo), src.center2(hi));
                    let w_hi = if c_hi == c_lo {
                        0.0
                    } else {
                        ((target2 - c_lo) as f64 / (c_hi - c_lo) as f64).clamp(0.0, 1.0)
                    };
                    let row = &src.data.row(lo) * (1.0 - w_hi) + &src.data.row(hi) * w_hi;
                    data.row_mut(j).assign(&row);
                }
            }
        }
        out.push(FeatureSequence {
            source_name: src.source_name.clone(),
            data,
            frames_per_clip: refseq.frames_per_clip,
            clip_stride_frames: refseq.clip_stride_frames,
            fps: refseq.fps,
        });
    }
    Ok(out)
}

/// Affine map for one source: `y = W x + b`, `W` is `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub source_name: String,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projection {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Uniform init in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`, zero bias.
    pub fn random<R: Rng>(source_name: impl Into<String>, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..=bound));
        Self {
            source_name: source_name.into(),
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProjectionSpec {
    pub projections: Vec<Projection>,
}

impl ProjectionSpec {
    pub fn random<R: Rng>(sources: &[(&str, usize, usize)], rng: &mut R) -> Self {
        Self {
            projections: sources
                .iter()
                .map(|&(name, i, o)| Projection::random(name, i, o, rng))
                .collect(),
        }
    }

    pub fn get(&self, source_name: &str) -> Option<&Projection> {
        self.projections.iter().find(|p| p.source_name == source_name)
    }

    pub fn fused_width(&self) -> usize {
        self.projections.iter().map(Projection::out_dim).sum()
    }
}

fn check_grid(aligned: &[FeatureSequence]) -> Result<usize> {
    let first = aligned
        .first()
        .ok_or_else(|| Error::Alignment("no sources to fuse".into()))?;
    let t = first.len();
    for s in aligned {
        if s.len() != t {
            return Err(Error::Alignment(format!(
                "source `{}` has {} rows, `{}` has {t}; align first",
                s.source_name,
                s.len(),
                first.source_name
            )));
        }
    }
    Ok(t)
}

/// Project each source with its own affine map and concatenate the results
/// in source order.
pub fn fuse_proj_cat(aligned: &[FeatureSequence], spec: &ProjectionSpec) -> Result<Array2<f64>> {
    check_grid(aligned)?;
    let mut blocks = Vec::with_capacity(aligned.len());
    for src in aligned {
        let proj = spec.get(&src.source_name).ok_or_else(|| {
            Error::Config(format!("no projection declared for source `{}`", src.source_name))
        })?;
        if proj.in_dim() != src.dim() {
            return Err(Error::DimMismatch {
                source_name: src.source_name.clone(),
                expected: proj.in_dim(),
                actual: src.dim(),
            });
        }
        blocks.push(proj.apply(src.data.view()));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("rows checked"))
}

/// Raw column concatenation in source order.
pub fn fuse_naive_cat(aligned: &[FeatureSequence]) -> Result<Array2<f64>> {
    check_grid(aligned)?;
    let views: Vec<_> = aligned.iter().map(|s| s.data.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("rows checked"))
}

/// Column range of each source's block inside a fused matrix.
pub fn block_ranges(widths: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let r = start..start + w;
            start += w;
            r
        })
        .collect()
}

/// Reorder the column blocks of `fused` according to `order`.
pub fn permute_blocks(fused: &Array2<f64>, widths: &[usize], order: &[usize]) -> Array2<f64> {
    let ranges = block_ranges(widths);
    let views: Vec<_> = order.iter().map(|&k| fused.slice(s![.., ranges[k].clone()])).collect();
    concatenate(Axis(1), &views).expect("same rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(name: &str, t: usize, d: usize, fpc: usize, stride: usize) -> FeatureSequence {
        let data = Array2::from_shape_fn((t, d), |(i, j)| (i * 100 + j) as f64);
        FeatureSequence::new(name, data, fpc, stride, 30.0).unwrap()
    }

    #[test]
    fn align_self_is_identity() {
        let a = seq("slowfast", 10, 3, 32, 16);
        let out = align_sources(std::slice::from_ref(&a), "slowfast", AlignMode::Nearest).unwrap();
        assert_eq!(out[0], a);
    }

    #[test]
    fn egovlp_to_slowfast_ties_go_low() {
        let sf = seq("slowfast", 4, 1, 32, 16);
        let ego = seq("egovlp", 20, 1, 4, 4);
        assert!((sf.center_time(0) - 16.0 / 30.0).abs() < 1e-15);
        assert!((ego.center_time(3) - 14.0 / 30.0).abs() < 1e-15);
        let out = align_sources(&[sf, ego], "slowfast", AlignMode::Nearest).unwrap();
        // row value encodes the source index as i * 100
        assert_eq!(out[1].data[[0, 0]], 300.0);
        assert_eq!(out[1].data[[1, 0]], 700.0);
        assert_eq!(out[1].len(), 4);
        assert_eq!(out[1].clip_stride_frames, 16);
    }

    #[test]
    fn linear_mode_averages_ties() {
        let sf = seq("slowfast", 2, 1, 32, 16);
        let ego = seq("egovlp", 20, 1, 4, 4);
        let out = align_sources(&[sf, ego], "slowfast", AlignMode::Linear).unwrap();
        assert_eq!(out[1].data[[0, 0]], 350.0);
    }

    #[test]
    fn align_errors() {
        let a = seq("a", 3, 1, 32, 16);
        let mut b = seq("b", 3, 1, 32, 16);
        assert!(align_sources(&[a.clone()], "zzz", AlignMode::Nearest).is_err());
        b.fps = 25.0;
        assert!(matches!(
            align_sources(&[a, b], "a", AlignMode::Nearest),
            Err(Error::Alignment(_))
        ));
        assert!(FeatureSequence::new("e", Array2::zeros((0, 3)), 4, 4, 30.0).is_err());
    }

    #[test]
    fn align_is_idempotent() {
        let sf = seq("slowfast", 9, 2, 32, 16);
        let om = seq("omnivore", 9, 3, 32, 16);
        let ego = seq("egovlp", 37, 2, 4, 4);
        let once = align_sources(&[sf, om, ego], "slowfast", AlignMode::Nearest).unwrap();
        let twice = align_sources(&once, "slowfast", AlignMode::Nearest).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn default_projection_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ProjectionSpec::random(
            &[("slowfast", 2304, 386), ("omnivore", 1536, 386), ("egovlp", 256, 256)],
            &mut rng,
        );
        let srcs = [
            FeatureSequence::new("slowfast", Array2::ones((3, 2304)), 32, 16, 30.0).unwrap(),
            FeatureSequence::new("omnivore", Array2::ones((3, 1536)), 32, 16, 30.0).unwrap(),
            FeatureSequence::new("egovlp", Array2::ones((3, 256)), 32, 16, 30.0).unwrap(),
        ];
        assert_eq!(fuse_proj_cat(&srcs, &spec).unwrap().ncols(), 1028);
        assert_eq!(spec.fused_width(), 1028);
        assert_eq!(fuse_naive_cat(&srcs).unwrap().ncols(), 4096);
    }

    #[test]
    fn identity_projection_and_hand_arithmetic() {
        let a = seq("a", 4, 3, 32, 16);
        let spec = ProjectionSpec {
            projections: vec![Projection {
                source_name: "a".into(),
                weight: Array2::eye(3),
                bias: Array1::zeros(3),
            }],
        };
        assert_eq!(fuse_proj_cat(std::slice::from_ref(&a), &spec).unwrap(), a.data);

        let x = FeatureSequence::new("x", array![[2.0]], 32, 16, 30.0).unwrap();
        let y = FeatureSequence::new("y", array![[3.0]], 32, 16, 30.0).unwrap();
        let spec = ProjectionSpec {
            projections: vec![
                Projection {
                    source_name: "x".into(),
                    weight: array![[2.0]],
                    bias: array![0.0],
                },
                Projection {
                    source_name: "y".into(),
                    weight: array![[10.0]],
                    bias: array![0.0],
                },
            ],
        };
        assert_eq!(fuse_proj_cat(&[x, y], &spec).unwrap(), array![[4.0, 30.0]]);
    }

    #[test]
    fn proj_dim_mismatch_names_source() {
        let a = seq("omnivore", 4, 3, 32, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ProjectionSpec::random(&[("omnivore", 5, 2)], &mut rng);
        let err = fuse_proj_cat(&[a], &spec).unwrap_err();
        assert!(err.to_string().contains("omnivore"), "{err}");
    }

    #[test]
    fn naive_cat_order_and_grid() {
        let a = seq("a", 4, 2, 32, 16);
        let b = seq("b", 4, 3, 32, 16);
        let ab = fuse_naive_cat(&[a.clone(), b.clone()]).unwrap();
        let ba = fuse_naive_cat(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(permute_blocks(&ab, &[2, 3], &[1, 0]), ba);
        assert_eq!(fuse_naive_cat(std::slice::from_ref(&a)).unwrap(), a.data);
        let c = seq("c", 5, 2, 32, 16);
        assert!(matches!(fuse_naive_cat(&[a, c]), Err(Error::Alignment(_))));
    }
}
