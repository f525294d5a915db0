//! The localizer: fusion, convolutional embedding, a local self-attention
//! pyramid and classification/regression heads shared across levels.

use std::rc::Rc;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use talkit_core::{PyramidLevel, PyramidOutput, Projection, ProjectionSpec};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Raw column concatenation of all sources.
    Cat,
    /// Learned per-source affine projection, then concatenation.
    #[default]
    ProjCat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    #[default]
    DepthwiseConv,
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSource {
    pub name: String,
    pub dim: usize,
    /// Output width of this source's projection under `proj_cat`.
    pub proj_dim: usize,
}

impl InputSource {
    pub fn new(name: &str, dim: usize, proj_dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            proj_dim,
        }
    }
}

/// Half-open range `[min, max)` of the larger regression distance, in
/// finest-grid steps. `max: None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionRange {
    pub min: f64,
    pub max: Option<f64>,
}

impl RegressionRange {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && self.max.is_none_or(|m| x < m)
    }
}

/// `[0,4), [4,8), [8,16), ...` with the last level unbounded.
pub fn doubling_ranges(levels: usize) -> Vec<RegressionRange> {
    (0..levels)
        .map(|l| RegressionRange {
            min: if l == 0 { 0.0 } else { (4u64 << (l - 1)) as f64 },
            max: if l + 1 == levels { None } else { Some((4u64 << l) as f64) },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub max_seq_len: usize,
    pub num_levels: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub attention_window: usize,
    pub downsample_stride: usize,
    pub downsample: Downsample,
    pub blocks_per_level: usize,
    pub embed_convs: usize,
    pub head_convs: usize,
    pub mlp_ratio: usize,
    /// Initial foreground probability encoded in the classifier bias.
    pub cls_prior: f64,
    pub fusion: FusionMode,
    pub sources: Vec<InputSource>,
    pub regression_ranges: Vec<RegressionRange>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 110,
            max_seq_len: 1024,
            num_levels: 6,
            embed_dim: 1024,
            num_heads: 16,
            attention_window: 19,
            downsample_stride: 2,
            downsample: Downsample::DepthwiseConv,
            blocks_per_level: 1,
            embed_convs: 2,
            head_convs: 3,
            mlp_ratio: 4,
            cls_prior: 0.01,
            fusion: FusionMode::ProjCat,
            sources: vec![
                InputSource::new("slowfast", 2304, 386),
                InputSource::new("omnivore", 1536, 386),
                InputSource::new("egovlp", 256, 256),
            ],
            regression_ranges: doubling_ranges(6),
        }
    }
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        match self.fusion {
            FusionMode::Cat => self.sources.iter().map(|s| s.dim).sum(),
            FusionMode::ProjCat => self.sources.iter().map(|s| s.proj_dim).sum(),
        }
    }

    pub fn level_stride(&self, level: usize) -> usize {
        self.downsample_stride.pow(level as u32)
    }

    pub fn level_lengths(&self) -> Vec<usize> {
        (0..self.num_levels)
            .map(|l| self.max_seq_len / self.level_stride(l))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 || self.embed_dim == 0 || self.num_heads == 0 || self.num_levels == 0 {
            return bad("num_classes, embed_dim, num_heads and num_levels must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.attention_window % 2 == 0 {
            return bad(format!("attention_window must be odd, got {}", self.attention_window));
        }
        if self.downsample_stride < 2 {
            return bad("downsample_stride must be >= 2".into());
        }
        let top = self.level_stride(self.num_levels - 1);
        if self.max_seq_len == 0 || self.max_seq_len % top != 0 {
            return bad(format!(
                "max_seq_len {} not divisible by downsample_stride^(L-1) = {top}",
                self.max_seq_len
            ));
        }
        if self.sources.is_empty() {
            return bad("at least one input source is required".into());
        }
        if self.sources.iter().any(|s| s.dim == 0 || s.proj_dim == 0) {
            return bad("source dims must be positive".into());
        }
        if self.regression_ranges.len() != self.num_levels {
            return bad(format!(
                "{} regression ranges for {} levels",
                self.regression_ranges.len(),
                self.num_levels
            ));
        }
        if self.embed_convs == 0 || self.head_convs == 0 || self.blocks_per_level == 0 {
            return bad("embed_convs, head_convs and blocks_per_level must be positive".into());
        }
        Ok(())
    }

    fn downsample_geometry(&self) -> (usize, usize) {
        let s = self.downsample_stride;
        (s + 1, s / 2)
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Affine,
    q: Affine,
    k: Affine,
    v: Affine,
    o: Affine,
    ln2: Affine,
    fc1: Affine,
    fc2: Affine,
}

#[derive(Debug, Clone)]
struct Layout {
    proj: Vec<Affine>,
    embed: Vec<Affine>,
    levels: Vec<Vec<Block>>,
    down: Vec<Affine>,
    cls: Vec<Affine>,
    reg: Vec<Affine>,
}

/// Per-level tape handles produced by [`Localizer::heads`].
#[derive(Debug, Clone)]
pub struct LevelVars {
    pub stride: usize,
    pub logits: Var,
    pub offsets: Var,
    pub mask: Rc<[bool]>,
}

/// A pyramid feature map before the heads.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub stride: usize,
    pub features: Var,
    pub mask: Rc<[bool]>,
}

#[derive(Debug, Clone)]
pub struct Localizer {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

const CONV_K: usize = 3;

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let v = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound));
        self.store.insert(name, v)
    }

    fn constant(&mut self, name: String, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store.insert(name, Array2::from_elem((rows, cols), value))
    }

    /// `fan_in x out` weight with fan-in scaled uniform init and zero bias.
    fn affine(&mut self, prefix: &str, fan_in: usize, out: usize) -> Affine {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Affine {
            w: self.uniform(format!("{prefix}.w"), fan_in, out, bound),
            b: self.constant(format!("{prefix}.b"), 1, out, 0.0),
        }
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> Affine {
        Affine {
            w: self.constant(format!("{prefix}.g"), 1, dim, 1.0),
            b: self.constant(format!("{prefix}.b"), 1, dim, 0.0),
        }
    }
}

impl Localizer {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let d = config.embed_dim;

        let proj = match config.fusion {
            FusionMode::Cat => Vec::new(),
            FusionMode::ProjCat => config
                .sources
                .iter()
                .map(|s| init.affine(&format!("fusion.{}", s.name), s.dim, s.proj_dim))
                .collect(),
        };

        let mut embed = Vec::with_capacity(config.embed_convs);
        let mut width = config.input_width();
        for i in 0..config.embed_convs {
            embed.push(init.affine(&format!("embed.{i}"), CONV_K * width, d));
            width = d;
        }

        let hidden = config.mlp_ratio * d;
        let mut levels = Vec::with_capacity(config.num_levels);
        let mut down = Vec::new();
        for l in 0..config.num_levels {
            if l > 0 && config.downsample == Downsample::DepthwiseConv {
                let (k, _) = config.downsample_geometry();
                let bound = 1.0 / (k as f64).sqrt();
                down.push(Affine {
                    w: init.uniform(format!("down.{l}.w"), k, d, bound),
                    b: init.constant(format!("down.{l}.b"), 1, d, 0.0),
                });
            }
            let blocks = (0..config.blocks_per_level)
                .map(|b| {
                    let p = format!("level.{l}.block.{b}");
                    Block {
                        ln1: init.norm(&format!("{p}.ln1"), d),
                        q: init.affine(&format!("{p}.attn.q"), d, d),
                        k: init.affine(&format!("{p}.attn.k"), d, d),
                        v: init.affine(&format!("{p}.attn.v"), d, d),
                        o: init.affine(&format!("{p}.attn.o"), d, d),
                        ln2: init.norm(&format!("{p}.ln2"), d),
                        fc1: init.affine(&format!("{p}.mlp.fc1"), d, hidden),
                        fc2: init.affine(&format!("{p}.mlp.fc2"), hidden, d),
                    }
                })
                .collect();
            levels.push(blocks);
        }

        let head = |init: &mut Init<'_>, name: &str, out: usize| -> Vec<Affine> {
            (0..config.head_convs)
                .map(|i| {
                    let o = if i + 1 == config.head_convs { out } else { d };
                    init.affine(&format!("{name}.{i}"), CONV_K * d, o)
                })
                .collect()
        };
        let cls = head(&mut init, "head.cls", config.num_classes);
        let reg = head(&mut init, "head.reg", 2);
        let prior = config.cls_prior;
        params
            .get_mut(cls.last().expect("head_convs > 0").b)
            .fill(-((1.0 - prior) / prior).ln());

        Ok(Self {
            config,
            params,
            layout: Layout {
                proj,
                embed,
                levels,
                down,
                cls,
                reg,
            },
        })
    }

    /// Rebuild from a config and stored parameters (checkpoint load).
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((n0, v0), (n1, v1)) in fresh.params.iter().zip(params.iter()) {
            if n0 != n1 || v0.dim() != v1.dim() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected `{n0}` {:?}, got `{n1}` {:?}",
                    v0.dim(),
                    v1.dim()
                )));
            }
        }
        Ok(Self { params, ..fresh })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zero-pad `T x D` rows to `max_seq_len` and build the validity mask.
    pub fn pad(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Rc<[bool]>)> {
        let t = x.nrows();
        let max = self.config.max_seq_len;
        if t > max {
            return Err(Error::SequenceTooLong { len: t, max });
        }
        if t == 0 {
            return Err(Error::Input("empty input sequence".into()));
        }
        let mut out = Array2::zeros((max, x.ncols()));
        out.slice_mut(s![..t, ..]).assign(x);
        let mask: Rc<[bool]> = (0..max).map(|i| i < t).collect();
        Ok((out, mask))
    }

    /// The projection part of the parameters as a fusion spec.
    pub fn projection_spec(&self) -> Option<ProjectionSpec> {
        if self.config.fusion != FusionMode::ProjCat {
            return None;
        }
        let projections = self
            .config
            .sources
            .iter()
            .zip(&self.layout.proj)
            .map(|(s, a)| Projection {
                source_name: s.name.clone(),
                weight: self.params.get(a.w).t().to_owned(),
                bias: self.params.get(a.b).row(0).to_owned(),
            })
            .collect();
        Some(ProjectionSpec { projections })
    }

    /// Fuse already-aligned sources into the model input (on the tape).
    pub fn fuse(&self, g: &mut Graph, p: &BoundParams, sources: &[Array2<f64>]) -> Result<(Var, Rc<[bool]>)> {
        let t = self.check_sources(sources)?;
        let padded = sources.iter().map(|x| self.pad(x).map(|(y, _)| y)).collect::<Result<Vec<_>>>()?;
        let mask: Rc<[bool]> = (0..self.config.max_seq_len).map(|i| i < t).collect();
        let fused = self.fuse_padded(g, p, &padded, &mask)?;
        Ok((fused, mask))
    }

    fn check_sources(&self, sources: &[Array2<f64>]) -> Result<usize> {
        if sources.len() != self.config.sources.len() {
            return Err(Error::Input(format!(
                "model expects {} sources, got {}",
                self.config.sources.len(),
                sources.len()
            )));
        }
        let t = sources[0].nrows();
        for (x, spec) in sources.iter().zip(&self.config.sources) {
            if x.ncols() != spec.dim {
                return Err(talkit_core::Error::DimMismatch {
                    source_name: spec.name.clone(),
                    expected: spec.dim,
                    actual: x.ncols(),
                }
                .into());
            }
            if x.nrows() != t {
                return Err(Error::Input(format!(
                    "source `{}` has {} rows, expected {t}",
                    spec.name,
                    x.nrows()
                )));
            }
        }
        Ok(t)
    }

    /// Fuse sources that are already padded to `max_seq_len`; rows outside
    /// `mask` never influence valid outputs.
    pub fn fuse_padded(&self, g: &mut Graph, p: &BoundParams, padded: &[Array2<f64>], mask: &Rc<[bool]>) -> Result<Var> {
        self.check_sources(padded)?;
        if padded[0].nrows() != self.config.max_seq_len || mask.len() != self.config.max_seq_len {
            return Err(Error::Input(format!(
                "padded sources and mask must have {} rows",
                self.config.max_seq_len
            )));
        }
        let mut parts = Vec::with_capacity(padded.len());
        for (k, x) in padded.iter().enumerate() {
            let leaf = g.leaf(x.clone());
            let part = match self.config.fusion {
                FusionMode::Cat => leaf,
                FusionMode::ProjCat => {
                    let a = self.layout.proj[k];
                    let y = g.linear(leaf, p.var(a.w), p.var(a.b));
                    g.mask_rows(y, mask)
                }
            };
            parts.push(part);
        }
        Ok(if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts) })
    }

    /// Convolutional embedding `input_width -> embed_dim`; padded rows are
    /// zeroed before and after every layer.
    pub fn embed(&self, g: &mut Graph, p: &BoundParams, fused: Var, mask: &Rc<[bool]>) -> Result<Var> {
        let (t, w) = g.value(fused).dim();
        if t != self.config.max_seq_len || mask.len() != t {
            return Err(Error::Input(format!(
                "embed expects {} padded rows with a matching mask, got {t} rows",
                self.config.max_seq_len
            )));
        }
        if w != self.config.input_width() {
            return Err(Error::Input(format!(
                "embed expects width {}, got {w}",
                self.config.input_width()
            )));
        }
        let mut x = g.mask_rows(fused, mask);
        for a in &self.layout.embed {
            let y = g.conv1d(x, p.var(a.w), p.var(a.b), CONV_K, 1, CONV_K / 2);
            let y = g.relu(y);
            x = g.mask_rows(y, mask);
        }
        Ok(x)
    }

    fn block(&self, g: &mut Graph, p: &BoundParams, b: &Block, x: Var, mask: &Rc<[bool]>) -> Var {
        let cfg = &self.config;
        let h = g.layer_norm(x, p.var(b.ln1.w), p.var(b.ln1.b));
        let q = g.linear(h, p.var(b.q.w), p.var(b.q.b));
        let k = g.linear(h, p.var(b.k.w), p.var(b.k.b));
        let v = g.linear(h, p.var(b.v.w), p.var(b.v.b));
        let a = g.local_attention(q, k, v, cfg.num_heads, cfg.attention_window, mask);
        let a = g.linear(a, p.var(b.o.w), p.var(b.o.b));
        let a = g.mask_rows(a, mask);
        let x = g.add(x, a);
        let h = g.layer_norm(x, p.var(b.ln2.w), p.var(b.ln2.b));
        let h = g.linear(h, p.var(b.fc1.w), p.var(b.fc1.b));
        let h = g.gelu(h);
        let h = g.linear(h, p.var(b.fc2.w), p.var(b.fc2.b));
        let h = g.mask_rows(h, mask);
        g.add(x, h)
    }

    /// Transformer blocks per level with strided downsampling in between.
    pub fn encode_pyramid(&self, g: &mut Graph, p: &BoundParams, embedded: Var, mask: &Rc<[bool]>) -> Vec<FeatureMap> {
        let cfg = &self.config;
        let (k, pad) = cfg.downsample_geometry();
        let stride = cfg.downsample_stride;
        let mut maps = Vec::with_capacity(cfg.num_levels);
        let mut x = embedded;
        let mut m = mask.clone();
        for (l, blocks) in self.layout.levels.iter().enumerate() {
            if l > 0 {
                let y = match cfg.downsample {
                    Downsample::DepthwiseConv => {
                        let a = self.layout.down[l - 1];
                        g.depthwise_conv(x, p.var(a.w), p.var(a.b), stride, pad)
                    }
                    Downsample::MaxPool => g.max_pool(x, k, stride, pad),
                };
                let rows = g.value(y).nrows();
                m = (0..rows).map(|i| m[i * stride]).collect();
                x = g.mask_rows(y, &m);
            }
            x = self.run_blocks(g, p, blocks, x, &m);
            maps.push(FeatureMap {
                stride: cfg.level_stride(l),
                features: x,
                mask: m.clone(),
            });
        }
        maps
    }

    fn run_blocks(&self, g: &mut Graph, p: &BoundParams, blocks: &[Block], x: Var, mask: &Rc<[bool]>) -> Var {
        blocks.iter().fold(x, |x, b| self.block(g, p, b, x, mask))
    }

    /// The transformer blocks of one pyramid level applied to `x` (rows
    /// at that level's resolution).
    pub fn run_level_blocks(&self, g: &mut Graph, p: &BoundParams, level: usize, x: Var, mask: &Rc<[bool]>) -> Var {
        self.run_blocks(g, p, &self.layout.levels[level], x, mask)
    }

    fn head(&self, g: &mut Graph, p: &BoundParams, layers: &[Affine], x: Var, mask: &Rc<[bool]>) -> Var {
        let mut x = x;
        for (i, a) in layers.iter().enumerate() {
            let y = g.conv1d(x, p.var(a.w), p.var(a.b), CONV_K, 1, CONV_K / 2);
            x = if i + 1 < layers.len() {
                let y = g.relu(y);
                g.mask_rows(y, mask)
            } else {
                y
            };
        }
        x
    }

    /// Shared classification and regression heads over every level.
    pub fn heads(&self, g: &mut Graph, p: &BoundParams, maps: &[FeatureMap]) -> Vec<LevelVars> {
        maps.iter()
            .map(|fm| {
                let logits = self.head(g, p, &self.layout.cls, fm.features, &fm.mask);
                let raw = self.head(g, p, &self.layout.reg, fm.features, &fm.mask);
                let offsets = g.softplus(raw);
                LevelVars {
                    stride: fm.stride,
                    logits,
                    offsets,
                    mask: fm.mask.clone(),
                }
            })
            .collect()
    }

    /// Full forward pass on the tape.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, sources: &[Array2<f64>]) -> Result<Vec<LevelVars>> {
        let (fused, mask) = self.fuse(g, p, sources)?;
        let e = self.embed(g, p, fused, &mask)?;
        let maps = self.encode_pyramid(g, p, e, &mask);
        Ok(self.heads(g, p, &maps))
    }

    /// Full forward pass over sources already padded to `max_seq_len`.
    pub fn forward_padded(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        padded: &[Array2<f64>],
        mask: &Rc<[bool]>,
    ) -> Result<Vec<LevelVars>> {
        let fused = self.fuse_padded(g, p, padded, mask)?;
        let e = self.embed(g, p, fused, mask)?;
        let maps = self.encode_pyramid(g, p, e, mask);
        Ok(self.heads(g, p, &maps))
    }

    /// Inference: run the model and copy the outputs off the tape.
    pub fn predict(&self, sources: &[Array2<f64>]) -> Result<PyramidOutput> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let levels = self.forward(&mut g, &p, sources)?;
        Ok(to_pyramid(&g, &levels))
    }
}

pub fn to_pyramid(g: &Graph, levels: &[LevelVars]) -> PyramidOutput {
    PyramidOutput {
        levels: levels
            .iter()
            .map(|l| PyramidLevel {
                stride: l.stride,
                class_logits: g.value(l.logits).clone(),
                offsets: g.value(l.offsets).clone(),
                mask: l.mask.to_vec(),
            })
            .collect(),
    }
}

/// Brute-force dense multi-head attention for tests: every valid query sees
/// every valid key.
pub fn dense_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, heads: usize) -> Array2<f64> {
    let (t, d) = q.dim();
    let dh = d / heads;
    let mut out = Array2::zeros((t, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        let scores = qh.dot(&kh.t()) / (dh as f64).sqrt();
        for i in 0..t {
            let row = scores.row(i);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Array1<f64> = row.mapv(|x| (x - max).exp());
            let p = &e / e.sum();
            out.slice_mut(s![i, h * dh..(h + 1) * dh]).assign(&p.dot(&vh));
        }
    }
    out
}
