//! Upsampling-head strategies, their analytic cost and an instrumented
//! forward pass.
//!
//! A strategy string such as `SDSD` names each 2× upsampling stage:
//!
//! - `D`: transposed conv (stride 2, `channels` filters) → BN → ReLU.
//! - `S`: conv (`channels` filters) → BN → ReLU → pixel shuffle (r = 2),
//!   which leaves `channels / 4` maps at twice the resolution.
//!
//! A 1×1 conv with one filter per landmark turns the last stage's maps
//! into heatmaps. With [`FinalShuffle::Fused`] an `S` final stage instead
//! emits `4·K` maps so that its shuffle yields the heatmaps directly.
//!
//! [`estimate_cost`] evaluates closed-form MAC and parameter counts per
//! layer; [`run_head`] executes the same graph through the [`crate::tensor`]
//! kernels and returns the counter they tallied, so the two can be checked
//! against each other.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;
use crate::tensor::{self, BatchNorm, OpCounter, Tensor};

pub const MAX_STAGES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "S")]
    Shuffle,
    #[serde(rename = "D")]
    Deconv,
}

impl Stage {
    pub fn code(self) -> char {
        match self {
            Stage::Shuffle => 'S',
            Stage::Deconv => 'D',
        }
    }
}

/// Feature map handed over by the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for BackboneShape {
    /// Width-0.25 MobileNetV2 at a 192×192 input.
    fn default() -> Self {
        Self {
            channels: 320,
            height: 6,
            width: 6,
        }
    }
}

impl FromStr for BackboneShape {
    type Err = Error;

    /// `CxHxW`, e.g. `320x6x6`.
    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split(['x', 'X'])
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::InvalidConfig(format!("backbone shape {s:?} is not CxHxW")))?;
        match dims[..] {
            [channels, height, width] if channels > 0 && height > 0 && width > 0 => Ok(Self {
                channels,
                height,
                width,
            }),
            _ => Err(Error::InvalidConfig(format!("backbone shape {s:?} is not CxHxW"))),
        }
    }
}

impl fmt::Display for BackboneShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub stages: Vec<Stage>,
    pub channels: usize,
    pub backbone: BackboneShape,
}

impl StrategySpec {
    /// Zero stages are allowed here (a bare heatmap conv on the backbone
    /// map); parsed strategies always have at least one.
    pub fn new(stages: Vec<Stage>, channels: usize, backbone: BackboneShape) -> Result<Self> {
        if stages.len() > MAX_STAGES {
            return Err(Error::InvalidStrategy(stages.iter().map(|s| s.code()).collect()));
        }
        if channels == 0 || channels % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "stage channels must be a positive multiple of 4, got {channels}"
            )));
        }
        Ok(Self {
            stages,
            channels,
            backbone,
        })
    }

    pub fn code(&self) -> String {
        self.stages.iter().map(|s| s.code()).collect()
    }

    pub fn with_channels(mut self, channels: usize) -> Result<Self> {
        self.channels = channels;
        Self::new(self.stages, channels, self.backbone)
    }

    pub fn with_backbone(mut self, backbone: BackboneShape) -> Self {
        self.backbone = backbone;
        self
    }

    /// Spatial size after all stages: backbone size × 2^stages.
    pub fn output_hw(&self) -> (usize, usize) {
        let f = 1usize << self.stages.len();
        (self.backbone.height * f, self.backbone.width * f)
    }
}

/// Parses a case-insensitive `S`/`D` string with 256 filters per stage and
/// the default backbone.
pub fn parse_strategy(text: &str) -> Result<StrategySpec> {
    let stages = text
        .trim()
        .chars()
        .map(|c| match c {
            'S' | 's' => Ok(Stage::Shuffle),
            'D' | 'd' => Ok(Stage::Deconv),
            _ => Err(Error::InvalidStrategy(text.to_string())),
        })
        .collect::<Result<Vec<_>>>()?;
    if stages.is_empty() || stages.len() > MAX_STAGES {
        return Err(Error::InvalidStrategy(text.to_string()));
    }
    StrategySpec::new(stages, 256, BackboneShape::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalShuffle {
    /// Last stage keeps its normal width; a 1×1 conv emits the heatmaps.
    HeatmapConv,
    /// Last `S` stage's conv emits `4·K` maps; its shuffle is the output.
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModelConfig {
    pub deconv_kernel: usize,
    pub shuffle_conv_kernel: usize,
    /// FLOPs per multiply-accumulate (1 or 2).
    pub macs_per_flop: u32,
    pub count_elementwise: bool,
    pub final_shuffle: FinalShuffle,
    /// Constant added to every report's total for the (unexecuted) backbone.
    pub backbone_flops: f64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        Self {
            deconv_kernel: 4,
            shuffle_conv_kernel: 3,
            macs_per_flop: 1,
            count_elementwise: false,
            final_shuffle: FinalShuffle::HeatmapConv,
            backbone_flops: 0.0,
        }
    }
}

impl CostModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.deconv_kernel == 0 {
            return Err(Error::InvalidConfig("deconv_kernel must be >= 1".into()));
        }
        if self.shuffle_conv_kernel == 0 || self.shuffle_conv_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "shuffle_conv_kernel must be odd to keep the spatial size, got {}",
                self.shuffle_conv_kernel
            )));
        }
        if !matches!(self.macs_per_flop, 1 | 2) {
            return Err(Error::InvalidConfig(format!("macs_per_flop must be 1 or 2, got {}", self.macs_per_flop)));
        }
        Ok(())
    }

    /// `(pad, output_padding)` making a stride-2 deconv exactly double.
    fn deconv_padding(&self) -> (usize, usize) {
        let k = self.deconv_kernel;
        let pad = (k - 1) / 2;
        (pad, 2 * pad + 2 - k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        pad: usize,
        bias: bool,
    },
    Deconv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        pad: usize,
        output_padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    PixelShuffle {
        r: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    /// Index of the owning stage; `stages.len()` marks the heatmap conv.
    pub stage: usize,
    pub in_shape: [usize; 3],
    pub out_shape: [usize; 3],
}

fn numel(s: [usize; 3]) -> u64 {
    (s[0] * s[1] * s[2]) as u64
}

impl Layer {
    pub fn macs(&self) -> u64 {
        match self.kind {
            LayerKind::Conv { c_in, c_out, kernel, .. } => {
                (c_out * c_in * kernel * kernel) as u64 * (self.out_shape[1] * self.out_shape[2]) as u64
            }
            LayerKind::Deconv { c_in, c_out, kernel, .. } => {
                (c_in * c_out * kernel * kernel) as u64 * (self.in_shape[1] * self.in_shape[2]) as u64
            }
            _ => 0,
        }
    }

    pub fn elementwise(&self) -> u64 {
        match self.kind {
            LayerKind::BatchNorm { .. } | LayerKind::Relu => numel(self.in_shape),
            _ => 0,
        }
    }

    /// Weights plus bias; batch norm stores γ, β and running mean/var.
    pub fn params(&self) -> u64 {
        match self.kind {
            LayerKind::Conv { c_in, c_out, kernel, bias, .. } => {
                (c_out * c_in * kernel * kernel + if bias { c_out } else { 0 }) as u64
            }
            LayerKind::Deconv { c_in, c_out, kernel, .. } => (c_in * c_out * kernel * kernel) as u64,
            LayerKind::BatchNorm { channels } => 4 * channels as u64,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadGraph {
    pub spec: StrategySpec,
    pub num_landmarks: usize,
    pub layers: Vec<Layer>,
}

impl HeadGraph {
    pub fn input_shape(&self) -> [usize; 3] {
        let b = self.spec.backbone;
        [b.channels, b.height, b.width]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.layers.last().map_or(self.input_shape(), |l| l.out_shape)
    }

    fn stage_label(&self, stage: usize) -> String {
        self.spec
            .stages
            .get(stage)
            .map_or_else(|| "heatmap".to_string(), |s| s.code().to_string())
    }
}

pub fn build_head(spec: &StrategySpec, num_landmarks: usize, cfg: &CostModelConfig) -> Result<HeadGraph> {
    cfg.validate()?;
    if num_landmarks == 0 {
        return Err(Error::InvalidConfig("num_landmarks must be positive".into()));
    }
    let mut layers = Vec::new();
    let mut shape = [spec.backbone.channels, spec.backbone.height, spec.backbone.width];
    let mut push = |kind: LayerKind, stage: usize, shape: &mut [usize; 3]| {
        let [c, h, w] = *shape;
        let out = match kind {
            LayerKind::Conv { c_out, .. } => [c_out, h, w],
            LayerKind::Deconv { c_out, .. } => [c_out, 2 * h, 2 * w],
            LayerKind::BatchNorm { .. } | LayerKind::Relu => [c, h, w],
            LayerKind::PixelShuffle { r } => [c / (r * r), h * r, w * r],
        };
        layers.push(Layer {
            kind,
            stage,
            in_shape: *shape,
            out_shape: out,
        });
        *shape = out;
    };

    let n = spec.stages.len();
    let (dpad, dop) = cfg.deconv_padding();
    let mut fused = false;
    for (i, &stage) in spec.stages.iter().enumerate() {
        let c_in = shape[0];
        match stage {
            Stage::Deconv => {
                let c_out = spec.channels;
                push(
                    LayerKind::Deconv {
                        c_in,
                        c_out,
                        kernel: cfg.deconv_kernel,
                        pad: dpad,
                        output_padding: dop,
                    },
                    i,
                    &mut shape,
                );
                push(LayerKind::BatchNorm { channels: c_out }, i, &mut shape);
                push(LayerKind::Relu, i, &mut shape);
            }
            Stage::Shuffle => {
                fused = i + 1 == n && cfg.final_shuffle == FinalShuffle::Fused;
                let c_out = if fused { 4 * num_landmarks } else { spec.channels };
                let k = cfg.shuffle_conv_kernel;
                push(
                    LayerKind::Conv {
                        c_in,
                        c_out,
                        kernel: k,
                        pad: k / 2,
                        bias: false,
                    },
                    i,
                    &mut shape,
                );
                push(LayerKind::BatchNorm { channels: c_out }, i, &mut shape);
                push(LayerKind::Relu, i, &mut shape);
                push(LayerKind::PixelShuffle { r: 2 }, i, &mut shape);
            }
        }
    }
    if !fused {
        push(
            LayerKind::Conv {
                c_in: shape[0],
                c_out: num_landmarks,
                kernel: 1,
                pad: 0,
                bias: true,
            },
            n,
            &mut shape,
        );
    }
    Ok(HeadGraph {
        spec: spec.clone(),
        num_landmarks,
        layers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub label: String,
    pub macs: u64,
    pub elementwise: u64,
    pub flops: f64,
    pub params: u64,
    pub output_shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub strategy: String,
    pub channels: usize,
    pub backbone: BackboneShape,
    pub stages: Vec<StageCost>,
    pub total_macs: u64,
    pub total_elementwise: u64,
    /// Head FLOPs plus the configured backbone constant.
    pub total_flops: f64,
    pub params: u64,
    pub size_mb: f64,
    /// Largest input + output element count live across any one layer.
    pub peak_activation_elements: u64,
    pub output_shape: [usize; 3],
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops / 1e9
    }
}

pub fn estimate_cost(graph: &HeadGraph, cfg: &CostModelConfig) -> CostReport {
    let n_stages = graph.spec.stages.len() + 1;
    let mut stages: Vec<StageCost> = (0..n_stages)
        .map(|i| StageCost {
            label: graph.stage_label(i),
            macs: 0,
            elementwise: 0,
            flops: 0.0,
            params: 0,
            output_shape: [0; 3],
        })
        .collect();
    let mut peak = numel(graph.input_shape());
    for layer in &graph.layers {
        let s = &mut stages[layer.stage];
        s.macs += layer.macs();
        s.elementwise += layer.elementwise();
        s.params += layer.params();
        s.output_shape = layer.out_shape;
        peak = peak.max(numel(layer.in_shape) + numel(layer.out_shape));
    }
    // Fused heads have no separate heatmap layer.
    if stages.last().is_some_and(|s| s.output_shape == [0; 3]) {
        stages.pop();
    }
    for s in &mut stages {
        s.flops = (s.macs * cfg.macs_per_flop as u64) as f64;
        if cfg.count_elementwise {
            s.flops += s.elementwise as f64;
        }
    }
    let total_macs = stages.iter().map(|s| s.macs).sum();
    let total_elementwise = stages.iter().map(|s| s.elementwise).sum();
    let params: u64 = stages.iter().map(|s| s.params).sum();
    let head_flops: f64 = stages.iter().map(|s| s.flops).sum();
    CostReport {
        strategy: graph.spec.code(),
        channels: graph.spec.channels,
        backbone: graph.spec.backbone,
        stages,
        total_macs,
        total_elementwise,
        total_flops: head_flops + cfg.backbone_flops,
        params,
        size_mb: 4.0 * params as f64 / 1e6,
        peak_activation_elements: peak,
        output_shape: graph.output_shape(),
    }
}

/// Cost reports in ascending total FLOPs, ties by parameter size.
pub fn rank_strategies(specs: &[StrategySpec], num_landmarks: usize, cfg: &CostModelConfig) -> Result<Vec<CostReport>> {
    if let Some(first) = specs.first() {
        if let Some(odd) = specs
            .iter()
            .find(|s| s.channels != first.channels || s.backbone != first.backbone)
        {
            return Err(Error::InvalidConfig(format!(
                "strategy {} uses {} channels / backbone {}, expected {} / {}",
                odd.code(),
                odd.channels,
                odd.backbone,
                first.channels,
                first.backbone
            )));
        }
    }
    let mut reports = specs
        .iter()
        .map(|s| Ok(estimate_cost(&build_head(s, num_landmarks, cfg)?, cfg)))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| {
        a.total_flops
            .total_cmp(&b.total_flops)
            .then(a.size_mb.total_cmp(&b.size_mb))
    });
    Ok(reports)
}

/// Parameters for one layer of a [`HeadGraph`].
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    Conv { weight: Tensor<f32>, bias: Option<Vec<f32>> },
    Deconv { weight: Tensor<f32> },
    BatchNorm(BatchNorm),
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    layers: Vec<LayerWeights>,
}

const BN_EPS: f32 = 1e-5;

impl HeadWeights {
    /// He-normal conv weights, zero biases, identity batch-norm statistics.
    pub fn seeded(graph: &HeadGraph, seed: u64) -> Self {
        let mut rng = crate::seed::rng(seed);
        let layers = graph
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv { c_in, c_out, kernel, bias, .. } => {
                    let std = (2.0 / (c_in * kernel * kernel) as f64).sqrt();
                    LayerWeights::Conv {
                        weight: normal_tensor(&[c_out, c_in, kernel, kernel], std, &mut rng),
                        bias: bias.then(|| vec![0.0; c_out]),
                    }
                }
                LayerKind::Deconv { c_in, c_out, kernel, .. } => {
                    let std = (2.0 / (c_in * kernel * kernel) as f64).sqrt();
                    LayerWeights::Deconv {
                        weight: normal_tensor(&[c_in, c_out, kernel, kernel], std, &mut rng),
                    }
                }
                LayerKind::BatchNorm { channels } => LayerWeights::BatchNorm(BatchNorm {
                    eps: BN_EPS,
                    ..BatchNorm::identity(channels)
                }),
                _ => LayerWeights::None,
            })
            .collect();
        Self { layers }
    }

    /// All conv weights and biases zero, batch norm with β = 0.
    pub fn zeros(graph: &HeadGraph) -> Self {
        let mut w = Self::seeded(graph, 0);
        for l in &mut w.layers {
            match l {
                LayerWeights::Conv { weight, bias } => {
                    *weight = Tensor::zeros(weight.shape());
                    if let Some(b) = bias {
                        b.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                LayerWeights::Deconv { weight } => *weight = Tensor::zeros(weight.shape()),
                _ => {}
            }
        }
        w
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    /// Concatenated `TNS1` records in layer order: conv weight then bias
    /// (if any), deconv weight, batch norm γ, β, mean, var (rank 1 each).
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for l in &self.layers {
            match l {
                LayerWeights::Conv { weight, bias } => {
                    weight.write_to(&mut w)?;
                    if let Some(b) = bias {
                        vector(b).write_to(&mut w)?;
                    }
                }
                LayerWeights::Deconv { weight } => weight.write_to(&mut w)?,
                LayerWeights::BatchNorm(bn) => {
                    for p in [&bn.gamma, &bn.beta, &bn.mean, &bn.var] {
                        vector(p).write_to(&mut w)?;
                    }
                }
                LayerWeights::None => {}
            }
        }
        Ok(())
    }

    /// Reads records written by [`HeadWeights::write_to`], checking each
    /// shape against `graph`.
    pub fn read_from(graph: &HeadGraph, mut r: impl Read) -> Result<Self> {
        let mut next = |want: &[usize]| -> Result<Tensor<f32>> {
            let t = Tensor::read_from(&mut r)?;
            if t.shape() != want {
                return Err(Error::ShapeMismatch(format!("weight record {:?}, graph expects {want:?}", t.shape())));
            }
            Ok(t)
        };
        let mut layers = Vec::with_capacity(graph.layers.len());
        for l in &graph.layers {
            layers.push(match l.kind {
                LayerKind::Conv { c_in, c_out, kernel, bias, .. } => LayerWeights::Conv {
                    weight: next(&[c_out, c_in, kernel, kernel])?,
                    bias: if bias { Some(next(&[c_out])?.into_data()) } else { None },
                },
                LayerKind::Deconv { c_in, c_out, kernel, .. } => LayerWeights::Deconv {
                    weight: next(&[c_in, c_out, kernel, kernel])?,
                },
                LayerKind::BatchNorm { channels } => LayerWeights::BatchNorm(BatchNorm {
                    gamma: next(&[channels])?.into_data(),
                    beta: next(&[channels])?.into_data(),
                    mean: next(&[channels])?.into_data(),
                    var: next(&[channels])?.into_data(),
                    eps: BN_EPS,
                }),
                _ => LayerWeights::None,
            });
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(graph: &HeadGraph, path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(graph, std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn vector(v: &[f32]) -> Tensor<f32> {
    Tensor::from_fn(&[v.len()], |i| v[i])
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<f32> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

/// Executes `graph` on `input` and returns the heatmaps together with the
/// operation counter the kernels tallied.
pub fn run_head(graph: &HeadGraph, weights: &HeadWeights, input: &Tensor<f32>) -> Result<(HeatmapStack, OpCounter)> {
    if input.shape() != graph.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "head input {:?}, graph expects {:?}",
            input.shape(),
            graph.input_shape()
        )));
    }
    if weights.layers.len() != graph.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weight entries for {} layers",
            weights.layers.len(),
            graph.layers.len()
        )));
    }
    let mut counter = OpCounter::default();
    let mut x = input.clone();
    for (layer, w) in graph.layers.iter().zip(&weights.layers) {
        x = match (layer.kind, w) {
            (LayerKind::Conv { pad, .. }, LayerWeights::Conv { weight, bias }) => {
                tensor::conv2d(&x, weight, bias.as_deref(), 1, pad, &mut counter)?
            }
            (LayerKind::Deconv { pad, output_padding, .. }, LayerWeights::Deconv { weight }) => {
                tensor::deconv2d(&x, weight, None, 2, pad, output_padding, &mut counter)?
            }
            (LayerKind::BatchNorm { .. }, LayerWeights::BatchNorm(bn)) => tensor::batchnorm_inference(
                &x,
                &bn.mean,
                &bn.var,
                &bn.gamma,
                &bn.beta,
                bn.eps as f64,
                &mut counter,
            )?,
            (LayerKind::Relu, _) => tensor::relu(&x, &mut counter),
            (LayerKind::PixelShuffle { r }, _) => tensor::pixel_shuffle(&x, r)?,
            (kind, _) => return Err(Error::ShapeMismatch(format!("weights do not fit layer {kind:?}"))),
        };
        if x.shape() != layer.out_shape {
            return Err(Error::ShapeMismatch(format!(
                "layer {:?} produced {:?}, planned {:?}",
                layer.kind,
                x.shape(),
                layer.out_shape
            )));
        }
    }
    let (k, h, w) = x.chw()?;
    let stack = HeatmapStack::from_values(k, h, w, x.data().iter().map(|&v| v as f64).collect())?;
    Ok((stack, counter))
}
