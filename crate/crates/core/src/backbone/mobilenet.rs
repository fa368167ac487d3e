use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dsc::DsBlock;
use crate::error::{invalid, Result};
use crate::nn::{BatchNorm, BnMode, Conv2d, Layer, Module, Param, Relu6, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOp {
    StandardConv,
    DepthwiseSeparable,
}

/// One row of the stage table: `repeat` identical layers with `out_channels`
/// outputs; only the first uses `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub op: BlockOp,
    pub out_channels: usize,
    pub repeat: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub depth_multiplier: f64,
    pub resolution_multiplier: f64,
    pub stage_spec: Vec<StageRow>,
    pub bn_mode: BnMode,
}

const fn row(op: BlockOp, out_channels: usize, repeat: usize, stride: usize) -> StageRow {
    StageRow {
        op,
        out_channels,
        repeat,
        stride,
    }
}

/// The MobileNet V1 stage table.
pub const MOBILENET_V1_STAGES: [StageRow; 10] = [
    row(BlockOp::StandardConv, 32, 1, 2),
    row(BlockOp::DepthwiseSeparable, 64, 1, 1),
    row(BlockOp::DepthwiseSeparable, 128, 1, 2),
    row(BlockOp::DepthwiseSeparable, 128, 1, 1),
    row(BlockOp::DepthwiseSeparable, 256, 1, 2),
    row(BlockOp::DepthwiseSeparable, 256, 1, 1),
    row(BlockOp::DepthwiseSeparable, 512, 1, 2),
    row(BlockOp::DepthwiseSeparable, 512, 5, 1),
    row(BlockOp::DepthwiseSeparable, 1024, 1, 2),
    row(BlockOp::DepthwiseSeparable, 1024, 1, 1),
];

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            depth_multiplier: 1.0,
            resolution_multiplier: 1.0,
            stage_spec: MOBILENET_V1_STAGES.to_vec(),
            bn_mode: BnMode::Batch,
        }
    }
}

impl BackboneConfig {
    pub fn with_depth_multiplier(depth_multiplier: f64) -> Self {
        BackboneConfig {
            depth_multiplier,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth_multiplier", self.depth_multiplier),
            ("resolution_multiplier", self.resolution_multiplier),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        let first = self
            .stage_spec
            .first()
            .ok_or_else(|| invalid("stage table is empty"))?;
        if first.op != BlockOp::StandardConv || first.out_channels != 32 || first.stride != 2 {
            return Err(invalid("first stage must be a standard conv with 32 channels at stride 2"));
        }
        for r in &self.stage_spec {
            if r.stride != 1 && r.stride != 2 {
                return Err(invalid(format!("stride {} not in {{1, 2}}", r.stride)));
            }
            if r.repeat == 0 || r.out_channels == 0 {
                return Err(invalid("stage rows need repeat >= 1 and channels >= 1"));
            }
        }
        Ok(())
    }

    /// Channel count after the depth multiplier: nearest multiple of 8, at least 8.
    pub fn channels(&self, c: usize) -> usize {
        scale_channels(c, self.depth_multiplier)
    }

    /// Input side length after the resolution multiplier.
    pub fn input_resolution(&self, base: usize) -> usize {
        ((base as f64 * self.resolution_multiplier).round() as usize).max(1)
    }

    /// Flattened per-layer `(op, out_channels, stride)`.
    pub fn layers(&self) -> Vec<(BlockOp, usize, usize)> {
        self.stage_spec
            .iter()
            .flat_map(|r| (0..r.repeat).map(move |i| (r.op, r.out_channels, if i == 0 { r.stride } else { 1 })))
            .map(|(op, c, s)| (op, self.channels(c), s))
            .collect()
    }
}

pub fn scale_channels(c: usize, multiplier: f64) -> usize {
    if multiplier == 1.0 {
        return c;
    }
    let v = c as f64 * multiplier;
    (((v / 8.0).round() as usize) * 8).max(8)
}

/// Standard convolution + batch norm + ReLU6.
#[derive(Debug, Clone)]
pub struct ConvBnRelu6 {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    act: Relu6,
}

impl ConvBnRelu6 {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bn_mode: BnMode,
        rng: &mut R,
    ) -> Self {
        ConvBnRelu6 {
            conv: Conv2d::new(name, in_channels, out_channels, kernel, stride, false, rng),
            bn: BatchNorm::new(name, out_channels, bn_mode),
            act: Relu6::new(),
        }
    }
}

impl Module for ConvBnRelu6 {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

impl Layer for ConvBnRelu6 {
    fn forward(&self, x: &Tensor4) -> Tensor4 {
        self.act.forward(&self.bn.forward(&self.conv.forward(x)))
    }

    fn forward_train(&mut self, x: &Tensor4) -> Tensor4 {
        let y = self.conv.forward_train(x);
        let y = self.bn.forward_train(&y);
        self.act.forward_train(&y)
    }

    fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let d = self.act.backward(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.bn.clear_cache();
        self.act.clear_cache();
    }
}

#[derive(Debug, Clone)]
pub enum BackboneLayer {
    Standard(ConvBnRelu6),
    Separable(DsBlock),
}

impl BackboneLayer {
    fn as_layer(&self) -> &dyn Layer {
        match self {
            BackboneLayer::Standard(l) => l,
            BackboneLayer::Separable(l) => l,
        }
    }

    fn as_layer_mut(&mut self) -> &mut dyn Layer {
        match self {
            BackboneLayer::Standard(l) => l,
            BackboneLayer::Separable(l) => l,
        }
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        match self {
            BackboneLayer::Standard(l) => l.bn.mode = mode,
            BackboneLayer::Separable(l) => {
                l.dw_bn.mode = mode;
                l.pw_bn.mode = mode;
            }
        }
    }
}

/// Stage outputs `C1..C5` at strides 2, 4, 8, 16, 32.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub c: Vec<Tensor4>,
}

/// MobileNet V1 feature extractor.
#[derive(Debug, Clone)]
pub struct MobileNetV1 {
    pub config: BackboneConfig,
    pub layers: Vec<BackboneLayer>,
    /// Layer index whose output is C1..C5.
    pub taps: Vec<usize>,
}

impl MobileNetV1 {
    pub fn new<R: Rng>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut cin = 3;
        let mut stride = 1;
        let mut last_at_stride = Vec::new();
        for (i, (op, cout, s)) in config.layers().into_iter().enumerate() {
            let name = format!("backbone.conv{i}");
            let layer = match op {
                BlockOp::StandardConv => {
                    BackboneLayer::Standard(ConvBnRelu6::new(&name, cin, cout, 3, s, config.bn_mode, rng))
                }
                BlockOp::DepthwiseSeparable => {
                    BackboneLayer::Separable(DsBlock::new(&name, cin, cout, s, config.bn_mode, rng))
                }
            };
            layers.push(layer);
            stride *= s;
            match last_at_stride.last_mut() {
                Some((st, idx)) if *st == stride => *idx = i,
                _ => last_at_stride.push((stride, i)),
            }
            cin = cout;
        }
        let taps: Vec<usize> = last_at_stride
            .iter()
            .filter(|(s, _)| *s >= 2)
            .map(|&(_, i)| i)
            .collect();
        if taps.len() != 5 {
            return Err(invalid(format!(
                "stage table must reach strides 2..32 exactly once each, got {} stages",
                taps.len()
            )));
        }
        Ok(MobileNetV1 { config, layers, taps })
    }

    /// Output channels of C1..C5.
    pub fn stage_channels(&self) -> Vec<usize> {
        let layers = self.config.layers();
        self.taps.iter().map(|&i| layers[i].1).collect()
    }

    /// Every layer's output, in order.
    pub fn forward_layers(&self, x: &Tensor4) -> Vec<Tensor4> {
        let mut outs: Vec<Tensor4> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let y = layer.as_layer().forward(outs.last().unwrap_or(x));
            outs.push(y);
        }
        outs
    }

    pub fn forward(&self, x: &Tensor4) -> StageOutputs {
        let mut c = Vec::with_capacity(5);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.as_layer().forward(&cur);
            if self.taps.contains(&i) {
                c.push(cur.clone());
            }
            if Some(&i) == self.taps.last() {
                break;
            }
        }
        StageOutputs { c }
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> StageOutputs {
        let mut c = Vec::with_capacity(5);
        let mut cur = x.clone();
        let last = *self.taps.last().expect("five taps");
        for (i, layer) in self.layers.iter_mut().enumerate().take(last + 1) {
            cur = layer.as_layer_mut().forward_train(&cur);
            if self.taps.contains(&i) {
                c.push(cur.clone());
            }
        }
        StageOutputs { c }
    }

    /// Back-propagates stage gradients (`None` for stages without one).
    pub fn backward(&mut self, stage_grads: Vec<Option<Tensor4>>) -> Tensor4 {
        assert_eq!(stage_grads.len(), self.taps.len());
        let last = *self.taps.last().expect("five taps");
        let mut grad: Option<Tensor4> = None;
        let mut pending: Vec<Option<Tensor4>> = stage_grads;
        for i in (0..=last).rev() {
            if let Some(t) = self.taps.iter().position(|&tap| tap == i) {
                if let Some(g) = pending[t].take() {
                    grad = Some(match grad {
                        Some(acc) => acc + g,
                        None => g,
                    });
                }
            }
            let layer = self.layers[i].as_layer_mut();
            grad = match grad {
                Some(g) => Some(layer.backward(&g)),
                None => {
                    // nothing flows back yet; keep caches balanced
                    layer.clear_cache();
                    None
                }
            };
        }
        grad.unwrap_or_else(|| Tensor4::zeros((1, 3, 1, 1)))
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.as_layer_mut().clear_cache();
        }
    }
}

impl Module for MobileNetV1 {
    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                BackboneLayer::Standard(l) => l.params(),
                BackboneLayer::Separable(l) => l.params(),
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                BackboneLayer::Standard(l) => l.params_mut(),
                BackboneLayer::Separable(l) => l.params_mut(),
            })
            .collect()
    }
}
