use rand::Rng;

use crate::nn::{Conv2d, Layer, Module, Param, Relu, Tensor4};

/// Shared RPN head: 3×3 conv + ReLU, then 1×1 objectness (two logits per
/// anchor, softmax) and 1×1 box-delta branches.
#[derive(Debug, Clone)]
pub struct RpnHead {
    pub conv: Conv2d,
    relu: Relu,
    pub cls: Conv2d,
    pub bbox: Conv2d,
    pub anchors_per_location: usize,
}

/// Raw head outputs for one level: `[1, 2A, H, W]` logits, `[1, 4A, H, W]` deltas.
#[derive(Debug, Clone)]
pub struct RpnLevelOutput {
    pub logits: Tensor4,
    pub deltas: Tensor4,
}

impl RpnHead {
    pub fn new<R: Rng>(in_channels: usize, mid_channels: usize, anchors_per_location: usize, rng: &mut R) -> Self {
        let a = anchors_per_location;
        RpnHead {
            conv: Conv2d::new("rpn.conv", in_channels, mid_channels, 3, 1, true, rng),
            relu: Relu::new(),
            cls: Conv2d::with_std("rpn.cls", mid_channels, 2 * a, 1, 1, true, 0.01, rng),
            bbox: Conv2d::with_std("rpn.bbox", mid_channels, 4 * a, 1, 1, true, 0.01, rng),
            anchors_per_location,
        }
    }

    pub fn forward(&self, levels: &[Tensor4]) -> Vec<RpnLevelOutput> {
        levels
            .iter()
            .map(|p| {
                let h = self.relu.forward(&self.conv.forward(p));
                RpnLevelOutput {
                    logits: self.cls.forward(&h),
                    deltas: self.bbox.forward(&h),
                }
            })
            .collect()
    }

    pub fn forward_train(&mut self, levels: &[Tensor4]) -> Vec<RpnLevelOutput> {
        levels
            .iter()
            .map(|p| {
                let h = self.conv.forward_train(p);
                let h = self.relu.forward_train(&h);
                RpnLevelOutput {
                    logits: self.cls.forward_train(&h),
                    deltas: self.bbox.forward_train(&h),
                }
            })
            .collect()
    }

    /// Gradients w.r.t. each level input, given per-level output gradients.
    pub fn backward(&mut self, grads: Vec<RpnLevelOutput>) -> Vec<Tensor4> {
        let mut out: Vec<Tensor4> = grads
            .into_iter()
            .rev()
            .map(|g| {
                let dh = self.bbox.backward(&g.deltas) + self.cls.backward(&g.logits);
                let dh = self.relu.backward(&dh);
                self.conv.backward(&dh)
            })
            .collect();
        out.reverse();
        out
    }

    pub fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.relu.clear_cache();
        self.cls.clear_cache();
        self.bbox.clear_cache();
    }
}

impl Module for RpnHead {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        v.extend(self.cls.params());
        v.extend(self.bbox.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.cls.params_mut());
        v.extend(self.bbox.params_mut());
        v
    }
}

/// Per-anchor view of the head outputs in anchor order (level-major,
/// row-major, ratio-minor).
#[derive(Debug, Clone)]
pub struct FlatRpnOutput {
    /// Background/foreground logits.
    pub logits: Vec<[f64; 2]>,
    /// Softmax foreground probability.
    pub fg_prob: Vec<f64>,
    pub deltas: Vec<[f64; 4]>,
}

pub fn flatten_outputs(outputs: &[RpnLevelOutput], anchors_per_location: usize) -> FlatRpnOutput {
    let a = anchors_per_location;
    let mut flat = FlatRpnOutput {
        logits: Vec::new(),
        fg_prob: Vec::new(),
        deltas: Vec::new(),
    };
    for o in outputs {
        let (_, _, h, w) = o.logits.dim();
        for y in 0..h {
            for x in 0..w {
                for k in 0..a {
                    let l = [o.logits[[0, 2 * k, y, x]], o.logits[[0, 2 * k + 1, y, x]]];
                    flat.fg_prob.push(softmax2_fg(l));
                    flat.logits.push(l);
                    flat.deltas.push(std::array::from_fn(|j| o.deltas[[0, 4 * k + j, y, x]]));
                }
            }
        }
    }
    flat
}

/// Inverse of [`flatten_outputs`] for gradients.
pub fn unflatten_grads(
    shapes: &[(usize, usize)],
    anchors_per_location: usize,
    d_logits: &[[f64; 2]],
    d_deltas: &[[f64; 4]],
) -> Vec<RpnLevelOutput> {
    let a = anchors_per_location;
    let mut idx = 0;
    shapes
        .iter()
        .map(|&(h, w)| {
            let mut logits = Tensor4::zeros((1, 2 * a, h, w));
            let mut deltas = Tensor4::zeros((1, 4 * a, h, w));
            for y in 0..h {
                for x in 0..w {
                    for k in 0..a {
                        for j in 0..2 {
                            logits[[0, 2 * k + j, y, x]] = d_logits[idx][j];
                        }
                        for j in 0..4 {
                            deltas[[0, 4 * k + j, y, x]] = d_deltas[idx][j];
                        }
                        idx += 1;
                    }
                }
            }
            RpnLevelOutput { logits, deltas }
        })
        .collect()
}

pub fn softmax2_fg(l: [f64; 2]) -> f64 {
    crate::nn::sigmoid(l[1] - l[0])
}
