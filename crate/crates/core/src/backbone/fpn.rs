use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    subsample2, subsample2_backward, upsample_nearest2, upsample_nearest2_backward, Conv2d, Layer, Module, Param,
    Tensor4,
};

/// Pyramid maps `P2..P6` at strides 4..64, all with `channels` channels.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor4>,
    pub channels: usize,
}

impl FeaturePyramid {
    /// Spatial `(height, width)` of every level.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|t| (t.dim().2, t.dim().3)).collect()
    }
}

/// Top-down feature pyramid over `C2..C5`.
#[derive(Debug, Clone)]
pub struct Fpn {
    pub laterals: Vec<Conv2d>,
    pub smooth: Vec<Conv2d>,
    pub channels: usize,
    shapes: Vec<Vec<(usize, usize)>>,
}

impl Fpn {
    /// `in_channels` are the channel counts of `C2..C5`.
    pub fn new<R: Rng>(in_channels: &[usize], channels: usize, rng: &mut R) -> Result<Self> {
        if in_channels.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "FPN takes four stages (C2..C5), got {}",
                in_channels.len()
            )));
        }
        let laterals = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(&format!("fpn.lateral{}", i + 2), c, channels, 1, 1, true, rng))
            .collect();
        let smooth = (0..4)
            .map(|i| Conv2d::new(&format!("fpn.smooth{}", i + 2), channels, channels, 3, 1, true, rng))
            .collect();
        Ok(Fpn {
            laterals,
            smooth,
            channels,
            shapes: Vec::new(),
        })
    }

    fn check(&self, stages: &[Tensor4]) -> Result<Vec<(usize, usize)>> {
        if stages.len() != 4 {
            return Err(Error::ShapeMismatch(format!("expected C2..C5, got {} maps", stages.len())));
        }
        let shapes: Vec<(usize, usize)> = stages.iter().map(|t| (t.dim().2, t.dim().3)).collect();
        for (i, (t, lat)) in stages.iter().zip(&self.laterals).enumerate() {
            if t.dim().1 != lat.in_channels {
                return Err(Error::ShapeMismatch(format!(
                    "C{} has {} channels, lateral expects {}",
                    i + 2,
                    t.dim().1,
                    lat.in_channels
                )));
            }
        }
        for w in shapes.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.0 != a.0.div_ceil(2) || b.1 != a.1.div_ceil(2) {
                return Err(Error::ShapeMismatch(format!(
                    "stage sizes must halve level to level, got {a:?} then {b:?}"
                )));
            }
        }
        Ok(shapes)
    }

    pub fn forward(&self, stages: &[Tensor4]) -> Result<FeaturePyramid> {
        let shapes = self.check(stages)?;
        let mut merged: Vec<Tensor4> = vec![Tensor4::zeros((0, 0, 0, 0)); 4];
        for k in (0..4).rev() {
            let mut m = self.laterals[k].forward(&stages[k]);
            if k < 3 {
                m += &upsample_nearest2(&merged[k + 1], shapes[k].0, shapes[k].1);
            }
            merged[k] = m;
        }
        let mut levels: Vec<Tensor4> = merged.iter().zip(&self.smooth).map(|(m, s)| s.forward(m)).collect();
        levels.push(subsample2(&levels[3]));
        Ok(FeaturePyramid {
            levels,
            channels: self.channels,
        })
    }

    pub fn forward_train(&mut self, stages: &[Tensor4]) -> Result<FeaturePyramid> {
        let shapes = self.check(stages)?;
        let mut merged: Vec<Tensor4> = vec![Tensor4::zeros((0, 0, 0, 0)); 4];
        for k in (0..4).rev() {
            let mut m = self.laterals[k].forward_train(&stages[k]);
            if k < 3 {
                m += &upsample_nearest2(&merged[k + 1], shapes[k].0, shapes[k].1);
            }
            merged[k] = m;
        }
        let mut levels: Vec<Tensor4> = merged
            .iter()
            .zip(self.smooth.iter_mut())
            .map(|(m, s)| s.forward_train(m))
            .collect();
        levels.push(subsample2(&levels[3]));
        self.shapes.push(shapes);
        Ok(FeaturePyramid {
            levels,
            channels: self.channels,
        })
    }

    /// Takes gradients for `P2..P6` and returns gradients for `C2..C5`.
    pub fn backward(&mut self, mut grads: Vec<Tensor4>) -> Vec<Tensor4> {
        assert_eq!(grads.len(), 5, "FPN backward needs P2..P6 gradients");
        let shapes = self.shapes.pop().expect("FPN backward without forward_train");
        let d6 = grads.pop().expect("five levels");
        grads[3] += &subsample2_backward(&d6, shapes[3].0, shapes[3].1);
        let mut d_merged: Vec<Tensor4> = grads
            .iter()
            .zip(self.smooth.iter_mut())
            .map(|(g, s)| s.backward(g))
            .collect();
        for k in 1..4 {
            let up = upsample_nearest2_backward(&d_merged[k - 1], shapes[k].0, shapes[k].1);
            d_merged[k] += &up;
        }
        d_merged
            .iter()
            .zip(self.laterals.iter_mut())
            .map(|(d, l)| l.backward(d))
            .collect()
    }

    pub fn clear_cache(&mut self) {
        self.shapes.clear();
        for c in self.laterals.iter_mut().chain(self.smooth.iter_mut()) {
            c.clear_cache();
        }
    }
}

impl Module for Fpn {
    fn params(&self) -> Vec<&Param> {
        self.laterals.iter().chain(&self.smooth).flat_map(|c| c.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.laterals
            .iter_mut()
            .chain(self.smooth.iter_mut())
            .flat_map(|c| c.params_mut())
            .collect()
    }
}
