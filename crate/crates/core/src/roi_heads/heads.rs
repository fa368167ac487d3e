use ndarray::{Array2, Ix2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    fan_in_std, sigmoid, BatchNorm, BnMode, Conv2d, ConvTranspose2x2, Layer, Linear, Module, Param, Relu, Tensor4,
};

fn to4(x: Array2<f64>) -> Tensor4 {
    let (n, f) = x.dim();
    x.into_shape_with_order((n, f, 1, 1)).expect("contiguous")
}

fn to2(x: Tensor4) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, c * h * w))
        .expect("contiguous")
}

/// Linear → BN → ReLU on `[N, F]` rows.
#[derive(Debug, Clone)]
struct FcBlock {
    fc: Linear,
    bn: BatchNorm,
    relu: Relu,
}

impl FcBlock {
    fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, bn_mode: BnMode, rng: &mut R) -> Self {
        FcBlock {
            fc: Linear::new(name, inputs, outputs, fan_in_std(inputs), rng),
            bn: BatchNorm::new(name, outputs, bn_mode),
            relu: Relu::new(),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        to2(self.relu.forward(&self.bn.forward(&to4(self.fc.forward(x)))))
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = to4(self.fc.forward_train(x));
        let y = self.bn.forward_train(&y);
        to2(self.relu.forward_train(&y))
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let d = self.relu.backward(&to4(dy.clone()));
        let d = self.bn.backward(&d);
        self.fc.backward(&to2(d))
    }

    fn clear_cache(&mut self) {
        self.fc.clear_cache();
        self.bn.clear_cache();
        self.relu.clear_cache();
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc.params();
        v.extend(self.bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct BoxHeadOutput {
    /// `[N, num_classes]`, class 0 is background.
    pub class_logits: Array2<f64>,
    /// `[N, 4 · num_classes]`, normalized deltas per class.
    pub box_deltas: Array2<f64>,
}

/// Two shared fully connected layers, then class and box branches.
#[derive(Debug, Clone)]
pub struct BoxHead {
    fc1: FcBlock,
    fc2: FcBlock,
    pub cls: Linear,
    pub bbox: Linear,
    pub in_channels: usize,
    pub pool_size: usize,
    pub num_classes: usize,
}

impl BoxHead {
    pub fn set_bn_mode(&mut self, mode: BnMode) {
        self.fc1.bn.mode = mode;
        self.fc2.bn.mode = mode;
    }

    pub fn new<R: Rng>(
        in_channels: usize,
        pool_size: usize,
        fc_dim: usize,
        num_classes: usize,
        bn_mode: BnMode,
        rng: &mut R,
    ) -> Self {
        let inputs = in_channels * pool_size * pool_size;
        BoxHead {
            fc1: FcBlock::new("box_head.fc1", inputs, fc_dim, bn_mode, rng),
            fc2: FcBlock::new("box_head.fc2", fc_dim, fc_dim, bn_mode, rng),
            cls: Linear::new("box_head.cls", fc_dim, num_classes, 0.01, rng),
            bbox: Linear::new("box_head.bbox", fc_dim, 4 * num_classes, 0.001, rng),
            in_channels,
            pool_size,
            num_classes,
        }
    }

    fn check(&self, pooled: &Tensor4) -> Result<()> {
        let (_, c, h, w) = pooled.dim();
        if (c, h, w) != (self.in_channels, self.pool_size, self.pool_size) {
            return Err(Error::ShapeMismatch(format!(
                "box head expects [N, {}, {p}, {p}], got [N, {c}, {h}, {w}]",
                self.in_channels,
                p = self.pool_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, pooled: &Tensor4) -> Result<BoxHeadOutput> {
        self.check(pooled)?;
        let h = self.fc2.forward(&self.fc1.forward(&to2(pooled.clone())));
        Ok(BoxHeadOutput {
            class_logits: self.cls.forward(&h),
            box_deltas: self.bbox.forward(&h),
        })
    }

    pub fn forward_train(&mut self, pooled: &Tensor4) -> Result<BoxHeadOutput> {
        self.check(pooled)?;
        let h = self.fc1.forward_train(&to2(pooled.clone()));
        let h = self.fc2.forward_train(&h);
        Ok(BoxHeadOutput {
            class_logits: self.cls.forward_train(&h),
            box_deltas: self.bbox.forward_train(&h),
        })
    }

    /// Returns the gradient w.r.t. the pooled input.
    pub fn backward(&mut self, d_logits: &Array2<f64>, d_deltas: &Array2<f64>) -> Tensor4 {
        let dh = self.bbox.backward(d_deltas) + self.cls.backward(d_logits);
        let dh = self.fc2.backward(&dh);
        let dx = self.fc1.backward(&dh);
        let n = dx.nrows();
        dx.into_shape_with_order((n, self.in_channels, self.pool_size, self.pool_size))
            .expect("contiguous")
    }

    pub fn clear_cache(&mut self) {
        self.fc1.clear_cache();
        self.fc2.clear_cache();
        self.cls.clear_cache();
        self.bbox.clear_cache();
    }
}

impl Module for BoxHead {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v.extend(self.cls.params());
        v.extend(self.bbox.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v.extend(self.cls.params_mut());
        v.extend(self.bbox.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
    relu: Relu,
}

/// Four 3×3 conv blocks, a 2×2 stride-2 transposed conv, then a 1×1 conv to
/// one mask logit map per class.
#[derive(Debug, Clone)]
pub struct MaskHead {
    blocks: Vec<ConvBlock>,
    pub deconv: ConvTranspose2x2,
    deconv_relu: Relu,
    pub logits: Conv2d,
    pub in_channels: usize,
    pub pool_size: usize,
    pub num_classes: usize,
}

impl MaskHead {
    pub fn set_bn_mode(&mut self, mode: BnMode) {
        for b in &mut self.blocks {
            b.bn.mode = mode;
        }
    }

    pub fn new<R: Rng>(
        in_channels: usize,
        pool_size: usize,
        dim: usize,
        num_convs: usize,
        num_classes: usize,
        bn_mode: BnMode,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..num_convs)
            .map(|i| {
                let name = format!("mask_head.conv{}", i + 1);
                let cin = if i == 0 { in_channels } else { dim };
                ConvBlock {
                    conv: Conv2d::new(&name, cin, dim, 3, 1, true, rng),
                    bn: BatchNorm::new(&name, dim, bn_mode),
                    relu: Relu::new(),
                }
            })
            .collect();
        let last = if num_convs == 0 { in_channels } else { dim };
        MaskHead {
            blocks,
            deconv: ConvTranspose2x2::new("mask_head.deconv", last, dim, rng),
            deconv_relu: Relu::new(),
            logits: Conv2d::with_std("mask_head.logits", dim, num_classes, 1, 1, true, fan_in_std(dim), rng),
            in_channels,
            pool_size,
            num_classes,
        }
    }

    fn check(&self, pooled: &Tensor4) -> Result<()> {
        let (_, c, h, w) = pooled.dim();
        if (c, h, w) != (self.in_channels, self.pool_size, self.pool_size) {
            return Err(Error::ShapeMismatch(format!(
                "mask head expects [N, {}, {p}, {p}], got [N, {c}, {h}, {w}]",
                self.in_channels,
                p = self.pool_size
            )));
        }
        Ok(())
    }

    /// Mask logits `[N, num_classes, 2p, 2p]`.
    pub fn forward(&self, pooled: &Tensor4) -> Result<Tensor4> {
        self.check(pooled)?;
        let mut x = pooled.clone();
        for b in &self.blocks {
            x = b.relu.forward(&b.bn.forward(&b.conv.forward(&x)));
        }
        let x = self.deconv_relu.forward(&self.deconv.forward(&x));
        Ok(self.logits.forward(&x))
    }

    /// Per-pixel probabilities in `[0, 1]`.
    pub fn probabilities(&self, pooled: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(pooled)?.mapv(sigmoid))
    }

    pub fn forward_train(&mut self, pooled: &Tensor4) -> Result<Tensor4> {
        self.check(pooled)?;
        let mut x = pooled.clone();
        for b in &mut self.blocks {
            x = b.conv.forward_train(&x);
            x = b.bn.forward_train(&x);
            x = b.relu.forward_train(&x);
        }
        let x = self.deconv.forward_train(&x);
        let x = self.deconv_relu.forward_train(&x);
        Ok(self.logits.forward_train(&x))
    }

    pub fn backward(&mut self, d_logits: &Tensor4) -> Tensor4 {
        let d = self.logits.backward(d_logits);
        let d = self.deconv_relu.backward(&d);
        let mut d = self.deconv.backward(&d);
        for b in self.blocks.iter_mut().rev() {
            d = b.relu.backward(&d);
            d = b.bn.backward(&d);
            d = b.conv.backward(&d);
        }
        d
    }

    pub fn clear_cache(&mut self) {
        for b in &mut self.blocks {
            b.conv.clear_cache();
            b.bn.clear_cache();
            b.relu.clear_cache();
        }
        self.deconv.clear_cache();
        self.deconv_relu.clear_cache();
        self.logits.clear_cache();
    }
}

impl Module for MaskHead {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend(b.conv.params());
            v.extend(b.bn.params());
        }
        v.extend(self.deconv.params());
        v.extend(self.logits.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            v.extend(b.bn.params_mut());
        }
        v.extend(self.deconv.params_mut());
        v.extend(self.logits.params_mut());
        v
    }
}

/// Softmax over each row.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p.into_dimensionality::<Ix2>().expect("2-D")
}
