use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BnMode, Conv2d, DepthwiseConv2d, Layer, Module, Param, Relu6, Tensor4};

/// Depthwise 3×3 → BN → ReLU6 → pointwise 1×1 → BN → ReLU6.
#[derive(Debug, Clone)]
pub struct DsBlock {
    pub dw: DepthwiseConv2d,
    pub dw_bn: BatchNorm,
    dw_act: Relu6,
    pub pw: Conv2d,
    pub pw_bn: BatchNorm,
    pw_act: Relu6,
}

impl DsBlock {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bn_mode: BnMode,
        rng: &mut R,
    ) -> Self {
        let dw_name = format!("{name}.dw");
        let pw_name = format!("{name}.pw");
        DsBlock {
            dw: DepthwiseConv2d::new(&dw_name, in_channels, 3, stride, rng),
            dw_bn: BatchNorm::new(&dw_name, in_channels, bn_mode),
            dw_act: Relu6::new(),
            pw: Conv2d::new(&pw_name, in_channels, out_channels, 1, 1, false, rng),
            pw_bn: BatchNorm::new(&pw_name, out_channels, bn_mode),
            pw_act: Relu6::new(),
        }
    }
}

impl Module for DsBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.dw.params();
        v.extend(self.dw_bn.params());
        v.extend(self.pw.params());
        v.extend(self.pw_bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.dw.params_mut();
        v.extend(self.dw_bn.params_mut());
        v.extend(self.pw.params_mut());
        v.extend(self.pw_bn.params_mut());
        v
    }
}

impl Layer for DsBlock {
    fn forward(&self, x: &Tensor4) -> Tensor4 {
        let y = self.dw_act.forward(&self.dw_bn.forward(&self.dw.forward(x)));
        self.pw_act.forward(&self.pw_bn.forward(&self.pw.forward(&y)))
    }

    fn forward_train(&mut self, x: &Tensor4) -> Tensor4 {
        let y = self.dw.forward_train(x);
        let y = self.dw_bn.forward_train(&y);
        let y = self.dw_act.forward_train(&y);
        let y = self.pw.forward_train(&y);
        let y = self.pw_bn.forward_train(&y);
        self.pw_act.forward_train(&y)
    }

    fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let d = self.pw_act.backward(dy);
        let d = self.pw_bn.backward(&d);
        let d = self.pw.backward(&d);
        let d = self.dw_act.backward(&d);
        let d = self.dw_bn.backward(&d);
        self.dw.backward(&d)
    }

    fn clear_cache(&mut self) {
        self.dw.clear_cache();
        self.dw_bn.clear_cache();
        self.dw_act.clear_cache();
        self.pw.clear_cache();
        self.pw_bn.clear_cache();
        self.pw_act.clear_cache();
    }
}

/// Linear depthwise-separable convolution of one `C×H×W` map:
/// `pointwise(depthwise(x))` with "same" padding.
///
/// `dw_kernel` is `C×k×k` (one filter per channel); `pw_kernel` is
/// `C_out×C`.
pub fn depthwise_separable_forward(
    x: ArrayView3<f64>,
    dw_kernel: ArrayView3<f64>,
    pw_kernel: ArrayView2<f64>,
    stride: usize,
) -> Result<Array3<f64>> {
    let (c, h, w) = x.dim();
    let (dc, kh, kw) = dw_kernel.dim();
    let (cout, pc) = pw_kernel.dim();
    if dc != c || pc != c {
        return Err(Error::ShapeMismatch(format!(
            "input has {c} channels, depthwise kernel {dc}, pointwise kernel {pc}"
        )));
    }
    if kh != kw || kh == 0 {
        return Err(Error::ShapeMismatch(format!("depthwise kernel must be square, got {kh}×{kw}")));
    }
    if stride == 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch("empty input or zero stride".into()));
    }
    // weights are overwritten below
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut dw = DepthwiseConv2d::new("dw", c, kh, stride, &mut rng);
    dw.weight.value = dw_kernel
        .to_owned()
        .insert_axis(Axis(1))
        .into_dyn();
    let mut pw = Conv2d::new("pw", c, cout, 1, 1, false, &mut rng);
    pw.weight.value = pw_kernel
        .to_owned()
        .insert_axis(Axis(2))
        .insert_axis(Axis(3))
        .into_dyn();
    let x4 = x.to_owned().insert_axis(Axis(0));
    let y = pw.forward(&dw.forward(&x4));
    Ok(y.index_axis_move(Axis(0), 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::same_padding;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense convolution with the separable factorization multiplied out:
    /// `W[co, ci, ky, kx] = pw[co, ci] * dw[ci, ky, kx]`.
    fn dense_oracle(x: &Array3<f64>, dw: &Array3<f64>, pw: &Array2<f64>, stride: usize) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let k = dw.dim().1;
        let cout = pw.nrows();
        let (ho, pt, _) = same_padding(h, k, stride);
        let (wo, pl, _) = same_padding(w, k, stride);
        let mut y = Array3::zeros((cout, ho, wo));
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pt as isize;
                                let ix = (ox * stride + kx) as isize - pl as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += pw[[co, ci]] * dw[[ci, ky, kx]] * x[[ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    y[[co, oy, ox]] = acc;
                }
            }
        }
        y
    }

    fn rand3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand3((3, 6, 5), &mut rng);
        let mut dw = Array3::zeros((3, 3, 3));
        for c in 0..3 {
            dw[[c, 1, 1]] = 1.0;
        }
        let pw = Array2::eye(3);
        let y = depthwise_separable_forward(x.view(), dw.view(), pw.view(), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constant_input_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = 1.7;
        let x = Array3::from_elem((2, 6, 6), v);
        let dw = rand3((2, 3, 3), &mut rng);
        let pw = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let y = depthwise_separable_forward(x.view(), dw.view(), pw.view(), 1).unwrap();
        let oracle = dense_oracle(&x, &dw, &pw, 1);
        for co in 0..3 {
            let expect: f64 = (0..2).map(|ci| pw[[co, ci]] * dw.index_axis(Axis(0), ci).sum() * v).sum();
            for yy in 1..5 {
                for xx in 1..5 {
                    assert!((y[[co, yy, xx]] - expect).abs() < 1e-12);
                    assert!((oracle[[co, yy, xx]] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_dense_oracle_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(c, h, w, cout, s) in &[(4, 8, 8, 5, 1), (4, 8, 8, 6, 2), (8, 16, 16, 8, 1), (3, 7, 9, 2, 2)] {
            let x = rand3((c, h, w), &mut rng);
            let dw = rand3((c, 3, 3), &mut rng);
            let pw = Array2::from_shape_fn((cout, c), |_| rng.random_range(-1.0..1.0));
            let y = depthwise_separable_forward(x.view(), dw.view(), pw.view(), s).unwrap();
            let o = dense_oracle(&x, &dw, &pw, s);
            assert_eq!(y.dim(), o.dim());
            for (a, b) in y.iter().zip(o.iter()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-9) || (a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Array3::<f64>::zeros((3, 4, 4));
        let dw = Array3::<f64>::zeros((2, 3, 3));
        let pw = Array2::<f64>::zeros((4, 3));
        assert!(depthwise_separable_forward(x.view(), dw.view(), pw.view(), 1).is_err());
    }
}
