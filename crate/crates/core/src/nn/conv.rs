use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayView3, Ix2};
use rand::Rng;

use super::{fan_in_std, pop_cache, Layer, Module, Param, Tensor4};

/// Output size and (before, after) padding for TF-style "same" convolution:
/// `out = ceil(in / stride)`.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out.max(1) - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2, total - total / 2)
}

/// Output-column chunk size that keeps im2col buffers bounded.
const MAX_COLS: usize = 8192;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    k: usize,
    stride: usize,
    pad_t: usize,
    pad_l: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

/// Unfolds rows `[oy0, oy1)` of the output grid into a `(C*k*k, rows*wo)`
/// column matrix.
fn unfold(x: ArrayView3<f64>, g: &Geometry, oy0: usize, oy1: usize) -> Array2<f64> {
    let c = x.dim().0;
    let ncols = (oy1 - oy0) * g.wo;
    let mut cols = Array2::<f64>::zeros((c * g.k * g.k, ncols));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let plane = g.h * g.w;
    {
        let dst = cols.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            let src = &xs[ci * plane..(ci + 1) * plane];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (ci * g.k + ky) * g.k + kx;
                    let out = &mut dst[row * ncols..(row + 1) * ncols];
                    for oy in oy0..oy1 {
                        let iy = (oy * g.stride + ky) as isize - g.pad_t as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = (oy - oy0) * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad_l as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                out[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`unfold`]: scatters column gradients back onto `dx`.
fn fold_into(cols: &Array2<f64>, dx: &mut [f64], g: &Geometry, oy0: usize, oy1: usize) {
    let ncols = (oy1 - oy0) * g.wo;
    let c = cols.nrows() / (g.k * g.k);
    let src = cols.as_slice().expect("standard layout");
    let plane = g.h * g.w;
    for ci in 0..c {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let col = &src[row * ncols..(row + 1) * ncols];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad_t as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (oy - oy0) * g.wo;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad_l as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[iy as usize * g.w + ix as usize] += col[base + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Full im2col of one `C×H×W` image with "same" padding.
pub fn im2col(x: ArrayView3<f64>, kernel: usize, stride: usize) -> Array2<f64> {
    let (_, h, w) = x.dim();
    let (ho, pad_t, _) = same_padding(h, kernel, stride);
    let (wo, pad_l, _) = same_padding(w, kernel, stride);
    let g = Geometry {
        k: kernel,
        stride,
        pad_t,
        pad_l,
        h,
        w,
        ho,
        wo,
    };
    unfold(x, &g, 0, ho)
}

/// Dense 2-D convolution with "same" (or, for `valid`, zero) padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    cache: Vec<Tensor4>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = fan_in_std(in_channels * kernel * kernel);
        Self::with_std(name, in_channels, out_channels, kernel, stride, bias, std, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_std<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = Param::gaussian(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            std,
            rng,
        );
        let bias = bias.then(|| Param::zeros(format!("{name}.bias"), &[out_channels], true, false));
        Conv2d {
            weight,
            bias,
            stride,
            kernel,
            in_channels,
            out_channels,
            cache: Vec::new(),
        }
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let (ho, pad_t, _) = same_padding(h, self.kernel, self.stride);
        let (wo, pad_l, _) = same_padding(w, self.kernel, self.stride);
        Geometry {
            k: self.kernel,
            stride: self.stride,
            pad_t,
            pad_l,
            h,
            w,
            ho,
            wo,
        }
    }

    fn weight2(&self) -> ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("contiguous weight")
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn rows_per_chunk(&self, wo: usize) -> usize {
        (MAX_COLS / wo.max(1)).max(1)
    }

    fn compute(&self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "{}: input channels", self.weight.name);
        let g = self.geometry(h, w);
        let mut y = Tensor4::zeros((n, self.out_channels, g.ho, g.wo));
        let w2 = self.weight2();
        for b in 0..n {
            let xb = x.slice(s![b, .., .., ..]);
            let mut yb = y.slice_mut(s![b, .., .., ..]);
            let mut yb2 = yb
                .view_mut()
                .into_shape_with_order((self.out_channels, g.ho * g.wo))
                .expect("contiguous output");
            if self.is_pointwise() {
                let xs = xb.as_standard_layout();
                let x2 = xs.view().into_shape_with_order((c, h * w)).expect("contiguous");
                general_mat_mul(1.0, &w2, &x2, 0.0, &mut yb2);
            } else {
                let step = self.rows_per_chunk(g.wo);
                let mut oy0 = 0;
                while oy0 < g.ho {
                    let oy1 = (oy0 + step).min(g.ho);
                    let cols = unfold(xb, &g, oy0, oy1);
                    let mut dst = yb2.slice_mut(s![.., oy0 * g.wo..oy1 * g.wo]);
                    general_mat_mul(1.0, &w2, &cols, 0.0, &mut dst);
                    oy0 = oy1;
                }
            }
            if let Some(bias) = &self.bias {
                for (co, mut plane) in yb.outer_iter_mut().enumerate() {
                    plane += bias.value[[co]];
                }
            }
        }
        y
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

impl Layer for Conv2d {
    fn forward(&self, x: &Tensor4) -> Tensor4 {
        self.compute(x)
    }

    fn forward_train(&mut self, x: &Tensor4) -> Tensor4 {
        let y = self.compute(x);
        self.cache.push(x.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let x = pop_cache(&mut self.cache, &self.weight.name);
        let (n, c, h, w) = x.dim();
        let g = self.geometry(h, w);
        let ckk = c * g.k * g.k;
        let mut dx = Tensor4::zeros((n, c, h, w));
        let mut dw2 = Array2::<f64>::zeros((self.out_channels, ckk));
        let w2t = self.weight2().reversed_axes().to_owned();
        for b in 0..n {
            let xb = x.slice(s![b, .., .., ..]);
            let dyb = dy.slice(s![b, .., .., ..]);
            let dyb = dyb.as_standard_layout();
            let dy2 = dyb
                .view()
                .into_shape_with_order((self.out_channels, g.ho * g.wo))
                .expect("contiguous");
            if let Some(bias) = &mut self.bias {
                for co in 0..self.out_channels {
                    bias.grad[[co]] += dy2.row(co).sum();
                }
            }
            let mut dxb = dx.slice_mut(s![b, .., .., ..]);
            let dxs = dxb.as_slice_mut().expect("contiguous");
            if self.is_pointwise() {
                let xs = xb.as_standard_layout();
                let x2 = xs.view().into_shape_with_order((c, h * w)).expect("contiguous");
                general_mat_mul(1.0, &dy2, &x2.t(), 1.0, &mut dw2);
                let mut dx2 = ndarray::ArrayViewMut2::from_shape((c, h * w), dxs).expect("shape");
                general_mat_mul(1.0, &w2t, &dy2, 0.0, &mut dx2);
            } else {
                let step = self.rows_per_chunk(g.wo);
                let mut oy0 = 0;
                while oy0 < g.ho {
                    let oy1 = (oy0 + step).min(g.ho);
                    let cols = unfold(xb, &g, oy0, oy1);
                    let dyc = dy2.slice(s![.., oy0 * g.wo..oy1 * g.wo]);
                    general_mat_mul(1.0, &dyc, &cols.t(), 1.0, &mut dw2);
                    let mut dcols = Array2::<f64>::zeros((ckk, (oy1 - oy0) * g.wo));
                    general_mat_mul(1.0, &w2t, &dyc, 0.0, &mut dcols);
                    fold_into(&dcols, dxs, &g, oy0, oy1);
                    oy0 = oy1;
                }
            }
        }
        let dw = dw2
            .into_shape_with_order(self.weight.grad.raw_dim())
            .expect("weight grad shape");
        self.weight.grad += &dw;
        dx
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// View helper used by callers that need the weight as a matrix.
#[allow(dead_code)]
pub(crate) fn as_matrix(p: &Param) -> ArrayView2<'_, f64> {
    let rows = p.value.shape()[0];
    let cols = p.value.len() / rows.max(1);
    p.value
        .view()
        .into_shape_with_order((rows, cols))
        .expect("contiguous")
        .into_dimensionality::<Ix2>()
        .expect("2-D")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor4, conv: &Conv2d) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        let (ho, pt, _) = same_padding(h, conv.kernel, conv.stride);
        let (wo, pl, _) = same_padding(w, conv.kernel, conv.stride);
        let mut y = Tensor4::zeros((n, conv.out_channels, ho, wo));
        for b in 0..n {
            for co in 0..conv.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |p| p.value[[co]]);
                        for ci in 0..c {
                            for ky in 0..conv.kernel {
                                for kx in 0..conv.kernel {
                                    let iy = (oy * conv.stride + ky) as isize - pt as isize;
                                    let ix = (ox * conv.stride + kx) as isize - pl as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += conv.weight.value[[co, ci, ky, kx]]
                                            * x[[b, ci, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        y[[b, co, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn same_padding_matches_ceil_rule() {
        assert_eq!(same_padding(224, 3, 2), (112, 0, 1));
        assert_eq!(same_padding(7, 3, 1), (7, 1, 1));
        assert_eq!(same_padding(7, 3, 2), (4, 1, 1));
        assert_eq!(same_padding(5, 1, 2), (3, 0, 0));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s) in &[(3, 1), (3, 2), (1, 1), (1, 2)] {
            let mut conv = Conv2d::new("c", 3, 5, k, s, true, &mut rng);
            if let Some(b) = conv.bias.as_mut() {
                b.value.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
            }
            let x = random_tensor((2, 3, 7, 6), 5);
            let y = conv.forward(&x);
            let oracle = naive_conv(&x, &conv);
            assert_eq!(y.dim(), oracle.dim());
            for (a, b) in y.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chunked_unfold_agrees_with_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::new("c", 2, 3, 3, 1, false, &mut rng);
        // 100 columns wide forces several chunks at MAX_COLS / 100 rows.
        let x = random_tensor((1, 2, 90, 100), 3);
        let y = conv.forward(&x);
        let oracle = naive_conv(&x, &conv);
        let diff = (&y - &oracle).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
        assert!(diff < 1e-12);
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s) in &[(3, 1), (3, 2), (1, 1)] {
            let mut conv = Conv2d::new("c", 3, 4, k, s, true, &mut rng);
            let x = random_tensor((2, 3, 6, 5), 7);
            check_layer(&mut conv, &x, 1e-6);
        }
    }
}
