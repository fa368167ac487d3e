use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2};
use rand::Rng;

use super::{fan_in_std, pop_cache, Layer, Module, Param, Tensor4};

/// Transposed convolution with a 2×2 kernel at stride 2 (exact 2× upsampling).
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2 {
    /// `[in, out, 2, 2]`
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    cache: Vec<Tensor4>,
}

impl ConvTranspose2x2 {
    pub fn new<R: Rng>(name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        ConvTranspose2x2 {
            weight: Param::gaussian(
                format!("{name}.weight"),
                &[in_channels, out_channels, 2, 2],
                fan_in_std(in_channels),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels], true, false),
            in_channels,
            out_channels,
            cache: Vec::new(),
        }
    }

    fn weight2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.in_channels, self.out_channels * 4))
            .expect("contiguous")
    }

    fn compute(&self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "{}: input channels", self.weight.name);
        let co = self.out_channels;
        let mut y = Tensor4::zeros((n, co, 2 * h, 2 * w));
        let w2 = self.weight2();
        let mut z = Array2::<f64>::zeros((co * 4, h * w));
        for b in 0..n {
            let xb = x.slice(s![b, .., .., ..]);
            let xb = xb.as_standard_layout();
            let x2 = xb.view().into_shape_with_order((c, h * w)).expect("contiguous");
            general_mat_mul(1.0, &w2.t(), &x2, 0.0, &mut z);
            for o in 0..co {
                let bias = self.bias.value[[o]];
                for k in 0..4 {
                    let (ky, kx) = (k / 2, k % 2);
                    let row = z.row(o * 4 + k);
                    for yy in 0..h {
                        for xx in 0..w {
                            y[[b, o, 2 * yy + ky, 2 * xx + kx]] = row[yy * w + xx] + bias;
                        }
                    }
                }
            }
        }
        y
    }
}

impl Module for ConvTranspose2x2 {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Layer for ConvTranspose2x2 {
    fn forward(&self, x: &Tensor4) -> Tensor4 {
        self.compute(x)
    }

    fn forward_train(&mut self, x: &Tensor4) -> Tensor4 {
        self.cache.push(x.clone());
        self.compute(x)
    }

    fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let x = pop_cache(&mut self.cache, &self.weight.name);
        let (n, c, h, w) = x.dim();
        let co = self.out_channels;
        let mut dx = Tensor4::zeros((n, c, h, w));
        let mut dz = Array2::<f64>::zeros((co * 4, h * w));
        let mut dw2 = Array2::<f64>::zeros((c, co * 4));
        let w2 = self.weight2().to_owned();
        for b in 0..n {
            for o in 0..co {
                let mut bias_acc = 0.0;
                for k in 0..4 {
                    let (ky, kx) = (k / 2, k % 2);
                    let mut row = dz.row_mut(o * 4 + k);
                    for yy in 0..h {
                        for xx in 0..w {
                            let g = dy[[b, o, 2 * yy + ky, 2 * xx + kx]];
                            row[yy * w + xx] = g;
                            bias_acc += g;
                        }
                    }
                }
                self.bias.grad[[o]] += bias_acc;
            }
            let xb = x.slice(s![b, .., .., ..]);
            let x2 = xb.into_shape_with_order((c, h * w)).expect("contiguous");
            general_mat_mul(1.0, &x2, &dz.t(), 1.0, &mut dw2);
            let mut dxb = dx.slice_mut(s![b, .., .., ..]);
            let mut dx2 = dxb.view_mut().into_shape_with_order((c, h * w)).expect("contiguous");
            general_mat_mul(1.0, &w2, &dz, 0.0, &mut dx2);
        }
        let dw = dw2.into_shape_with_order(self.weight.grad.raw_dim()).expect("shape");
        self.weight.grad += &dw;
        dx
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}
