use rand::Rng;

use super::{fan_in_std, pop_cache, same_padding, Layer, Module, Param, Tensor4};

/// One `k×k` filter per input channel, no cross-channel mixing, no bias.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub weight: Param,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    cache: Vec<Tensor4>,
}

impl DepthwiseConv2d {
    pub fn new<R: Rng>(name: &str, channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let weight = Param::gaussian(
            format!("{name}.weight"),
            &[channels, 1, kernel, kernel],
            fan_in_std(kernel * kernel),
            rng,
        );
        DepthwiseConv2d {
            weight,
            channels,
            kernel,
            stride,
            cache: Vec::new(),
        }
    }

    fn compute(&self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "{}: input channels", self.weight.name);
        let (k, s) = (self.kernel, self.stride);
        let (ho, pt, _) = same_padding(h, k, s);
        let (wo, pl, _) = same_padding(w, k, s);
        let mut y = Tensor4::zeros((n, c, ho, wo));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("contiguous");
        let ws = self.weight.value.as_slice().expect("contiguous");
        let ys = y.as_slice_mut().expect("contiguous");
        for b in 0..n {
            for ci in 0..c {
                let src = &xs[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                let dst = &mut ys[(b * c + ci) * ho * wo..(b * c + ci + 1) * ho * wo];
                let kern = &ws[ci * k * k..(ci + 1) * k * k];
                for oy in 0..ho {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for kx in 0..k {
                            let wv = kern[ky * k + kx];
                            for ox in 0..wo {
                                let ix = (ox * s + kx) as isize - pl as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    dst[oy * wo + ox] += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }
}

impl Module for DepthwiseConv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight]
    }
}

impl Layer for DepthwiseConv2d {
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
        let (k, s) = (self.kernel, self.stride);
        let (ho, pt, _) = same_padding(h, k, s);
        let (wo, pl, _) = same_padding(w, k, s);
        let mut dx = Tensor4::zeros((n, c, h, w));
        let xs = x.as_slice().expect("contiguous");
        let dys = dy.as_standard_layout();
        let dys = dys.as_slice().expect("contiguous");
        let ws = self.weight.value.as_slice().expect("contiguous").to_vec();
        let gw = self.weight.grad.as_slice_mut().expect("contiguous");
        let dxs = dx.as_slice_mut().expect("contiguous");
        for b in 0..n {
            for ci in 0..c {
                let src = &xs[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                let dsrc = &mut dxs[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                let g = &dys[(b * c + ci) * ho * wo..(b * c + ci + 1) * ho * wo];
                for oy in 0..ho {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..k {
                            let wv = ws[ci * k * k + ky * k + kx];
                            let mut acc = 0.0;
                            for ox in 0..wo {
                                let ix = (ox * s + kx) as isize - pl as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    let gv = g[oy * wo + ox];
                                    acc += gv * src[iy * w + ix as usize];
                                    dsrc[iy * w + ix as usize] += gv * wv;
                                }
                            }
                            gw[ci * k * k + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
        dx
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}
