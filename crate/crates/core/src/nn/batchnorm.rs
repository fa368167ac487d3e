use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use super::{pop_cache, Layer, Module, Param, Tensor4};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// How a batch-norm layer normalizes during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Batch statistics during training, moving statistics at inference.
    Batch,
    /// Always the moving statistics (an affine layer with fixed scaling).
    Frozen,
}

#[derive(Debug, Clone)]
enum BnCache {
    Batch { xhat: Tensor4, inv_std: Array1<f64> },
    Frozen { xhat: Tensor4, inv_std: Array1<f64> },
}

/// Per-channel batch normalization over N, H and W.
///
/// Parameters are `{prefix}.bn_gamma` and `{prefix}.bn_beta` (trainable) and
/// `{prefix}.bn_mean` and `{prefix}.bn_var` (moving statistics).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub moving_mean: Param,
    pub moving_var: Param,
    pub mode: BnMode,
    pub eps: f64,
    pub momentum: f64,
    cache: Vec<BnCache>,
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize, mode: BnMode) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{prefix}.bn_gamma"), &[channels], 1.0, true, false),
            beta: Param::zeros(format!("{prefix}.bn_beta"), &[channels], true, false),
            moving_mean: Param::zeros(format!("{prefix}.bn_mean"), &[channels], false, false),
            moving_var: Param::filled(format!("{prefix}.bn_var"), &[channels], 1.0, false, false),
            mode,
            eps: BN_EPSILON,
            momentum: BN_MOMENTUM,
            cache: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn normalize(&self, x: &Tensor4, mean: &Array1<f64>, inv_std: &Array1<f64>) -> (Tensor4, Tensor4) {
        let mut xhat = x.clone();
        let mut y = x.clone();
        for c in 0..self.channels() {
            let (m, is) = (mean[c], inv_std[c]);
            let (g, b) = (self.gamma.value[[c]], self.beta.value[[c]]);
            xhat.index_axis_mut(Axis(1), c).mapv_inplace(|v| (v - m) * is);
            y.index_axis_mut(Axis(1), c).mapv_inplace(|v| (v - m) * is * g + b);
        }
        (xhat, y)
    }

    fn moving_stats(&self) -> (Array1<f64>, Array1<f64>) {
        let mean = Array1::from_iter(self.moving_mean.value.iter().copied());
        let inv_std = Array1::from_iter(self.moving_var.value.iter().map(|v| 1.0 / (v + self.eps).sqrt()));
        (mean, inv_std)
    }
}

impl Module for BatchNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.moving_mean, &self.moving_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.moving_mean, &mut self.moving_var]
    }
}

impl Layer for BatchNorm {
    fn forward(&self, x: &Tensor4) -> Tensor4 {
        let (mean, inv_std) = self.moving_stats();
        self.normalize(x, &mean, &inv_std).1
    }

    fn forward_train(&mut self, x: &Tensor4) -> Tensor4 {
        match self.mode {
            BnMode::Frozen => {
                let (mean, inv_std) = self.moving_stats();
                let (xhat, y) = self.normalize(x, &mean, &inv_std);
                self.cache.push(BnCache::Frozen { xhat, inv_std });
                y
            }
            BnMode::Batch => {
                let c = self.channels();
                let m = x.len() / c.max(1);
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ch in 0..c {
                    let plane = x.index_axis(Axis(1), ch);
                    let mu = plane.sum() / m as f64;
                    let v = plane.fold(0.0, |acc, &t| acc + (t - mu) * (t - mu)) / m as f64;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                let inv_std = var.mapv(|v: f64| 1.0 / (v + self.eps).sqrt());
                let (xhat, y) = self.normalize(x, &mean, &inv_std);
                let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
                for ch in 0..c {
                    let mm = &mut self.moving_mean.value[[ch]];
                    *mm = self.momentum * *mm + (1.0 - self.momentum) * mean[ch];
                    let mv = &mut self.moving_var.value[[ch]];
                    *mv = self.momentum * *mv + (1.0 - self.momentum) * var[ch] * unbias;
                }
                self.cache.push(BnCache::Batch { xhat, inv_std });
                y
            }
        }
    }

    fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let cache = pop_cache(&mut self.cache, &self.gamma.name);
        let c = self.channels();
        let mut dx = dy.clone();
        match cache {
            BnCache::Frozen { xhat, inv_std } => {
                for ch in 0..c {
                    let g = dy.index_axis(Axis(1), ch);
                    let xh = xhat.index_axis(Axis(1), ch);
                    self.gamma.grad[[ch]] += (&g * &xh).sum();
                    self.beta.grad[[ch]] += g.sum();
                    let scale = self.gamma.value[[ch]] * inv_std[ch];
                    dx.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * scale);
                }
            }
            BnCache::Batch { xhat, inv_std } => {
                let m = (dy.len() / c.max(1)) as f64;
                for ch in 0..c {
                    let g = dy.index_axis(Axis(1), ch);
                    let xh = xhat.index_axis(Axis(1), ch);
                    let sum_g = g.sum();
                    let sum_gx = (&g * &xh).sum();
                    self.gamma.grad[[ch]] += sum_gx;
                    self.beta.grad[[ch]] += sum_g;
                    let gamma = self.gamma.value[[ch]];
                    let is = inv_std[ch];
                    let mut out = dx.index_axis_mut(Axis(1), ch);
                    ndarray::Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gv, &xv| {
                        *o = gamma * is / m * (m * gv - sum_g - xv * sum_gx);
                    });
                }
            }
        }
        dx
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}
