use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Ix2};
use rand::Rng;

use super::{pop_cache, Module, Param};

/// Fully connected layer, `y = x Wᵀ + b`, over row-major `[N, in]` batches.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Vec<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: Param::gaussian(format!("{name}.weight"), &[outputs, inputs], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[outputs], true, false),
            cache: Vec::new(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D weight");
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        general_mat_mul(1.0, x, &w.t(), 0.0, &mut y);
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        y += &b;
        y
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.forward(x);
        self.cache.push(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = pop_cache(&mut self.cache, &self.weight.name);
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-D grad");
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut gw);
        for (g, col) in self.bias.grad.iter_mut().zip(dy.columns()) {
            *g += col.sum();
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D weight");
        let mut dx = Array2::zeros((dy.nrows(), self.inputs()));
        general_mat_mul(1.0, dy, &w, 0.0, &mut dx);
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
