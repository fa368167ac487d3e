use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::Module;

/// One momentum-SGD update on flat slices:
/// `g' = g + wd·p`, `v' = momentum·v + g'`, `p' = p − lr·v'`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "sgd: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient element {i}")));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(model: &mut dyn Module, max_norm: f64) -> f64 {
    let sq: f64 = model
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for p in model.params_mut().into_iter().filter(|p| p.trainable) {
            p.grad.mapv_inplace(|g| g * s);
        }
    }
    norm
}

/// Momentum SGD over a module's trainable parameters. Weight decay applies
/// only to parameters flagged for it (not biases or batch-norm affines).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Module, lr: f64) -> Result<()> {
        for p in model.params_mut() {
            if !p.trainable {
                continue;
            }
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            let (Some(pv), Some(g), Some(vv)) = (p.value.as_slice_mut(), p.grad.as_slice(), v.as_slice_mut()) else {
                return Err(Error::ShapeMismatch(format!("{} is not contiguous", p.name)));
            };
            sgd_step(pv, g, vv, lr, self.momentum, wd).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{}: {m}", p.name)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.velocity.iter()
    }
}
