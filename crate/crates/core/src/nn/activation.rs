use super::{pop_cache, Layer, Module, Param, Tensor4};

pub fn relu6(v: f64) -> f64 {
    v.clamp(0.0, 6.0)
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

macro_rules! pointwise_activation {
    ($name:ident, $f:expr, $pass:expr) => {
        #[derive(Debug, Clone, Default)]
        pub struct $name {
            cache: Vec<Tensor4>,
        }

        impl $name {
            pub fn new() -> Self {
                Self::default()
            }
        }

        impl Module for $name {
            fn params(&self) -> Vec<&Param> {
                Vec::new()
            }

            fn params_mut(&mut self) -> Vec<&mut Param> {
                Vec::new()
            }
        }

        impl Layer for $name {
            fn forward(&self, x: &Tensor4) -> Tensor4 {
                x.mapv($f)
            }

            fn forward_train(&mut self, x: &Tensor4) -> Tensor4 {
                self.cache.push(x.clone());
                x.mapv($f)
            }

            fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
                let x = pop_cache(&mut self.cache, stringify!($name));
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(&x).for_each(|d, &xv| {
                    if !$pass(xv) {
                        *d = 0.0;
                    }
                });
                dx
            }

            fn clear_cache(&mut self) {
                self.cache.clear();
            }
        }
    };
}

pointwise_activation!(Relu6, relu6, |v: f64| v > 0.0 && v < 6.0);
pointwise_activation!(Relu, relu, |v: f64| v > 0.0);
