use serde::{Deserialize, Serialize};

use crate::nn::Module;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
    pub per_layer: Vec<LayerCount>,
}

/// Counts every parameter of `model`, grouped by layer (the parameter name
/// minus its last component). Moving statistics are non-trainable.
pub fn count_parameters(model: &dyn Module) -> ParameterReport {
    let mut report = ParameterReport::default();
    for p in model.params() {
        let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
        if report.per_layer.last().is_none_or(|l| l.name != layer) {
            report.per_layer.push(LayerCount {
                name: layer.to_string(),
                trainable: 0,
                non_trainable: 0,
            });
        }
        let entry = report.per_layer.last_mut().expect("pushed above");
        if p.trainable {
            entry.trainable += p.len();
            report.trainable += p.len();
        } else {
            entry.non_trainable += p.len();
            report.non_trainable += p.len();
        }
    }
    report.total = report.trainable + report.non_trainable;
    report
}

/// Multiply-accumulates of a `dk×dk` standard convolution from `m` to `n`
/// channels producing a `df×df` map.
pub fn standard_conv_macs(dk: u64, m: u64, n: u64, df: u64) -> u64 {
    dk * dk * m * n * df * df
}

/// Depthwise `dk×dk` then pointwise `m→n`, same output map.
pub fn separable_conv_macs(dk: u64, m: u64, n: u64, df: u64) -> u64 {
    dk * dk * m * df * df + m * n * df * df
}

/// Separable cost relative to standard: `1/N + 1/Dk²`.
pub fn dsc_cost_ratio(kernel_size: u32, out_channels: u32) -> f64 {
    let dk = kernel_size.max(1) as f64;
    1.0 / out_channels.max(1) as f64 + 1.0 / (dk * dk)
}
