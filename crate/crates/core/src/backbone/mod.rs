mod checkpoint;
mod dsc;
mod fpn;
mod mobilenet;
mod params;

pub use checkpoint::{Checkpoint, NamedTensor, MAGIC};
pub use dsc::{depthwise_separable_forward, DsBlock};
pub use fpn::{FeaturePyramid, Fpn};
pub use mobilenet::{
    scale_channels, BackboneConfig, BackboneLayer, BlockOp, ConvBnRelu6, MobileNetV1, StageOutputs, StageRow,
    MOBILENET_V1_STAGES,
};
pub use params::{
    count_parameters, dsc_cost_ratio, separable_conv_macs, standard_conv_macs, LayerCount, ParameterReport,
};
