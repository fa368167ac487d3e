//! Second stage: ROIAlign pooling, proposal sampling, and the box and mask heads.

mod align;
mod heads;
mod paste;
mod sampling;

pub use align::{roi_align, roi_align_backward, roi_level};
pub use heads::{softmax_rows, BoxHead, BoxHeadOutput, MaskHead};
pub use paste::paste_mask;
pub use sampling::{assign_and_sample_rois, crop_and_resize_mask, RoiLabel, RoiSample, RoiSamplingConfig};
