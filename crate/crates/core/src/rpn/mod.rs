//! Anchors, anchor matching and sampling, box-delta coding, proposal
//! generation and non-maximum suppression.

mod anchors;
mod boxes;
mod head;
mod matching;
mod nms;
mod proposals;

pub use anchors::{generate_anchors, pyramid_shapes, AnchorSet, LevelShape};
pub use boxes::{decode_box_deltas, encode_box_deltas, iou, BBox, MAX_LOG_SCALE};
pub use head::{flatten_outputs, softmax2_fg, unflatten_grads, FlatRpnOutput, RpnHead, RpnLevelOutput};
pub use matching::{match_anchors, match_boxes, sample_anchor_minibatch, AnchorLabel, AnchorLabels};
pub use nms::{nms, score_order};
pub use proposals::{propose, Proposal, ProposalConfig};
