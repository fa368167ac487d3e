use serde::{Deserialize, Serialize};

use super::{decode_box_deltas, nms, score_order, AnchorSet, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub pre_nms_top_k: usize,
    pub post_nms_top_k: usize,
    pub nms_iou: f64,
    /// `(height, width)` of the network input.
    pub image_size: (f64, f64),
    /// Deltas are predicted divided by these.
    pub delta_std: [f64; 4],
    /// Boxes thinner than this (pixels) after clipping are dropped.
    pub min_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f64,
}

/// Decodes, clips, filters, ranks and suppresses anchor predictions.
///
/// `deltas` are in normalized units (multiplied by `delta_std` before
/// decoding). Output is score-descending.
pub fn propose(objectness: &[f64], deltas: &[[f64; 4]], anchors: &AnchorSet, cfg: &ProposalConfig) -> Vec<Proposal> {
    assert_eq!(objectness.len(), anchors.len(), "objectness must align with anchors");
    assert_eq!(deltas.len(), anchors.len(), "deltas must align with anchors");
    let mut cand_boxes = Vec::new();
    let mut cand_scores = Vec::new();
    for i in score_order(objectness) {
        if cand_boxes.len() == cfg.pre_nms_top_k {
            break;
        }
        let d = deltas[i];
        let scaled = [
            d[0] * cfg.delta_std[0],
            d[1] * cfg.delta_std[1],
            d[2] * cfg.delta_std[2],
            d[3] * cfg.delta_std[3],
        ];
        let b = decode_box_deltas(&anchors.boxes[i], scaled, Some(cfg.image_size));
        if !b.is_finite() || b.width() < cfg.min_size || b.height() < cfg.min_size {
            continue;
        }
        cand_boxes.push(b);
        cand_scores.push(objectness[i]);
    }
    nms(&cand_boxes, &cand_scores, cfg.nms_iou)
        .into_iter()
        .take(cfg.post_nms_top_k)
        .map(|i| Proposal {
            bbox: cand_boxes[i],
            score: cand_scores[i],
        })
        .collect()
}
