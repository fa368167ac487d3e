use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{iou, AnchorSet, BBox};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLabels {
    pub label: Vec<AnchorLabel>,
    /// Argmax ground truth for positive anchors, `None` otherwise.
    pub matched_gt: Vec<Option<usize>>,
}

impl AnchorLabels {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(AnchorLabel::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(AnchorLabel::Negative)
    }

    fn indices(&self, which: AnchorLabel) -> impl Iterator<Item = usize> + '_ {
        self.label
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == which)
            .map(|(i, _)| i)
    }
}

/// Labels anchors against ground truth.
///
/// Positive when the best IoU reaches `pos_iou`, or when the anchor is the
/// (lowest-index) best anchor of some ground truth with non-zero overlap.
/// Negative below `neg_iou`, ignored in between.
pub fn match_anchors(anchors: &AnchorSet, gt_boxes: &[BBox], pos_iou: f64, neg_iou: f64) -> Result<AnchorLabels> {
    match_boxes(&anchors.boxes, gt_boxes, pos_iou, neg_iou)
}

pub fn match_boxes(anchors: &[BBox], gt_boxes: &[BBox], pos_iou: f64, neg_iou: f64) -> Result<AnchorLabels> {
    if anchors.is_empty() {
        return Err(invalid("cannot match an empty anchor set"));
    }
    if !(pos_iou > neg_iou) {
        return Err(invalid(format!("pos_iou {pos_iou} must exceed neg_iou {neg_iou}")));
    }
    let n = anchors.len();
    if gt_boxes.is_empty() {
        return Ok(AnchorLabels {
            label: vec![AnchorLabel::Negative; n],
            matched_gt: vec![None; n],
        });
    }
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![0usize; n];
    let mut gt_best = vec![(0.0f64, usize::MAX); gt_boxes.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        for (g, gt) in gt_boxes.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best_iou[a] {
                best_iou[a] = v;
                best_gt[a] = g;
            }
            if v > gt_best[g].0 {
                gt_best[g] = (v, a);
            }
        }
    }
    let mut label: Vec<AnchorLabel> = best_iou
        .iter()
        .map(|&v| {
            if v >= pos_iou {
                AnchorLabel::Positive
            } else if v < neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for &(v, a) in &gt_best {
        if v > 0.0 {
            label[a] = AnchorLabel::Positive;
        }
    }
    let matched_gt = label
        .iter()
        .zip(&best_gt)
        .map(|(l, &g)| (*l == AnchorLabel::Positive).then_some(g))
        .collect();
    Ok(AnchorLabels { label, matched_gt })
}

/// Draws at most `batch` anchors, positives capped at `batch * pos_fraction`
/// and the rest filled with negatives. Returned indices are ascending.
pub fn sample_anchor_minibatch(labels: &AnchorLabels, batch: usize, pos_fraction: f64, seed: u64) -> Vec<usize> {
    assert!(pos_fraction > 0.0 && pos_fraction <= 1.0, "pos_fraction in (0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = labels.positives().collect();
    let mut neg: Vec<usize> = labels.negatives().collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let pos_cap = (batch as f64 * pos_fraction).floor() as usize;
    pos.truncate(pos_cap);
    neg.truncate(batch - pos.len());
    let mut out = pos;
    out.extend(neg);
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_boxes(n: usize, rng: &mut ChaCha8Rng) -> Vec<BBox> {
        (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..50.0);
                let y = rng.random_range(0.0..50.0);
                BBox::new(x, y, x + rng.random_range(2.0..30.0), y + rng.random_range(2.0..30.0))
            })
            .collect()
    }

    /// Exhaustive O(A·G) restatement of the labelling rule.
    fn oracle(anchors: &[BBox], gts: &[BBox], pos: f64, neg: f64) -> Vec<(AnchorLabel, Option<usize>)> {
        let mut out = Vec::new();
        for (a, anchor) in anchors.iter().enumerate() {
            let ious: Vec<f64> = gts.iter().map(|g| iou(anchor, g)).collect();
            let max = ious.iter().cloned().fold(0.0, f64::max);
            let arg = ious.iter().position(|&v| v == max && v > 0.0).unwrap_or(0);
            let forced = gts.iter().any(|g| {
                let col: Vec<f64> = anchors.iter().map(|b| iou(b, g)).collect();
                let m = col.iter().cloned().fold(0.0, f64::max);
                m > 0.0 && col.iter().position(|&v| v == m) == Some(a)
            });
            let label = if max >= pos || forced {
                AnchorLabel::Positive
            } else if max < neg {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            };
            out.push((label, (label == AnchorLabel::Positive).then_some(arg)));
        }
        out
    }

    #[test]
    fn no_gt_means_all_negative() {
        let anchors = vec![BBox::new(0.0, 0.0, 4.0, 4.0); 3];
        let l = match_boxes(&anchors, &[], 0.7, 0.3).unwrap();
        assert!(l.label.iter().all(|l| *l == AnchorLabel::Negative));
        assert!(match_boxes(&[], &anchors, 0.7, 0.3).is_err());
    }

    #[test]
    fn exact_gt_is_positive() {
        let anchors = vec![BBox::new(0.0, 0.0, 4.0, 4.0), BBox::new(10.0, 10.0, 14.0, 14.0)];
        let l = match_boxes(&anchors, &[BBox::new(10.0, 10.0, 14.0, 14.0)], 0.7, 0.3).unwrap();
        assert_eq!(l.label[1], AnchorLabel::Positive);
        assert_eq!(l.matched_gt[1], Some(0));
        assert_eq!(l.label[0], AnchorLabel::Negative);
    }

    #[test]
    fn agrees_with_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let anchors = random_boxes(50, &mut rng);
            let gts = random_boxes(3, &mut rng);
            let l = match_boxes(&anchors, &gts, 0.7, 0.3).unwrap();
            let o = oracle(&anchors, &gts, 0.7, 0.3);
            for (i, (lab, m)) in o.into_iter().enumerate() {
                assert_eq!(l.label[i], lab, "anchor {i}");
                assert_eq!(l.matched_gt[i], m, "anchor {i}");
            }
            for g in &gts {
                if anchors.iter().any(|a| iou(a, g) > 0.0) {
                    assert!(l.positives().any(|a| iou(&anchors[a], g) > 0.0));
                }
            }
        }
    }

    #[test]
    fn minibatch_counts() {
        let mut label = vec![AnchorLabel::Positive; 300];
        label.extend(vec![AnchorLabel::Negative; 1000]);
        let labels = AnchorLabels {
            matched_gt: vec![None; label.len()],
            label,
        };
        let sel = sample_anchor_minibatch(&labels, 256, 0.5, 3);
        assert_eq!(sel.len(), 256);
        assert_eq!(sel.iter().filter(|&&i| i < 300).count(), 128);
        assert_eq!(sel, sample_anchor_minibatch(&labels, 256, 0.5, 3));
        assert_ne!(sel, sample_anchor_minibatch(&labels, 256, 0.5, 4));

        let neg_only = AnchorLabels {
            label: vec![AnchorLabel::Negative; 10],
            matched_gt: vec![None; 10],
        };
        assert_eq!(sample_anchor_minibatch(&neg_only, 256, 0.5, 0).len(), 10);
    }
}
