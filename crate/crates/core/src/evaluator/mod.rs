//! Detection and segmentation metrics: matching, precision/recall/F1,
//! interpolated AP, and the forged-region percentage.

mod io;

pub use io::{
    decode_rle, encode_rle, predictions_from_json, predictions_to_json, read_predictions, write_predictions,
    DetectionRecord, ImageRecord, Rle,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Mask;
use crate::error::{invalid, Error, Result};
use crate::rpn::{iou, BBox};

/// Which overlap decides a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    Box,
    Mask,
}

/// A ground-truth region or a scored prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub bbox: BBox,
    pub mask: Mask,
    /// 1.0 for ground truth.
    pub score: f64,
}

impl Region {
    /// Region from a mask, boxed by its tight pixel extent.
    pub fn from_mask(mask: Mask, score: f64) -> Self {
        let bbox = crate::dataset::mask_bbox(&mask)
            .map(|(x1, y1, x2, y2)| BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
            .unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
        Region { bbox, mask, score }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRegions {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub regions: Vec<Region>,
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("masks {:?} and {:?}", a.dim(), b.dim())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

fn overlap(p: &Region, g: &Region, kind: IouKind) -> Result<f64> {
    match kind {
        IouKind::Box => Ok(iou(&p.bbox, &g.bbox)),
        IouKind::Mask => mask_iou(&p.mask, &g.mask),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(prediction index, ground-truth index)` in score order.
    pub pairs: Vec<(usize, usize)>,
    /// Prediction indices in descending score order, ties by index.
    pub order: Vec<usize>,
    /// For each prediction in `order`, whether it matched.
    pub is_tp: Vec<bool>,
}

/// Greedy one-to-one matching: predictions by descending score, each taking
/// the unmatched ground truth of highest IoU at or above the threshold.
pub fn match_detections(preds: &[Region], gts: &[Region], iou_threshold: f64, kind: IouKind) -> Result<MatchResult> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(invalid(format!("IoU threshold must lie in (0, 1], got {iou_threshold}")));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut is_tp = Vec::with_capacity(preds.len());
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = overlap(&preds[p], gt, kind)?;
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                pairs.push((p, g));
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    let tp = pairs.len();
    Ok(MatchResult {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        pairs,
        order,
        is_tp,
    })
}

/// Harmonic mean, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `(P, R, F1)` from counts; each is 0 when its denominator vanishes.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    (p, r, f1_score(p, r))
}

/// Precision/recall points in descending score order.
fn pr_curve(ranked: &[(f64, bool)], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    ranked
        .iter()
        .enumerate()
        .map(|(i, &(_, hit))| {
            tp += hit as usize;
            (tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

fn ranked(dets: &[(f64, bool)]) -> Vec<(f64, bool)> {
    let mut v: Vec<(usize, (f64, bool))> = dets.iter().copied().enumerate().collect();
    v.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(_, d)| d).collect()
}

/// 101-point interpolated AP from `(score, is_tp)` pairs. `None` without GT.
pub fn ap_101(dets: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let curve = pr_curve(&ranked(dets), n_gt);
    let sum: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            curve
                .iter()
                .filter(|(rc, _)| *rc >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(sum / 101.0)
}

/// Exact area under the step-wise PR curve (precision at each new recall
/// level, uninterpolated). `None` without GT.
pub fn ap_exact(dets: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let r = ranked(dets);
    let curve = pr_curve(&r, n_gt);
    Some(
        r.iter()
            .zip(&curve)
            .filter(|((_, hit), _)| *hit)
            .map(|(_, &(_, p))| p)
            .sum::<f64>()
            / n_gt as f64,
    )
}

fn check_aligned(preds: &[ImageRegions], gts: &[ImageRegions]) -> Result<Vec<(usize, usize)>> {
    let gi: BTreeMap<&str, usize> = gts.iter().enumerate().map(|(i, g)| (g.image_id.as_str(), i)).collect();
    let pi: BTreeMap<&str, usize> = preds.iter().enumerate().map(|(i, p)| (p.image_id.as_str(), i)).collect();
    let missing_p: Vec<String> = gi.keys().filter(|k| !pi.contains_key(*k)).map(|k| k.to_string()).collect();
    if !missing_p.is_empty() {
        return Err(Error::MissingIds {
            side: "predictions",
            ids: missing_p,
        });
    }
    let missing_g: Vec<String> = pi.keys().filter(|k| !gi.contains_key(*k)).map(|k| k.to_string()).collect();
    if !missing_g.is_empty() {
        return Err(Error::MissingIds {
            side: "ground truth",
            ids: missing_g,
        });
    }
    Ok(gi.iter().map(|(k, &g)| (pi[k], g)).collect())
}

/// Dataset-wide `(score, is_tp)` list and GT count at one threshold.
fn scored_matches(preds: &[ImageRegions], gts: &[ImageRegions], thr: f64, kind: IouKind) -> Result<(Vec<(f64, bool)>, usize)> {
    let mut dets = Vec::new();
    let mut n_gt = 0;
    for (p, g) in check_aligned(preds, gts)? {
        let m = match_detections(&preds[p].regions, &gts[g].regions, thr, kind)?;
        n_gt += gts[g].regions.len();
        for (&i, &hit) in m.order.iter().zip(&m.is_tp) {
            dets.push((preds[p].regions[i].score, hit));
        }
    }
    Ok((dets, n_gt))
}

pub fn average_precision(preds: &[ImageRegions], gts: &[ImageRegions], iou_threshold: f64, kind: IouKind) -> Result<Option<f64>> {
    let (dets, n_gt) = scored_matches(preds, gts, iou_threshold, kind)?;
    Ok(ap_101(&dets, n_gt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    /// Headline value: AP at IoU 0.5.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    /// Mean over IoU 0.50:0.05:0.95, for reference.
    pub ap_coco: Option<f64>,
}

pub fn ap_summary(preds: &[ImageRegions], gts: &[ImageRegions], kind: IouKind) -> Result<ApSummary> {
    let ap50 = average_precision(preds, gts, 0.5, kind)?;
    let ap75 = average_precision(preds, gts, 0.75, kind)?;
    let mut coco = Vec::new();
    for k in 0..10 {
        coco.push(average_precision(preds, gts, 0.5 + 0.05 * k as f64, kind)?);
    }
    let ap_coco = if coco.iter().all(Option::is_some) {
        Some(coco.iter().flatten().sum::<f64>() / 10.0)
    } else {
        None
    };
    Ok(ApSummary {
        ap: ap50,
        ap50,
        ap75,
        ap_coco,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgedPercentage {
    /// Union of all masks over the image area, in percent.
    pub total: f64,
    pub per_region: Vec<f64>,
}

pub fn forged_percentage(masks: &[Mask], height: usize, width: usize) -> Result<ForgedPercentage> {
    if height == 0 || width == 0 {
        return Err(invalid("zero-area image"));
    }
    let area = (height * width) as f64;
    let mut union = Mask::from_elem((height, width), false);
    let mut per_region = Vec::with_capacity(masks.len());
    for m in masks {
        if m.dim() != (height, width) {
            return Err(Error::ShapeMismatch(format!("mask {:?} on a {height}×{width} image", m.dim())));
        }
        union.zip_mut_with(m, |a, &b| *a |= b);
        per_region.push(100.0 * m.iter().filter(|&&v| v).count() as f64 / area);
    }
    let total = 100.0 * union.iter().filter(|&&v| v).count() as f64 / area;
    Ok(ForgedPercentage { total, per_region })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub matching_iou: f64,
    pub iou_kind: IouKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            matching_iou: 0.5,
            iou_kind: IouKind::Mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub forged_percentage: f64,
    pub gt_forged_percentage: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// IoU of each GT region with its matched prediction (0 when unmatched).
    pub gt_match_iou: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_coco: Option<f64>,
    pub matching_iou: f64,
    pub iou_kind: IouKind,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub mean_forged_percentage: f64,
    pub per_image: Vec<ImageMetrics>,
}

pub const REPORT_CSV_HEADER: &str = "F1-Score,Precision,Recall,Avg. Precision,AP0.5,AP0.75,TP,FP,FN,Mean Forged %";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| format!("{x}"))
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{REPORT_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{}\n",
            self.f1,
            self.precision,
            self.recall,
            opt(self.ap),
            opt(self.ap50),
            opt(self.ap75),
            self.tp,
            self.fp,
            self.fn_,
            self.mean_forged_percentage
        )
    }
}

/// Matching, P/R/F1 at the configured IoU, AP summary and forged
/// percentages over aligned image sets.
pub fn evaluate(preds: &[ImageRegions], gts: &[ImageRegions], cfg: &EvalConfig) -> Result<MetricsReport> {
    let pairs = check_aligned(preds, gts)?;
    let mut per_image = Vec::with_capacity(pairs.len());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pairs {
        let (pi, gi) = (&preds[p], &gts[g]);
        if (pi.height, pi.width) != (gi.height, gi.width) {
            return Err(Error::ShapeMismatch(format!(
                "{}: predictions are {}×{}, ground truth {}×{}",
                gi.image_id, pi.height, pi.width, gi.height, gi.width
            )));
        }
        let m = match_detections(&pi.regions, &gi.regions, cfg.matching_iou, cfg.iou_kind)?;
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        let mut gt_match_iou = vec![0.0; gi.regions.len()];
        for &(a, b) in &m.pairs {
            gt_match_iou[b] = mask_iou(&pi.regions[a].mask, &gi.regions[b].mask)?;
        }
        let pm: Vec<Mask> = pi.regions.iter().map(|r| r.mask.clone()).collect();
        let gm: Vec<Mask> = gi.regions.iter().map(|r| r.mask.clone()).collect();
        per_image.push(ImageMetrics {
            image_id: gi.image_id.clone(),
            forged_percentage: forged_percentage(&pm, gi.height, gi.width)?.total,
            gt_forged_percentage: forged_percentage(&gm, gi.height, gi.width)?.total,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            gt_match_iou,
        });
    }
    let (precision, recall, f1) = precision_recall_f1(tp, fp, fn_);
    let aps = ap_summary(preds, gts, cfg.iou_kind)?;
    let mean_forged_percentage = if per_image.is_empty() {
        0.0
    } else {
        per_image.iter().map(|m| m.forged_percentage).sum::<f64>() / per_image.len() as f64
    };
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        ap: aps.ap,
        ap50: aps.ap50,
        ap75: aps.ap75,
        ap_coco: aps.ap_coco,
        matching_iou: cfg.matching_iou,
        iou_kind: cfg.iou_kind,
        tp,
        fp,
        fn_,
        mean_forged_percentage,
        per_image,
    })
}
