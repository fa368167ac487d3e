use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Mask;
use crate::error::{invalid, Result};
use crate::rpn::{encode_box_deltas, iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiLabel {
    Foreground,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub proposal: BBox,
    pub label: RoiLabel,
    pub matched_gt: Option<usize>,
    /// Normalized deltas (already divided by the delta std), foreground only.
    pub box_target: Option<[f64; 4]>,
    /// Binary `size×size` crop of the matched mask, foreground only.
    pub mask_target: Option<Array2<f64>>,
}

impl RoiSample {
    pub fn is_foreground(&self) -> bool {
        self.label == RoiLabel::Foreground
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSamplingConfig {
    pub rois_per_image: usize,
    pub pos_fraction: f64,
    pub fg_iou: f64,
    pub mask_size: usize,
    pub delta_std: [f64; 4],
}

impl Default for RoiSamplingConfig {
    fn default() -> Self {
        RoiSamplingConfig {
            rois_per_image: 512,
            pos_fraction: 0.25,
            fg_iou: 0.5,
            mask_size: 28,
            delta_std: [0.1, 0.1, 0.2, 0.2],
        }
    }
}

/// Bilinear value of a binary mask at continuous pixel coordinates (pixel
/// `(i, j)` centred at `(j + 0.5, i + 0.5)`), zero outside.
fn mask_value(mask: &Mask, x: f64, y: f64) -> f64 {
    let (h, w) = mask.dim();
    let (x, y) = (x - 0.5, y - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (lx, ly) = (x - x0, y - y0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else if mask[[yy as usize, xx as usize]] {
            1.0
        } else {
            0.0
        }
    };
    (1.0 - ly) * ((1.0 - lx) * at(y0, x0) + lx * at(y0, x0 + 1.0))
        + ly * ((1.0 - lx) * at(y0 + 1.0, x0) + lx * at(y0 + 1.0, x0 + 1.0))
}

/// Crops `mask` to `b` and resamples to `size×size`, thresholded at 0.5.
pub fn crop_and_resize_mask(mask: &Mask, b: &BBox, size: usize) -> Array2<f64> {
    let (bw, bh) = (b.width() / size as f64, b.height() / size as f64);
    Array2::from_shape_fn((size, size), |(i, j)| {
        let x = b.x1 + (j as f64 + 0.5) * bw;
        let y = b.y1 + (i as f64 + 0.5) * bh;
        if mask_value(mask, x, y) >= 0.5 {
            1.0
        } else {
            0.0
        }
    })
}

/// Labels proposals against ground truth and draws a training minibatch.
///
/// Foreground (IoU ≥ `fg_iou`) is capped at `round(n · pos_fraction)`; the
/// remainder of the `n` slots is filled with background. Foreground comes
/// first in the output.
pub fn assign_and_sample_rois(
    proposals: &[BBox],
    gt_boxes: &[BBox],
    gt_masks: &[Mask],
    cfg: &RoiSamplingConfig,
    seed: u64,
) -> Result<Vec<RoiSample>> {
    if cfg.rois_per_image < 4 {
        return Err(invalid(format!("need at least 4 ROIs per image, got {}", cfg.rois_per_image)));
    }
    if !(cfg.pos_fraction > 0.0 && cfg.pos_fraction <= 1.0) {
        return Err(invalid("ROI positive fraction must lie in (0, 1]"));
    }
    if gt_boxes.len() != gt_masks.len() {
        return Err(invalid("one mask per ground-truth box is required"));
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut matched = vec![None; proposals.len()];
    for (i, p) in proposals.iter().enumerate() {
        if p.is_degenerate() {
            continue;
        }
        let best = gt_boxes
            .iter()
            .enumerate()
            .map(|(g, b)| (g, iou(p, b)))
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        match best {
            Some((g, v)) if v >= cfg.fg_iou => {
                matched[i] = Some(g);
                fg.push(i);
            }
            _ => bg.push(i),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fg.shuffle(&mut rng);
    bg.shuffle(&mut rng);
    let n_fg = fg.len().min((cfg.rois_per_image as f64 * cfg.pos_fraction).round() as usize);
    let n_bg = bg.len().min(cfg.rois_per_image - n_fg);
    let mut fg: Vec<usize> = fg[..n_fg].to_vec();
    let mut bg: Vec<usize> = bg[..n_bg].to_vec();
    fg.sort_unstable();
    bg.sort_unstable();
    let mut out = Vec::with_capacity(n_fg + n_bg);
    for i in fg {
        let g = matched[i].expect("foreground is matched");
        let p = proposals[i];
        let d = encode_box_deltas(&p, &gt_boxes[g])?;
        out.push(RoiSample {
            proposal: p,
            label: RoiLabel::Foreground,
            matched_gt: Some(g),
            box_target: Some(std::array::from_fn(|k| d[k] / cfg.delta_std[k])),
            mask_target: Some(crop_and_resize_mask(&gt_masks[g], &p, cfg.mask_size)),
        });
    }
    for i in bg {
        out.push(RoiSample {
            proposal: proposals[i],
            label: RoiLabel::Background,
            matched_gt: None,
            box_target: None,
            mask_target: None,
        });
    }
    Ok(out)
}
