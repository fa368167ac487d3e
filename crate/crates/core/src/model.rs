//! The full detector: MobileNet V1 + FPN features, RPN proposals, and the box
//! and mask heads, with one-image training steps and inference.

use image::RgbImage;
use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Fpn, MobileNetV1};
use crate::dataset::{mask_bbox, resize_and_pad, AnnotatedSample, Mask, ResizeTransform};
use crate::error::{invalid, Error, Result};
use crate::losses::{mask_loss_logits, roi_losses, rpn_loss_logits, total_loss, LossBreakdown, LossConfig};
use crate::nn::{sigmoid, BnMode, Module, Param, Tensor4};
use crate::roi_heads::{
    assign_and_sample_rois, paste_mask, roi_align, roi_align_backward, roi_level, softmax_rows, BoxHead, MaskHead,
    RoiSamplingConfig,
};
use crate::rpn::{
    decode_box_deltas, encode_box_deltas, flatten_outputs, generate_anchors, match_anchors, nms, propose,
    sample_anchor_minibatch, unflatten_grads, AnchorLabel, AnchorSet, BBox, LevelShape, ProposalConfig, RpnHead,
};

/// Pyramid levels used for ROI pooling (P2..P5).
const ROI_MIN_LEVEL: usize = 2;
const ROI_MAX_LEVEL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Side of the square network input.
    pub image_size: usize,
    /// Including background.
    pub num_classes: usize,
    pub fpn_channels: usize,
    pub rpn_mid_channels: usize,
    /// Anchor side length in input pixels for P2..P6.
    pub anchor_sizes: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub rpn_batch: usize,
    pub rpn_pos_fraction: f64,
    pub rpn_nms_iou: f64,
    pub train_pre_nms: usize,
    pub train_post_nms: usize,
    pub eval_pre_nms: usize,
    pub eval_post_nms: usize,
    pub proposal_min_size: f64,
    pub rois_per_image: usize,
    pub roi_pos_fraction: f64,
    pub roi_fg_iou: f64,
    pub box_pool: usize,
    pub mask_pool: usize,
    pub sampling_ratio: usize,
    pub fc_dim: usize,
    pub mask_dim: usize,
    pub mask_convs: usize,
    pub head_bn_mode: BnMode,
    pub delta_std: [f64; 4],
    pub det_min_score: f64,
    pub det_nms_iou: f64,
    pub det_max: usize,
    pub mask_threshold: f64,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            image_size: 512,
            num_classes: 2,
            fpn_channels: 256,
            rpn_mid_channels: 512,
            anchor_sizes: vec![8.0, 16.0, 32.0, 64.0, 128.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            rpn_batch: 256,
            rpn_pos_fraction: 0.5,
            rpn_nms_iou: 0.7,
            train_pre_nms: 2000,
            train_post_nms: 512,
            eval_pre_nms: 1000,
            eval_post_nms: 256,
            proposal_min_size: 1.0,
            rois_per_image: 512,
            roi_pos_fraction: 0.25,
            roi_fg_iou: 0.5,
            box_pool: 7,
            mask_pool: 14,
            sampling_ratio: 2,
            fc_dim: 1024,
            mask_dim: 256,
            mask_convs: 4,
            head_bn_mode: BnMode::Frozen,
            delta_std: [0.1, 0.1, 0.2, 0.2],
            det_min_score: 0.5,
            det_nms_iou: 0.3,
            det_max: 100,
            mask_threshold: 0.5,
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Reduced-width preset for CPU smoke runs. Batch statistics from a
    /// single image drift far from the moving averages early in training, so
    /// every batch norm runs on its fixed statistics here.
    pub fn smoke() -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                bn_mode: BnMode::Frozen,
                ..BackboneConfig::with_depth_multiplier(0.25)
            },
            image_size: 128,
            fpn_channels: 48,
            rpn_mid_channels: 64,
            train_pre_nms: 1000,
            train_post_nms: 128,
            eval_pre_nms: 600,
            eval_post_nms: 100,
            rois_per_image: 64,
            fc_dim: 256,
            mask_dim: 48,
            ..Default::default()
        }
    }

    pub fn mask_size(&self) -> usize {
        2 * self.mask_pool
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.loss.validate()?;
        if self.image_size < 64 || !self.image_size.is_multiple_of(32) {
            return Err(invalid(format!(
                "image size must be a multiple of 32 and at least 64, got {}",
                self.image_size
            )));
        }
        if self.num_classes < 2 {
            return Err(invalid("need background plus at least one class"));
        }
        if self.anchor_sizes.len() != 5 {
            return Err(invalid(format!("need five anchor sizes (P2..P6), got {}", self.anchor_sizes.len())));
        }
        if self.rpn_pos_iou <= self.rpn_neg_iou {
            return Err(invalid("RPN positive IoU must exceed the negative IoU"));
        }
        for (name, v) in [
            ("rpn_pos_fraction", self.rpn_pos_fraction),
            ("roi_pos_fraction", self.roi_pos_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("fpn_channels", self.fpn_channels),
            ("rpn_mid_channels", self.rpn_mid_channels),
            ("fc_dim", self.fc_dim),
            ("mask_dim", self.mask_dim),
            ("box_pool", self.box_pool),
            ("mask_pool", self.mask_pool),
            ("sampling_ratio", self.sampling_ratio),
            ("rpn_batch", self.rpn_batch),
            ("train_post_nms", self.train_post_nms),
            ("eval_post_nms", self.eval_post_nms),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if self.rois_per_image < 4 {
            return Err(invalid("rois_per_image must be at least 4"));
        }
        Ok(())
    }

    fn proposal_config(&self, train: bool) -> ProposalConfig {
        let s = self.image_size as f64;
        ProposalConfig {
            pre_nms_top_k: if train { self.train_pre_nms } else { self.eval_pre_nms },
            post_nms_top_k: if train { self.train_post_nms } else { self.eval_post_nms },
            nms_iou: self.rpn_nms_iou,
            image_size: (s, s),
            delta_std: self.delta_std,
            min_size: self.proposal_min_size,
        }
    }

    fn roi_sampling(&self) -> RoiSamplingConfig {
        RoiSamplingConfig {
            rois_per_image: self.rois_per_image,
            pos_fraction: self.roi_pos_fraction,
            fg_iou: self.roi_fg_iou,
            mask_size: self.mask_size(),
            delta_std: self.delta_std,
        }
    }

    fn level_shapes(&self) -> Vec<LevelShape> {
        (0..5)
            .map(|i| {
                let stride = 1usize << (i + 2);
                let n = self.image_size.div_ceil(stride);
                LevelShape {
                    height: n,
                    width: n,
                    stride,
                }
            })
            .collect()
    }
}

/// One image prepared for training: network input plus targets in input
/// coordinates.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub input: Tensor4,
    pub gt_boxes: Vec<BBox>,
    pub gt_masks: Vec<Mask>,
}

/// Maps 8-bit RGB to `[1, 3, H, W]` in `[-1, 1]`.
pub fn image_to_tensor(image: &RgbImage) -> Tensor4 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    Tensor4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| {
        image.get_pixel(x as u32, y as u32)[c] as f64 / 127.5 - 1.0
    })
}

/// Resizes the sample to the network input and derives boxes from the masks.
/// Regions that vanish after resizing are dropped.
pub fn prepare_sample(sample: &AnnotatedSample, image_size: usize) -> Result<TrainSample> {
    sample.check()?;
    let r = resize_and_pad(&sample.image, &sample.masks, image_size)?;
    let mut gt_boxes = Vec::new();
    let mut gt_masks = Vec::new();
    for m in r.masks {
        if let Some((x1, y1, x2, y2)) = mask_bbox(&m) {
            gt_boxes.push(BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64));
            gt_masks.push(m);
        }
    }
    Ok(TrainSample {
        id: sample.source_id.clone(),
        input: image_to_tensor(&r.image),
        gt_boxes,
        gt_masks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
    /// Mask probabilities inside the box.
    pub mask28: Array2<f64>,
    /// Pasted and thresholded, at the resolution the detection was made for.
    pub image_mask: Mask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub losses: LossBreakdown,
    pub positive_anchors: usize,
    pub rois: usize,
    pub foreground_rois: usize,
}

#[derive(Debug, Clone)]
pub struct MaskRcnn {
    pub config: ModelConfig,
    pub backbone: MobileNetV1,
    pub fpn: Fpn,
    pub rpn: RpnHead,
    pub box_head: BoxHead,
    pub mask_head: MaskHead,
    anchors: AnchorSet,
}

/// ROIAlign of every box on its assigned level into `[N, C, size, size]`.
fn pool_rois(levels: &[Tensor4], boxes: &[BBox], size: usize, sr: usize) -> Result<(Tensor4, Vec<usize>)> {
    let c = levels[0].dim().1;
    let mut out = Tensor4::zeros((boxes.len(), c, size, size));
    let mut assigned = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let l = roi_level(b, ROI_MIN_LEVEL, ROI_MAX_LEVEL);
        let f = levels[l - ROI_MIN_LEVEL].index_axis(Axis(0), 0);
        let p = roi_align(f, (1u64 << l) as f64, b, (size, size), sr)?;
        out.index_axis_mut(Axis(0), i).assign(&p);
        assigned.push(l);
    }
    Ok((out, assigned))
}

fn unpool_rois(
    levels: &[Tensor4],
    grads: &mut [Tensor4],
    boxes: &[BBox],
    assigned: &[usize],
    d_pooled: &Tensor4,
    sr: usize,
) -> Result<()> {
    for (i, (b, &l)) in boxes.iter().zip(assigned).enumerate() {
        let k = l - ROI_MIN_LEVEL;
        let f = levels[k].index_axis(Axis(0), 0);
        let mut g = grads[k].index_axis_mut(Axis(0), 0);
        roi_align_backward(f, &mut g, (1u64 << l) as f64, b, d_pooled.index_axis(Axis(0), i), sr)?;
    }
    Ok(())
}

impl MaskRcnn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = MobileNetV1::new(config.backbone.clone(), &mut rng)?;
        let ch = backbone.stage_channels();
        let fpn = Fpn::new(&ch[1..], config.fpn_channels, &mut rng)?;
        let a = config.anchor_ratios.len();
        let rpn = RpnHead::new(config.fpn_channels, config.rpn_mid_channels, a, &mut rng);
        let box_head = BoxHead::new(
            config.fpn_channels,
            config.box_pool,
            config.fc_dim,
            config.num_classes,
            config.head_bn_mode,
            &mut rng,
        );
        let mask_head = MaskHead::new(
            config.fpn_channels,
            config.mask_pool,
            config.mask_dim,
            config.mask_convs,
            config.num_classes,
            config.head_bn_mode,
            &mut rng,
        );
        let anchors = Self::build_anchors(&config)?;
        Ok(MaskRcnn {
            config,
            backbone,
            fpn,
            rpn,
            box_head,
            mask_head,
            anchors,
        })
    }

    fn build_anchors(config: &ModelConfig) -> Result<AnchorSet> {
        let shapes = config.level_shapes();
        // anchor sizes are absolute pixels; the generator multiplies by stride
        let scales: Vec<f64> = shapes
            .iter()
            .zip(&config.anchor_sizes)
            .map(|(l, &s)| s / l.stride as f64)
            .collect();
        generate_anchors(&shapes, &scales, &config.anchor_ratios)
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let s = self.config.image_size;
        if x.dim() != (1, 3, s, s) {
            return Err(Error::ShapeMismatch(format!("network input must be [1, 3, {s}, {s}], got {:?}", x.dim())));
        }
        Ok(())
    }

    /// One forward/backward pass. Gradients accumulate into the parameters;
    /// the caller zeroes them and applies the optimizer.
    pub fn train_step(&mut self, sample: &TrainSample, seed: u64) -> Result<StepStats> {
        let result = self.train_step_inner(sample, seed);
        if result.is_err() {
            self.clear_cache();
        }
        result
    }

    fn train_step_inner(&mut self, sample: &TrainSample, seed: u64) -> Result<StepStats> {
        self.check_input(&sample.input)?;
        if sample.gt_boxes.len() != sample.gt_masks.len() {
            return Err(invalid("one mask per ground-truth box is required"));
        }
        let cfg = self.config.clone();
        let stages = self.backbone.forward_train(&sample.input);
        let pyramid = self.fpn.forward_train(&stages.c[1..])?;
        let levels = pyramid.levels;
        let shapes: Vec<(usize, usize)> = levels.iter().map(|t| (t.dim().2, t.dim().3)).collect();

        // RPN
        let a = cfg.anchor_ratios.len();
        let rpn_out = self.rpn.forward_train(&levels);
        let flat = flatten_outputs(&rpn_out, a);
        let labels = match_anchors(&self.anchors, &sample.gt_boxes, cfg.rpn_pos_iou, cfg.rpn_neg_iou)?;
        let picked = sample_anchor_minibatch(&labels, cfg.rpn_batch, cfg.rpn_pos_fraction, seed);
        let mut p_star = Vec::with_capacity(picked.len());
        let mut t_star = Vec::with_capacity(picked.len());
        for &i in &picked {
            if labels.label[i] == AnchorLabel::Positive {
                let g = labels.matched_gt[i].expect("positive anchors are matched");
                let d = encode_box_deltas(&self.anchors.boxes[i], &sample.gt_boxes[g])?;
                p_star.push(1.0);
                t_star.push(std::array::from_fn(|k| d[k] / cfg.delta_std[k]));
            } else {
                p_star.push(0.0);
                t_star.push([0.0; 4]);
            }
        }
        let sel_logits: Vec<[f64; 2]> = picked.iter().map(|&i| flat.logits[i]).collect();
        let sel_deltas: Vec<[f64; 4]> = picked.iter().map(|&i| flat.deltas[i]).collect();
        let ((l_rpn_cls, l_rpn_box), rpn_grad) = rpn_loss_logits(&sel_logits, &p_star, &sel_deltas, &t_star, &cfg.loss)?;
        let mut d_logits = vec![[0.0; 2]; flat.logits.len()];
        let mut d_deltas = vec![[0.0; 4]; flat.deltas.len()];
        for (j, &i) in picked.iter().enumerate() {
            d_logits[i] = rpn_grad.d_logits[j];
            d_deltas[i] = rpn_grad.d_t[j];
        }

        // proposals are treated as constants
        let mut proposals: Vec<BBox> = propose(&flat.fg_prob, &flat.deltas, &self.anchors, &cfg.proposal_config(true))
            .into_iter()
            .map(|p| p.bbox)
            .collect();
        proposals.extend(sample.gt_boxes.iter().copied());
        let rois = assign_and_sample_rois(
            &proposals,
            &sample.gt_boxes,
            &sample.gt_masks,
            &cfg.roi_sampling(),
            seed.wrapping_add(0x9e37_79b9),
        )?;

        let mut d_levels: Vec<Tensor4> = levels.iter().map(|t| Tensor4::zeros(t.dim())).collect();
        let (mut l_roi_cls, mut l_roi_box, mut l_mask) = (0.0, 0.0, 0.0);
        let n_fg = rois.iter().filter(|r| r.is_foreground()).count();
        if !rois.is_empty() {
            let boxes: Vec<BBox> = rois.iter().map(|r| r.proposal).collect();
            let (pooled, assigned) = pool_rois(&levels, &boxes, cfg.box_pool, cfg.sampling_ratio)?;
            let out = self.box_head.forward_train(&pooled)?;
            let class_targets: Vec<usize> = rois.iter().map(|r| if r.is_foreground() { 1 } else { 0 }).collect();
            let box_targets: Vec<Option<[f64; 4]>> = rois.iter().map(|r| r.box_target).collect();
            let roi = roi_losses(
                out.class_logits.view(),
                &class_targets,
                out.box_deltas.view(),
                &box_targets,
                cfg.loss.smooth_l1_beta,
            )?;
            l_roi_cls = roi.l_cls;
            l_roi_box = roi.l_box;
            let d_pooled = self.box_head.backward(&roi.d_logits, &roi.d_deltas);
            unpool_rois(&levels, &mut d_levels, &boxes, &assigned, &d_pooled, cfg.sampling_ratio)?;

            if n_fg > 0 {
                let fg_boxes: Vec<BBox> = boxes[..n_fg].to_vec();
                let (mpooled, massigned) = pool_rois(&levels, &fg_boxes, cfg.mask_pool, cfg.sampling_ratio)?;
                let logits = self.mask_head.forward_train(&mpooled)?;
                let m = cfg.mask_size();
                let mut targets = Array3::zeros((n_fg, m, m));
                for (i, r) in rois[..n_fg].iter().enumerate() {
                    targets
                        .index_axis_mut(Axis(0), i)
                        .assign(r.mask_target.as_ref().expect("foreground has a mask target"));
                }
                let chosen = logits.slice(s![.., 1, .., ..]).to_owned();
                let (lm, dm) = mask_loss_logits(chosen.view(), targets.view())?;
                l_mask = lm;
                let mut d_logits_mask = Tensor4::zeros(logits.dim());
                d_logits_mask.slice_mut(s![.., 1, .., ..]).assign(&dm);
                let d_mpooled = self.mask_head.backward(&d_logits_mask);
                unpool_rois(&levels, &mut d_levels, &fg_boxes, &massigned, &d_mpooled, cfg.sampling_ratio)?;
            }
        }

        let rpn_grads = unflatten_grads(&shapes, a, &d_logits, &d_deltas);
        for (d, g) in d_levels.iter_mut().zip(self.rpn.backward(rpn_grads)) {
            *d += &g;
        }
        let d_stages = self.fpn.backward(d_levels);
        let mut stage_grads: Vec<Option<Tensor4>> = vec![None];
        stage_grads.extend(d_stages.into_iter().map(Some));
        self.backbone.backward(stage_grads);

        let losses = total_loss(l_rpn_cls, l_rpn_box, l_roi_cls, l_roi_box, l_mask)?;
        Ok(StepStats {
            losses,
            positive_anchors: p_star.iter().filter(|&&v| v == 1.0).count(),
            rois: rois.len(),
            foreground_rois: n_fg,
        })
    }

    /// Losses for one sample without touching parameters or caches.
    pub fn evaluate_loss(&self, sample: &TrainSample, seed: u64) -> Result<LossBreakdown> {
        let mut scratch = self.clone();
        // batch statistics would otherwise move; use inference statistics
        scratch.set_backbone_bn_mode(BnMode::Frozen);
        let stats = scratch.train_step(sample, seed)?;
        Ok(stats.losses)
    }

    pub fn set_backbone_bn_mode(&mut self, mode: BnMode) {
        for l in &mut self.backbone.layers {
            l.set_bn_mode(mode);
        }
    }

    pub fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.fpn.clear_cache();
        self.rpn.clear_cache();
        self.box_head.clear_cache();
        self.mask_head.clear_cache();
    }

    /// Inference on a prepared network input; boxes and masks are in input
    /// coordinates.
    pub fn detect_tensor(&self, input: &Tensor4) -> Result<Vec<Detection>> {
        self.check_input(input)?;
        let cfg = &self.config;
        let s = cfg.image_size as f64;
        let stages = self.backbone.forward(input);
        let levels = self.fpn.forward(&stages.c[1..])?.levels;
        let flat = flatten_outputs(&self.rpn.forward(&levels), cfg.anchor_ratios.len());
        let proposals: Vec<BBox> = propose(&flat.fg_prob, &flat.deltas, &self.anchors, &cfg.proposal_config(false))
            .into_iter()
            .map(|p| p.bbox)
            .collect();
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let (pooled, _) = pool_rois(&levels, &proposals, cfg.box_pool, cfg.sampling_ratio)?;
        let out = self.box_head.forward(&pooled)?;
        let probs = softmax_rows(&out.class_logits);
        let mut cands: Vec<(BBox, usize, f64)> = Vec::new();
        for (i, p) in proposals.iter().enumerate() {
            for c in 1..cfg.num_classes {
                let score = probs[[i, c]];
                if score < cfg.det_min_score {
                    continue;
                }
                let d: [f64; 4] = std::array::from_fn(|k| out.box_deltas[[i, 4 * c + k]] * cfg.delta_std[k]);
                let b = decode_box_deltas(p, d, Some((s, s)));
                if b.is_finite() && b.width() >= 1.0 && b.height() >= 1.0 {
                    cands.push((b, c, score));
                }
            }
        }
        let mut kept: Vec<(BBox, usize, f64)> = Vec::new();
        for c in 1..cfg.num_classes {
            let (boxes, scores): (Vec<BBox>, Vec<f64>) =
                cands.iter().filter(|d| d.1 == c).map(|d| (d.0, d.2)).unzip();
            kept.extend(nms(&boxes, &scores, cfg.det_nms_iou).into_iter().map(|i| (boxes[i], c, scores[i])));
        }
        kept.sort_by(|a, b| b.2.total_cmp(&a.2));
        kept.truncate(cfg.det_max);
        if kept.is_empty() {
            return Ok(Vec::new());
        }
        let boxes: Vec<BBox> = kept.iter().map(|d| d.0).collect();
        let (mpooled, _) = pool_rois(&levels, &boxes, cfg.mask_pool, cfg.sampling_ratio)?;
        let logits = self.mask_head.forward(&mpooled)?;
        let n = cfg.image_size;
        Ok(kept
            .into_iter()
            .enumerate()
            .map(|(i, (b, c, score))| {
                let mask28 = logits.slice(s![i, c, .., ..]).mapv(sigmoid);
                let image_mask = paste_mask(mask28.view(), &b, (n, n), cfg.mask_threshold);
                Detection {
                    bbox: b,
                    class_id: c,
                    score,
                    mask28,
                    image_mask,
                }
            })
            .collect())
    }

    /// Inference on an arbitrary image; boxes and masks are in the image's own
    /// coordinates.
    pub fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        let r = resize_and_pad(image, &[], self.config.image_size)?;
        let dets = self.detect_tensor(&image_to_tensor(&r.image))?;
        Ok(dets.into_iter().map(|d| to_original(d, &r.transform, self.config.mask_threshold)).collect())
    }
}

fn to_original(d: Detection, t: &ResizeTransform, threshold: f64) -> Detection {
    let (h, w) = t.original;
    let b = t.inverse_box(&d.bbox).clip(h as f64, w as f64);
    let image_mask = paste_mask(d.mask28.view(), &b, (h, w), threshold);
    Detection {
        bbox: b,
        image_mask,
        ..d
    }
}

impl Module for MaskRcnn {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.backbone.params();
        v.extend(self.fpn.params());
        v.extend(self.rpn.params());
        v.extend(self.box_head.params());
        v.extend(self.mask_head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.backbone.params_mut();
        v.extend(self.fpn.params_mut());
        v.extend(self.rpn.params_mut());
        v.extend(self.box_head.params_mut());
        v.extend(self.mask_head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::count_parameters;
    use crate::dataset::make_synthetic_fixture;

    fn tiny() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig::with_depth_multiplier(0.25),
            image_size: 64,
            fpn_channels: 8,
            rpn_mid_channels: 8,
            rois_per_image: 16,
            train_post_nms: 32,
            eval_post_nms: 32,
            fc_dim: 16,
            mask_dim: 8,
            mask_convs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn full_parameter_count() {
        let m = MaskRcnn::new(ModelConfig::default(), 0).unwrap();
        let r = count_parameters(&m);
        assert_eq!(r.total, 23_812_574);
        assert_eq!(r.trainable, 23_784_542);
        assert_eq!(r.non_trainable, 28_032);
    }

    #[test]
    fn train_step_produces_finite_losses_and_grads() {
        let s = &make_synthetic_fixture(1, (64, 64), (2, 2), 3).unwrap()[0];
        let ts = prepare_sample(s, 64).unwrap();
        assert_eq!(ts.gt_boxes.len(), 2);
        let mut m = MaskRcnn::new(tiny(), 1).unwrap();
        let st = m.train_step(&ts, 0).unwrap();
        assert!(st.losses.l_total.is_finite() && st.losses.l_total > 0.0);
        assert!(st.foreground_rois >= 2);
        assert!(st.positive_anchors >= 2);
        assert!((st.losses.l_rpn_cls - 2f64.ln()).abs() < 0.1);
        let nonzero = m.params().iter().filter(|p| p.trainable && p.grad.iter().any(|&g| g != 0.0)).count();
        let trainable = m.params().iter().filter(|p| p.trainable).count();
        assert!(nonzero as f64 > 0.9 * trainable as f64, "{nonzero}/{trainable}");
        assert!(m.params().iter().all(|p| p.grad.iter().all(|g| g.is_finite())));
    }

    #[test]
    fn authentic_image_trains() {
        let img = RgbImage::from_pixel(64, 64, image::Rgb([120, 120, 120]));
        let ts = TrainSample {
            id: "au".into(),
            input: image_to_tensor(&img),
            gt_boxes: vec![],
            gt_masks: vec![],
        };
        let mut m = MaskRcnn::new(tiny(), 2).unwrap();
        let st = m.train_step(&ts, 0).unwrap();
        assert_eq!(st.foreground_rois, 0);
        assert_eq!(st.losses.l_mask, 0.0);
        assert_eq!(st.losses.l_rpn_box, 0.0);
    }

    #[test]
    fn detections_live_in_image_coordinates() {
        let mut cfg = tiny();
        cfg.det_min_score = 0.0;
        let m = MaskRcnn::new(cfg, 3).unwrap();
        let img = RgbImage::from_fn(96, 48, |x, y| image::Rgb([(x * 2) as u8, (y * 5) as u8, 90]));
        let dets = m.detect(&img).unwrap();
        assert!(!dets.is_empty());
        for d in &dets {
            assert_eq!(d.image_mask.dim(), (48, 96));
            assert!(d.bbox.x2 <= 96.0 && d.bbox.y2 <= 48.0);
            assert!((0.0..=1.0).contains(&d.score));
            for ((y, x), &v) in d.image_mask.indexed_iter() {
                if v {
                    assert!(x as f64 + 0.5 >= d.bbox.x1 && (x as f64 + 0.5) < d.bbox.x2);
                    assert!(y as f64 + 0.5 >= d.bbox.y1 && (y as f64 + 0.5) < d.bbox.y2);
                }
            }
        }
        let mut strict = tiny();
        strict.det_min_score = 1.0 + 1e-9;
        let m = MaskRcnn::new(strict, 3).unwrap();
        assert!(m.detect(&img).unwrap().is_empty());
    }

    #[test]
    fn rejects_wrong_input() {
        let m = MaskRcnn::new(tiny(), 0).unwrap();
        assert!(m.detect_tensor(&Tensor4::zeros((1, 3, 32, 32))).is_err());
        let mut bad = tiny();
        bad.anchor_sizes.pop();
        assert!(MaskRcnn::new(bad, 0).is_err());
    }
}
