//! Run configuration as flat `KEY = VALUE` text.
//!
//! Keys are case-insensitive; spaces, dots and hyphens count as underscores,
//! so `IMAGE MAX DIM` and `image-max-dim` both mean `IMAGE_MAX_DIM`. A tab
//! may stand in for `=`. `#` starts a comment. Lists accept `[a b]`, `[a,b]`
//! and `(a, b)`.
//!
//! ```text
//! PROFILE = smoke
//! LEARNING_RATE = 0.02
//! RPN_ANCHOR_SCALES = (8, 16, 32, 64, 128)
//! ```

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{EvalConfig, IouKind};
use crate::losses::Normalizer;
use crate::model::ModelConfig;
use crate::nn::BnMode;
use crate::trainer::TrainConfig;

pub const CONFIG_ECHO_FILE: &str = "run_config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-size model and the published schedule.
    Paper,
    /// Reduced width, 128-pixel inputs, 200 steps.
    Smoke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Lower bound for the short side before the long-side cap applies.
    pub image_min_dim: usize,
    /// Accepted for compatibility with published configurations; unused.
    pub image_meta_size: usize,
    image_shape: Option<[usize; 3]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::paper()
    }
}

fn cfg_err(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

/// `IMAGE max-dim` → `IMAGE_MAX_DIM`.
pub fn normalize_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for ch in key.trim().chars() {
        if ch.is_whitespace() || matches!(ch, '-' | '.' | '_') {
            if !out.ends_with('_') && !out.is_empty() {
                out.push('_');
            }
        } else {
            out.push(ch.to_ascii_uppercase());
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.trim()
        .parse()
        .map_err(|e| cfg_err(format!("{key}: cannot parse '{}': {e}", v.trim())))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let v = v.trim();
    let inner = v
        .strip_prefix(['[', '('])
        .and_then(|s| s.strip_suffix([']', ')']))
        .unwrap_or(v);
    inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn fixed<T: FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[T; N]>
where
    T::Err: Display,
{
    let xs: Vec<T> = list(key, v)?;
    xs.try_into()
        .map_err(|xs: Vec<T>| cfg_err(format!("{key}: expected {N} values, got {}", xs.len())))
}

fn optional<T: FromStr>(key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if v.trim().eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        scalar(key, v).map(Some)
    }
}

fn bn_mode(key: &str, v: &str) -> Result<BnMode> {
    match v.trim().to_ascii_lowercase().as_str() {
        "batch" => Ok(BnMode::Batch),
        "frozen" => Ok(BnMode::Frozen),
        other => Err(cfg_err(format!("{key}: expected batch or frozen, got '{other}'"))),
    }
}

fn normalizer(key: &str, v: &str) -> Result<Normalizer> {
    if v.trim().eq_ignore_ascii_case("sampled") {
        Ok(Normalizer::SampledAnchors)
    } else {
        scalar(key, v).map(Normalizer::Fixed)
    }
}

fn lr_drops(key: &str, v: &str) -> Result<Vec<(usize, f64)>> {
    if v.trim().eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (e, lr) = item
                .split_once(':')
                .ok_or_else(|| cfg_err(format!("{key}: expected EPOCH:LR pairs, got '{}'", item.trim())))?;
            Ok((scalar(key, e)?, scalar(key, lr)?))
        })
        .collect()
}

fn show_list<T: Display>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn show_opt<T: Display>(x: Option<T>) -> String {
    x.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn show_bn(m: BnMode) -> String {
    match m {
        BnMode::Batch => "batch".into(),
        BnMode::Frozen => "frozen".into(),
    }
}

fn show_norm(n: Normalizer) -> String {
    match n {
        Normalizer::SampledAnchors => "sampled".into(),
        Normalizer::Fixed(v) => v.to_string(),
    }
}

/// Every accepted key, in rendering order.
pub const KEYS: &[&str] = &[
    "PROFILE",
    "BACKBONE",
    "IMAGE_MAX_DIM",
    "IMAGE_META_SIZE",
    "IMAGE_MIN_DIM",
    "IMAGE_SHAPE",
    "LEARNING_RATE",
    "MASK_SHAPE",
    "RPN_ANCHOR_SCALES",
    "STEPS_PER_EPOCH",
    "WEIGHT_DECAY",
    "SEED",
    "DEPTH_MULTIPLIER",
    "BACKBONE_BN",
    "HEAD_BN",
    "NUM_CLASSES",
    "TOP_DOWN_PYRAMID_SIZE",
    "RPN_HEAD_CHANNELS",
    "RPN_ANCHOR_RATIOS",
    "RPN_POSITIVE_IOU",
    "RPN_NEGATIVE_IOU",
    "RPN_TRAIN_ANCHORS_PER_IMAGE",
    "RPN_POSITIVE_FRACTION",
    "RPN_NMS_THRESHOLD",
    "PRE_NMS_LIMIT_TRAINING",
    "POST_NMS_ROIS_TRAINING",
    "PRE_NMS_LIMIT_INFERENCE",
    "POST_NMS_ROIS_INFERENCE",
    "PROPOSAL_MIN_SIZE",
    "TRAIN_ROIS_PER_IMAGE",
    "ROI_POSITIVE_RATIO",
    "ROI_POSITIVE_IOU",
    "POOL_SIZE",
    "ROI_ALIGN_SAMPLING_RATIO",
    "FPN_CLASSIF_FC_LAYERS_SIZE",
    "MASK_HEAD_CHANNELS",
    "MASK_HEAD_CONVS",
    "BBOX_STD_DEV",
    "DETECTION_MIN_CONFIDENCE",
    "DETECTION_NMS_THRESHOLD",
    "DETECTION_MAX_INSTANCES",
    "MASK_THRESHOLD",
    "LOSS_LAMBDA",
    "RPN_CLS_NORMALIZER",
    "RPN_REG_NORMALIZER",
    "SMOOTH_L1_BETA",
    "LEARNING_MOMENTUM",
    "LR_DROPS",
    "EPOCHS",
    "TOTAL_STEPS",
    "GRADIENT_CLIP_NORM",
    "CHECKPOINT_EVERY",
    "ACCUMULATE_STEPS",
    "MATCH_IOU",
    "MATCH_IOU_KIND",
];

impl RunConfig {
    pub fn paper() -> Self {
        RunConfig {
            profile: Profile::Paper,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            image_min_dim: 800,
            image_meta_size: 15,
            image_shape: None,
        }
    }

    /// Five-image overfit profile: 4 epochs of 50 steps, each step averaging
    /// the gradients of 5 images.
    pub fn smoke() -> Self {
        RunConfig {
            profile: Profile::Smoke,
            model: ModelConfig::smoke(),
            train: TrainConfig {
                base_lr: 0.02,
                lr_drops: Vec::new(),
                total_epochs: 4,
                steps_per_epoch: 50,
                checkpoint_every: 2,
                accumulate: 5,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            image_min_dim: 800,
            image_meta_size: 15,
            image_shape: None,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => RunConfig::paper(),
            Profile::Smoke => RunConfig::smoke(),
        }
    }

    /// Parses config text (may be empty) and then applies `overrides` in
    /// order. `PROFILE` picks the starting preset wherever it appears.
    pub fn load(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once('\t'))
                .ok_or_else(|| cfg_err(format!("line {}: expected KEY = VALUE, got '{line}'", no + 1)))?;
            let key = normalize_key(k);
            if entries.iter().any(|(seen, _)| *seen == key) {
                return Err(cfg_err(format!("line {}: {key} given twice", no + 1)));
            }
            entries.push((key, v.trim().to_string()));
        }
        entries.extend(overrides.iter().map(|(k, v)| (normalize_key(k), v.trim().to_string())));
        let profile = match entries.iter().rev().find(|(k, _)| k == "PROFILE") {
            None => Profile::Paper,
            Some((_, v)) => match v.to_ascii_lowercase().as_str() {
                "paper" => Profile::Paper,
                "smoke" => Profile::Smoke,
                other => return Err(cfg_err(format!("PROFILE: expected paper or smoke, got '{other}'"))),
            },
        };
        let mut cfg = RunConfig::for_profile(profile);
        for (k, v) in entries.iter().filter(|(k, _)| k != "PROFILE") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Splits `KEY=VALUE` as given on the command line.
    pub fn parse_override(s: &str) -> Result<(String, String)> {
        s.split_once('=')
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .ok_or_else(|| cfg_err(format!("override '{s}' is not KEY=VALUE")))
    }

    /// Sets one key (already normalized or not).
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        let m = &mut self.model;
        let t = &mut self.train;
        match k {
            "PROFILE" => return Err(cfg_err("PROFILE can only be chosen when loading")),
            "BACKBONE" => {
                let b = v.trim().to_ascii_lowercase().replace([' ', '_', '-'], "");
                if b != "mobilenetv1" {
                    return Err(cfg_err(format!("BACKBONE: only mobilenetv1 is available, got '{}'", v.trim())));
                }
            }
            "IMAGE_MAX_DIM" => m.image_size = scalar(k, v)?,
            "IMAGE_META_SIZE" => self.image_meta_size = scalar(k, v)?,
            "IMAGE_MIN_DIM" => self.image_min_dim = scalar(k, v)?,
            "IMAGE_SHAPE" => self.image_shape = Some(fixed(k, v)?),
            "LEARNING_RATE" => t.base_lr = scalar(k, v)?,
            "MASK_SHAPE" => {
                let [h, w]: [usize; 2] = fixed(k, v)?;
                if h != w || h % 2 != 0 || h == 0 {
                    return Err(cfg_err(format!("MASK_SHAPE: need a square even size, got [{h}, {w}]")));
                }
                m.mask_pool = h / 2;
            }
            "RPN_ANCHOR_SCALES" => m.anchor_sizes = list(k, v)?,
            "STEPS_PER_EPOCH" => t.steps_per_epoch = scalar(k, v)?,
            "WEIGHT_DECAY" => t.weight_decay = scalar(k, v)?,
            "SEED" => t.seed = scalar(k, v)?,
            "DEPTH_MULTIPLIER" => m.backbone.depth_multiplier = scalar(k, v)?,
            "BACKBONE_BN" => m.backbone.bn_mode = bn_mode(k, v)?,
            "HEAD_BN" => m.head_bn_mode = bn_mode(k, v)?,
            "NUM_CLASSES" => m.num_classes = scalar(k, v)?,
            "TOP_DOWN_PYRAMID_SIZE" => m.fpn_channels = scalar(k, v)?,
            "RPN_HEAD_CHANNELS" => m.rpn_mid_channels = scalar(k, v)?,
            "RPN_ANCHOR_RATIOS" => m.anchor_ratios = list(k, v)?,
            "RPN_POSITIVE_IOU" => m.rpn_pos_iou = scalar(k, v)?,
            "RPN_NEGATIVE_IOU" => m.rpn_neg_iou = scalar(k, v)?,
            "RPN_TRAIN_ANCHORS_PER_IMAGE" => m.rpn_batch = scalar(k, v)?,
            "RPN_POSITIVE_FRACTION" => m.rpn_pos_fraction = scalar(k, v)?,
            "RPN_NMS_THRESHOLD" => m.rpn_nms_iou = scalar(k, v)?,
            "PRE_NMS_LIMIT_TRAINING" => m.train_pre_nms = scalar(k, v)?,
            "POST_NMS_ROIS_TRAINING" => m.train_post_nms = scalar(k, v)?,
            "PRE_NMS_LIMIT_INFERENCE" => m.eval_pre_nms = scalar(k, v)?,
            "POST_NMS_ROIS_INFERENCE" => m.eval_post_nms = scalar(k, v)?,
            "PROPOSAL_MIN_SIZE" => m.proposal_min_size = scalar(k, v)?,
            "TRAIN_ROIS_PER_IMAGE" => m.rois_per_image = scalar(k, v)?,
            "ROI_POSITIVE_RATIO" => m.roi_pos_fraction = scalar(k, v)?,
            "ROI_POSITIVE_IOU" => m.roi_fg_iou = scalar(k, v)?,
            "POOL_SIZE" => m.box_pool = scalar(k, v)?,
            "ROI_ALIGN_SAMPLING_RATIO" => m.sampling_ratio = scalar(k, v)?,
            "FPN_CLASSIF_FC_LAYERS_SIZE" => m.fc_dim = scalar(k, v)?,
            "MASK_HEAD_CHANNELS" => m.mask_dim = scalar(k, v)?,
            "MASK_HEAD_CONVS" => m.mask_convs = scalar(k, v)?,
            "BBOX_STD_DEV" => m.delta_std = fixed(k, v)?,
            "DETECTION_MIN_CONFIDENCE" => m.det_min_score = scalar(k, v)?,
            "DETECTION_NMS_THRESHOLD" => m.det_nms_iou = scalar(k, v)?,
            "DETECTION_MAX_INSTANCES" => m.det_max = scalar(k, v)?,
            "MASK_THRESHOLD" => m.mask_threshold = scalar(k, v)?,
            "LOSS_LAMBDA" => m.loss.lambda = scalar(k, v)?,
            "RPN_CLS_NORMALIZER" => m.loss.n_cls_norm = normalizer(k, v)?,
            "RPN_REG_NORMALIZER" => m.loss.n_reg_norm = normalizer(k, v)?,
            "SMOOTH_L1_BETA" => m.loss.smooth_l1_beta = scalar(k, v)?,
            "LEARNING_MOMENTUM" => t.momentum = scalar(k, v)?,
            "LR_DROPS" => t.lr_drops = lr_drops(k, v)?,
            "EPOCHS" => t.total_epochs = scalar(k, v)?,
            "TOTAL_STEPS" => t.total_steps = optional(k, v)?,
            "GRADIENT_CLIP_NORM" => t.grad_clip = optional(k, v)?,
            "CHECKPOINT_EVERY" => t.checkpoint_every = scalar(k, v)?,
            "ACCUMULATE_STEPS" => t.accumulate = scalar(k, v)?,
            "MATCH_IOU" => self.eval.matching_iou = scalar(k, v)?,
            "MATCH_IOU_KIND" => {
                self.eval.iou_kind = match v.trim().to_ascii_lowercase().as_str() {
                    "mask" => IouKind::Mask,
                    "box" => IouKind::Box,
                    other => return Err(cfg_err(format!("{k}: expected mask or box, got '{other}'"))),
                }
            }
            _ => return Err(cfg_err(format!("unknown key {k}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.image_size;
        if let Some(shape) = self.image_shape {
            if shape != [n, n, 3] {
                return Err(cfg_err(format!(
                    "IMAGE_SHAPE {shape:?} disagrees with IMAGE_MAX_DIM {n} (expected [{n} {n} 3])"
                )));
            }
        }
        if self.image_min_dim < n {
            return Err(cfg_err(format!(
                "IMAGE_MIN_DIM {} below IMAGE_MAX_DIM {n}: only the long-side-capped square resize is supported",
                self.image_min_dim
            )));
        }
        if !(self.eval.matching_iou > 0.0 && self.eval.matching_iou <= 1.0) {
            return Err(cfg_err(format!("MATCH_IOU must lie in (0, 1], got {}", self.eval.matching_iou)));
        }
        self.model.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.train.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    /// Every key with its effective value; `load` of this text reproduces
    /// the configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let n = m.image_size;
        let profile = match self.profile {
            Profile::Paper => "paper",
            Profile::Smoke => "smoke",
        };
        let drops = if t.lr_drops.is_empty() {
            "none".to_string()
        } else {
            t.lr_drops.iter().map(|(e, lr)| format!("{e}:{lr}")).collect::<Vec<_>>().join(", ")
        };
        let out: Vec<(&'static str, String)> = vec![
            ("PROFILE", profile.into()),
            ("BACKBONE", "mobilenetv1".into()),
            ("IMAGE_MAX_DIM", n.to_string()),
            ("IMAGE_META_SIZE", self.image_meta_size.to_string()),
            ("IMAGE_MIN_DIM", self.image_min_dim.to_string()),
            ("IMAGE_SHAPE", format!("[{n} {n} 3]")),
            ("LEARNING_RATE", t.base_lr.to_string()),
            ("MASK_SHAPE", format!("[{0},{0}]", m.mask_size())),
            ("RPN_ANCHOR_SCALES", format!("({})", show_list(&m.anchor_sizes, ", "))),
            ("STEPS_PER_EPOCH", t.steps_per_epoch.to_string()),
            ("WEIGHT_DECAY", t.weight_decay.to_string()),
            ("SEED", t.seed.to_string()),
            ("DEPTH_MULTIPLIER", m.backbone.depth_multiplier.to_string()),
            ("BACKBONE_BN", show_bn(m.backbone.bn_mode)),
            ("HEAD_BN", show_bn(m.head_bn_mode)),
            ("NUM_CLASSES", m.num_classes.to_string()),
            ("TOP_DOWN_PYRAMID_SIZE", m.fpn_channels.to_string()),
            ("RPN_HEAD_CHANNELS", m.rpn_mid_channels.to_string()),
            ("RPN_ANCHOR_RATIOS", format!("[{}]", show_list(&m.anchor_ratios, ", "))),
            ("RPN_POSITIVE_IOU", m.rpn_pos_iou.to_string()),
            ("RPN_NEGATIVE_IOU", m.rpn_neg_iou.to_string()),
            ("RPN_TRAIN_ANCHORS_PER_IMAGE", m.rpn_batch.to_string()),
            ("RPN_POSITIVE_FRACTION", m.rpn_pos_fraction.to_string()),
            ("RPN_NMS_THRESHOLD", m.rpn_nms_iou.to_string()),
            ("PRE_NMS_LIMIT_TRAINING", m.train_pre_nms.to_string()),
            ("POST_NMS_ROIS_TRAINING", m.train_post_nms.to_string()),
            ("PRE_NMS_LIMIT_INFERENCE", m.eval_pre_nms.to_string()),
            ("POST_NMS_ROIS_INFERENCE", m.eval_post_nms.to_string()),
            ("PROPOSAL_MIN_SIZE", m.proposal_min_size.to_string()),
            ("TRAIN_ROIS_PER_IMAGE", m.rois_per_image.to_string()),
            ("ROI_POSITIVE_RATIO", m.roi_pos_fraction.to_string()),
            ("ROI_POSITIVE_IOU", m.roi_fg_iou.to_string()),
            ("POOL_SIZE", m.box_pool.to_string()),
            ("ROI_ALIGN_SAMPLING_RATIO", m.sampling_ratio.to_string()),
            ("FPN_CLASSIF_FC_LAYERS_SIZE", m.fc_dim.to_string()),
            ("MASK_HEAD_CHANNELS", m.mask_dim.to_string()),
            ("MASK_HEAD_CONVS", m.mask_convs.to_string()),
            ("BBOX_STD_DEV", format!("[{}]", show_list(&m.delta_std, " "))),
            ("DETECTION_MIN_CONFIDENCE", m.det_min_score.to_string()),
            ("DETECTION_NMS_THRESHOLD", m.det_nms_iou.to_string()),
            ("DETECTION_MAX_INSTANCES", m.det_max.to_string()),
            ("MASK_THRESHOLD", m.mask_threshold.to_string()),
            ("LOSS_LAMBDA", m.loss.lambda.to_string()),
            ("RPN_CLS_NORMALIZER", show_norm(m.loss.n_cls_norm)),
            ("RPN_REG_NORMALIZER", show_norm(m.loss.n_reg_norm)),
            ("SMOOTH_L1_BETA", m.loss.smooth_l1_beta.to_string()),
            ("LEARNING_MOMENTUM", t.momentum.to_string()),
            ("LR_DROPS", drops),
            ("EPOCHS", t.total_epochs.to_string()),
            ("TOTAL_STEPS", show_opt(t.total_steps)),
            ("GRADIENT_CLIP_NORM", show_opt(t.grad_clip)),
            ("CHECKPOINT_EVERY", t.checkpoint_every.to_string()),
            ("ACCUMULATE_STEPS", t.accumulate.to_string()),
            ("MATCH_IOU", self.eval.matching_iou.to_string()),
            (
                "MATCH_IOU_KIND",
                match self.eval.iou_kind {
                    IouKind::Mask => "mask".into(),
                    IouKind::Box => "box".into(),
                },
            ),
        ];
        debug_assert_eq!(out.len(), KEYS.len());
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo_into(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO_FILE);
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "BACKBONE\tmobilenetv1
IMAGE MAX DIM\t512
IMAGE META SIZE\t15
IMAGE MIN DIM\t800
IMAGE SHAPE\t[512 512 3]
LEARNING RATE\t0.01
MASK SHAPE\t[28,28]
RPN_ANCHOR_SCALES\t(8, 16, 32, 64, 128)
STEPS PER EPOCH\t50
WEIGHT DECAY\t0.0001
";

    #[test]
    fn published_table_is_the_default() {
        assert_eq!(RunConfig::load(TABLE, &[]).unwrap(), RunConfig::paper().with_shape());
        assert_eq!(RunConfig::load("", &[]).unwrap(), RunConfig::paper());
    }

    impl RunConfig {
        fn with_shape(mut self) -> Self {
            self.image_shape = Some([512, 512, 3]);
            self
        }
    }

    #[test]
    fn key_normalization() {
        assert_eq!(normalize_key(" image max-dim "), "IMAGE_MAX_DIM");
        assert_eq!(normalize_key("rpn__anchor.scales"), "RPN_ANCHOR_SCALES");
    }

    #[test]
    fn render_round_trips() {
        for base in [RunConfig::paper(), RunConfig::smoke()] {
            let text = base.render();
            let back = RunConfig::load(&text, &[]).unwrap();
            assert_eq!(back.render(), text);
            assert_eq!(back.model, base.model);
            assert_eq!(back.train, base.train);
            assert_eq!(back.eval, base.eval);
        }
        let keys: Vec<&str> = RunConfig::paper().entries().iter().map(|e| e.0).collect();
        assert_eq!(keys, KEYS);
    }

    #[test]
    fn rejections() {
        let e = RunConfig::load("IMAGE_MAX_DIMS = 512\n", &[]).unwrap_err();
        assert!(e.to_string().contains("unknown key IMAGE_MAX_DIMS"));
        assert!(RunConfig::load("IMAGE_SHAPE = [256 256 3]\n", &[]).is_err());
        assert!(RunConfig::load("BACKBONE = resnet101\n", &[]).is_err());
        assert!(RunConfig::load("LEARNING_RATE = 0.01\nlearning rate = 0.02\n", &[]).is_err());
        assert!(RunConfig::load("LEARNING_RATE 0.01\n", &[]).is_err());
        assert!(RunConfig::load("MASK_SHAPE = [28, 14]\n", &[]).is_err());
        assert!(RunConfig::load("IMAGE_MIN_DIM = 256\n", &[]).is_err());
    }

    #[test]
    fn overrides_and_profile() {
        let ov = vec![
            RunConfig::parse_override("learning-rate=0.05").unwrap(),
            RunConfig::parse_override("PROFILE=smoke").unwrap(),
        ];
        let c = RunConfig::load("LEARNING_RATE = 0.03 # comment\nSEED = 9\n", &ov).unwrap();
        assert_eq!(c.profile, Profile::Smoke);
        assert_eq!(c.train.base_lr, 0.05);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.model.image_size, 128);
        assert!(RunConfig::parse_override("novalue").is_err());
        let c = RunConfig::load("", &[("LR_DROPS".into(), "10:0.001".into()), ("EPOCHS".into(), "20".into())]).unwrap();
        assert_eq!(c.train.lr_drops, vec![(10, 0.001)]);
        let c = RunConfig::load("TOTAL_STEPS = 360\nGRADIENT_CLIP_NORM = none\n", &[]).unwrap();
        assert_eq!(c.train.total_steps, Some(360));
        assert_eq!(c.train.grad_clip, None);
    }

    #[test]
    fn smoke_preset_plans_200_steps() {
        let c = RunConfig::smoke();
        assert_eq!(c.train.planned_steps(), 200);
        c.validate().unwrap();
    }
}
