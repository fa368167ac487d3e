//! The multi-task training objective and its gradients.
//!
//! Every loss is a mean within its own term. The RPN terms are normalized by
//! the number of sampled anchors by default, the ROI classification term by
//! the number of sampled ROIs, and the ROI box and mask terms by the number of
//! foreground ROIs.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How the two sums of the RPN loss are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Number of sampled (non-ignored) anchors.
    SampledAnchors,
    /// A fixed count, e.g. the number of anchor locations.
    Fixed(f64),
}

impl Normalizer {
    fn value(self, sampled: usize) -> f64 {
        match self {
            Normalizer::SampledAnchors => sampled.max(1) as f64,
            Normalizer::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub n_cls_norm: Normalizer,
    pub n_reg_norm: Normalizer,
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            n_cls_norm: Normalizer::SampledAnchors,
            n_reg_norm: Normalizer::SampledAnchors,
            smooth_l1_beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.smooth_l1_beta > 0.0 && self.smooth_l1_beta.is_finite()) {
            return Err(invalid(format!("smooth-L1 beta must be positive, got {}", self.smooth_l1_beta)));
        }
        for n in [self.n_cls_norm, self.n_reg_norm] {
            if let Normalizer::Fixed(v) = n {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(format!("fixed normalizer must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

fn finite(what: &str, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    if vals.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or Inf")))
    }
}

const P_EPS: f64 = 1e-12;

fn binary_ce(p: f64, target: f64) -> f64 {
    let p = p.clamp(P_EPS, 1.0 - P_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Gradients of [`rpn_loss`] with respect to `p` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnLossGrad {
    pub d_p: Vec<f64>,
    pub d_t: Vec<[f64; 4]>,
}

fn check_rpn(n: usize, p_star: &[f64], t: &[[f64; 4]], t_star: &[[f64; 4]], cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if p_star.len() != n || t.len() != n || t_star.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "rpn loss inputs disagree: {n} predictions, {} labels, {} deltas, {} targets",
            p_star.len(),
            t.len(),
            t_star.len()
        )));
    }
    if p_star.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("anchor labels must be 0 or 1"));
    }
    finite("rpn deltas", t.iter().flatten().copied())?;
    finite("rpn targets", t_star.iter().flatten().copied())
}

/// RPN loss over the sampled anchors with foreground probabilities `p`.
///
/// `l_cls = Σ CE(p_i, p_i*) / N_cls` and
/// `l_box = λ Σ p_i* · smoothL1(t_i − t_i*) / N_reg`, where the smooth-L1
/// is summed over the four coordinates.
pub fn rpn_loss(p: &[f64], p_star: &[f64], t: &[[f64; 4]], t_star: &[[f64; 4]], cfg: &LossConfig) -> Result<(f64, f64)> {
    let (l, _) = rpn_loss_with_grad(p, p_star, t, t_star, cfg)?;
    Ok(l)
}

pub fn rpn_loss_with_grad(
    p: &[f64],
    p_star: &[f64],
    t: &[[f64; 4]],
    t_star: &[[f64; 4]],
    cfg: &LossConfig,
) -> Result<((f64, f64), RpnLossGrad)> {
    let n = p.len();
    check_rpn(n, p_star, t, t_star, cfg)?;
    finite("rpn probabilities", p.iter().copied())?;
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(invalid("rpn probabilities must lie in [0, 1]"));
    }
    let n_cls = cfg.n_cls_norm.value(n);
    let n_reg = cfg.n_reg_norm.value(n);
    let mut grad = RpnLossGrad {
        d_p: vec![0.0; n],
        d_t: vec![[0.0; 4]; n],
    };
    let mut l_cls = 0.0;
    let mut l_box = 0.0;
    for i in 0..n {
        l_cls += binary_ce(p[i], p_star[i]);
        let pc = p[i].clamp(P_EPS, 1.0 - P_EPS);
        grad.d_p[i] = (-p_star[i] / pc + (1.0 - p_star[i]) / (1.0 - pc)) / n_cls;
        if p_star[i] == 1.0 {
            for k in 0..4 {
                let d = t[i][k] - t_star[i][k];
                l_box += smooth_l1(d, cfg.smooth_l1_beta);
                grad.d_t[i][k] = cfg.lambda * smooth_l1_grad(d, cfg.smooth_l1_beta) / n_reg;
            }
        }
    }
    Ok(((l_cls / n_cls, cfg.lambda * l_box / n_reg), grad))
}

/// Gradients of [`rpn_loss_logits`] with respect to the two-way logits and
/// the deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnLogitGrad {
    pub d_logits: Vec<[f64; 2]>,
    pub d_t: Vec<[f64; 4]>,
}

/// The same loss as [`rpn_loss`], computed from background/foreground logits
/// with a numerically stable softmax.
pub fn rpn_loss_logits(
    logits: &[[f64; 2]],
    p_star: &[f64],
    t: &[[f64; 4]],
    t_star: &[[f64; 4]],
    cfg: &LossConfig,
) -> Result<((f64, f64), RpnLogitGrad)> {
    let n = logits.len();
    check_rpn(n, p_star, t, t_star, cfg)?;
    finite("rpn logits", logits.iter().flatten().copied())?;
    let n_cls = cfg.n_cls_norm.value(n);
    let n_reg = cfg.n_reg_norm.value(n);
    let mut grad = RpnLogitGrad {
        d_logits: vec![[0.0; 2]; n],
        d_t: vec![[0.0; 4]; n],
    };
    let mut l_cls = 0.0;
    let mut l_box = 0.0;
    for i in 0..n {
        let label = p_star[i] as usize;
        let (ce, soft) = softmax_ce(&logits[i], label);
        l_cls += ce;
        for j in 0..2 {
            grad.d_logits[i][j] = soft[j] / n_cls;
        }
        if label == 1 {
            for k in 0..4 {
                let d = t[i][k] - t_star[i][k];
                l_box += smooth_l1(d, cfg.smooth_l1_beta);
                grad.d_t[i][k] = cfg.lambda * smooth_l1_grad(d, cfg.smooth_l1_beta) / n_reg;
            }
        }
    }
    Ok(((l_cls / n_cls, cfg.lambda * l_box / n_reg), grad))
}

/// Cross-entropy of one logit row against `label`, and `softmax − onehot`.
fn softmax_ce(row: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
    let lse = m + z.ln();
    let mut g: Vec<f64> = row.iter().map(|v| (v - lse).exp()).collect();
    g[label] -= 1.0;
    (lse - row[label], g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiLossOutput {
    pub l_cls: f64,
    pub l_box: f64,
    pub d_logits: Array2<f64>,
    pub d_deltas: Array2<f64>,
}

/// Softmax cross-entropy averaged over all sampled ROIs, plus smooth-L1 on the
/// target class's four deltas averaged over foreground ROIs. A ROI is
/// foreground when its class target is nonzero, and only foreground ROIs may
/// carry a box target.
pub fn roi_losses(
    class_logits: ArrayView2<f64>,
    class_targets: &[usize],
    box_deltas: ArrayView2<f64>,
    box_targets: &[Option<[f64; 4]>],
    beta: f64,
) -> Result<RoiLossOutput> {
    let (n, k) = class_logits.dim();
    if class_targets.len() != n || box_targets.len() != n || box_deltas.dim() != (n, 4 * k) {
        return Err(Error::ShapeMismatch(format!(
            "roi loss inputs disagree: logits {:?}, {} class targets, deltas {:?}, {} box targets",
            class_logits.dim(),
            class_targets.len(),
            box_deltas.dim(),
            box_targets.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(invalid("smooth-L1 beta must be positive"));
    }
    finite("roi class logits", class_logits.iter().copied())?;
    finite("roi box deltas", box_deltas.iter().copied())?;
    let mut out = RoiLossOutput {
        l_cls: 0.0,
        l_box: 0.0,
        d_logits: Array2::zeros((n, k)),
        d_deltas: Array2::zeros((n, 4 * k)),
    };
    if n == 0 {
        return Ok(out);
    }
    let n_fg = class_targets.iter().filter(|&&c| c > 0).count();
    for i in 0..n {
        let c = class_targets[i];
        if c >= k {
            return Err(invalid(format!("class target {c} out of range for {k} classes")));
        }
        let row: Vec<f64> = class_logits.row(i).to_vec();
        let (ce, g) = softmax_ce(&row, c);
        out.l_cls += ce / n as f64;
        for j in 0..k {
            out.d_logits[[i, j]] = g[j] / n as f64;
        }
        match (c, box_targets[i]) {
            (0, None) => {}
            (0, Some(_)) => return Err(invalid(format!("background ROI {i} has a box target"))),
            (_, None) => return Err(invalid(format!("foreground ROI {i} lacks a box target"))),
            (_, Some(tgt)) => {
                finite("roi box targets", tgt)?;
                for j in 0..4 {
                    let d = box_deltas[[i, 4 * c + j]] - tgt[j];
                    out.l_box += smooth_l1(d, beta) / n_fg as f64;
                    out.d_deltas[[i, 4 * c + j]] = smooth_l1_grad(d, beta) / n_fg as f64;
                }
            }
        }
    }
    Ok(out)
}

fn check_masks(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("mask predictions {a:?} vs targets {b:?}")));
    }
    Ok(())
}

/// Mean per-pixel binary cross-entropy over foreground ROIs, from
/// probabilities `[N, M, M]` of the target class.
pub fn mask_loss(mask_probs: ArrayView3<f64>, mask_targets: ArrayView3<f64>) -> Result<f64> {
    check_masks(mask_probs.dim(), mask_targets.dim())?;
    finite("mask probabilities", mask_probs.iter().copied())?;
    if mask_probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = mask_probs
        .iter()
        .zip(mask_targets.iter())
        .map(|(&p, &y)| binary_ce(p, y))
        .sum();
    Ok(sum / mask_probs.len() as f64)
}

/// [`mask_loss`] from logits, with its gradient.
pub fn mask_loss_logits(mask_logits: ArrayView3<f64>, mask_targets: ArrayView3<f64>) -> Result<(f64, Array3<f64>)> {
    check_masks(mask_logits.dim(), mask_targets.dim())?;
    finite("mask logits", mask_logits.iter().copied())?;
    let mut grad = Array3::zeros(mask_logits.dim());
    if mask_logits.is_empty() {
        return Ok((0.0, grad));
    }
    let n = mask_logits.len() as f64;
    let mut sum = 0.0;
    for ((g, &x), &y) in grad.iter_mut().zip(mask_logits.iter()).zip(mask_targets.iter()) {
        sum += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        *g = (crate::nn::sigmoid(x) - y) / n;
    }
    Ok((sum / n, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_total: f64,
    pub l_rpn_cls: f64,
    pub l_rpn_box: f64,
    pub l_roi_cls: f64,
    pub l_roi_box: f64,
    pub l_mask: f64,
}

/// Sums the five components into a breakdown.
pub fn total_loss(l_rpn_cls: f64, l_rpn_box: f64, l_roi_cls: f64, l_roi_box: f64, l_mask: f64) -> Result<LossBreakdown> {
    for (name, v) in [
        ("l_rpn_cls", l_rpn_cls),
        ("l_rpn_box", l_rpn_box),
        ("l_roi_cls", l_roi_cls),
        ("l_roi_box", l_roi_box),
        ("l_mask", l_mask),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} is {v}")));
        }
    }
    Ok(LossBreakdown {
        l_total: l_rpn_cls + l_rpn_box + l_roi_cls + l_roi_box + l_mask,
        l_rpn_cls,
        l_rpn_box,
        l_roi_cls,
        l_roi_box,
        l_mask,
    })
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 5] {
        [self.l_rpn_cls, self.l_rpn_box, self.l_roi_cls, self.l_roi_box, self.l_mask]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn smooth_l1_values_and_knee() {
        assert_eq!(smooth_l1(0.0, 1.0), 0.0);
        assert_eq!(smooth_l1(1.0, 1.0), 0.5);
        assert_eq!(smooth_l1(-3.0, 1.0), 2.5);
        for beta in [0.5, 1.0, 2.0] {
            for s in [1.0, -1.0] {
                let x = s * beta;
                let slope = (smooth_l1(x + 1e-7, beta) - smooth_l1(x - 1e-7, beta)) / 2e-7;
                assert!((slope - s).abs() < 1e-6);
                assert!((smooth_l1(x - 1e-12, beta) - smooth_l1(x + 1e-12, beta)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rpn_hand_cases() {
        let cfg = LossConfig::default();
        let (c, b) = rpn_loss(&[0.5], &[1.0], &[[0.1, 0.2, 0.3, 0.4]], &[[0.1, 0.2, 0.3, 0.4]], &cfg).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-12);
        assert_eq!(b, 0.0);
        let (c, b) = rpn_loss(&[1e-9, 1e-9], &[0.0, 0.0], &[[5.0; 4], [-3.0; 4]], &[[0.0; 4]; 2], &cfg).unwrap();
        assert!(c < 1e-8);
        assert_eq!(b, 0.0);
        assert!(rpn_loss(&[f64::NAN], &[1.0], &[[0.0; 4]], &[[0.0; 4]], &cfg).is_err());
        assert!(rpn_loss(&[0.5], &[1.0], &[[f64::INFINITY, 0.0, 0.0, 0.0]], &[[0.0; 4]], &cfg).is_err());
        assert!(rpn_loss(&[0.5], &[1.0, 0.0], &[[0.0; 4]], &[[0.0; 4]], &cfg).is_err());
    }

    fn random_rpn(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<[f64; 4]>, Vec<[f64; 4]>) {
        let p = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let ps = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let t = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let ts = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        (p, ps, t, ts)
    }

    #[test]
    fn rpn_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, ps, t, ts) = random_rpn(&mut rng, 9);
        let cfg = LossConfig {
            lambda: 2.5,
            ..Default::default()
        };
        let (c, b) = rpn_loss(&p, &ps, &t, &ts, &cfg).unwrap();
        let mut oc = 0.0;
        let mut ob = 0.0;
        for i in 0..9 {
            oc += if ps[i] == 1.0 { -p[i].ln() } else { -(1.0 - p[i]).ln() };
            for k in 0..4 {
                let d: f64 = t[i][k] - ts[i][k];
                ob += ps[i] * if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
            }
        }
        assert!((c - oc / 9.0).abs() < 1e-10);
        assert!((b - 2.5 * ob / 9.0).abs() < 1e-10);
    }

    #[test]
    fn rpn_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, _, t, ts) = random_rpn(&mut rng, 6);
        let cfg = LossConfig::default();
        let (_, b) = rpn_loss(&p, &[0.0; 6], &t, &ts, &cfg).unwrap();
        assert_eq!(b, 0.0);
        let ps: Vec<f64> = (0..6).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let (c1, b1) = rpn_loss(&p, &ps, &t, &ts, &cfg).unwrap();
        let scaled = LossConfig { lambda: 4.0, ..cfg };
        let (c4, b4) = rpn_loss(&p, &ps, &t, &ts, &scaled).unwrap();
        assert_eq!(c1, c4);
        assert!((b4 - 4.0 * b1).abs() <= 1e-15 * b4.abs());
    }

    #[test]
    fn rpn_prob_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, ps, t, ts) = random_rpn(&mut rng, 4);
        let cfg = LossConfig::default();
        let (_, g) = rpn_loss_with_grad(&p, &ps, &t, &ts, &cfg).unwrap();
        let f = |p: &[f64], t: &[[f64; 4]]| {
            let (c, b) = rpn_loss(p, &ps, t, &ts, &cfg).unwrap();
            c + b
        };
        for i in 0..4 {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += H;
            b[i] -= H;
            assert!(rel_err(g.d_p[i], (f(&a, &t) - f(&b, &t)) / (2.0 * H)) < 1e-4);
            for k in 0..4 {
                let (mut a, mut b) = (t.clone(), t.clone());
                a[i][k] += H;
                b[i][k] -= H;
                assert!(rel_err(g.d_t[i][k], (f(&p, &a) - f(&p, &b)) / (2.0 * H)) < 1e-4);
            }
        }
    }

    #[test]
    fn rpn_logit_form_matches_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, ps, t, ts) = random_rpn(&mut rng, 4);
        let logits: Vec<[f64; 2]> = (0..4).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let p: Vec<f64> = logits.iter().map(|&l| crate::rpn::softmax2_fg(l)).collect();
        let cfg = LossConfig::default();
        let ((c, b), g) = rpn_loss_logits(&logits, &ps, &t, &ts, &cfg).unwrap();
        let (c2, b2) = rpn_loss(&p, &ps, &t, &ts, &cfg).unwrap();
        assert!((c - c2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        let f = |l: &[[f64; 2]]| {
            let ((c, b), _) = rpn_loss_logits(l, &ps, &t, &ts, &cfg).unwrap();
            c + b
        };
        for i in 0..4 {
            for j in 0..2 {
                let (mut a, mut bb) = (logits.clone(), logits.clone());
                a[i][j] += H;
                bb[i][j] -= H;
                assert!(rel_err(g.d_logits[i][j], (f(&a) - f(&bb)) / (2.0 * H)) < 1e-4);
            }
        }
    }

    fn random_roi(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Array2<f64>, Vec<usize>, Array2<f64>, Vec<Option<[f64; 4]>>) {
        let logits = Array2::from_shape_fn((n, k), |_| rng.random_range(-3.0..3.0));
        let cls: Vec<usize> = (0..n).map(|i| if i < n / 2 { 1 + i % (k - 1) } else { 0 }).collect();
        let deltas = Array2::from_shape_fn((n, 4 * k), |_| rng.random_range(-2.0..2.0));
        let tg = cls
            .iter()
            .map(|&c| (c > 0).then(|| std::array::from_fn(|_| rng.random_range(-2.0..2.0))))
            .collect();
        (logits, cls, deltas, tg)
    }

    #[test]
    fn roi_scalar_oracle_and_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (l, c, d, tg) = random_roi(&mut rng, 8, 2);
        let out = roi_losses(l.view(), &c, d.view(), &tg, 1.0).unwrap();
        let mut oc = 0.0;
        let mut ob = 0.0;
        let mut nfg = 0.0;
        for i in 0..8 {
            let z: f64 = (l[[i, 0]].exp() + l[[i, 1]].exp()).ln();
            oc += z - l[[i, c[i]]];
            if let Some(t) = tg[i] {
                nfg += 1.0;
                for j in 0..4 {
                    ob += smooth_l1(d[[i, 4 * c[i] + j]] - t[j], 1.0);
                }
            }
        }
        assert!((out.l_cls - oc / 8.0).abs() < 1e-10);
        assert!((out.l_box - ob / nfg).abs() < 1e-10);

        let l = ndarray::array![[-20.0, 20.0], [20.0, -20.0]];
        let d = Array2::zeros((2, 8));
        let out = roi_losses(l.view(), &[1, 0], d.view(), &[Some([0.0; 4]), None], 1.0).unwrap();
        assert!(out.l_cls < 1e-3);
        let out = roi_losses(l.view(), &[0, 0], d.view(), &[None, None], 1.0).unwrap();
        assert_eq!(out.l_box, 0.0);
        assert!(out.l_cls.is_finite());
    }

    #[test]
    fn roi_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (l, c, d, tg) = random_roi(&mut rng, 4, 3);
        let out = roi_losses(l.view(), &c, d.view(), &tg, 1.0).unwrap();
        let f = |l: &Array2<f64>, d: &Array2<f64>| {
            let o = roi_losses(l.view(), &c, d.view(), &tg, 1.0).unwrap();
            o.l_cls + o.l_box
        };
        for idx in 0..l.len() {
            let (mut a, mut b) = (l.clone(), l.clone());
            a.as_slice_mut().unwrap()[idx] += H;
            b.as_slice_mut().unwrap()[idx] -= H;
            let num = (f(&a, &d) - f(&b, &d)) / (2.0 * H);
            assert!(rel_err(out.d_logits.as_slice().unwrap()[idx], num) < 1e-4);
        }
        for idx in 0..d.len() {
            let (mut a, mut b) = (d.clone(), d.clone());
            a.as_slice_mut().unwrap()[idx] += H;
            b.as_slice_mut().unwrap()[idx] -= H;
            let num = (f(&l, &a) - f(&l, &b)) / (2.0 * H);
            let an = out.d_deltas.as_slice().unwrap()[idx];
            assert!((an == 0.0 && num.abs() < 1e-9) || rel_err(an, num) < 1e-4);
        }
    }

    #[test]
    fn mask_loss_cases() {
        let y = Array3::from_shape_fn((2, 28, 28), |(n, i, j)| ((n + i * j) % 3 == 0) as u8 as f64);
        let half = Array3::from_elem((2, 28, 28), 0.5);
        assert!((mask_loss(half.view(), y.view()).unwrap() - 2f64.ln()).abs() < 1e-12);
        let sat = y.mapv(|v| if v > 0.5 { 1.0 - 1e-6 } else { 1e-6 });
        assert!(mask_loss(sat.view(), y.view()).unwrap() < 1e-3);
        assert_eq!(mask_loss(Array3::zeros((0, 28, 28)).view(), Array3::zeros((0, 28, 28)).view()).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = Array3::from_shape_fn((2, 28, 28), |_| rng.random_range(-4.0..4.0));
        let probs = logits.mapv(crate::nn::sigmoid);
        let (l, _) = mask_loss_logits(logits.view(), y.view()).unwrap();
        let mut oracle = 0.0;
        for (&p, &t) in probs.iter().zip(y.iter()) {
            oracle += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        }
        oracle /= probs.len() as f64;
        assert!((l - oracle).abs() < 1e-10);
        assert!((mask_loss(probs.view(), y.view()).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn mask_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array3::from_shape_fn((2, 5, 5), |_| rng.random_range(-3.0..3.0));
        let y = Array3::from_shape_fn((2, 5, 5), |_| rng.random_range(0..2) as f64);
        let (_, g) = mask_loss_logits(x.view(), y.view()).unwrap();
        for idx in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.as_slice_mut().unwrap()[idx] += H;
            b.as_slice_mut().unwrap()[idx] -= H;
            let num = (mask_loss_logits(a.view(), y.view()).unwrap().0 - mask_loss_logits(b.view(), y.view()).unwrap().0)
                / (2.0 * H);
            assert!(rel_err(g.as_slice().unwrap()[idx], num) < 1e-4);
        }
    }

    #[test]
    fn total_and_monotone() {
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 0.0).unwrap().l_total, 0.0);
        let t = total_loss(0.1, 0.2, 0.3, 0.1, 0.3).unwrap();
        assert!((t.l_total - 1.0).abs() < 1e-15);
        let base = [0.4, 0.3, 0.2, 0.5, 0.6];
        let b = total_loss(base[0], base[1], base[2], base[3], base[4]).unwrap().l_total;
        for i in 0..5 {
            let mut v = base;
            v[i] -= 0.05;
            assert!(total_loss(v[0], v[1], v[2], v[3], v[4]).unwrap().l_total < b);
        }
        let e = total_loss(0.1, f64::NAN, 0.0, 0.0, 0.0).unwrap_err();
        assert!(e.to_string().contains("l_rpn_box"));
    }
}
