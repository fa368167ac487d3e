//! SGD training with a stepped learning-rate schedule, checkpointing and
//! K-fold orchestration.

mod kfold;
mod sgd;

pub use kfold::{kfold, mean_metric, run_kfold, FoldMeans, FoldPlan, KFoldReport};
pub use sgd::{clip_grad_norm, sgd_step, Sgd};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Checkpoint;
use crate::error::{invalid, Error, Result};
use crate::losses::{total_loss, LossBreakdown};
use crate::model::{MaskRcnn, TrainSample};
use crate::nn::Module;

pub const LOG_HEADER: &str = "iter,epoch,lr,l_total,l_rpn_cls,l_rpn_box,l_roi_cls,l_roi_box,l_mask";
pub const ABORTED_MARKER: &str = "ABORTED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// `(epoch, lr)`: from `epoch` on the rate is `lr`.
    pub lr_drops: Vec<(usize, f64)>,
    pub total_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables.
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    /// Stop after this many steps regardless of the epoch budget.
    pub total_steps: Option<usize>,
    /// Images whose gradients are averaged into one optimizer step.
    pub accumulate: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            lr_drops: vec![(120, 0.003), (240, 0.001)],
            total_epochs: 360,
            momentum: 0.9,
            weight_decay: 0.0001,
            steps_per_epoch: 50,
            seed: 0,
            grad_clip: Some(10.0),
            checkpoint_every: 10,
            total_steps: None,
            accumulate: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        if self.total_epochs == 0 || self.steps_per_epoch == 0 || self.accumulate == 0 {
            return Err(invalid("epochs, steps per epoch and accumulation must be positive"));
        }
        let mut prev = (0usize, self.base_lr);
        for (i, &(e, lr)) in self.lr_drops.iter().enumerate() {
            if (i > 0 && e <= prev.0) || e == 0 || e >= self.total_epochs {
                return Err(invalid(format!(
                    "LR drop epochs must increase strictly and stay below {}",
                    self.total_epochs
                )));
            }
            if !(lr > 0.0 && lr < prev.1) {
                return Err(invalid("LR values must decrease strictly"));
            }
            prev = (e, lr);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight decay must be non-negative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid("gradient clip must be positive"));
            }
        }
        Ok(())
    }

    pub fn planned_steps(&self) -> usize {
        let budget = self.total_epochs * self.steps_per_epoch;
        self.total_steps.map_or(budget, |t| t.min(budget))
    }
}

/// Piecewise-constant schedule; a drop takes effect at its epoch.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(invalid(format!("epoch {epoch} outside 0..{}", cfg.total_epochs)));
    }
    Ok(cfg
        .lr_drops
        .iter()
        .take_while(|(e, _)| *e <= epoch)
        .last()
        .map_or(cfg.base_lr, |&(_, lr)| lr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter, self.epoch, self.lr, l.l_total, l.l_rpn_cls, l.l_rpn_box, l.l_roi_cls, l.l_roi_box, l.l_mask
        )
    }
}

pub fn render_log(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Sample order: a fresh seeded permutation for every pass over the data.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0da7a),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn step_seed(seed: u64, iter: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(iter as u64)
}

/// Called after every step. Returning an error stops training.
pub trait TrainObserver {
    fn on_step(&mut self, _row: &LogRow, _model: &MaskRcnn, _opt: &Sgd) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _epoch: usize, _model: &MaskRcnn, _opt: &Sgd) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Runs the training loop in memory and returns the log rows.
pub fn train(
    model: &mut MaskRcnn,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut sampler = Sampler::new(samples.len(), cfg.seed);
    let mut rows = Vec::with_capacity(cfg.planned_steps());
    for iter in 0..cfg.planned_steps() {
        let epoch = iter / cfg.steps_per_epoch;
        let lr = lr_at_epoch(epoch, cfg)?;
        model.zero_grad();
        let mut sum = [0.0; 5];
        for a in 0..cfg.accumulate {
            let sample = &samples[sampler.next()];
            let stats = model.train_step(sample, step_seed(cfg.seed, iter * cfg.accumulate + a))?;
            if !stats.losses.l_total.is_finite() {
                return Err(Error::NonFinite(format!("loss at iteration {iter}")));
            }
            for (s, v) in sum.iter_mut().zip(stats.losses.components()) {
                *s += v;
            }
        }
        let k = cfg.accumulate as f64;
        if cfg.accumulate > 1 {
            for p in model.params_mut() {
                p.grad.mapv_inplace(|g| g / k);
            }
        }
        let [a, b, c, d, e] = sum.map(|v| v / k);
        let losses = total_loss(a, b, c, d, e)?;
        if let Some(c) = cfg.grad_clip {
            clip_grad_norm(model, c);
        }
        opt.step(model, lr)?;
        let row = LogRow {
            iter,
            epoch,
            lr,
            losses,
        };
        rows.push(row);
        observer.on_step(&row, model, &opt)?;
        if (iter + 1) % cfg.steps_per_epoch == 0 {
            observer.on_epoch_end(epoch, model, &opt)?;
        }
    }
    Ok(rows)
}

pub fn make_checkpoint(model: &MaskRcnn, opt: Option<&Sgd>, cfg: &TrainConfig, iter: usize) -> Checkpoint {
    let meta = serde_json::json!({
        "model_config": model.config,
        "train_config": cfg,
        "iter": iter,
    });
    let mut ck = Checkpoint::from_module(model, meta);
    if let Some(opt) = opt {
        for (name, v) in opt.velocities() {
            ck.push(format!("optim.velocity.{name}"), v.clone());
        }
    }
    ck
}

/// Rebuilds a model from a checkpoint written by [`make_checkpoint`].
pub fn load_model(path: &Path) -> Result<MaskRcnn> {
    let ck = Checkpoint::load(path)?;
    let cfg = ck
        .metadata
        .get("model_config")
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("{} has no model_config", path.display())))?;
    let cfg = serde_json::from_value(cfg)?;
    let mut model = MaskRcnn::new(cfg, 0)?;
    ck.apply_to(&mut model)?;
    Ok(model)
}

/// Writes the log CSV incrementally and checkpoints on the configured
/// cadence.
struct DirObserver {
    dir: PathBuf,
    log: std::fs::File,
    cfg: TrainConfig,
    last_iter: usize,
}

impl DirObserver {
    fn checkpoint(&self, model: &MaskRcnn, opt: &Sgd, name: &str) -> Result<()> {
        make_checkpoint(model, Some(opt), &self.cfg, self.last_iter).save(&self.dir.join(name))
    }
}

impl TrainObserver for DirObserver {
    fn on_step(&mut self, row: &LogRow, _model: &MaskRcnn, _opt: &Sgd) -> Result<()> {
        let path = self.dir.join("train_log.csv");
        writeln!(self.log, "{}", row.csv()).map_err(|e| Error::io(&path, e))?;
        self.last_iter = row.iter;
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, model: &MaskRcnn, opt: &Sgd) -> Result<()> {
        if self.cfg.checkpoint_every > 0 && (epoch + 1) % self.cfg.checkpoint_every == 0 {
            self.checkpoint(model, opt, &format!("checkpoint_epoch{:04}.ckpt", epoch + 1))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub final_checkpoint: PathBuf,
}

/// Trains into `dir`: `train_log.csv`, periodic checkpoints and
/// `final.ckpt`. On failure an `ABORTED` marker with the error is written and
/// earlier outputs are kept.
pub fn train_to_dir(model: &mut MaskRcnn, samples: &[TrainSample], cfg: &TrainConfig, dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log_path = dir.join("train_log.csv");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    let mut obs = DirObserver {
        dir: dir.to_path_buf(),
        log,
        cfg: cfg.clone(),
        last_iter: 0,
    };
    match train(model, samples, cfg, &mut obs) {
        Ok(rows) => {
            let path = dir.join("final.ckpt");
            make_checkpoint(model, None, cfg, rows.len()).save(&path)?;
            Ok(TrainOutcome {
                rows,
                final_checkpoint: path,
            })
        }
        Err(e) => {
            let marker = dir.join(ABORTED_MARKER);
            let _ = std::fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}
