use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluator::MetricsReport;

/// `folds[i] = (train, val)` as indices into the sample list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Shuffles `0..n` by seed and cuts it into `k` validation folds whose sizes
/// differ by at most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(invalid(format!("{n} samples cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut val: Vec<usize> = order[start..start + len].to_vec();
        val.sort_unstable();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        train.sort_unstable();
        folds.push((train, val));
        start += len;
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Arithmetic mean over the defined values; `None` if none are defined.
pub fn mean_metric(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMeans {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub mean_forged_percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub k: usize,
    pub per_fold: Vec<MetricsReport>,
    pub mean: FoldMeans,
}

impl KFoldReport {
    pub fn from_folds(per_fold: Vec<MetricsReport>) -> Self {
        let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| mean_metric(&per_fold.iter().map(f).collect::<Vec<_>>());
        let mean = FoldMeans {
            precision: col(&|r| Some(r.precision)),
            recall: col(&|r| Some(r.recall)),
            f1: col(&|r| Some(r.f1)),
            ap: col(&|r| r.ap),
            ap50: col(&|r| r.ap50),
            ap75: col(&|r| r.ap75),
            mean_forged_percentage: col(&|r| Some(r.mean_forged_percentage)),
        };
        KFoldReport {
            k: per_fold.len(),
            per_fold,
            mean,
        }
    }
}

/// Runs `fold_fn(fold_index, train, val)` for every fold and averages.
pub fn run_kfold(
    plan: &FoldPlan,
    mut fold_fn: impl FnMut(usize, &[usize], &[usize]) -> Result<MetricsReport>,
) -> Result<KFoldReport> {
    let mut per_fold = Vec::with_capacity(plan.k);
    for (i, (train, val)) in plan.folds.iter().enumerate() {
        per_fold.push(fold_fn(i, train, val)?);
    }
    Ok(KFoldReport::from_folds(per_fold))
}
