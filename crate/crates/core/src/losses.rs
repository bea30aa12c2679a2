//! Per-task losses and the weighted multi-task objective.
//!
//! Every loss comes with its analytic gradient with respect to the
//! prediction outputs; the model's backward pass takes it from there.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{sigmoid, MultiTaskPrediction, PredictionGrad};
use crate::Task;

const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    /// Only `task` active, with weight 1.
    pub fn single(task: Task) -> Self {
        let mut w = Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        *w.weight_mut(task) = 1.0;
        w
    }

    pub fn weight(&self, task: Task) -> f64 {
        match task {
            Task::Va => self.alpha,
            Task::Expr => self.beta,
            Task::Au => self.gamma,
        }
    }

    fn weight_mut(&mut self, task: Task) -> &mut f64 {
        match task {
            Task::Va => &mut self.alpha,
            Task::Expr => &mut self.beta,
            Task::Au => &mut self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha, self.beta, self.gamma];
        ensure(ws.iter().all(|w| w.is_finite() && *w >= 0.0), || {
            format!("loss weights must be non-negative, got {ws:?}")
        })?;
        ensure(ws.iter().any(|&w| w > 0.0), || "at least one loss weight must be positive".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExprTarget {
    Class(usize),
    /// Soft target, e.g. a teacher's softmax output.
    Distribution(Vec<f64>),
}

impl ExprTarget {
    /// Hard class: the index itself, or the distribution's argmax.
    pub fn class(&self) -> usize {
        match self {
            ExprTarget::Class(c) => *c,
            ExprTarget::Distribution(p) => crate::model::argmax(p),
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            ExprTarget::Class(c) => ensure(*c < num_classes, || {
                format!("expression class {c} out of range [0, {num_classes})")
            }),
            ExprTarget::Distribution(p) => {
                ensure(p.len() == num_classes, || {
                    format!("expression distribution has {} entries, expected {num_classes}", p.len())
                })?;
                ensure(p.iter().all(|v| v.is_finite() && *v >= 0.0), || {
                    "expression distribution has negative or non-finite entries".into()
                })?;
                let s: f64 = p.iter().sum();
                ensure((s - 1.0).abs() <= PROB_SUM_TOL, || format!("expression distribution sums to {s}, expected 1"))
            }
        }
    }
}

/// Per-sample targets; `None` means the task label is missing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub va: Option<[f64; 2]>,
    pub expr: Option<ExprTarget>,
    pub au: Option<Vec<f64>>,
}

impl TargetSet {
    /// Presence bits in (VA, EXPR, AU) order.
    pub fn mask(&self) -> [bool; 3] {
        [self.va.is_some(), self.expr.is_some(), self.au.is_some()]
    }

    pub fn has(&self, task: Task) -> bool {
        self.mask()[task.index()]
    }

    pub fn clear(&mut self, task: Task) {
        match task {
            Task::Va => self.va = None,
            Task::Expr => self.expr = None,
            Task::Au => self.au = None,
        }
    }

    pub fn validate(&self, num_expressions: usize, num_aus: usize) -> Result<()> {
        if let Some(va) = self.va {
            ensure(va.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)), || {
                format!("VA target {va:?} outside [-1, 1]")
            })?;
        }
        if let Some(e) = &self.expr {
            e.validate(num_expressions)?;
        }
        if let Some(au) = &self.au {
            ensure(au.len() == num_aus, || format!("AU target has {} entries, expected {num_aus}", au.len()))?;
            ensure(au.iter().all(|v| (0.0..=1.0).contains(v)), || "AU target outside [0, 1]".into())?;
        }
        Ok(())
    }
}

fn finite(xs: &[f64], what: &str) -> Result<()> {
    ensure(xs.iter().all(|v| v.is_finite()), || format!("{what} contains non-finite values"))
}

/// Squared error summed over valence and arousal.
pub fn loss_va(pred: [f64; 2], target: [f64; 2]) -> Result<f64> {
    finite(&pred, "VA prediction")?;
    finite(&target, "VA target")?;
    ensure(target.iter().all(|v| (-1.0..=1.0).contains(v)), || format!("VA target {target:?} outside [-1, 1]"))?;
    Ok((pred[0] - target[0]).powi(2) + (pred[1] - target[1]).powi(2))
}

pub fn loss_va_grad(pred: [f64; 2], target: [f64; 2]) -> [f64; 2] {
    [2.0 * (pred[0] - target[0]), 2.0 * (pred[1] - target[1])]
}

/// `log Σ exp(x)`, written so the dominant term is pulled out exactly.
fn log_sum_exp(x: &[f64]) -> f64 {
    let (imax, m) = x
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let rest: f64 = x
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    m + rest.ln_1p()
}

/// Cross-entropy over expression logits, hard or soft target.
pub fn loss_expr(logits: &[f64], target: &ExprTarget) -> Result<f64> {
    finite(logits, "expression logits")?;
    target.validate(logits.len())?;
    let lse = log_sum_exp(logits);
    Ok(match target {
        ExprTarget::Class(y) => {
            let xy = logits[*y];
            if logits.iter().all(|&v| v <= xy) {
                // confident correct class: avoid cancelling lse against x_y
                let rest: f64 = logits
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != *y)
                    .map(|(_, &v)| (v - xy).exp())
                    .sum();
                rest.ln_1p()
            } else {
                lse - xy
            }
        }
        ExprTarget::Distribution(p) => p.iter().zip(logits).map(|(pc, x)| pc * (lse - x)).sum(),
    })
}

pub fn loss_expr_grad(logits: &[f64], target: &ExprTarget) -> Vec<f64> {
    let mut g = crate::model::softmax(logits);
    match target {
        ExprTarget::Class(y) => g[*y] -= 1.0,
        ExprTarget::Distribution(p) => {
            let mass: f64 = p.iter().sum();
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi = *gi * mass - pi;
            }
        }
    }
    g
}

/// `-log σ(x)` without overflow.
fn softplus_neg(x: f64) -> f64 {
    // -log σ(x) = log(1 + e^{-x})
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy summed over AU labels; soft targets allowed.
pub fn loss_au(logits: &[f64], target: &[f64]) -> Result<f64> {
    ensure(logits.len() == target.len(), || {
        format!("AU logits ({}) and targets ({}) differ in length", logits.len(), target.len())
    })?;
    finite(logits, "AU logits")?;
    ensure(target.iter().all(|v| (0.0..=1.0).contains(v)), || "AU target outside [0, 1]".into())?;
    Ok(logits
        .iter()
        .zip(target)
        .map(|(&x, &y)| y * softplus_neg(x) + (1.0 - y) * softplus_neg(-x))
        .sum())
}

pub fn loss_au_grad(logits: &[f64], target: &[f64]) -> Vec<f64> {
    logits.iter().zip(target).map(|(&x, &y)| sigmoid(x) - y).collect()
}

/// Unweighted per-task values; masked tasks report 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub va: f64,
    pub expr: f64,
    pub au: f64,
}

impl TaskLosses {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Va => self.va,
            Task::Expr => self.expr,
            Task::Au => self.au,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiLoss {
    pub total: f64,
    pub per_task: TaskLosses,
}

pub fn loss_multi(pred: &MultiTaskPrediction, targets: &TargetSet, w: &LossWeights) -> Result<MultiLoss> {
    loss_multi_with_grad(pred, targets, w).map(|(l, _)| l)
}

/// Weighted loss plus its gradient with respect to every prediction output.
/// Masked tasks contribute exactly zero loss and zero gradient.
pub fn loss_multi_with_grad(
    pred: &MultiTaskPrediction,
    targets: &TargetSet,
    w: &LossWeights,
) -> Result<(MultiLoss, PredictionGrad)> {
    if targets.mask() == [false; 3] {
        return Err(Error::DegenerateSample);
    }
    let mut grad = PredictionGrad::zeros(pred.expr_logits.len(), pred.au_logits.len());
    let mut per = TaskLosses::default();
    if let Some(t) = targets.va {
        per.va = loss_va(pred.va, t)?;
        if w.alpha != 0.0 {
            grad.va = loss_va_grad(pred.va, t).map(|g| w.alpha * g);
        }
    }
    if let Some(t) = &targets.expr {
        per.expr = loss_expr(&pred.expr_logits, t)?;
        if w.beta != 0.0 {
            grad.expr = loss_expr_grad(&pred.expr_logits, t).into_iter().map(|g| w.beta * g).collect();
        }
    }
    if let Some(t) = &targets.au {
        per.au = loss_au(&pred.au_logits, t)?;
        if w.gamma != 0.0 {
            grad.au = loss_au_grad(&pred.au_logits, t).into_iter().map(|g| w.gamma * g).collect();
        }
    }
    let total = w.alpha * per.va + w.beta * per.expr + w.gamma * per.au;
    Ok((MultiLoss { total, per_task: per }, grad))
}

/// Mean of per-sample losses over a batch.
pub fn batch_loss(preds: &[MultiTaskPrediction], targets: &[&TargetSet], w: &LossWeights) -> Result<MultiLoss> {
    ensure(!preds.is_empty() && preds.len() == targets.len(), || {
        format!("batch of {} predictions vs {} targets", preds.len(), targets.len())
    })?;
    let mut acc = MultiLoss::default();
    for (p, t) in preds.iter().zip(targets) {
        let l = loss_multi(p, t, w)?;
        acc.total += l.total;
        acc.per_task.va += l.per_task.va;
        acc.per_task.expr += l.per_task.expr;
        acc.per_task.au += l.per_task.au;
    }
    let n = preds.len() as f64;
    Ok(MultiLoss {
        total: acc.total / n,
        per_task: TaskLosses {
            va: acc.per_task.va / n,
            expr: acc.per_task.expr / n,
            au: acc.per_task.au / n,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(va: [f64; 2], expr: Vec<f64>, au: Vec<f64>) -> MultiTaskPrediction {
        MultiTaskPrediction {
            va,
            expr_logits: expr,
            au_logits: au,
        }
    }

    #[test]
    fn va_closed_forms() {
        assert_eq!(loss_va([0.5, -0.5], [0.5, -0.5]).unwrap(), 0.0);
        assert_eq!(loss_va([1.0, 0.0], [0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(loss_va([1.0, 1.0], [-1.0, -1.0]).unwrap(), 8.0);
        assert!(loss_va([f64::NAN, 0.0], [0.0, 0.0]).is_err());
    }

    #[test]
    fn expr_closed_forms() {
        let l = loss_expr(&[0.3; 7], &ExprTarget::Class(4)).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        assert!((l - 1.945910).abs() < 1e-6);
        let mut x = vec![0.0; 7];
        x[2] = 50.0;
        let l = loss_expr(&x, &ExprTarget::Class(2)).unwrap();
        assert!(l < 1e-20 && l > 0.0, "{l}");
        assert!(loss_expr(&x, &ExprTarget::Class(7)).is_err());
    }

    #[test]
    fn one_hot_soft_target_matches_hard() {
        let x = [0.2, -1.0, 3.0, 0.5, 0.0, -0.3, 1.1];
        for c in 0..7 {
            let mut p = vec![0.0; 7];
            p[c] = 1.0;
            let hard = loss_expr(&x, &ExprTarget::Class(c)).unwrap();
            let soft = loss_expr(&x, &ExprTarget::Distribution(p.clone())).unwrap();
            assert!((hard - soft).abs() < 1e-12);
            assert_eq!(loss_expr_grad(&x, &ExprTarget::Class(c)), loss_expr_grad(&x, &ExprTarget::Distribution(p)));
        }
    }

    #[test]
    fn au_closed_forms() {
        let l = loss_au(&[0.0; 12], &[1.0, 0.0, 0.3, 1.0, 0.0, 0.0, 1.0, 1.0, 0.5, 0.0, 1.0, 0.0]).unwrap();
        assert!((l - 12.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 8.317766).abs() < 1e-6);
        // soft target equal to sigmoid gives the binary entropy
        let x = 0.8;
        let p = sigmoid(x);
        let h = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((loss_au(&[x], &[p]).unwrap() - h).abs() < 1e-12);
        assert!(loss_au(&[50.0], &[1.0]).unwrap() < 1e-20);
        assert!(loss_au(&[0.0], &[1.5]).is_err());
        assert!(loss_au(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let x = [1e4, -1e4, 0.0, 1e4, -1e4, 3.0, -2.0];
        for c in 0..7 {
            assert!(loss_expr(&x, &ExprTarget::Class(c)).unwrap().is_finite());
        }
        assert!(loss_au(&x, &[0.0, 1.0, 0.5, 1.0, 0.0, 1.0, 0.0]).unwrap().is_finite());
        assert!(loss_au(&x, &[1.0, 0.0, 0.5, 0.0, 1.0, 1.0, 0.0]).unwrap().is_finite());
        assert!(loss_expr_grad(&x, &ExprTarget::Class(1)).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn multi_weights_and_masks() {
        let p = pred([0.1, -0.2], vec![0.5, 0.1, -0.3, 0.0, 0.2, 0.9, -1.0], vec![0.3, -0.7, 1.2]);
        let full = TargetSet {
            va: Some([0.4, 0.0]),
            expr: Some(ExprTarget::Class(5)),
            au: Some(vec![1.0, 0.0, 1.0]),
        };
        let w = LossWeights::default();
        let m = loss_multi(&p, &full, &w).unwrap();
        let direct = loss_va(p.va, [0.4, 0.0]).unwrap()
            + loss_expr(&p.expr_logits, &ExprTarget::Class(5)).unwrap()
            + loss_au(&p.au_logits, &[1.0, 0.0, 1.0]).unwrap();
        assert!((m.total - direct).abs() < 1e-12);

        let only_expr = TargetSet {
            expr: Some(ExprTarget::Class(5)),
            ..Default::default()
        };
        let (m, g) = loss_multi_with_grad(&p, &only_expr, &w).unwrap();
        assert_eq!(m.total, m.per_task.expr);
        assert_eq!(g.va, [0.0, 0.0]);
        assert!(g.au.iter().all(|&v| v == 0.0));

        let no_va = LossWeights {
            alpha: 0.0,
            ..w
        };
        let a = loss_multi(&p, &full, &no_va).unwrap().total;
        let moved = TargetSet {
            va: Some([-0.9, 0.9]),
            ..full.clone()
        };
        assert_eq!(a, loss_multi(&p, &moved, &no_va).unwrap().total);

        assert!(matches!(loss_multi(&p, &TargetSet::default(), &w), Err(Error::DegenerateSample)));
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 }.validate().is_err());
        assert!(LossWeights { alpha: -1.0, beta: 1.0, gamma: 1.0 }.validate().is_err());
    }

    #[test]
    fn batch_of_identical_samples_equals_single() {
        let p = pred([0.1, 0.3], vec![0.0, 1.0], vec![0.5]);
        let t = TargetSet {
            va: Some([0.0, 0.0]),
            expr: Some(ExprTarget::Class(0)),
            au: Some(vec![1.0]),
        };
        let w = LossWeights::default();
        let single = loss_multi(&p, &t, &w).unwrap();
        let batch = batch_loss(&[p.clone(), p.clone(), p], &[&t, &t, &t], &w).unwrap();
        assert!((single.total - batch.total).abs() < 1e-15);
    }

    /// Central differences on random 10-dimensional inputs.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for _ in 0..20 {
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = y.iter().sum();
            let dist = ExprTarget::Distribution(y.iter().map(|v| v / z).collect());
            let g_au = loss_au_grad(&x, &y);
            let g_ce = loss_expr_grad(&x, &dist);
            for i in 0..10 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd_au = (loss_au(&xp, &y).unwrap() - loss_au(&xm, &y).unwrap()) / (2.0 * h);
                let fd_ce = (loss_expr(&xp, &dist).unwrap() - loss_expr(&xm, &dist).unwrap()) / (2.0 * h);
                assert!(rel(fd_au, g_au[i]) < 1e-6, "au {fd_au} vs {}", g_au[i]);
                assert!(rel(fd_ce, g_ce[i]) < 1e-6, "ce {fd_ce} vs {}", g_ce[i]);
            }
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = loss_va_grad(p, t);
            for i in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp[i] += h;
                pm[i] -= h;
                let fd = (loss_va(pp, t).unwrap() - loss_va(pm, t).unwrap()) / (2.0 * h);
                assert!(rel(fd, g[i]) < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn losses_non_negative_and_permutation_equivariant(
            x in proptest::collection::vec(-1e4f64..1e4, 2..12),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = x.len();
            let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let c = rng.random_range(0..n);
            let au = loss_au(&x, &y).unwrap();
            let ce = loss_expr(&x, &ExprTarget::Class(c)).unwrap();
            prop_assert!(au >= 0.0 && au.is_finite());
            prop_assert!(ce >= 0.0 && ce.is_finite());

            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let cp = perm.iter().position(|&i| i == c).unwrap();
            prop_assert!((loss_au(&xp, &yp).unwrap() - au).abs() <= 1e-9 * au.max(1.0));
            prop_assert!((loss_expr(&xp, &ExprTarget::Class(cp)).unwrap() - ce).abs() <= 1e-9 * ce.max(1.0));
        }
    }
}
