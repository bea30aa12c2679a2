//! Challenge metrics: concordance correlation, F1 variants, total
//! accuracy and the weighted per-task scores.

mod evaluate;

pub use evaluate::{
    evaluate, evaluate_files, predict_manifest, read_predictions, write_predictions, EvalOptions, PredictionRow,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Denominators below this are treated as zero.
const DEGENERATE_EPS: f64 = 1e-12;

/// Population (1/n) first and second moments of a paired sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
    pub n: usize,
}

impl MomentStats {
    pub fn compute(x: &[f64], y: &[f64]) -> Result<Self> {
        ensure(x.len() == y.len(), || format!("length mismatch: {} vs {}", x.len(), y.len()))?;
        ensure(x.len() >= 2, || format!("need at least 2 samples, got {}", x.len()))?;
        let n = x.len() as f64;
        let mean_x = x.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov_xy) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            let (dx, dy) = (a - mean_x, b - mean_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov_xy += dx * dy;
        }
        Ok(Self {
            mean_x,
            mean_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov_xy: cov_xy / n,
            n: x.len(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ccc {
    pub value: f64,
    /// Set when the denominator vanished (both sequences constant and equal);
    /// `value` is then 0.
    pub degenerate: bool,
}

/// Concordance correlation coefficient with population moments.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<Ccc> {
    ensure(x.iter().chain(y).all(|v| v.is_finite()), || "CCC input contains non-finite values".into())?;
    let m = MomentStats::compute(x, y)?;
    let denom = m.var_x + m.var_y + (m.mean_x - m.mean_y).powi(2);
    if denom < DEGENERATE_EPS {
        return Ok(Ccc {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Ccc {
        value: (2.0 * m.cov_xy / denom).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// `counts[t * C + p]` = samples with true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        ensure(counts.len() == classes * classes, || {
            format!("{} counts cannot form a {classes}x{classes} matrix", counts.len())
        })?;
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    ensure(pred.len() == truth.len(), || format!("length mismatch: {} vs {}", pred.len(), truth.len()))?;
    let mut counts = vec![0u64; classes * classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Validation(format!("class pair ({t}, {p}) outside [0, {classes})")));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    // 2PR/(P+R) == 2tp/(2tp+fp+fn); 0/0 -> 0
    let denom = 2 * tp + fp + fn_;
    if denom == 0 || tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of every class, one-vs-rest.
pub fn f1_per_class(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    ensure(cm.total() > 0, || "empty confusion matrix".into())?;
    Ok((0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c);
            f1_from_counts(tp, cm.col_sum(c) - tp, cm.row_sum(c) - tp)
        })
        .collect())
}

/// Unweighted mean of per-class F1 over classes present in the ground truth.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let f1 = f1_per_class(cm)?;
    let present: Vec<f64> = (0..cm.classes).filter(|&c| cm.row_sum(c) > 0).map(|c| f1[c]).collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Fraction of positions where `pred` equals `truth`.
pub fn total_accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    ensure(pred.len() == truth.len(), || format!("length mismatch: {} vs {}", pred.len(), truth.len()))?;
    ensure(!pred.is_empty(), || "total accuracy of an empty sequence".into())?;
    let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / pred.len() as f64)
}

fn check_bit_shapes(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<usize> {
    ensure(pred.len() == truth.len(), || format!("row count mismatch: {} vs {}", pred.len(), truth.len()))?;
    ensure(!pred.is_empty(), || "empty AU matrix".into())?;
    let k = truth[0].len();
    ensure(pred.iter().chain(truth).all(|r| r.len() == k), || "ragged AU matrix".into())?;
    Ok(k)
}

/// Binary F1 per AU column (positive class), averaged over all columns.
pub fn au_average_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    let k = check_bit_shapes(pred, truth)?;
    ensure(k > 0, || "AU matrix has no columns".into())?;
    let sum: f64 = (0..k)
        .map(|j| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, t) in pred.iter().zip(truth) {
                match (p[j], t[j]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            f1_from_counts(tp, fp, fn_)
        })
        .sum();
    Ok(sum / k as f64)
}

/// Accuracy over every (sample, AU) decision, i.e. denominator `n * K`.
pub fn au_total_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    check_bit_shapes(pred, truth)?;
    let p: Vec<bool> = pred.iter().flatten().copied().collect();
    let t: Vec<bool> = truth.iter().flatten().copied().collect();
    total_accuracy(&p, &t)
}

pub fn score_va(ccc_v: f64, ccc_a: f64) -> f64 {
    0.5 * ccc_v + 0.5 * ccc_a
}

pub fn score_expr(f1: f64, tacc: f64) -> f64 {
    0.67 * f1 + 0.33 * tacc
}

pub fn score_au(af1: f64, tacc: f64) -> f64 {
    0.5 * af1 + 0.5 * tacc
}

/// `(s_va, s_expr, s_au)` from the component metrics.
pub fn challenge_scores(ccc_v: f64, ccc_a: f64, expr_f1: f64, expr_tacc: f64, au_af1: f64, au_tacc: f64) -> (f64, f64, f64) {
    (score_va(ccc_v, ccc_a), score_expr(expr_f1, expr_tacc), score_au(au_af1, au_tacc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaMetrics {
    pub ccc_v: f64,
    pub ccc_a: f64,
    pub s_va: f64,
    pub degenerate: bool,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExprMetrics {
    pub f1: f64,
    pub tacc: f64,
    pub s_expr: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuMetrics {
    pub af1: f64,
    pub tacc: f64,
    pub s_au: f64,
    pub count: usize,
}

/// Per-task metric groups; `None` means the task had no evaluable samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub va: Option<VaMetrics>,
    pub expr: Option<ExprMetrics>,
    pub au: Option<AuMetrics>,
}

impl MetricsReport {
    /// Mean of the available task scores.
    pub fn mean_score(&self) -> Option<f64> {
        let scores: Vec<f64> = [
            self.va.as_ref().map(|m| m.s_va),
            self.expr.as_ref().map(|m| m.s_expr),
            self.au.as_ref().map(|m| m.s_au),
        ]
        .into_iter()
        .flatten()
        .collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// `key=value` lines; absent tasks emit `<task>=absent`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        match &self.va {
            Some(m) => {
                writeln!(out, "va.count={}", m.count).unwrap();
                writeln!(out, "va.ccc_v={}", m.ccc_v).unwrap();
                writeln!(out, "va.ccc_a={}", m.ccc_a).unwrap();
                writeln!(out, "va.degenerate={}", m.degenerate).unwrap();
                writeln!(out, "va.score={}", m.s_va).unwrap();
            }
            None => out.push_str("va=absent\n"),
        }
        match &self.expr {
            Some(m) => {
                writeln!(out, "expr.count={}", m.count).unwrap();
                writeln!(out, "expr.f1={}", m.f1).unwrap();
                writeln!(out, "expr.tacc={}", m.tacc).unwrap();
                writeln!(out, "expr.score={}", m.s_expr).unwrap();
            }
            None => out.push_str("expr=absent\n"),
        }
        match &self.au {
            Some(m) => {
                writeln!(out, "au.count={}", m.count).unwrap();
                writeln!(out, "au.af1={}", m.af1).unwrap();
                writeln!(out, "au.tacc={}", m.tacc).unwrap();
                writeln!(out, "au.score={}", m.s_au).unwrap();
            }
            None => out.push_str("au=absent\n"),
        }
        if let Some(s) = self.mean_score() {
            writeln!(out, "mean_score={s}").unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("task  metric     value\n");
        let absent = |out: &mut String, t: &str| writeln!(out, "{t:<5} (no labelled samples)").unwrap();
        match &self.va {
            Some(m) => {
                writeln!(out, "VA    CCC-V      {:.4}", m.ccc_v).unwrap();
                writeln!(out, "VA    CCC-A      {:.4}", m.ccc_a).unwrap();
                writeln!(out, "VA    score      {:.4}  (n={})", m.s_va, m.count).unwrap();
            }
            None => absent(&mut out, "VA"),
        }
        match &self.expr {
            Some(m) => {
                writeln!(out, "EXPR  F1         {:.4}", m.f1).unwrap();
                writeln!(out, "EXPR  TAcc       {:.4}", m.tacc).unwrap();
                writeln!(out, "EXPR  score      {:.4}  (n={})", m.s_expr, m.count).unwrap();
            }
            None => absent(&mut out, "EXPR"),
        }
        match &self.au {
            Some(m) => {
                writeln!(out, "AU    AF1        {:.4}", m.af1).unwrap();
                writeln!(out, "AU    TAcc       {:.4}", m.tacc).unwrap();
                writeln!(out, "AU    score      {:.4}  (n={})", m.s_au, m.count).unwrap();
            }
            None => absent(&mut out, "AU"),
        }
        out
    }
}
