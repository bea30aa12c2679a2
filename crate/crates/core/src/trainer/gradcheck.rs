//! Central finite-difference check of the analytic parameter gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Sample;
use crate::error::Result;
use crate::losses::{loss_multi, loss_multi_with_grad, LossWeights};
use crate::model::{ModelConfig, MultiTaskModel};

/// Deliberate corruption of the analytic side, to prove the check bites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negate d(loss)/d(VA output) before back-propagating.
    FlipVaSign,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-4,
            fault: None,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// Entries left out because the ±step forward passes switched a ReLU
    /// or max-pool winner, where central differences are meaningless.
    pub kinked: usize,
    /// `|a - n| / max(|a|, |n|)` over the checked entries.
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| !t.passed).map(|t| t.name.as_str()).collect()
    }

    /// Tensors for which every probed entry straddled a kink.
    pub fn unverified(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| t.entries > 0 && t.kinked == t.entries)
            .map(|t| t.name.as_str())
            .collect()
    }
}

/// Gradient norms below this are compared as zero.
const NORM_FLOOR: f64 = 1e-10;

/// Mean loss plus the activation pattern of every sample.
fn probe(model: &MultiTaskModel, batch: &[Sample], w: &LossWeights) -> Result<(f64, Vec<Vec<u64>>)> {
    let mut sum = 0.0;
    let mut patterns = Vec::with_capacity(batch.len());
    for s in batch {
        let (pred, trace) = model.forward_traced(&s.image)?;
        sum += loss_multi(&pred, &s.targets, w)?.total;
        patterns.push(trace.activation_pattern());
    }
    Ok((sum / batch.len() as f64, patterns))
}

/// Compares the back-propagated gradient of the mean batch loss with
/// central differences, tensor by tensor, on a model built from `config`.
pub fn gradient_check(
    config: &ModelConfig,
    batch: &[Sample],
    weights: &LossWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut model = MultiTaskModel::new(config.clone())?;

    let (_, base_pattern) = probe(&model, batch, weights)?;
    let mut analytic = model.params().zero_grads();
    for s in batch {
        let (pred, trace) = model.forward_traced(&s.image)?;
        let (_, mut pg) = loss_multi_with_grad(&pred, &s.targets, weights)?;
        if opts.fault == Some(Fault::FlipVaSign) {
            pg.va = pg.va.map(|g| -g);
        }
        model.backward(&trace, &pg, &mut analytic);
    }
    analytic.scale(1.0 / batch.len() as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tensors = Vec::with_capacity(model.params().len());
    for idx in 0..model.params().len() {
        let numel = model.params().by_index(idx).numel();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < numel => rand::seq::index::sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        let mut kinked = 0;
        for &j in &entries {
            let orig = model.params().by_index(idx).data[j];
            model.params_mut().by_index_mut(idx).data[j] = orig + opts.step;
            let (plus, p_plus) = probe(&model, batch, weights)?;
            model.params_mut().by_index_mut(idx).data[j] = orig - opts.step;
            let (minus, p_minus) = probe(&model, batch, weights)?;
            model.params_mut().by_index_mut(idx).data[j] = orig;
            if p_plus != base_pattern || p_minus != base_pattern {
                kinked += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.tensors[idx][j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_error = if denom < NORM_FLOOR { 0.0 } else { diff2.sqrt() / denom };
        tensors.push(TensorCheck {
            name: model.params().by_index(idx).name.clone(),
            entries: entries.len(),
            kinked,
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
            rel_error,
            passed: rel_error < opts.tolerance,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: tensors.iter().all(|t| t.passed),
        tensors,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::tests::toy_samples;
    use rand::Rng;

    fn noisy_batch(n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut batch = toy_samples(n, 32);
        for s in &mut batch {
            for v in s.image.data.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        batch
    }

    #[test]
    fn heads_only_check_catches_fault() {
        let config = ModelConfig::tiny(8, 32);
        let batch = noisy_batch(2);
        let opts = GradCheckOptions {
            max_entries: Some(6),
            ..Default::default()
        };
        let ok = gradient_check(&config, &batch, &LossWeights::default(), &opts).unwrap();
        assert!(ok.passed, "{:#?}", ok.tensors);
        assert!(ok.unverified().is_empty(), "{:?}", ok.unverified());
        let bad = gradient_check(
            &config,
            &batch,
            &LossWeights::default(),
            &GradCheckOptions {
                fault: Some(Fault::FlipVaSign),
                ..opts
            },
        )
        .unwrap();
        let failing = bad.failing();
        assert!(failing.contains(&"head.va.weight"));
        assert!(!failing.iter().any(|n| n.starts_with("head.expr") || n.starts_with("head.au")));
    }
}
