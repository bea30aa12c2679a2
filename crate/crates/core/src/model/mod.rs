//! The multi-task pyramid network: backbone → top-down fusion → global
//! pooling → concatenation → three single-layer task heads.

mod backbone;
pub mod checkpoint;
mod config;
mod fpn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backbone::Backbone;
pub use config::{BackboneVariant, ModelConfig, VaBounding, LEVEL_STRIDES};
pub use fpn::{pool_and_concat, Fpn};

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::{Linear, Tensor};
use crate::Task;
use backbone::BackboneCache;
use fpn::FpnCache;

#[derive(Clone, Debug)]
pub struct PyramidFeatures {
    pub levels: [Tensor; 4],
    pub pooled: [Vec<f64>; 4],
    pub concat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskPrediction {
    /// (valence, arousal)
    pub va: [f64; 2],
    pub expr_logits: Vec<f64>,
    pub au_logits: Vec<f64>,
}

impl MultiTaskPrediction {
    pub fn expr_class(&self) -> usize {
        argmax(&self.expr_logits)
    }

    pub fn expr_probs(&self) -> Vec<f64> {
        softmax(&self.expr_logits)
    }

    pub fn au_probs(&self) -> Vec<f64> {
        self.au_logits.iter().map(|&x| sigmoid(x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.va.iter().chain(&self.expr_logits).chain(&self.au_logits).all(|v| v.is_finite())
    }
}

/// Gradient of a scalar loss with respect to each prediction output.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrad {
    pub va: [f64; 2],
    pub expr: Vec<f64>,
    pub au: Vec<f64>,
}

impl PredictionGrad {
    pub fn zeros(num_expressions: usize, num_aus: usize) -> Self {
        Self {
            va: [0.0; 2],
            expr: vec![0.0; num_expressions],
            au: vec![0.0; num_aus],
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub(crate) va: Linear,
    pub(crate) expr: Linear,
    pub(crate) au: Linear,
    bounding: VaBounding,
}

impl Heads {
    pub(crate) fn linear(&self, task: Task) -> &Linear {
        match task {
            Task::Va => &self.va,
            Task::Expr => &self.expr,
            Task::Au => &self.au,
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    backbone: BackboneCache,
    fpn: FpnCache,
    levels: [Tensor; 4],
    concat: Vec<f64>,
    va_out: [f64; 2],
}

impl ForwardTrace {
    /// Piecewise-linear region the forward pass landed in; see the
    /// gradient check.
    pub fn activation_pattern(&self) -> Vec<u64> {
        // the fusion path is linear, so only the backbone contributes
        self.backbone.activation_pattern()
    }
}

#[derive(Clone, Debug)]
pub struct MultiTaskModel {
    config: ModelConfig,
    store: ParamStore,
    backbone: Backbone,
    fpn: Fpn,
    heads: Heads,
}

impl MultiTaskModel {
    /// Builds a randomly initialised model from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, &config, &mut rng);
        let fpn = Fpn::new(
            &mut store,
            config.backbone_variant.stage_channels(),
            config.pyramid_channels,
            config.fusion_smoothing,
            &mut rng,
        );
        let n = config.concat_len();
        let heads = Heads {
            va: Linear::new(&mut store, "head.va", n, 2, &mut rng),
            expr: Linear::new(&mut store, "head.expr", n, config.num_expressions, &mut rng),
            au: Linear::new(&mut store, "head.au", n, config.num_aus, &mut rng),
            bounding: config.va_bounding,
        };
        Ok(Self {
            config,
            store,
            backbone,
            fpn,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn fpn(&self) -> &Fpn {
        &self.fpn
    }

    /// Parameter-store indices of the weight and bias of one task head.
    pub fn head_param_indices(&self, task: Task) -> [usize; 2] {
        let lin = self.heads.linear(task);
        [lin.weight.0, lin.bias.0]
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (h, w) = self.config.input_size;
        if image.shape() != (3, h, w) {
            return Err(Error::InputShape(format!(
                "expected a 3x{h}x{w} image, got {}x{}x{}",
                image.channels, image.height, image.width
            )));
        }
        if !image.is_finite() {
            return Err(Error::Validation("image contains non-finite values".into()));
        }
        Ok(())
    }

    /// conv2..conv5 stage outputs (strides 4, 8, 16, 32).
    pub fn backbone_forward(&self, image: &Tensor) -> Result<[Tensor; 4]> {
        self.check_image(image)?;
        Ok(self.backbone.forward(&self.store, image).0)
    }

    pub fn fpn_fuse(&self, stages: &[Tensor]) -> Result<[Tensor; 4]> {
        self.fpn.fuse(&self.store, stages)
    }

    pub fn pyramid(&self, image: &Tensor) -> Result<PyramidFeatures> {
        let stages = self.backbone_forward(image)?;
        let levels = self.fpn_fuse(&stages)?;
        let pooled: [Vec<f64>; 4] = std::array::from_fn(|i| levels[i].channel_means());
        let concat = pooled.concat();
        Ok(PyramidFeatures { levels, pooled, concat })
    }

    pub fn heads_forward(&self, concat: &[f64]) -> Result<MultiTaskPrediction> {
        if concat.len() != self.config.concat_len() {
            return Err(Error::Validation(format!(
                "concat vector has length {}, expected {}",
                concat.len(),
                self.config.concat_len()
            )));
        }
        let va_raw = self.heads.va.forward(&self.store, concat);
        let va = match self.heads.bounding {
            VaBounding::Tanh => [va_raw[0].tanh(), va_raw[1].tanh()],
            VaBounding::Linear => [va_raw[0], va_raw[1]],
        };
        Ok(MultiTaskPrediction {
            va,
            expr_logits: self.heads.expr.forward(&self.store, concat),
            au_logits: self.heads.au.forward(&self.store, concat),
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<MultiTaskPrediction> {
        let concat = pool_and_concat(&self.pyramid(image)?.levels)?;
        self.heads_forward(&concat)
    }

    /// Order-preserving batched inference.
    pub fn forward_batch(&self, images: &[Tensor]) -> Result<Vec<MultiTaskPrediction>> {
        images.par_iter().map(|img| self.forward(img)).collect()
    }

    pub fn forward_traced(&self, image: &Tensor) -> Result<(MultiTaskPrediction, ForwardTrace)> {
        self.check_image(image)?;
        let (stages, backbone) = self.backbone.forward(&self.store, image);
        let (levels, fpn) = self.fpn.fuse_traced(&self.store, &stages)?;
        let concat = pool_and_concat(&levels)?;
        let pred = self.heads_forward(&concat)?;
        let trace = ForwardTrace {
            backbone,
            fpn,
            levels,
            concat,
            va_out: pred.va,
        };
        Ok((pred, trace))
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(prediction).
    pub fn backward(&self, trace: &ForwardTrace, grad: &PredictionGrad, grads: &mut Grads) {
        let store = &self.store;
        let va_pre = match self.heads.bounding {
            VaBounding::Tanh => [
                grad.va[0] * (1.0 - trace.va_out[0] * trace.va_out[0]),
                grad.va[1] * (1.0 - trace.va_out[1] * trace.va_out[1]),
            ],
            VaBounding::Linear => grad.va,
        };
        let mut g_concat = self.heads.va.backward(store, &trace.concat, &va_pre, grads);
        for (lin, g) in [(&self.heads.expr, &grad.expr), (&self.heads.au, &grad.au)] {
            let gi = lin.backward(store, &trace.concat, g, grads);
            for (a, b) in g_concat.iter_mut().zip(gi) {
                *a += b;
            }
        }
        let level_grads = fpn::pool_backward(&trace.levels, &g_concat);
        let stage_grads = self.fpn.backward(store, &trace.fpn, level_grads, grads);
        self.backbone.backward(store, &trace.backbone, stage_grads, grads);
    }

    /// Copies matching `backbone.*` tensors from another parameter set
    /// (pretrained-weight hook). Returns how many tensors were loaded.
    pub fn load_backbone_weights(&mut self, source: &ParamStore) -> Result<usize> {
        let mut loaded = 0;
        for p in self.store.iter_mut().filter(|p| p.name.starts_with("backbone.")) {
            if let Some(src) = source.get(&p.name) {
                if src.shape != p.shape {
                    return Err(Error::Checkpoint(format!(
                        "pretrained tensor {} has shape {:?}, model expects {:?}",
                        p.name, src.shape, p.shape
                    )));
                }
                p.data.clone_from(&src.data);
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}
