//! Top-down pyramid fusion and global pooling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::{upsample2_nearest, upsample2_nearest_backward, Conv2d, Tensor};

#[derive(Clone, Debug)]
pub struct Fpn {
    pub(crate) laterals: [Conv2d; 4],
    pub(crate) smoothing: Option<[Conv2d; 4]>,
    channels: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct FpnCache {
    stages: [Tensor; 4],
    merged: [Tensor; 4],
}

impl Fpn {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        stage_channels: [usize; 4],
        channels: usize,
        smoothing: bool,
        rng: &mut R,
    ) -> Self {
        let laterals = std::array::from_fn(|i| {
            Conv2d::new(store, &format!("fpn.lateral{}", i + 2), stage_channels[i], channels, 1, 1, 0, rng)
        });
        let smoothing = smoothing.then(|| {
            std::array::from_fn(|i| Conv2d::new(store, &format!("fpn.smooth{}", i + 2), channels, channels, 3, 1, 1, rng))
        });
        Self {
            laterals,
            smoothing,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Fuses stage maps (shallow → deep) into pyramid levels P2..P5.
    pub fn fuse(&self, store: &ParamStore, stages: &[Tensor]) -> Result<[Tensor; 4]> {
        self.fuse_traced(store, stages).map(|(levels, _)| levels)
    }

    pub(crate) fn fuse_traced(&self, store: &ParamStore, stages: &[Tensor]) -> Result<([Tensor; 4], FpnCache)> {
        if stages.len() != 4 {
            return Err(Error::Validation(format!("expected 4 stage maps, got {}", stages.len())));
        }
        for (i, (s, lat)) in stages.iter().zip(&self.laterals).enumerate() {
            if s.channels != lat.in_channels {
                return Err(Error::Internal(format!(
                    "stage {} has {} channels, lateral expects {}",
                    i + 2,
                    s.channels,
                    lat.in_channels
                )));
            }
        }
        for i in 0..3 {
            let (fine, coarse) = (&stages[i], &stages[i + 1]);
            if fine.height.div_ceil(2) != coarse.height || fine.width.div_ceil(2) != coarse.width {
                return Err(Error::Internal(format!(
                    "stage {} is {}x{} but stage {} is {}x{}; expected a factor-2 pyramid",
                    i + 2,
                    fine.height,
                    fine.width,
                    i + 3,
                    coarse.height,
                    coarse.width
                )));
            }
        }

        let mut merged: [Option<Tensor>; 4] = Default::default();
        for i in (0..4).rev() {
            let mut m = self.laterals[i].forward(store, &stages[i]);
            if let Some(above) = merged.get(i + 1).and_then(Option::as_ref) {
                m.add_assign(&upsample2_nearest(above, m.height, m.width));
            }
            merged[i] = Some(m);
        }
        let merged = merged.map(|m| m.expect("filled above"));
        let levels = match &self.smoothing {
            Some(convs) => std::array::from_fn(|i| convs[i].forward(store, &merged[i])),
            None => merged.clone(),
        };
        let stages: [Tensor; 4] = std::array::from_fn(|i| stages[i].clone());
        Ok((levels, FpnCache { stages, merged }))
    }

    /// Takes gradients on P2..P5 and returns gradients on the stage maps.
    pub(crate) fn backward(&self, store: &ParamStore, cache: &FpnCache, level_grads: [Tensor; 4], grads: &mut Grads) -> [Tensor; 4] {
        let mut gm: [Tensor; 4] = match &self.smoothing {
            Some(convs) => {
                let mut it = level_grads.into_iter().enumerate();
                std::array::from_fn(|_| {
                    let (i, g) = it.next().expect("four levels");
                    convs[i].backward(store, &cache.merged[i], &g, grads)
                })
            }
            None => level_grads,
        };
        for i in 0..3 {
            let up = &cache.merged[i + 1];
            let back = upsample2_nearest_backward(&gm[i], up.height, up.width);
            gm[i + 1].add_assign(&back);
        }
        std::array::from_fn(|i| self.laterals[i].backward(store, &cache.stages[i], &gm[i], grads))
    }
}

/// Global average pooling of each level, concatenated in P2→P5 order.
pub fn pool_and_concat(levels: &[Tensor]) -> Result<Vec<f64>> {
    if levels.len() != 4 {
        return Err(Error::Validation(format!("expected 4 pyramid levels, got {}", levels.len())));
    }
    let d = levels[0].channels;
    if levels.iter().any(|l| l.channels != d) {
        return Err(Error::Validation("pyramid levels disagree on channel count".into()));
    }
    Ok(levels.iter().flat_map(Tensor::channel_means).collect())
}

pub(crate) fn pool_backward(levels: &[Tensor; 4], grad_concat: &[f64]) -> [Tensor; 4] {
    let d = levels[0].channels;
    std::array::from_fn(|i| {
        let l = &levels[i];
        let n = l.height * l.width;
        let mut g = Tensor::zeros(l.channels, l.height, l.width);
        for c in 0..d {
            let v = grad_concat[i * d + c] / n as f64;
            g.data[c * n..(c + 1) * n].fill(v);
        }
        g
    })
}
