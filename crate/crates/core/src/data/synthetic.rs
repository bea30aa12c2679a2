//! Synthetic affect dataset for desk-scale experiments.
//!
//! Every sample has a latent expression class `c`. The image draws a
//! class-coloured block at a class-specific position, the VA label is a
//! fixed per-class anchor and the AU label a fixed per-class template, so
//! all three tasks are coupled through `c` exactly as long as `noise == 0`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{manifest::save_manifest, save_image, DatasetManifest, Provenance, SampleRecord, Source, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::losses::{ExprTarget, TargetSet};
use crate::tensor::Tensor;
use crate::Task;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Square image side, pixels.
    pub image_size: usize,
    /// Std-dev of additive Gaussian pixel noise (intensity units in [0, 1]).
    pub noise: f64,
    /// Fraction of samples whose label is hidden, drawn independently per task.
    pub mask_rate: f64,
    pub num_aus: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 70,
            image_size: 32,
            noise: 0.0,
            mask_rate: 0.0,
            num_aus: 12,
            seed: 0,
        }
    }
}

/// (valence, arousal) anchor for each expression class.
pub fn va_anchor(class: usize) -> [f64; 2] {
    const ANCHORS: [[f64; 2]; NUM_EXPRESSIONS] = [
        [0.0, 0.0],    // neutral
        [-0.6, 0.6],   // anger
        [-0.6, 0.2],   // disgust
        [-0.4, 0.7],   // fear
        [0.7, 0.4],    // happiness
        [-0.6, -0.4],  // sadness
        [0.3, 0.75],   // surprise
    ];
    ANCHORS[class]
}

/// AU activation template for a class. The first twelve columns follow the
/// AU1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26 ordering.
pub fn au_template(class: usize, num_aus: usize) -> Vec<f64> {
    const ACTIVE: [&[usize]; NUM_EXPRESSIONS] = [
        &[],
        &[2, 4, 8, 9],
        &[2, 5, 7],
        &[0, 1, 2, 10, 11],
        &[3, 6, 10],
        &[0, 2, 7],
        &[0, 1, 10, 11],
    ];
    (0..num_aus)
        .map(|j| {
            let on = if j < 12 {
                ACTIVE[class].contains(&j)
            } else {
                (class + j) % 3 == 0
            };
            if on {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

const COLOURS: [[f64; 3]; NUM_EXPRESSIONS] = [
    [0.9, 0.9, 0.9],
    [0.95, 0.1, 0.1],
    [0.3, 0.8, 0.1],
    [0.6, 0.1, 0.9],
    [1.0, 0.85, 0.1],
    [0.1, 0.2, 0.9],
    [0.1, 0.9, 0.9],
];

/// Noise-free template image of a class.
pub fn class_image(class: usize, size: usize) -> Tensor {
    let mut t = Tensor::filled(3, size, size, 0.1);
    let block = size / 2;
    let cell = size / 4;
    let (gx, gy) = (class % 3, class / 3);
    let (x0, y0) = (gx * cell, gy * cell);
    for c in 0..3 {
        for y in y0..(y0 + block).min(size) {
            for x in x0..(x0 + block).min(size) {
                *t.at_mut(c, y, x) = COLOURS[class][c];
            }
        }
    }
    t
}

fn sample_id(i: usize) -> String {
    format!("syn{i:05}")
}

/// Writes `n` images plus `manifest.csv` into `out_dir`; returns the manifest
/// (rooted at `out_dir`). Classes cycle `0..7`, so `n = 70` gives ten per class.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if spec.n == 0 {
        return Err(Error::Validation("synthetic dataset needs n >= 1".into()));
    }
    if spec.image_size < 16 || spec.image_size % 16 != 0 {
        return Err(Error::InputShape(format!("image size {} must be a multiple of 16", spec.image_size)));
    }
    if !(0.0..=1.0).contains(&spec.mask_rate) || !(spec.noise >= 0.0) {
        return Err(Error::Validation("mask_rate must be in [0, 1] and noise non-negative".into()));
    }
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("non-negative std");
    let templates: Vec<Tensor> = (0..NUM_EXPRESSIONS).map(|c| class_image(c, spec.image_size)).collect();

    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = i % NUM_EXPRESSIONS;
        let mut img = templates[class].clone();
        if spec.noise > 0.0 {
            for v in img.data.iter_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        let rel = PathBuf::from("images").join(format!("{}.png", sample_id(i)));
        save_image(&img, out_dir.join(&rel))?;
        let targets = TargetSet {
            va: Some(va_anchor(class)),
            expr: Some(ExprTarget::Class(class)),
            au: Some(au_template(class, spec.num_aus)),
        };
        records.push(SampleRecord::ground_truth(sample_id(i), rel, Source::Synthetic, targets));
    }

    let masked = (spec.mask_rate * spec.n as f64).floor() as usize;
    if masked > 0 {
        for task in Task::ALL {
            for idx in rand::seq::index::sample(&mut rng, spec.n, masked) {
                let r = &mut records[idx];
                r.targets.clear(task);
                r.provenance[task.index()] = Provenance::Absent;
            }
        }
    }
    let mut manifest = DatasetManifest::new(records, spec.num_aus);
    save_manifest(&manifest, out_dir.join("manifest.csv"))?;
    manifest.set_root(out_dir);
    Ok(manifest)
}
