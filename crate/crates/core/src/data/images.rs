use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use rayon::prelude::*;

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes an 8-bit RGB image into a 3×H×W tensor scaled to [0, 1].
pub fn load_image(path: impl AsRef<Path>, size: (usize, usize)) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (h, w) != size {
        return Err(Error::InputShape(format!(
            "{} is {h}x{w}, expected {}x{}",
            path.display(),
            size.0,
            size.1
        )));
    }
    let mut t = Tensor::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(c, y as usize, x as usize) = px[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Writes a 3-channel tensor with values in [0, 1] as an 8-bit PNG.
pub fn save_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if t.channels != 3 {
        return Err(Error::InputShape(format!("cannot save a {}-channel tensor as RGB", t.channels)));
    }
    let img: RgbImage = ImageBuffer::from_fn(t.width as u32, t.height as u32, |x, y| {
        let q = |c| (t.at(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads every record's image in manifest order. Failures are returned
/// per record so callers can decide whether to drop or abort.
pub fn load_images(manifest: &DatasetManifest, size: (usize, usize)) -> Vec<Result<Tensor>> {
    manifest
        .records
        .par_iter()
        .map(|r| load_image(manifest.resolve_image(r), size))
        .collect()
}
