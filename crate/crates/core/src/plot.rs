//! Minimal grouped bar charts rendered straight to PNG.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

#[derive(Clone, Debug)]
pub struct BarSeries {
    pub label: String,
    /// One value per group; negative values are drawn as zero.
    pub values: Vec<f64>,
}

/// Renders `groups` clusters of bars, one bar per series in each cluster.
pub fn bar_chart(series: &[BarSeries], groups: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bar_w = 12u32;
    let gap = 10u32;
    let margin = 20u32;
    let plot_h = 200u32;
    let group_w = bar_w * series.len().max(1) as u32 + gap;
    let width = 2 * margin + group_w * groups.max(1) as u32;
    let height = plot_h + 2 * margin;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    let max = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { plot_h as f64 / max } else { 0.0 };
    let base = margin + plot_h;

    for (si, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        for (g, &v) in s.values.iter().enumerate().take(groups) {
            let h = (v.max(0.0) * scale).round() as u32;
            let x0 = margin + g as u32 * group_w + si as u32 * bar_w;
            for x in x0..x0 + bar_w - 1 {
                for y in base - h..base {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    for x in margin..width - margin {
        img.put_pixel(x, base, Rgb([0, 0, 0]));
    }
    for y in margin..=base {
        img.put_pixel(margin - 1, y, Rgb([0, 0, 0]));
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
