//! Per-head, per-pyramid-level contribution of the fused features.
//!
//! For head `h` and level `l` the score is the absolute weight mass the head
//! puts on level `l`'s slice of the concatenated vector, times the level's
//! relative pre-pooling area `r_l = (H/s_l)(W/s_l) / sum_m (H/s_m)(W/s_m)`.
//! Areas use the nominal stride fractions, so `r_l` is proportional to
//! `1 / s_l^2` whatever the rounding of the stride-32 map.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{checkpoint, ModelConfig, MultiTaskModel, LEVEL_STRIDES};
use crate::params::ParamStore;
use crate::plot::{bar_chart, BarSeries};
use crate::Task;

pub const LEVEL_NAMES: [&str; 4] = ["p2", "p3", "p4", "p5"];

const INTERPRETATION: &str = "# contribution = sum of |w| over the level's slice x relative pre-pooling area \
(H/s)(W/s) / sum over levels; bias excluded";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeadContribution {
    pub task: Task,
    pub raw: [f64; 4],
    /// `raw / sum(raw)`, or all zeros when the head has no weight mass.
    pub normalized: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContributionReport {
    /// `r_l` for each level.
    pub relative_sizes: [f64; 4],
    /// VA, EXPR, AU in that order.
    pub heads: Vec<HeadContribution>,
}

impl ContributionReport {
    pub fn head(&self, task: Task) -> &HeadContribution {
        &self.heads[task.index()]
    }

    /// `head,level,contribution,normalized` rows under a one-line `#` note.
    pub fn to_table(&self) -> String {
        let mut out = format!("{INTERPRETATION}\nhead,level,contribution,normalized\n");
        for h in &self.heads {
            for l in 0..4 {
                writeln!(out, "{},{},{},{}", h.task, LEVEL_NAMES[l], h.raw[l], h.normalized[l]).unwrap();
            }
        }
        out
    }
}

/// Relative nominal area of each pyramid level for an `h x w` input.
pub fn relative_sizes(input: (usize, usize)) -> [f64; 4] {
    let (h, w) = (input.0 as f64, input.1 as f64);
    let areas = LEVEL_STRIDES.map(|s| (h / s as f64) * (w / s as f64));
    let total: f64 = areas.iter().sum();
    areas.map(|a| a / total)
}

/// Contribution scores from a configuration and its parameter tensors.
pub fn layer_contribution_from_params(config: &ModelConfig, store: &ParamStore) -> Result<ContributionReport> {
    let d = config.pyramid_channels;
    let r = relative_sizes(config.input_size);
    let mut heads = Vec::with_capacity(3);
    for task in Task::ALL {
        let name = format!("head.{task}.weight");
        let p = store
            .get(&name)
            .ok_or_else(|| Error::Analysis(format!("checkpoint has no `{name}` tensor")))?;
        let [_, cols] = p.shape[..] else {
            return Err(Error::Analysis(format!("`{name}` has shape {:?}; expected a 2-d affine map", p.shape)));
        };
        if cols != 4 * d {
            return Err(Error::Analysis(format!("`{name}` reads {cols} inputs; expected 4 x {d}")));
        }
        let mut raw = [0.0; 4];
        for row in p.data.chunks(cols) {
            for (l, slot) in raw.iter_mut().enumerate() {
                *slot += row[l * d..(l + 1) * d].iter().map(|w| w.abs()).sum::<f64>();
            }
        }
        for l in 0..4 {
            raw[l] *= r[l];
        }
        let total: f64 = raw.iter().sum();
        let normalized = if total > 0.0 { raw.map(|c| c / total) } else { [0.0; 4] };
        heads.push(HeadContribution { task, raw, normalized });
    }
    Ok(ContributionReport {
        relative_sizes: r,
        heads,
    })
}

pub fn layer_contribution(model: &MultiTaskModel) -> Result<ContributionReport> {
    layer_contribution_from_params(model.config(), model.params())
}

/// Reads only the configuration and tensors, so checkpoints whose heads
/// no longer match the model layout produce an analysis error.
pub fn layer_contribution_from_checkpoint(path: impl AsRef<Path>) -> Result<ContributionReport> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (config, store) = checkpoint::parse(&bytes)?;
    layer_contribution_from_params(&config, &store)
}

/// Writes the table to `table_path` and a grouped bar chart (levels x heads)
/// of the normalized scores to `plot_path`.
pub fn emit_contribution_plot(report: &ContributionReport, table_path: impl AsRef<Path>, plot_path: impl AsRef<Path>) -> Result<()> {
    let table_path = table_path.as_ref();
    fs::write(table_path, report.to_table()).map_err(|e| Error::io(table_path, e))?;
    let series: Vec<BarSeries> = report
        .heads
        .iter()
        .map(|h| BarSeries {
            label: h.task.to_string(),
            values: h.normalized.to_vec(),
        })
        .collect();
    bar_chart(&series, 4, plot_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MultiTaskModel {
        MultiTaskModel::new(ModelConfig::tiny(8, 112)).unwrap()
    }

    #[test]
    fn equal_weights_give_area_fractions() {
        let mut m = model();
        for t in Task::ALL {
            let [w, _] = m.head_param_indices(t);
            m.params_mut().by_index_mut(w).data.fill(-0.3);
        }
        let r = layer_contribution(&m).unwrap();
        let want = [256.0 / 340.0, 64.0 / 340.0, 16.0 / 340.0, 4.0 / 340.0];
        for h in &r.heads {
            for l in 0..4 {
                assert!((h.normalized[l] - want[l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_slice_has_zero_contribution() {
        let mut m = model();
        let [w, _] = m.head_param_indices(Task::Expr);
        for row in m.params_mut().by_index_mut(w).data.chunks_mut(32) {
            row[8..16].fill(0.0);
        }
        let r = layer_contribution(&m).unwrap();
        assert_eq!(r.head(Task::Expr).raw[1], 0.0);
        assert!(r.head(Task::Va).raw[1] > 0.0);
    }

    #[test]
    fn table_and_plot_are_deterministic() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let r = layer_contribution(&m).unwrap();
        emit_contribution_plot(&r, dir.path().join("a.csv"), dir.path().join("a.png")).unwrap();
        emit_contribution_plot(&layer_contribution(&m).unwrap(), dir.path().join("b.csv"), dir.path().join("b.png")).unwrap();
        assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
        assert_eq!(fs::read(dir.path().join("a.png")).unwrap(), fs::read(dir.path().join("b.png")).unwrap());
        let table = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert!(table.starts_with("# "));
        assert!(table.contains(&format!("expr,p3,{},{}", r.heads[1].raw[1], r.heads[1].normalized[1])));
    }

    #[test]
    fn all_zero_report_is_zero_table() {
        let mut m = model();
        for t in Task::ALL {
            let [w, _] = m.head_param_indices(t);
            m.params_mut().by_index_mut(w).data.fill(0.0);
        }
        let r = layer_contribution(&m).unwrap();
        assert!(r.heads.iter().all(|h| h.raw == [0.0; 4] && h.normalized == [0.0; 4]));
        let dir = tempfile::tempdir().unwrap();
        emit_contribution_plot(&r, dir.path().join("z.csv"), dir.path().join("z.png")).unwrap();
    }

    #[test]
    fn non_affine_head_is_analysis_error() {
        let m = model();
        let mut store = m.params().clone();
        store.get_mut("head.au.weight").unwrap().shape = vec![12 * 32];
        assert!(matches!(layer_contribution_from_params(m.config(), &store), Err(Error::Analysis(_))));
    }
}
