use std::fmt::Write as _;
use std::path::Path;

use super::{DatasetManifest, EXPRESSION_NAMES, NUM_EXPRESSIONS};
use crate::error::Result;
use crate::plot::{bar_chart, BarSeries};

#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionDistribution {
    pub counts: [usize; NUM_EXPRESSIONS],
}

impl ExpressionDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Fractions per class; all zero when there are no labels.
    pub fn proportions(&self) -> [f64; NUM_EXPRESSIONS] {
        let total = self.total();
        if total == 0 {
            return [0.0; NUM_EXPRESSIONS];
        }
        self.counts.map(|c| c as f64 / total as f64)
    }

    /// `class,name,count,proportion` table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("class,name,count,proportion\n");
        for (i, (c, p)) in self.counts.iter().zip(self.proportions()).enumerate() {
            writeln!(out, "{i},{},{c},{p}", EXPRESSION_NAMES[i]).unwrap();
        }
        out
    }

    /// Bar chart of the proportions, one bar per class.
    pub fn plot(&self, path: impl AsRef<Path>) -> Result<()> {
        let series = vec![BarSeries {
            label: "proportion".into(),
            values: self.proportions().to_vec(),
        }];
        bar_chart(&series, NUM_EXPRESSIONS, path)
    }
}

/// Expression class counts over records with an EXPR label.
pub fn expression_distribution(manifest: &DatasetManifest) -> ExpressionDistribution {
    ExpressionDistribution {
        counts: manifest.class_histogram(),
    }
}
