//! Sample records, manifests and the dataset-level operations built on them.

mod distribution;
mod images;
pub(crate) mod manifest;
mod merge;
mod subsample;
mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use distribution::{expression_distribution, ExpressionDistribution};
pub use images::{load_image, load_images, save_image};
pub use manifest::{load_manifest, manifest_header, read_manifest, save_manifest, write_manifest};
pub use merge::merge_datasets;
pub use subsample::subsample_epoch;
pub use synthetic::{au_template, class_image, generate_synthetic, va_anchor, SyntheticSpec};

use crate::error::{Error, Result};
use crate::losses::TargetSet;
use crate::Task;

pub const NUM_EXPRESSIONS: usize = 7;

pub const EXPRESSION_NAMES: [&str; NUM_EXPRESSIONS] =
    ["neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    AffWild2Like,
    ExpwLike,
    AffectNetLike,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::AffWild2Like => "affwild2",
            Source::ExpwLike => "expw",
            Source::AffectNetLike => "affectnet",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "affwild2" => Ok(Source::AffWild2Like),
            "expw" => Ok(Source::ExpwLike),
            "affectnet" => Ok(Source::AffectNetLike),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

/// Where a task label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    GroundTruth,
    Teacher,
    Absent,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GroundTruth => "gt",
            Provenance::Teacher => "teacher",
            Provenance::Absent => "absent",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gt" => Ok(Provenance::GroundTruth),
            "teacher" => Ok(Provenance::Teacher),
            "absent" => Ok(Provenance::Absent),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub source: Source,
    pub targets: TargetSet,
    /// Indexed by [`Task::index`].
    pub provenance: [Provenance; 3],
}

impl SampleRecord {
    /// Record with every present target marked as ground truth.
    pub fn ground_truth(id: impl Into<String>, image_path: impl Into<PathBuf>, source: Source, targets: TargetSet) -> Self {
        let provenance = targets
            .mask()
            .map(|m| if m { Provenance::GroundTruth } else { Provenance::Absent });
        Self {
            id: id.into(),
            image_path: image_path.into(),
            source,
            targets,
            provenance,
        }
    }

    pub fn provenance(&self, task: Task) -> Provenance {
        self.provenance[task.index()]
    }

    pub fn validate(&self, num_aus: usize) -> Result<()> {
        self.targets.validate(NUM_EXPRESSIONS, num_aus)?;
        for (task, present) in Task::ALL.into_iter().zip(self.targets.mask()) {
            let prov = self.provenance(task);
            if present == (prov == Provenance::Absent) {
                return Err(Error::Validation(format!(
                    "sample `{}`: {task} provenance `{}` disagrees with label presence",
                    self.id,
                    prov.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Per-task label counts in (VA, EXPR, AU) order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub va: usize,
    pub expr: usize,
    pub au: usize,
}

impl Coverage {
    pub fn get(&self, task: Task) -> usize {
        match task {
            Task::Va => self.va,
            Task::Expr => self.expr,
            Task::Au => self.au,
        }
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.va, self.expr, self.au)
    }
}

/// Ordered sample records. Coverage and histogram are always recomputed
/// from the records, so they cannot drift out of sync.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub num_aus: usize,
    /// Directory relative image paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, num_aus: usize) -> Self {
        Self {
            records,
            num_aus,
            root: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn coverage(&self) -> Coverage {
        let mut c = Coverage::default();
        for r in &self.records {
            let [va, expr, au] = r.targets.mask();
            c.va += va as usize;
            c.expr += expr as usize;
            c.au += au as usize;
        }
        c
    }

    /// Counts of records per provenance for one task.
    pub fn provenance_count(&self, task: Task, prov: Provenance) -> usize {
        self.records.iter().filter(|r| r.provenance(task) == prov).count()
    }

    pub fn class_histogram(&self) -> [usize; NUM_EXPRESSIONS] {
        let mut h = [0; NUM_EXPRESSIONS];
        for r in &self.records {
            if let Some(e) = &r.targets.expr {
                h[e.class()] += 1;
            }
        }
        h
    }

    pub fn resolve_image(&self, record: &SampleRecord) -> PathBuf {
        if record.image_path.is_absolute() {
            record.image_path.clone()
        } else {
            self.root.join(&record.image_path)
        }
    }

    /// Sub-manifest of records carrying a label for `task`.
    pub fn with_task(&self, task: Task) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| r.targets.has(task)).cloned().collect(),
            num_aus: self.num_aus,
            root: self.root.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            r.validate(self.num_aus)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id `{}`", r.id)));
            }
        }
        Ok(())
    }

    /// Rebases relative image paths onto `root` so the manifest no longer
    /// depends on where it was loaded from.
    pub fn with_resolved_paths(&self) -> DatasetManifest {
        DatasetManifest {
            records: self
                .records
                .iter()
                .map(|r| SampleRecord {
                    image_path: self.resolve_image(r),
                    ..r.clone()
                })
                .collect(),
            num_aus: self.num_aus,
            root: PathBuf::new(),
        }
    }

    pub fn set_root(&mut self, root: impl AsRef<Path>) {
        self.root = root.as_ref().to_path_buf();
    }
}
