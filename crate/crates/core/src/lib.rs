//! Multi-task facial affect analysis on a feature-pyramid backbone.
//!
//! The crate covers the full workflow: the pyramid model with its
//! valence-arousal, expression and action-unit heads ([`model`]), the
//! training objective ([`losses`]), challenge metrics ([`metrics`]),
//! manifest-based datasets ([`data`]), teacher-student label completion
//! ([`distill`]), the optimisation loop ([`trainer`]) and the per-level
//! head-weight analysis ([`analysis`]).

pub mod analysis;
pub mod data;
pub mod distill;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod plot;
pub mod tensor;
pub mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// The three affect tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Va,
    Expr,
    Au,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Va, Task::Expr, Task::Au];

    pub fn index(self) -> usize {
        match self {
            Task::Va => 0,
            Task::Expr => 1,
            Task::Au => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Va => "va",
            Task::Expr => "expr",
            Task::Au => "au",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "va" => Ok(Task::Va),
            "expr" => Ok(Task::Expr),
            "au" => Ok(Task::Au),
            other => Err(Error::Validation(format!("unknown task `{other}` (expected va, expr or au)"))),
        }
    }
}
