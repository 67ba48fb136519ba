//! Datasets: toy generators, OOD synthesis, tabular ingestion, splits and
//! standardization.

mod generators;
mod ood;
mod prep;
mod tabular;

pub use generators::{gen_toy_regression, gen_two_moons, gen_uniform_noise, ring_points};
pub use ood::{synthesize_ood, synthesize_ood_set, synthesize_ood_with, OodKind, OodParams};
pub use prep::{split, standardize, SplitSpec, Standardization, STD_FLOOR};
pub use tabular::{load_csv, read_csv, TargetColumn};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// What a dataset is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class labels in `0..classes`.
    Labels { labels: Vec<usize>, classes: usize },
    /// Real-valued targets, one row per sample.
    Values(Matrix),
    /// Unlabeled inputs, e.g. synthesized outliers.
    None,
}

impl Targets {
    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Labels { labels, classes } => {
                Targets::Labels { labels: idx.iter().map(|&i| labels[i]).collect(), classes: *classes }
            }
            Targets::Values(v) => Targets::Values(v.select_rows(idx)),
            Targets::None => Targets::None,
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            Targets::Labels { labels, .. } => Some(labels.len()),
            Targets::Values(v) => Some(v.rows()),
            Targets::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Targets,
    pub role: Role,
    /// Present once the features have been standardized.
    pub stats: Option<Standardization>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Targets, role: Role) -> Result<Self> {
        if let Some(n) = targets.len() {
            if n != features.rows() {
                return Err(Error::dims(format!("{} feature rows but {n} targets", features.rows())));
            }
        }
        if let Targets::Labels { labels, classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&y| y >= *classes) {
                return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
            }
        }
        Ok(Self { features, targets, role, stats: None })
    }

    pub fn unlabeled(features: Matrix, role: Role) -> Self {
        Self { features, targets: Targets::None, role, stats: None }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            _ => None,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { classes, .. } => Some(*classes),
            _ => None,
        }
    }

    pub fn values(&self) -> Option<&Matrix> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            _ => None,
        }
    }

    /// Rows `idx`, in order. Keeps role and stats.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            targets: self.targets.select(idx),
            role: self.role,
            stats: self.stats.clone(),
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}
