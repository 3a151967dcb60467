//! Random forest classifier over the nine case features.
//!
//! Tree `t` draws all of its randomness (bootstrap sample, feature order at
//! each node) from a ChaCha8 stream seeded with `mix(seed, t)`, so a model
//! depends only on its parameters and the training rows, never on the
//! thread count.

mod persist;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::CaseRecord;
use crate::features::{FeatureVector, FEATURE_COUNT};
use crate::grade::Grade;
use crate::seed::mix;

pub use persist::{load_model, load_model_file, save_model, save_model_file};
pub use tree::{best_split, majority, Sample, Split, TreeNode, CLASS_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features searched together at each node.
    pub mtry: usize,
    pub seed: u64,
    /// Train each tree on a bootstrap resample; when false every tree sees
    /// every row once.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100_000, max_depth: 5, min_samples_leaf: 2, mtry: 3, seed: 0, bootstrap: true }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(ForestError::InvalidParams("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams("min_samples_leaf must be at least 1".into()));
        }
        if self.mtry == 0 || self.mtry > FEATURE_COUNT {
            return Err(ForestError::InvalidParams(format!("mtry must be in 1..={FEATURE_COUNT}")));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least 2 training rows, got {0}")]
    InsufficientData(usize),
    #[error("all training rows have grade {0}")]
    SingleClass(Grade),
    #[error("case {0} has no grade")]
    UnlabeledRecord(String),
    #[error("training row {0} has a non-finite feature")]
    NonFiniteFeature(usize),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    params: ForestParams,
    trees: Vec<TreeNode>,
}

impl ForestModel {
    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub(crate) fn from_parts(params: ForestParams, trees: Vec<TreeNode>) -> Self {
        Self { params, trees }
    }

    /// Per-grade vote counts for one case.
    pub fn votes(&self, x: &Sample) -> [u64; CLASS_COUNT] {
        let mut votes = [0u64; CLASS_COUNT];
        for t in &self.trees {
            votes[t.vote(x)] += 1;
        }
        votes
    }

    /// Majority vote; ties go to the lowest grade.
    pub fn predict(&self, features: &FeatureVector) -> Grade {
        self.predict_sample(&features.to_array())
    }

    pub fn predict_sample(&self, x: &Sample) -> Grade {
        Grade::from_index(majority(&self.votes(x))).expect("class index below 4")
    }

    /// Fraction of trees voting for each grade.
    pub fn predict_distribution(&self, features: &FeatureVector) -> [f64; CLASS_COUNT] {
        let votes = self.votes(&features.to_array());
        let n = self.trees.len() as f64;
        votes.map(|v| v as f64 / n)
    }

    /// Predictions for many cases, computed in parallel, in input order.
    pub fn predict_many(&self, cases: &[FeatureVector]) -> Vec<Grade> {
        cases.par_iter().map(|f| self.predict(f)).collect()
    }
}

/// Trains on labelled records. Rows are ordered by case id first, so the
/// model does not depend on input order.
pub fn train(records: &[CaseRecord], params: &ForestParams) -> Result<ForestModel, ForestError> {
    params.validate()?;
    let mut rows: Vec<&CaseRecord> = records.iter().collect();
    rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in rows {
        let grade = r.grade.ok_or_else(|| ForestError::UnlabeledRecord(r.case_id.clone()))?;
        x.push(r.features.to_array());
        y.push(grade);
    }
    train_matrix(&x, &y, params)
}

/// Trains on a feature matrix in the given row order.
pub fn train_matrix(x: &[Sample], y: &[Grade], params: &ForestParams) -> Result<ForestModel, ForestError> {
    params.validate()?;
    assert_eq!(x.len(), y.len(), "one label per row");
    let n = x.len();
    if n < 2 {
        return Err(ForestError::InsufficientData(n));
    }
    if let Some(i) = x.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
        return Err(ForestError::NonFiniteFeature(i));
    }
    if y.iter().all(|&g| g == y[0]) {
        return Err(ForestError::SingleClass(y[0]));
    }
    let labels: Vec<usize> = y.iter().map(|g| g.index()).collect();
    let grow =
        tree::GrowParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf, mtry: params.mtry };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, t as u64));
            let samples: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
            tree::grow(x, &labels, samples, &grow, &mut rng)
        })
        .collect();
    Ok(ForestModel { params: *params, trees })
}
