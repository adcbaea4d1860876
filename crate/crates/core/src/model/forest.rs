//! Bagged regression trees with per-node feature subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{check_inputs, fit_tree_on, FeatureSubset, RegressionTree};
use super::{FeatureMatrix, FeatureSource, FitParams, ForestTrace, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    pub seed: u64,
    pub feature_fraction: f64,
    pub n_trees: usize,
    pub bootstrap: bool,
}

impl RandomForest {
    /// Mean of the tree predictions, summed in tree order.
    pub fn predict(&self, x: &dyn FeatureSource) -> Result<f64, ModelError> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(x)?;
        }
        Ok(sum / self.trees.len() as f64)
    }

    pub fn explain(&self, x: &dyn FeatureSource) -> Result<ForestTrace, ModelError> {
        let trees = self.trees.iter().map(|t| t.explain(x)).collect::<Result<Vec<_>, _>>()?;
        let prediction = ForestTrace::aggregate(&trees);
        Ok(ForestTrace { trees, prediction })
    }
}

/// Stream for tree `index`; depends only on `(seed, index)`.
fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn features_per_node(fraction: f64, n_features: usize) -> usize {
    ((fraction * n_features as f64).ceil() as usize).clamp(1, n_features.max(1))
}

pub fn fit_forest(features: &FeatureMatrix, targets: &[f64], params: &FitParams) -> Result<RandomForest, ModelError> {
    check_inputs(features, targets)?;
    params.validate()?;
    let n = targets.len();
    let k = features_per_node(params.feature_fraction, features.feature_ids.len());
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on(
                features,
                targets,
                &rows,
                params,
                Some(FeatureSubset { k, rng: &mut rng }),
            )
        })
        .collect();
    Ok(RandomForest {
        trees,
        seed: params.seed,
        feature_fraction: params.feature_fraction,
        n_trees: params.n_trees,
        bootstrap: params.bootstrap,
    })
}
