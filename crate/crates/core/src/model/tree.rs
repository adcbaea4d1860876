//! Greedy variance-reduction CART.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Branch, FeatureMatrix, FeatureSource, FitParams, ModelError, TraceStep, TreeTrace};

/// Internal nodes send `feature <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: String,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        sample_count: usize,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: TreeNode,
}

impl RegressionTree {
    pub fn predict(&self, x: &dyn FeatureSource) -> Result<f64, ModelError> {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return Ok(*value),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = x
                        .feature(feature)
                        .ok_or_else(|| ModelError::MissingFeature(feature.clone()))?;
                    node = if v <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn explain(&self, x: &dyn FeatureSource) -> Result<TreeTrace, ModelError> {
        let mut node = &self.root;
        let mut steps = Vec::new();
        loop {
            match node {
                TreeNode::Leaf { value, sample_count } => {
                    return Ok(TreeTrace {
                        steps,
                        leaf_value: *value,
                        leaf_samples: *sample_count,
                    })
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = x
                        .feature(feature)
                        .ok_or_else(|| ModelError::MissingFeature(feature.clone()))?;
                    let branch = if v <= *threshold { Branch::Left } else { Branch::Right };
                    steps.push(TraceStep {
                        indicator_id: feature.clone(),
                        threshold: *threshold,
                        branch,
                        value: v,
                    });
                    node = match branch {
                        Branch::Left => left,
                        Branch::Right => right,
                    };
                }
            }
        }
    }
}

/// Fits a single tree on all rows, considering every feature at every node.
pub fn fit_tree(features: &FeatureMatrix, targets: &[f64], params: &FitParams) -> Result<RegressionTree, ModelError> {
    check_inputs(features, targets)?;
    params.validate()?;
    let rows: Vec<usize> = (0..targets.len()).collect();
    Ok(fit_tree_on::<rand::rngs::ThreadRng>(
        features, targets, &rows, params, None,
    ))
}

/// Per-node random feature subset of size `k`, drawn from `rng`.
pub(crate) struct FeatureSubset<'r, R: Rng> {
    pub k: usize,
    pub rng: &'r mut R,
}

pub(crate) fn fit_tree_on<R: Rng>(
    features: &FeatureMatrix,
    targets: &[f64],
    rows: &[usize],
    params: &FitParams,
    subset: Option<FeatureSubset<'_, R>>,
) -> RegressionTree {
    let mut builder = Builder {
        features,
        targets,
        params,
        subset,
    };
    RegressionTree {
        root: builder.grow(rows, 0),
    }
}

pub(crate) fn check_inputs(features: &FeatureMatrix, targets: &[f64]) -> Result<(), ModelError> {
    if targets.is_empty() || features.rows.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if features.rows.len() != targets.len() {
        return Err(ModelError::ShapeMismatch(features.rows.len(), targets.len()));
    }
    let f = features.feature_ids.len();
    if let Some(bad) = features.rows.iter().position(|r| r.len() != f) {
        return Err(ModelError::ShapeMismatch(features.rows[bad].len(), f));
    }
    if features.rows.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    Ok(())
}

/// Order-independent mean: sums the sorted values.
pub(crate) fn canonical_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sum of squared deviations from the mean, summed in sorted order.
fn sse(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = canonical_mean(values);
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Slack under which two impurities count as tied.
pub(crate) fn tie_tolerance(parent_sse: f64) -> f64 {
    1e-12 * parent_sse.max(1.0)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

struct Builder<'a, 'r, R: Rng> {
    features: &'a FeatureMatrix,
    targets: &'a [f64],
    params: &'a FitParams,
    subset: Option<FeatureSubset<'r, R>>,
}

impl<R: Rng> Builder<'_, '_, R> {
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let mut ys: Vec<f64> = rows.iter().map(|&r| self.targets[r]).collect();
        TreeNode::Leaf {
            value: canonical_mean(&mut ys),
            sample_count: rows.len(),
        }
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> TreeNode {
        let first = self.targets[rows[0]];
        let constant = rows.iter().all(|&r| self.targets[r] == first);
        if depth >= self.params.max_depth || constant || rows.len() < 2 * self.params.min_samples_leaf {
            return self.leaf(rows);
        }
        let Some(best) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.features.rows[r][best.feature] <= best.threshold);
        TreeNode::Split {
            feature: self.features.feature_ids[best.feature].clone(),
            threshold: best.threshold,
            left: Box::new(self.grow(&left, depth + 1)),
            right: Box::new(self.grow(&right, depth + 1)),
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let f = self.features.feature_ids.len();
        match &mut self.subset {
            Some(s) if s.k < f => {
                let mut picked = index::sample(s.rng, f, s.k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..f).collect(),
        }
    }

    /// Lowest-impurity split; ties go to the lower feature index, then the
    /// lower threshold. Splits that do not reduce impurity are rejected.
    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let mut ys: Vec<f64> = rows.iter().map(|&r| self.targets[r]).collect();
        let parent = sse(&mut ys);
        let tol = tie_tolerance(parent);
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        for feature in self.candidate_features() {
            let mut pairs: Vec<(f64, f64)> = rows
                .iter()
                .map(|&r| (self.features.rows[r][feature], self.targets[r]))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for cut in 1..pairs.len() {
                let (lo, hi) = (pairs[cut - 1].0, pairs[cut].0);
                if lo == hi || cut < min_leaf || pairs.len() - cut < min_leaf {
                    continue;
                }
                let threshold = lo + (hi - lo) / 2.0;
                let mut left: Vec<f64> = pairs[..cut].iter().map(|p| p.1).collect();
                let mut right: Vec<f64> = pairs[cut..].iter().map(|p| p.1).collect();
                let impurity = sse(&mut left) + sse(&mut right);
                let improves = match &best {
                    None => true,
                    Some(b) => impurity < b.impurity - tol,
                };
                if improves {
                    best = Some(Candidate {
                        feature,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best.filter(|b| b.impurity < parent - tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature(x: &[f64]) -> FeatureMatrix {
        FeatureMatrix {
            feature_ids: vec!["x".into()],
            rows: x.iter().map(|v| vec![*v]).collect(),
        }
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let t = fit_tree(&one_feature(&[1., 2., 3., 4.]), &[3.0; 4], &FitParams::default()).unwrap();
        assert_eq!(
            t.root,
            TreeNode::Leaf {
                value: 3.0,
                sample_count: 4
            }
        );
    }

    #[test]
    fn step_fixture_splits_at_midpoint() {
        let t = fit_tree(
            &one_feature(&[1., 2., 3., 4.]),
            &[0., 0., 10., 10.],
            &FitParams::default(),
        )
        .unwrap();
        let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = &t.root
        else {
            panic!("expected split, got {:?}", t.root);
        };
        assert_eq!((feature.as_str(), *threshold), ("x", 2.5));
        assert_eq!(
            **left,
            TreeNode::Leaf {
                value: 0.0,
                sample_count: 2
            }
        );
        assert_eq!(
            **right,
            TreeNode::Leaf {
                value: 10.0,
                sample_count: 2
            }
        );
    }

    #[test]
    fn depth_zero_predicts_mean() {
        let params = FitParams {
            max_depth: 0,
            ..Default::default()
        };
        let t = fit_tree(&one_feature(&[1., 2., 3.]), &[1., 2., 6.], &params).unwrap();
        assert_eq!(
            t.root,
            TreeNode::Leaf {
                value: 3.0,
                sample_count: 3
            }
        );
    }

    #[test]
    fn boundary_goes_left() {
        let t = fit_tree(
            &one_feature(&[1., 2., 3., 4.]),
            &[0., 0., 10., 10.],
            &FitParams::default(),
        )
        .unwrap();
        let at = |v: f64| {
            t.predict(
                &[("x".to_string(), v)]
                    .into_iter()
                    .collect::<std::collections::BTreeMap<_, _>>(),
            )
        };
        assert_eq!(at(1.7).unwrap(), 0.0);
        assert_eq!(at(2.5).unwrap(), 0.0);
        assert_eq!(at(3.1).unwrap(), 10.0);
        let empty = std::collections::BTreeMap::<String, f64>::new();
        assert!(matches!(t.predict(&empty), Err(ModelError::MissingFeature(f)) if f == "x"));
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let params = FitParams {
            min_samples_leaf: 2,
            max_depth: 5,
            ..Default::default()
        };
        // the best unconstrained split would isolate the single 10
        let t = fit_tree(&one_feature(&[1., 2., 3., 4., 5.]), &[0., 0., 0., 1., 10.], &params).unwrap();
        fn check(n: &TreeNode) {
            match n {
                TreeNode::Leaf { sample_count, .. } => assert!(*sample_count >= 2),
                TreeNode::Split { left, right, .. } => {
                    check(left);
                    check(right);
                }
            }
        }
        check(&t.root);
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(
            fit_tree(&one_feature(&[]), &[], &FitParams::default()),
            Err(ModelError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn zero_gain_split_is_not_taken() {
        // every split leaves both sides with the same spread
        let t = fit_tree(
            &one_feature(&[1., 2., 3., 4.]),
            &[0., 1., 0., 1.],
            &FitParams::default(),
        )
        .unwrap();
        assert!(matches!(t.root, TreeNode::Leaf { .. }));
    }
}
