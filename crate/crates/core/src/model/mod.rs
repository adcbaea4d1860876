//! White-box rating predictors.
//!
//! A [`Learner`] turns a feature matrix and targets into a [`TrainedModel`].
//! Learners are registered by name in a [`LearnerRegistry`] (`tree`,
//! `forest`) and picked from config or the command line. Every prediction
//! can be explained as the decision path(s) that produced it.

mod forest;
mod tree;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{features_per_node, fit_forest, RandomForest};
pub use tree::{fit_tree, RegressionTree, TreeNode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("non-finite feature or target value")]
    NonFinite,
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("invalid fit parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} rows, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("trace does not match model: {0}")]
    TraceMismatch(String),
}

/// Dense training matrix; rows are complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn row_source<'a>(&'a self, row: &'a [f64]) -> RowSource<'a> {
        RowSource {
            ids: &self.feature_ids,
            values: row,
        }
    }

    pub fn without_row(&self, skip: usize) -> FeatureMatrix {
        FeatureMatrix {
            feature_ids: self.feature_ids.clone(),
            rows: self
                .rows
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, r)| r.clone())
                .collect(),
        }
    }
}

/// Named feature lookup used at prediction time.
pub trait FeatureSource {
    fn feature(&self, id: &str) -> Option<f64>;
}

impl FeatureSource for BTreeMap<String, f64> {
    fn feature(&self, id: &str) -> Option<f64> {
        self.get(id).copied()
    }
}

impl FeatureSource for HashMap<String, f64> {
    fn feature(&self, id: &str) -> Option<f64> {
        self.get(id).copied()
    }
}

pub struct RowSource<'a> {
    ids: &'a [String],
    values: &'a [f64],
}

impl FeatureSource for RowSource<'_> {
    fn feature(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|x| x == id).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_trees: usize,
    pub feature_fraction: f64,
    pub seed: u64,
    /// Off only for testing: every tree then sees all rows once.
    pub bootstrap: bool,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_samples_leaf: 2,
            n_trees: 50,
            feature_fraction: 1.0 / 3.0,
            seed: 42,
            bootstrap: true,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1");
        }
        if self.n_trees < 1 {
            return bad("n_trees must be >= 1");
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return bad("feature_fraction must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub indicator_id: String,
    pub threshold: f64,
    pub branch: Branch,
    pub value: f64,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (op, dir) = match self.branch {
            Branch::Left => ("≤", "left"),
            Branch::Right => (">", "right"),
        };
        write!(
            f,
            "{} = {} {op} {} → {dir}",
            self.indicator_id, self.value, self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTrace {
    pub steps: Vec<TraceStep>,
    pub leaf_value: f64,
    pub leaf_samples: usize,
}

impl TreeTrace {
    /// Walks `tree` following the recorded feature values, checking each
    /// node against the trace; returns the leaf reached.
    pub fn replay(&self, tree: &RegressionTree) -> Result<f64, ModelError> {
        let mut node = &tree.root;
        let mut steps = self.steps.iter();
        loop {
            match node {
                TreeNode::Leaf { value, .. } => {
                    if steps.next().is_some() {
                        return Err(ModelError::TraceMismatch("trace longer than path".into()));
                    }
                    return Ok(*value);
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let step = steps
                        .next()
                        .ok_or_else(|| ModelError::TraceMismatch("trace shorter than path".into()))?;
                    if &step.indicator_id != feature || step.threshold != *threshold {
                        return Err(ModelError::TraceMismatch(format!(
                            "expected split on {feature} at {threshold}, trace has {step}"
                        )));
                    }
                    let branch = if step.value <= *threshold {
                        Branch::Left
                    } else {
                        Branch::Right
                    };
                    if branch != step.branch {
                        return Err(ModelError::TraceMismatch(format!("wrong branch in {step}")));
                    }
                    node = match branch {
                        Branch::Left => left,
                        Branch::Right => right,
                    };
                }
            }
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out.push_str(&format!("leaf: {} (n = {})\n", self.leaf_value, self.leaf_samples));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTrace {
    pub trees: Vec<TreeTrace>,
    pub prediction: f64,
}

impl ForestTrace {
    pub(crate) fn aggregate(trees: &[TreeTrace]) -> f64 {
        let mut sum = 0.0;
        for t in trees {
            sum += t.leaf_value;
        }
        sum / trees.len() as f64
    }

    pub fn replay(&self, forest: &RandomForest) -> Result<f64, ModelError> {
        if self.trees.len() != forest.trees.len() {
            return Err(ModelError::TraceMismatch(format!(
                "{} traces for {} trees",
                self.trees.len(),
                forest.trees.len()
            )));
        }
        let mut sum = 0.0;
        for (trace, tree) in self.trees.iter().zip(&forest.trees) {
            sum += trace.replay(tree)?;
        }
        Ok(sum / forest.trees.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Explanation {
    Tree(TreeTrace),
    Forest(ForestTrace),
}

impl Explanation {
    pub fn prediction(&self) -> f64 {
        match self {
            Explanation::Tree(t) => t.leaf_value,
            Explanation::Forest(f) => f.prediction,
        }
    }

    pub fn replay(&self, model: &TrainedModel) -> Result<f64, ModelError> {
        match (self, model) {
            (Explanation::Tree(t), TrainedModel::Tree(m)) => t.replay(m),
            (Explanation::Forest(f), TrainedModel::Forest(m)) => f.replay(m),
            _ => Err(ModelError::TraceMismatch("trace kind differs from model kind".into())),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Explanation::Tree(t) => t.render(),
            Explanation::Forest(f) => {
                let mut out = String::new();
                for (i, t) in f.trees.iter().enumerate() {
                    out.push_str(&format!("tree {i}:\n"));
                    for line in t.render().lines() {
                        out.push_str("  ");
                        out.push_str(line);
                        out.push('\n');
                    }
                }
                out.push_str(&format!("mean of {} trees: {}\n", f.trees.len(), f.prediction));
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Tree(RegressionTree),
    Forest(RandomForest),
}

impl TrainedModel {
    pub fn predict(&self, x: &dyn FeatureSource) -> Result<f64, ModelError> {
        match self {
            TrainedModel::Tree(t) => t.predict(x),
            TrainedModel::Forest(f) => f.predict(x),
        }
    }

    pub fn explain(&self, x: &dyn FeatureSource) -> Result<Explanation, ModelError> {
        match self {
            TrainedModel::Tree(t) => t.explain(x).map(Explanation::Tree),
            TrainedModel::Forest(f) => f.explain(x).map(Explanation::Forest),
        }
    }
}

/// A model-fitting strategy.
pub trait Learner: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, features: &FeatureMatrix, targets: &[f64], params: &FitParams) -> Result<TrainedModel, ModelError>;
}

pub struct TreeLearner;

impl Learner for TreeLearner {
    fn name(&self) -> &'static str {
        "tree"
    }

    fn fit(&self, features: &FeatureMatrix, targets: &[f64], params: &FitParams) -> Result<TrainedModel, ModelError> {
        fit_tree(features, targets, params).map(TrainedModel::Tree)
    }
}

pub struct ForestLearner;

impl Learner for ForestLearner {
    fn name(&self) -> &'static str {
        "forest"
    }

    fn fit(&self, features: &FeatureMatrix, targets: &[f64], params: &FitParams) -> Result<TrainedModel, ModelError> {
        fit_forest(features, targets, params).map(TrainedModel::Forest)
    }
}

pub struct LearnerRegistry {
    learners: BTreeMap<&'static str, Box<dyn Learner>>,
}

impl LearnerRegistry {
    pub fn empty() -> Self {
        Self {
            learners: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, learner: Box<dyn Learner>) {
        self.learners.insert(learner.name(), learner);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Learner, ModelError> {
        self.learners
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| ModelError::UnknownKind(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.learners.keys().copied().collect()
    }
}

impl Default for LearnerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(TreeLearner));
        r.register(Box::new(ForestLearner));
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub row: usize,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub mae: f64,
    pub rmse: f64,
    pub folds: Vec<FoldPrediction>,
}

/// Leave-one-out: each row is predicted by a model fit on all other rows.
pub fn evaluate_loo(
    features: &FeatureMatrix,
    targets: &[f64],
    params: &FitParams,
    learner: &dyn Learner,
) -> Result<LooReport, ModelError> {
    let n = targets.len();
    if n < 2 {
        return Err(ModelError::InsufficientSamples { needed: 2, got: n });
    }
    if features.rows.len() != n {
        return Err(ModelError::ShapeMismatch(features.rows.len(), n));
    }
    let mut folds = Vec::with_capacity(n);
    for held in 0..n {
        let train_x = features.without_row(held);
        let train_y: Vec<f64> = targets
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, y)| *y)
            .collect();
        let model = learner.fit(&train_x, &train_y, params)?;
        let predicted = model.predict(&features.row_source(&features.rows[held]))?;
        folds.push(FoldPrediction {
            row: held,
            actual: targets[held],
            predicted,
        });
    }
    let abs: f64 = folds.iter().map(|f| (f.actual - f.predicted).abs()).sum();
    let sq: f64 = folds.iter().map(|f| (f.actual - f.predicted).powi(2)).sum();
    Ok(LooReport {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> (FeatureMatrix, Vec<f64>) {
        (
            FeatureMatrix {
                feature_ids: vec!["polite_expressions".into()],
                rows: vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            },
            vec![0.0, 0.0, 10.0, 10.0],
        )
    }

    fn point(v: f64) -> BTreeMap<String, f64> {
        [("polite_expressions".to_string(), v)].into_iter().collect()
    }

    #[test]
    fn explain_step_tree() {
        let (x, y) = step();
        let m = TreeLearner.fit(&x, &y, &FitParams::default()).unwrap();
        let Explanation::Tree(t) = m.explain(&point(3.1)).unwrap() else {
            panic!()
        };
        assert_eq!(
            t.steps,
            vec![TraceStep {
                indicator_id: "polite_expressions".into(),
                threshold: 2.5,
                branch: Branch::Right,
                value: 3.1
            }]
        );
        assert_eq!(t.leaf_value, 10.0);
        let left = m.explain(&point(2.0)).unwrap();
        assert!(left.render().starts_with("polite_expressions = 2 ≤ 2.5 → left\n"));
    }

    #[test]
    fn explain_single_leaf() {
        let (x, _) = step();
        let m = TreeLearner.fit(&x, &[3.0; 4], &FitParams::default()).unwrap();
        let e = m.explain(&BTreeMap::new()).unwrap();
        let Explanation::Tree(t) = &e else { panic!() };
        assert!(t.steps.is_empty());
        assert_eq!(e.prediction(), 3.0);
        assert_eq!(e.replay(&m).unwrap(), 3.0);
    }

    #[test]
    fn forest_explanation_has_one_trace_per_tree() {
        let (x, y) = step();
        let params = FitParams {
            n_trees: 2,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let m = ForestLearner.fit(&x, &y, &params).unwrap();
        let e = m.explain(&point(3.0)).unwrap();
        let Explanation::Forest(f) = &e else { panic!() };
        assert_eq!(f.trees.len(), 2);
        assert_eq!(f.prediction, (f.trees[0].leaf_value + f.trees[1].leaf_value) / 2.0);
        assert_eq!(e.prediction(), m.predict(&point(3.0)).unwrap());
        assert_eq!(e.replay(&m).unwrap(), e.prediction());
    }

    #[test]
    fn tampered_trace_is_rejected() {
        let (x, y) = step();
        let m = TreeLearner.fit(&x, &y, &FitParams::default()).unwrap();
        let mut e = m.explain(&point(3.1)).unwrap();
        if let Explanation::Tree(t) = &mut e {
            t.steps[0].branch = Branch::Left;
        }
        assert!(matches!(e.replay(&m), Err(ModelError::TraceMismatch(_))));
    }

    #[test]
    fn loo_three_rows_depth_zero() {
        let x = FeatureMatrix {
            feature_ids: vec!["f".into()],
            rows: vec![vec![0.0], vec![1.0], vec![2.0]],
        };
        let params = FitParams {
            max_depth: 0,
            ..Default::default()
        };
        let r = evaluate_loo(&x, &[1.0, 2.0, 6.0], &params, &TreeLearner).unwrap();
        // held-out predictions 4, 3.5, 1.5 -> errors 3, 1.5, 4.5
        let preds: Vec<f64> = r.folds.iter().map(|f| f.predicted).collect();
        assert_eq!(preds, vec![4.0, 3.5, 1.5]);
        assert!((r.mae - 3.0).abs() < 1e-15);
        assert!((r.rmse - 10.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn loo_constant_and_small() {
        let (x, _) = step();
        let r = evaluate_loo(&x, &[2.0; 4], &FitParams::default(), &ForestLearner).unwrap();
        assert_eq!((r.mae, r.rmse), (0.0, 0.0));
        let one = FeatureMatrix {
            feature_ids: vec!["f".into()],
            rows: vec![vec![1.0]],
        };
        assert!(matches!(
            evaluate_loo(&one, &[1.0], &FitParams::default(), &TreeLearner),
            Err(ModelError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn registry_by_name() {
        let r = LearnerRegistry::default();
        assert_eq!(r.names(), vec!["forest", "tree"]);
        assert_eq!(r.get("tree").unwrap().name(), "tree");
        assert!(matches!(r.get("gbm"), Err(ModelError::UnknownKind(_))));
    }

    #[test]
    fn model_json_round_trip() {
        let (x, y) = step();
        for kind in ["tree", "forest"] {
            let m = LearnerRegistry::default()
                .get(kind)
                .unwrap()
                .fit(&x, &y, &FitParams::default())
                .unwrap();
            let json = serde_json::to_string(&m).unwrap();
            let back: TrainedModel = serde_json::from_str(&json).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn params_validation() {
        assert!(FitParams::default().validate().is_ok());
        for bad in [
            FitParams {
                min_samples_leaf: 0,
                ..Default::default()
            },
            FitParams {
                feature_fraction: 0.0,
                ..Default::default()
            },
            FitParams {
                n_trees: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
