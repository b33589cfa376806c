//! Random-forest classifier for a binary response, with mean decrease in
//! Gini impurity as the importance measure.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::ModelFormula;
use crate::rng;
use crate::tabular::Table;

/// Gini impurity `1 − Σ p_k²` of a vector of class counts.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter("gini of an empty node".into()));
    }
    let t = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

fn gini2(c0: usize, c1: usize) -> f64 {
    let t = (c0 + c1) as f64;
    let (p0, p1) = (c0 as f64 / t, c1 as f64 / t);
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ⌊√p⌋.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Draw each tree's sample with replacement; otherwise use every row once.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_leaf: 1,
            max_depth: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `value <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gini: f64,
        n: usize,
    },
    Leaf {
        counts: [usize; 2],
    },
}

impl Node {
    fn size_and_gini(&self) -> (usize, f64) {
        match self {
            Node::Split { gini, n, .. } => (*n, *gini),
            Node::Leaf { counts } => (counts[0] + counts[1], gini2(counts[0], counts[1])),
        }
    }
}

/// Arena-allocated tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("tree without nodes".into()));
        }
        for node in &nodes {
            if let Node::Split { left, right, .. } = node {
                if *left >= nodes.len() || *right >= nodes.len() {
                    return Err(Error::InvalidParameter("child index out of range".into()));
                }
            }
        }
        Ok(Tree { nodes })
    }

    /// Single-leaf tree; votes for the majority class of `counts`.
    pub fn leaf(counts: [usize; 2]) -> Self {
        Tree {
            nodes: vec![Node::Leaf { counts }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn leaf_for(&self, row: &[f64]) -> &[usize; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority vote of the leaf; an evenly split leaf votes 0.
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let c = self.leaf_for(row);
        u8::from(c[1] > c[0])
    }

    /// Sample-weighted Gini decrease per feature, scaled by the root size.
    pub fn gini_decrease(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        let (root_n, _) = self.nodes[0].size_and_gini();
        for node in &self.nodes {
            if let Node::Split {
                feature,
                left,
                right,
                gini,
                n,
                ..
            } = node
            {
                let (nl, gl) = self.nodes[*left].size_and_gini();
                let (nr, gr) = self.nodes[*right].size_and_gini();
                let dec = *n as f64 * gini - nl as f64 * gl - nr as f64 * gr;
                out[*feature] += dec.max(0.0) / root_n as f64;
            }
        }
        out
    }

    pub fn split_features(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split {
                    feature, threshold, ..
                } => Some((*feature, *threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// Row indices each tree was grown on.
    pub samples: Vec<Vec<usize>>,
    pub params: ForestParams,
    pub seed: u64,
    pub features: Vec<String>,
    pub response: String,
}

impl ForestModel {
    /// Assemble a model from prebuilt trees.
    pub fn from_trees(trees: Vec<Tree>, features: Vec<String>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        Ok(ForestModel {
            samples: vec![Vec::new(); trees.len()],
            params: ForestParams {
                n_trees: trees.len(),
                ..ForestParams::default()
            },
            trees,
            seed: 0,
            features,
            response: String::new(),
        })
    }
}

struct Data {
    /// Column-major features.
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
}

impl Data {
    fn from_table(t: &Table, features: &[String], response: Option<&str>) -> Result<Self> {
        let x = features
            .iter()
            .map(|f| t.complete(f))
            .collect::<Result<Vec<_>>>()?;
        let y = match response {
            Some(r) => t
                .complete(r)?
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    if v == 0.0 || v == 1.0 {
                        Ok(v as u8)
                    } else {
                        Err(Error::NonBinary { index: i, value: v })
                    }
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(Data { x, y })
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|c| c[i]).collect()
    }
}

pub fn fit_forest(t: &Table, f: &ModelFormula, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    fit_forest_inner(t, f, params, seed, None)
}

/// Grow a forest on caller-supplied per-tree row samples.
pub fn fit_forest_with_samples(
    t: &Table,
    f: &ModelFormula,
    params: &ForestParams,
    seed: u64,
    samples: Vec<Vec<usize>>,
) -> Result<ForestModel> {
    if samples.len() != params.n_trees {
        return Err(Error::LengthMismatch {
            left: params.n_trees,
            right: samples.len(),
        });
    }
    if samples.iter().flatten().any(|&i| i >= t.n_rows()) {
        return Err(Error::InvalidParameter("sample index out of range".into()));
    }
    fit_forest_inner(t, f, params, seed, Some(samples))
}

fn fit_forest_inner(
    t: &Table,
    f: &ModelFormula,
    params: &ForestParams,
    seed: u64,
    samples: Option<Vec<Vec<usize>>>,
) -> Result<ForestModel> {
    f.validate()?;
    let p = f.predictors.len();
    if params.n_trees < 1 {
        return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
    }
    if p == 0 {
        return Err(Error::InvalidParameter("forest needs at least one feature".into()));
    }
    let mtry = params.resolved_mtry(p);
    if mtry < 1 || mtry > p {
        return Err(Error::InvalidParameter(format!("mtry {mtry} not in 1..={p}")));
    }
    if params.min_leaf < 1 {
        return Err(Error::InvalidParameter("min_leaf must be at least 1".into()));
    }
    let data = Data::from_table(t, &f.predictors, Some(&f.response))?;
    let n = data.y.len();
    let ones = data.y.iter().filter(|v| **v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass(f.response.clone()));
    }

    let grown: Vec<(Tree, Vec<usize>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let sample = match &samples {
                Some(s) => s[b].clone(),
                None if params.bootstrap => (0..n).map(|_| rng.random_range(0..n)).collect(),
                None => (0..n).collect(),
            };
            let tree = grow(&data, &sample, mtry, params, &mut rng);
            (tree, sample)
        })
        .collect();
    let (trees, samples) = grown.into_iter().unzip();
    Ok(ForestModel {
        trees,
        samples,
        params: params.clone(),
        seed,
        features: f.predictors.clone(),
        response: f.response.clone(),
    })
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn grow(data: &Data, sample: &[usize], mtry: usize, params: &ForestParams, rng: &mut rng::StdRng) -> Tree {
    let p = data.x.len();
    let mut nodes: Vec<Node> = Vec::new();
    // (slot, rows, depth)
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, sample.to_vec(), 0)];
    nodes.push(Node::Leaf { counts: [0, 0] });

    while let Some((slot, rows, depth)) = stack.pop() {
        let ones = rows.iter().filter(|&&r| data.y[r] == 1).count();
        let counts = [rows.len() - ones, ones];
        let n = rows.len();
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * params.min_leaf {
            nodes[slot] = Node::Leaf { counts };
            continue;
        }
        let parent_gini = gini2(counts[0], counts[1]);
        let mut features: Vec<usize> = index::sample(rng, p, mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
        for &feat in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (data.x[feat][r], data.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for i in 0..n - 1 {
                left[pairs[i].1 as usize] += 1;
                let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                if nl < params.min_leaf || nr < params.min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let weighted = nl as f64 * gini2(left[0], left[1]) + nr as f64 * gini2(right[0], right[1]);
                let gain = n as f64 * parent_gini - weighted;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain + 1e-12) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: feat,
                        threshold,
                        gain,
                    });
                }
            }
        }

        let Some(best) = best else {
            nodes[slot] = Node::Leaf { counts };
            continue;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| data.x[best.feature][r] <= best.threshold);
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { counts: [0, 0] });
        nodes.push(Node::Leaf { counts: [0, 0] });
        nodes[slot] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            gini: parent_gini,
            n,
        };
        stack.push((right, right_rows, depth + 1));
        stack.push((left, left_rows, depth + 1));
    }
    Tree { nodes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestPrediction {
    pub classes: Vec<f64>,
    /// Fraction of trees voting for class 1.
    pub probabilities: Vec<f64>,
}

pub fn predict_forest(model: &ForestModel, t: &Table) -> Result<ForestPrediction> {
    let data = Data::from_table(t, &model.features, None)?;
    let m = model.trees.len() as f64;
    let probabilities: Vec<f64> = (0..t.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let votes: usize = model.trees.iter().map(|tr| tr.predict_row(&row) as usize).sum();
            votes as f64 / m
        })
        .collect();
    let classes = probabilities
        .iter()
        .map(|p| if *p > 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(ForestPrediction {
        classes,
        probabilities,
    })
}

/// Out-of-bag vote fraction for each training row; `None` if every tree saw the row.
pub fn oob_probabilities(model: &ForestModel, train: &Table) -> Result<Vec<Option<f64>>> {
    let data = Data::from_table(train, &model.features, None)?;
    let n = train.n_rows();
    let mut in_bag = vec![vec![false; n]; model.trees.len()];
    for (b, s) in model.samples.iter().enumerate() {
        for &i in s {
            in_bag[b][i] = true;
        }
    }
    Ok((0..n)
        .map(|i| {
            let row = data.row(i);
            let (mut votes, mut count) = (0usize, 0usize);
            for (b, tree) in model.trees.iter().enumerate() {
                if !in_bag[b][i] {
                    votes += tree.predict_row(&row) as usize;
                    count += 1;
                }
            }
            (count > 0).then(|| votes as f64 / count as f64)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.feature == feature)
            .map(|e| e.importance)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("feature,importance\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.feature, e.importance));
        }
        out
    }
}

/// Mean decrease in Gini impurity, averaged over trees, sorted descending.
pub fn importance(model: &ForestModel) -> ImportanceReport {
    let p = model.features.len();
    let mut totals = vec![0.0; p];
    for tree in &model.trees {
        for (acc, d) in totals.iter_mut().zip(tree.gini_decrease(p)) {
            *acc += d;
        }
    }
    let m = model.trees.len() as f64;
    let mut entries: Vec<ImportanceEntry> = model
        .features
        .iter()
        .zip(totals)
        .map(|(f, total)| ImportanceEntry {
            feature: f.clone(),
            importance: total / m,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    ImportanceReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::evaluate;
    use rand_distr::{Distribution, StandardNormal};

    fn stub(vote: u8) -> Tree {
        Tree::leaf(if vote == 1 { [0, 3] } else { [3, 0] })
    }

    fn one_feature_table(n: usize) -> Table {
        Table::from_numeric(vec![("x", vec![0.0; n])]).unwrap()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[10, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[5, 5]).unwrap(), 0.5);
        assert_eq!(gini(&[1, 3]).unwrap(), 0.375);
        assert!(gini(&[0, 0]).is_err());
    }

    #[test]
    fn vote_fractions_on_stub_trees() {
        let t = one_feature_table(2);
        let unanimous = ForestModel::from_trees(vec![stub(1); 4], vec!["x".into()]).unwrap();
        let p = predict_forest(&unanimous, &t).unwrap();
        assert_eq!(p.probabilities, vec![1.0, 1.0]);
        assert_eq!(p.classes, vec![1.0, 1.0]);

        let three = ForestModel::from_trees(vec![stub(1), stub(1), stub(0)], vec!["x".into()]).unwrap();
        let p = predict_forest(&three, &t).unwrap();
        assert_eq!(p.probabilities[0], 2.0 / 3.0);
        assert_eq!(p.classes[0], 1.0);

        let tie = ForestModel::from_trees(vec![stub(1), stub(0)], vec!["x".into()]).unwrap();
        let p = predict_forest(&tie, &t).unwrap();
        assert_eq!(p.probabilities[0], 0.5);
        assert_eq!(p.classes[0], 0.0);
    }

    #[test]
    fn unused_feature_has_zero_importance() {
        let tree = Tree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
                gini: 0.5,
                n: 4,
            },
            Node::Leaf { counts: [2, 0] },
            Node::Leaf { counts: [0, 2] },
        ])
        .unwrap();
        let model = ForestModel::from_trees(vec![tree], vec!["a".into(), "b".into()]).unwrap();
        let rep = importance(&model);
        assert_eq!(rep.get("b"), Some(0.0));
        assert_eq!(rep.get("a"), Some(0.5));
        assert_eq!(rep.entries[0].feature, "a");
    }

    fn separable(n: usize, seed: u64) -> Table {
        let mut r = rng::seeded(seed);
        let x1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let x2: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let y = x1.iter().zip(&x2).map(|(a, b)| f64::from(a + b > 0.0)).collect();
        Table::from_numeric(vec![("x1", x1), ("x2", x2), ("y", y)]).unwrap()
    }

    #[test]
    fn parameter_errors() {
        let t = separable(50, 1);
        let f = ModelFormula::new("y", &["x1", "x2"]);
        let bad = ForestParams {
            n_trees: 0,
            ..ForestParams::default()
        };
        assert!(matches!(fit_forest(&t, &f, &bad, 1), Err(Error::InvalidParameter(_))));
        let bad = ForestParams {
            mtry: Some(3),
            ..ForestParams::default()
        };
        assert!(matches!(fit_forest(&t, &f, &bad, 1), Err(Error::InvalidParameter(_))));
        let ones = t.with_column(crate::tabular::Column::numeric("y", vec![1.0; 50])).unwrap();
        assert!(matches!(
            fit_forest(&ones, &f, &ForestParams::default(), 1),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn single_tree_interpolates_separable_data() {
        let t = separable(200, 4);
        let f = ModelFormula::new("y", &["x1", "x2"]);
        let params = ForestParams {
            n_trees: 1,
            mtry: Some(2),
            bootstrap: false,
            ..ForestParams::default()
        };
        let model = fit_forest(&t, &f, &params, 9).unwrap();
        let pred = predict_forest(&model, &t).unwrap();
        let acc = evaluate(&pred.classes, &t.complete("y").unwrap()).unwrap().accuracy;
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn same_seed_same_splits() {
        let t = separable(150, 2);
        let f = ModelFormula::new("y", &["x1", "x2"]);
        let params = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let a = fit_forest(&t, &f, &params, 77).unwrap();
        let b = fit_forest(&t, &f, &params, 77).unwrap();
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            assert_eq!(ta.split_features(), tb.split_features());
        }
        assert_eq!(a, b);
    }

    fn check_tree(tree: &Tree, min_leaf: usize) {
        for node in tree.nodes() {
            match node {
                Node::Split { left, right, gini, n, .. } => {
                    let (nl, gl) = tree.nodes()[*left].size_and_gini();
                    let (nr, gr) = tree.nodes()[*right].size_and_gini();
                    assert_eq!(nl + nr, *n);
                    assert!(nl as f64 * gl + nr as f64 * gr < *n as f64 * gini);
                }
                Node::Leaf { counts } => assert!(counts[0] + counts[1] >= min_leaf),
            }
        }
    }

    #[test]
    fn splits_partition_rows_and_reduce_impurity() {
        let t = separable(300, 6);
        let f = ModelFormula::new("y", &["x1", "x2"]);
        let params = ForestParams {
            n_trees: 10,
            min_leaf: 3,
            ..ForestParams::default()
        };
        let model = fit_forest(&t, &f, &params, 1).unwrap();
        for (tree, sample) in model.trees.iter().zip(&model.samples) {
            assert_eq!(sample.len(), 300);
            check_tree(tree, 3);
        }
    }

    #[test]
    fn importances_are_non_negative() {
        let t = separable(200, 8);
        let f = ModelFormula::new("y", &["x1", "x2"]);
        let params = ForestParams {
            n_trees: 30,
            ..ForestParams::default()
        };
        let model = fit_forest(&t, &f, &params, 3).unwrap();
        let rep = importance(&model);
        assert!(rep.entries.iter().all(|e| e.importance >= 0.0));
        assert!(rep.entries.windows(2).all(|w| w[0].importance >= w[1].importance));
    }

    #[test]
    fn max_depth_caps_growth() {
        let t = separable(200, 8);
        let f = ModelFormula::new("y", &["x1", "x2"]);
        let params = ForestParams {
            n_trees: 1,
            max_depth: Some(1),
            ..ForestParams::default()
        };
        let model = fit_forest(&t, &f, &params, 3).unwrap();
        assert!(model.trees[0].nodes().len() <= 3);
    }
}
