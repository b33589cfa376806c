//! Honest causal forest for conditional average treatment effects.
//!
//! Each tree draws a subsample without replacement and splits it in two:
//! one half chooses the splits, the other half supplies the treated and
//! control outcome means stored in the leaves. The per-tree effect at `x`
//! is the difference of those means in the leaf containing `x`; the forest
//! averages over trees whose leaf holds both arms.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{mean, median, normal_upper_p};
use crate::tabular::Table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalForestParams {
    pub n_trees: usize,
    /// Share of each subsample used to choose splits; the rest estimates leaf effects.
    pub honesty_fraction: f64,
    pub mtry: Option<usize>,
    /// Minimum treated and minimum control units per child on the split half.
    pub min_leaf: usize,
    /// Minimum treated and minimum control units per leaf on the estimation half.
    pub min_leaf_estimation: usize,
    pub subsample_fraction: f64,
    pub max_depth: Option<usize>,
    /// Treated iff value > threshold. `None`: 0.5 for 0/1 data, else the sample median.
    pub treatment_threshold: Option<f64>,
}

impl Default for CausalForestParams {
    fn default() -> Self {
        CausalForestParams {
            n_trees: 2000,
            honesty_fraction: 0.5,
            mtry: None,
            min_leaf: 5,
            min_leaf_estimation: 1,
            subsample_fraction: 0.5,
            max_depth: None,
            treatment_threshold: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HonestLeaf {
    pub treated_mean: f64,
    pub treated_n: usize,
    pub control_mean: f64,
    pub control_n: usize,
}

impl HonestLeaf {
    /// Treated-minus-control mean difference, if both arms are present.
    pub fn effect(&self) -> Option<f64> {
        (self.treated_n > 0 && self.control_n > 0).then(|| self.treated_mean - self.control_mean)
    }

    fn from_rows(rows: &[u32], w: &[bool], y: &[f64]) -> Self {
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for &r in rows {
            let r = r as usize;
            if w[r] {
                s1 += y[r];
                n1 += 1;
            } else {
                s0 += y[r];
                n0 += 1;
            }
        }
        HonestLeaf {
            treated_mean: if n1 > 0 { s1 / n1 as f64 } else { f64::NAN },
            treated_n: n1,
            control_mean: if n0 > 0 { s0 / n0 as f64 } else { f64::NAN },
            control_n: n0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CausalNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(HonestLeaf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalTree {
    pub nodes: Vec<CausalNode>,
    /// Sorted training-row indices drawn for this tree.
    pub subsample: Vec<u32>,
    pub split_rows: Vec<u32>,
    pub estimation_rows: Vec<u32>,
}

impl CausalTree {
    /// A tree built from explicit nodes, with no training provenance.
    pub fn from_nodes(nodes: Vec<CausalNode>) -> Self {
        CausalTree {
            nodes,
            subsample: Vec::new(),
            split_rows: Vec::new(),
            estimation_rows: Vec::new(),
        }
    }

    pub fn leaf_for(&self, row: &[f64]) -> &HonestLeaf {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                CausalNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                CausalNode::Leaf(leaf) => return leaf,
            }
        }
    }

    fn contains(&self, row: usize) -> bool {
        self.subsample.binary_search(&(row as u32)).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalForestModel {
    pub trees: Vec<CausalTree>,
    pub outcome: String,
    pub treatment: String,
    pub treatment_threshold: f64,
    pub covariates: Vec<String>,
    pub seed: u64,
    pub params: CausalForestParams,
    pub n_train: usize,
}

impl CausalForestModel {
    pub fn from_trees(trees: Vec<CausalTree>, covariates: Vec<String>) -> Self {
        CausalForestModel {
            params: CausalForestParams {
                n_trees: trees.len(),
                ..CausalForestParams::default()
            },
            trees,
            outcome: String::new(),
            treatment: String::new(),
            treatment_threshold: 0.5,
            covariates,
            seed: 0,
            n_train: 0,
        }
    }

    /// Treatment indicator for each row of `t`, using the stored threshold.
    pub fn treatment_indicator(&self, t: &Table) -> Result<Vec<bool>> {
        Ok(t.complete(&self.treatment)?
            .into_iter()
            .map(|v| v > self.treatment_threshold)
            .collect())
    }
}

fn resolve_threshold(values: &[f64], given: Option<f64>) -> f64 {
    given.unwrap_or_else(|| {
        if values.iter().all(|v| *v == 0.0 || *v == 1.0) {
            0.5
        } else {
            median(values)
        }
    })
}

fn covariate_columns(t: &Table, covariates: &[String]) -> Result<Vec<Vec<f64>>> {
    covariates.iter().map(|c| t.complete(c)).collect()
}

pub fn fit_causal_forest<S: AsRef<str>>(
    t: &Table,
    outcome: &str,
    treatment: &str,
    covariates: &[S],
    params: &CausalForestParams,
    seed: u64,
) -> Result<CausalForestModel> {
    let covariates: Vec<String> = covariates.iter().map(|c| c.as_ref().to_string()).collect();
    for c in &covariates {
        if c == treatment {
            return Err(Error::InvalidParameter(format!(
                "covariate `{c}` is the treatment column"
            )));
        }
        if c == outcome {
            return Err(Error::InvalidParameter(format!("covariate `{c}` is the outcome column")));
        }
    }
    if covariates.is_empty() {
        return Err(Error::InvalidParameter("causal forest needs covariates".into()));
    }
    if !(params.honesty_fraction > 0.0 && params.honesty_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "honesty_fraction {} must lie strictly between 0 and 1",
            params.honesty_fraction
        )));
    }
    if !(params.subsample_fraction > 0.0 && params.subsample_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "subsample_fraction {} must lie in (0, 1]",
            params.subsample_fraction
        )));
    }
    if params.n_trees < 1 || params.min_leaf < 1 || params.min_leaf_estimation < 1 {
        return Err(Error::InvalidParameter(
            "n_trees, min_leaf and min_leaf_estimation must be at least 1".into(),
        ));
    }
    let p = covariates.len();
    let mtry = params
        .mtry
        .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1));
    if mtry < 1 || mtry > p {
        return Err(Error::InvalidParameter(format!("mtry {mtry} not in 1..={p}")));
    }

    let y = t.complete(outcome)?;
    let raw_w = t.complete(treatment)?;
    let threshold = resolve_threshold(&raw_w, params.treatment_threshold);
    let w: Vec<bool> = raw_w.iter().map(|v| *v > threshold).collect();
    if w.iter().all(|v| *v) || w.iter().all(|v| !*v) {
        return Err(Error::Degenerate(format!(
            "treatment `{treatment}` is constant after binarizing at {threshold}"
        )));
    }
    let x = covariate_columns(t, &covariates)?;
    let n = y.len();
    let sub_n = ((n as f64) * params.subsample_fraction).floor() as usize;
    let split_n = ((sub_n as f64) * params.honesty_fraction).round() as usize;
    if split_n == 0 || split_n >= sub_n {
        return Err(Error::TooFewRows {
            needed: 4,
            found: n,
        });
    }

    let ctx = GrowContext {
        x: &x,
        y: &y,
        w: &w,
        mtry,
        params,
    };
    let trees: Vec<CausalTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let mut subsample: Vec<u32> = index::sample(&mut rng, n, sub_n)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            let mut is_split = vec![false; sub_n];
            for i in index::sample(&mut rng, sub_n, split_n) {
                is_split[i] = true;
            }
            let mut split_rows = Vec::with_capacity(split_n);
            let mut estimation_rows = Vec::with_capacity(sub_n - split_n);
            for (pos, &r) in subsample.iter().enumerate() {
                if is_split[pos] {
                    split_rows.push(r);
                } else {
                    estimation_rows.push(r);
                }
            }
            subsample.sort_unstable();
            let nodes = ctx.grow(&split_rows, &estimation_rows, &mut rng);
            CausalTree {
                nodes,
                subsample,
                split_rows,
                estimation_rows,
            }
        })
        .collect();

    Ok(CausalForestModel {
        trees,
        outcome: outcome.to_string(),
        treatment: treatment.to_string(),
        treatment_threshold: threshold,
        covariates,
        seed,
        params: params.clone(),
        n_train: n,
    })
}

struct GrowContext<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    w: &'a [bool],
    mtry: usize,
    params: &'a CausalForestParams,
}

#[derive(Default, Clone, Copy)]
struct ArmSums {
    n1: usize,
    s1: f64,
    n0: usize,
    s0: f64,
}

impl ArmSums {
    fn add(&mut self, w: bool, y: f64) {
        if w {
            self.n1 += 1;
            self.s1 += y;
        } else {
            self.n0 += 1;
            self.s0 += y;
        }
    }

    fn minus(&self, other: &ArmSums) -> ArmSums {
        ArmSums {
            n1: self.n1 - other.n1,
            s1: self.s1 - other.s1,
            n0: self.n0 - other.n0,
            s0: self.s0 - other.s0,
        }
    }

    fn effect(&self) -> f64 {
        self.s1 / self.n1 as f64 - self.s0 / self.n0 as f64
    }

    fn n(&self) -> usize {
        self.n1 + self.n0
    }
}

impl GrowContext<'_> {
    fn grow(&self, split_rows: &[u32], est_rows: &[u32], rng: &mut rng::StdRng) -> Vec<CausalNode> {
        let p = self.x.len();
        let min_leaf = self.params.min_leaf;
        let min_est = self.params.min_leaf_estimation;
        let mut nodes = vec![CausalNode::Leaf(HonestLeaf::from_rows(est_rows, self.w, self.y))];
        let mut stack: Vec<(usize, Vec<u32>, Vec<u32>, usize)> =
            vec![(0, split_rows.to_vec(), est_rows.to_vec(), 0)];

        while let Some((slot, rows, est, depth)) = stack.pop() {
            let leaf = HonestLeaf::from_rows(&est, self.w, self.y);
            let mut total = ArmSums::default();
            for &r in &rows {
                total.add(self.w[r as usize], self.y[r as usize]);
            }
            let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
            if depth_capped
                || total.n1 < 2 * min_leaf
                || total.n0 < 2 * min_leaf
                || leaf.treated_n < 2 * min_est
                || leaf.control_n < 2 * min_est
            {
                nodes[slot] = CausalNode::Leaf(leaf);
                continue;
            }

            let mut features: Vec<usize> = index::sample(rng, p, self.mtry).into_vec();
            features.sort_unstable();
            let mut best: Option<(usize, f64, f64)> = None;
            let mut sorted_rows = rows.clone();
            let mut sorted_est = est.clone();
            for &feat in &features {
                let xs = &self.x[feat];
                sorted_rows.sort_by(|a, b| xs[*a as usize].total_cmp(&xs[*b as usize]));
                sorted_est.sort_by(|a, b| xs[*a as usize].total_cmp(&xs[*b as usize]));
                let mut left = ArmSums::default();
                let (mut est_l1, mut est_l0, mut ep) = (0usize, 0usize, 0usize);
                for i in 0..rows.len() - 1 {
                    let r = sorted_rows[i] as usize;
                    left.add(self.w[r], self.y[r]);
                    let (lo, hi) = (xs[r], xs[sorted_rows[i + 1] as usize]);
                    if lo == hi {
                        continue;
                    }
                    let right = total.minus(&left);
                    if left.n1 < min_leaf || left.n0 < min_leaf || right.n1 < min_leaf || right.n0 < min_leaf {
                        continue;
                    }
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    while ep < sorted_est.len() && xs[sorted_est[ep] as usize] <= threshold {
                        if self.w[sorted_est[ep] as usize] {
                            est_l1 += 1;
                        } else {
                            est_l0 += 1;
                        }
                        ep += 1;
                    }
                    let (est_r1, est_r0) = (leaf.treated_n - est_l1, leaf.control_n - est_l0);
                    if est_l1 < min_est || est_l0 < min_est || est_r1 < min_est || est_r0 < min_est {
                        continue;
                    }
                    let diff = left.effect() - right.effect();
                    let score = left.n() as f64 * right.n() as f64 * diff * diff;
                    if score > 0.0 && best.is_none_or(|(_, _, b)| score > b * (1.0 + 1e-12)) {
                        best = Some((feat, threshold, score));
                    }
                }
            }

            let Some((feature, threshold, _)) = best else {
                nodes[slot] = CausalNode::Leaf(leaf);
                continue;
            };
            let xs = &self.x[feature];
            let (rl, rr): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| xs[r as usize] <= threshold);
            let (el, er): (Vec<u32>, Vec<u32>) = est.iter().partition(|&&r| xs[r as usize] <= threshold);
            let left = nodes.len();
            nodes.push(CausalNode::Leaf(leaf));
            nodes.push(CausalNode::Leaf(leaf));
            nodes[slot] = CausalNode::Split {
                feature,
                threshold,
                left,
                right: left + 1,
            };
            stack.push((left + 1, rr, er, depth + 1));
            stack.push((left, rl, el, depth + 1));
        }
        nodes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateReport {
    /// Per-row effect; `None` where no tree had both arms in the row's leaf.
    pub tau: Vec<Option<f64>>,
    /// Mean of the defined entries of `tau`.
    pub ate: f64,
    pub n_defined: usize,
}

impl CateReport {
    fn from_tau(tau: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = tau.iter().flatten().copied().collect();
        CateReport {
            ate: mean(&defined),
            n_defined: defined.len(),
            tau,
        }
    }

    pub fn defined(&self) -> Vec<f64> {
        self.tau.iter().flatten().copied().collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("row,tau\n");
        for (i, t) in self.tau.iter().enumerate() {
            match t {
                Some(v) => out.push_str(&format!("{i},{v}\n")),
                None => out.push_str(&format!("{i},\n")),
            }
        }
        out
    }
}

fn predict(model: &CausalForestModel, t: &Table, out_of_bag: bool) -> Result<CateReport> {
    let x = covariate_columns(t, &model.covariates)?;
    let tau = (0..t.n_rows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = x.iter().map(|c| c[i]).collect();
            let (mut sum, mut count) = (0.0, 0usize);
            for tree in &model.trees {
                if out_of_bag && tree.contains(i) {
                    continue;
                }
                if let Some(e) = tree.leaf_for(&row).effect() {
                    sum += e;
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    Ok(CateReport::from_tau(tau))
}

/// Forest-averaged effect for every row of `t`.
pub fn cate(model: &CausalForestModel, t: &Table) -> Result<CateReport> {
    predict(model, t, false)
}

/// Effects for the training rows using only trees that did not draw the row.
pub fn cate_out_of_bag(model: &CausalForestModel, train: &Table) -> Result<CateReport> {
    if train.n_rows() != model.n_train {
        return Err(Error::LengthMismatch {
            left: model.n_train,
            right: train.n_rows(),
        });
    }
    predict(model, train, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mean_coefficient: f64,
    pub mean_std_error: f64,
    /// One-sided, H1: coefficient > 0.
    pub mean_p_value: f64,
    pub differential_coefficient: f64,
    pub differential_std_error: f64,
    /// One-sided, H1: coefficient > 0.
    pub differential_p_value: f64,
    pub ate: f64,
    pub n_used: usize,
}

/// Calibration regression on the training table with out-of-bag effects.
pub fn calibration_test(model: &CausalForestModel, train: &Table) -> Result<CalibrationReport> {
    let report = cate_out_of_bag(model, train)?;
    calibration_test_with(model, train, &report)
}

/// Regress centered outcomes on `(W − W̄)·ATE` and `(W − W̄)·(τ̂ − ATE)`
/// without intercept, with HC3 standard errors.
pub fn calibration_test_with(
    model: &CausalForestModel,
    t: &Table,
    report: &CateReport,
) -> Result<CalibrationReport> {
    if report.tau.len() != t.n_rows() {
        return Err(Error::LengthMismatch {
            left: t.n_rows(),
            right: report.tau.len(),
        });
    }
    let y_all = t.complete(&model.outcome)?;
    let w_all = model.treatment_indicator(t)?;
    let rows: Vec<usize> = (0..t.n_rows()).filter(|&i| report.tau[i].is_some()).collect();
    if rows.len() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            found: rows.len(),
        });
    }
    let tau: Vec<f64> = rows.iter().map(|&i| report.tau[i].unwrap()).collect();
    let y: Vec<f64> = rows.iter().map(|&i| y_all[i]).collect();
    let w: Vec<f64> = rows.iter().map(|&i| f64::from(u8::from(w_all[i]))).collect();
    let ate = mean(&tau);
    let (ybar, wbar) = (mean(&y), mean(&w));

    let c1: Vec<f64> = w.iter().map(|wi| (wi - wbar) * ate).collect();
    let c2: Vec<f64> = w
        .iter()
        .zip(&tau)
        .map(|(wi, ti)| (wi - wbar) * (ti - ate))
        .collect();
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (a11, a12, a22) = (dot(&c1, &c1), dot(&c1, &c2), dot(&c2, &c2));
    let det = a11 * a22 - a12 * a12;
    if a11 <= f64::EPSILON || a22 <= f64::EPSILON || det <= 1e-12 * a11 * a22 {
        return Err(Error::Degenerate(
            "calibration regressors have no variation".into(),
        ));
    }
    let inv = [[a22 / det, -a12 / det], [-a12 / det, a11 / det]];
    let (b1y, b2y) = (dot(&c1, &yc), dot(&c2, &yc));
    let beta = [inv[0][0] * b1y + inv[0][1] * b2y, inv[1][0] * b1y + inv[1][1] * b2y];

    let mut meat = [[0.0; 2]; 2];
    for i in 0..rows.len() {
        let c = [c1[i], c2[i]];
        let e = yc[i] - beta[0] * c[0] - beta[1] * c[1];
        let h = c[0] * (inv[0][0] * c[0] + inv[0][1] * c[1]) + c[1] * (inv[1][0] * c[0] + inv[1][1] * c[1]);
        let scale = (e / (1.0 - h)).powi(2);
        for a in 0..2 {
            for b in 0..2 {
                meat[a][b] += c[a] * c[b] * scale;
            }
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            cov[a][b] = (0..2)
                .flat_map(|k| (0..2).map(move |l| (k, l)))
                .map(|(k, l)| inv[a][k] * meat[k][l] * inv[l][b])
                .sum();
        }
    }
    let se = [cov[0][0].sqrt(), cov[1][1].sqrt()];
    Ok(CalibrationReport {
        mean_coefficient: beta[0],
        mean_std_error: se[0],
        mean_p_value: normal_upper_p(beta[0] / se[0]),
        differential_coefficient: beta[1],
        differential_std_error: se[1],
        differential_p_value: normal_upper_p(beta[1] / se[1]),
        ate,
        n_used: rows.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateScore {
    pub covariate: String,
    /// |mean τ̂ above the split − mean τ̂ at or below it|; `None` if undefined.
    pub score: Option<f64>,
    pub split_value: Option<f64>,
    pub mean_above: Option<f64>,
    pub mean_below: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateSummary {
    pub scores: Vec<CovariateScore>,
}

impl CateSummary {
    pub fn get(&self, covariate: &str) -> Option<&CovariateScore> {
        self.scores.iter().find(|s| s.covariate == covariate)
    }
}

pub fn cate_by_variable(model: &CausalForestModel, t: &Table) -> Result<CateSummary> {
    let report = cate(model, t)?;
    cate_by_variable_with(model, t, &report)
}

/// Median-split contrast of τ̂ per covariate; 0/1 covariates split by value.
pub fn cate_by_variable_with(
    model: &CausalForestModel,
    t: &Table,
    report: &CateReport,
) -> Result<CateSummary> {
    let mut scores = Vec::with_capacity(model.covariates.len());
    for name in &model.covariates {
        let values = t.complete(name)?;
        let pairs: Vec<(f64, f64)> = values
            .iter()
            .zip(&report.tau)
            .filter_map(|(v, t)| t.map(|t| (*v, t)))
            .collect();
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let binary = xs.iter().all(|v| *v == 0.0 || *v == 1.0);
        let split = if binary { 0.0 } else { median(&xs) };
        let above: Vec<f64> = pairs.iter().filter(|p| p.0 > split).map(|p| p.1).collect();
        let below: Vec<f64> = pairs.iter().filter(|p| p.0 <= split).map(|p| p.1).collect();
        let defined = above.len() >= 2 && below.len() >= 2;
        let (ma, mb) = (mean(&above), mean(&below));
        scores.push(CovariateScore {
            covariate: name.clone(),
            score: defined.then(|| (ma - mb).abs()),
            split_value: defined.then_some(split),
            mean_above: defined.then_some(ma),
            mean_below: defined.then_some(mb),
        });
    }
    Ok(CateSummary { scores })
}
