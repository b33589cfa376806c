//! Linear and logistic regression with Wald inference, AIC and
//! bidirectional stepwise selection.
//!
//! Both families are solved through a Householder QR of the (weighted)
//! design matrix. The coefficient covariance is kept as a
//! triangular factor `F` with `cov = F Fᵀ`; Monte Carlo code draws
//! `β̂ + F z` from it directly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_two_sided_p, sigmoid, t_two_sided_p};
use crate::tabular::Table;

/// Relative size of a QR pivot below which a column counts as collinear.
const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Linear,
}

impl Family {
    pub fn fit(self, t: &Table, f: &ModelFormula) -> Result<GlmFit> {
        match self {
            Family::Logistic => fit_logistic(t, f),
            Family::Linear => fit_linear(t, f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub response: String,
    pub predictors: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

impl ModelFormula {
    pub fn new<S: AsRef<str>>(response: &str, predictors: &[S]) -> Self {
        ModelFormula {
            response: response.to_string(),
            predictors: predictors.iter().map(|p| p.as_ref().to_string()).collect(),
            intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.iter().any(|p| *p == self.response) {
            return Err(Error::InvalidParameter(format!(
                "response `{}` listed as a predictor",
                self.response
            )));
        }
        for (i, p) in self.predictors.iter().enumerate() {
            if self.predictors[..i].contains(p) {
                return Err(Error::InvalidParameter(format!("predictor `{p}` listed twice")));
            }
        }
        Ok(())
    }

    /// Coefficient names in design-matrix order.
    pub fn terms(&self) -> Vec<String> {
        let mut terms = Vec::with_capacity(self.predictors.len() + 1);
        if self.intercept {
            terms.push("(Intercept)".to_string());
        }
        terms.extend(self.predictors.iter().cloned());
        terms
    }

    fn with_predictors(&self, predictors: Vec<String>) -> Self {
        ModelFormula {
            predictors,
            ..self.clone()
        }
    }
}

/// Design matrix and response pulled from a table.
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub terms: Vec<String>,
}

pub fn design(t: &Table, f: &ModelFormula) -> Result<Design> {
    f.validate()?;
    let y = DVector::from_vec(t.complete(&f.response)?);
    let x = predictor_matrix(t, f)?;
    Ok(Design {
        x,
        y,
        terms: f.terms(),
    })
}

/// Predictor columns only (plus intercept); the response may be absent.
pub fn predictor_matrix(t: &Table, f: &ModelFormula) -> Result<DMatrix<f64>> {
    let n = t.n_rows();
    let offset = usize::from(f.intercept);
    let mut x = DMatrix::zeros(n, f.predictors.len() + offset);
    if f.intercept {
        x.column_mut(0).fill(1.0);
    }
    for (j, name) in f.predictors.iter().enumerate() {
        let values = t.complete(name)?;
        x.column_mut(j + offset).copy_from_slice(&values);
    }
    Ok(x)
}

struct Solved {
    beta: DVector<f64>,
    /// Inverse of the R factor; `(XᵀX)⁻¹ = R⁻¹ R⁻ᵀ`.
    r_inv: DMatrix<f64>,
}

/// Least squares through QR, rejecting designs with a collinear column.
fn qr_solve(x: &DMatrix<f64>, y: &DVector<f64>, terms: &[String]) -> Result<Solved> {
    let p = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(Error::RankDeficient {
                column: terms[j].clone(),
            });
        }
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
    Ok(Solved { beta, r_inv })
}

#[derive(Clone, Debug)]
pub struct GlmFit {
    pub family: Family,
    pub formula: ModelFormula,
    pub terms: Vec<String>,
    pub coefficients: DVector<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Complete separation detected (logistic only).
    pub separation: bool,
    /// Residual standard deviation (linear only).
    pub sigma: Option<f64>,
    pub warnings: Vec<String>,
    cov_factor: DMatrix<f64>,
}

impl GlmFit {
    /// Number of estimated parameters counted by AIC.
    pub fn n_params(&self) -> usize {
        self.terms.len() + usize::from(self.family == Family::Linear)
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.term_index(term).map(|i| self.coefficients[i])
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// Lower-triangular-free factor `F` with `covariance = F Fᵀ`.
    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.cov_factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn linear_predictor(&self, t: &Table) -> Result<Vec<f64>> {
        let x = predictor_matrix(t, &self.formula)?;
        Ok((x * &self.coefficients).iter().copied().collect())
    }

    pub fn predict_prob(&self, t: &Table) -> Result<Vec<f64>> {
        if self.family != Family::Logistic {
            return Err(Error::InvalidParameter(
                "probabilities require a logistic fit".into(),
            ));
        }
        Ok(self
            .linear_predictor(t)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    /// Class 1 iff the linear predictor is strictly positive (p̂ > 0.5).
    pub fn classify(&self, t: &Table) -> Result<Vec<f64>> {
        Ok(self
            .predict_prob(t)?
            .into_iter()
            .map(|p| if p > 0.5 { 1.0 } else { 0.0 })
            .collect())
    }

    pub fn report(&self) -> CoefficientReport {
        let rows = self
            .terms
            .iter()
            .enumerate()
            .map(|(j, term)| CoefficientRow {
                term: term.clone(),
                estimate: self.coefficients[j],
                std_error: self.std_errors[j],
                z: self.z_values[j],
                p: self.p_values[j],
                significant: self.p_values[j] < SIGNIFICANCE,
            })
            .collect();
        CoefficientReport {
            family: self.family,
            response: self.formula.response.clone(),
            n_obs: self.n_obs,
            rows,
            log_likelihood: self.log_likelihood,
            aic: self.aic,
            converged: self.converged,
            iterations: self.iterations,
            separation: self.separation,
            warnings: self.warnings.clone(),
        }
    }
}

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub family: Family,
    pub response: String,
    pub n_obs: usize,
    pub rows: Vec<CoefficientRow>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub separation: bool,
    pub warnings: Vec<String>,
}

fn wald(beta: &DVector<f64>, cov_factor: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let se: Vec<f64> = cov_factor.row_iter().map(|r| r.norm()).collect();
    let z = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    (se, z)
}

fn check_size(n: usize, k: usize) -> Result<()> {
    if n <= k {
        return Err(Error::TooFewRows {
            needed: k + 1,
            found: n,
        });
    }
    Ok(())
}

/// Ordinary least squares.
pub fn fit_linear(t: &Table, f: &ModelFormula) -> Result<GlmFit> {
    let d = design(t, f)?;
    let (n, k) = (d.x.nrows(), d.x.ncols());
    check_size(n, k)?;
    let solved = qr_solve(&d.x, &d.y, &d.terms)?;
    let resid = &d.y - &d.x * &solved.beta;
    let rss = resid.norm_squared();
    let df = (n - k) as f64;
    let sigma = (rss / df).sqrt();
    let cov_factor = &solved.r_inv * sigma;
    let (std_errors, z_values) = wald(&solved.beta, &cov_factor);
    let p_values = z_values.iter().map(|z| t_two_sided_p(*z, df)).collect();
    let nf = n as f64;
    let log_likelihood = -0.5 * nf * ((2.0 * std::f64::consts::PI * rss / nf).ln() + 1.0);
    let aic = 2.0 * (k + 1) as f64 - 2.0 * log_likelihood;
    Ok(GlmFit {
        family: Family::Linear,
        formula: f.clone(),
        terms: d.terms,
        coefficients: solved.beta,
        std_errors,
        z_values,
        p_values,
        log_likelihood,
        aic,
        n_obs: n,
        converged: true,
        iterations: 1,
        separation: false,
        sigma: Some(sigma),
        warnings: Vec::new(),
        cov_factor,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

pub fn fit_logistic(t: &Table, f: &ModelFormula) -> Result<GlmFit> {
    fit_logistic_with(t, f, LogisticOptions::default())
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn bernoulli_loglik(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    y.iter()
        .zip(eta.iter())
        .map(|(y, e)| y * e - softplus(*e))
        .sum()
}

/// Newton-Raphson in IRLS form with step halving.
pub fn fit_logistic_with(t: &Table, f: &ModelFormula, opts: LogisticOptions) -> Result<GlmFit> {
    let d = design(t, f)?;
    let (n, k) = (d.x.nrows(), d.x.ncols());
    for (i, v) in d.y.iter().enumerate() {
        if *v != 0.0 && *v != 1.0 {
            return Err(Error::NonBinary { index: i, value: *v });
        }
    }
    let ones = d.y.sum();
    if ones == 0.0 || ones == n as f64 {
        return Err(Error::SingleClass(f.response.clone()));
    }
    check_size(n, k)?;
    qr_solve(&d.x, &d.y, &d.terms)?;

    let mut beta = DVector::zeros(k);
    let mut eta = &d.x * &beta;
    let mut loglik = bernoulli_loglik(&d.y, &eta);
    let mut converged = false;
    let mut iterations = 0;
    let mut warnings = Vec::new();

    while iterations < opts.max_iter {
        iterations += 1;
        let (xw, rhs) = weighted_system(&d.x, &d.y, &eta);
        let step = qr_solve(&xw, &rhs, &d.terms)
            .map_err(|_| Error::Numerical("information matrix became singular".into()))?
            .beta;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand_eta = &d.x * &candidate;
            let cand_ll = bernoulli_loglik(&d.y, &cand_eta);
            if cand_ll >= loglik - 1e-12 * loglik.abs().max(1.0) {
                accepted = Some((candidate, cand_eta, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, cand_eta, cand_ll)) = accepted else {
            warnings.push("step halving failed to increase the likelihood".to_string());
            break;
        };
        let change = (&candidate - &beta).amax();
        debug_assert!(cand_ll >= loglik - 1e-9 * loglik.abs().max(1.0));
        beta = candidate;
        eta = cand_eta;
        loglik = cand_ll;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let probs: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
    let separation = d
        .y
        .iter()
        .zip(&probs)
        .all(|(y, p)| (y - p).abs() < 1e-6);
    if separation {
        converged = false;
        warnings.push(
            "fitted probabilities numerically 0 or 1: complete separation, estimates diverge"
                .to_string(),
        );
    } else if !converged {
        warnings.push(format!(
            "no convergence within {} iterations; likelihood may be monotone (possible separation)",
            opts.max_iter
        ));
    }

    let (xw, _) = weighted_system(&d.x, &d.y, &eta);
    let cov_factor = match qr_solve(&xw, &DVector::zeros(n), &d.terms) {
        Ok(s) => s.r_inv,
        Err(_) => DMatrix::from_element(k, k, f64::INFINITY),
    };
    let (std_errors, z_values) = wald(&beta, &cov_factor);
    let p_values = z_values.iter().map(|z| normal_two_sided_p(*z)).collect();
    let aic = 2.0 * k as f64 - 2.0 * loglik;
    Ok(GlmFit {
        family: Family::Logistic,
        formula: f.clone(),
        terms: d.terms,
        coefficients: beta,
        std_errors,
        z_values,
        p_values,
        log_likelihood: loglik,
        aic,
        n_obs: n,
        converged,
        iterations,
        separation,
        sigma: None,
        warnings,
        cov_factor,
    })
}

/// `√W X` and `(y − p)/√W`; solving this system gives the Newton step.
fn weighted_system(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    eta: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut xw = x.clone();
    let mut rhs = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let p = sigmoid(eta[i]);
        let w = (p * (1.0 - p)).max(1e-12);
        let sw = w.sqrt();
        xw.row_mut(i).scale_mut(sw);
        rhs[i] = (y[i] - p) / sw;
    }
    (xw, rhs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAction {
    Start,
    Remove,
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: StepAction,
    pub term: Option<String>,
    pub aic: f64,
}

#[derive(Clone, Debug)]
pub struct StepwiseResult {
    pub fit: GlmFit,
    pub trace: Vec<Step>,
    pub warnings: Vec<String>,
}

/// Bidirectional AIC search starting from the full model.
///
/// Each round scores every single-term removal and every re-addition from
/// the full predictor list, and takes the lowest-AIC move if it beats the
/// incumbent. Ties go to the alphabetically first term.
pub fn stepwise(t: &Table, full: &ModelFormula, family: Family) -> Result<StepwiseResult> {
    let mut current = family.fit(t, full)?;
    let mut trace = vec![Step {
        action: StepAction::Start,
        term: None,
        aic: current.aic,
    }];
    let mut warnings = Vec::new();

    loop {
        let included = &current.formula.predictors;
        let mut moves: Vec<(StepAction, String, Vec<String>)> = Vec::new();
        for p in included {
            let kept = included.iter().filter(|q| *q != p).cloned().collect();
            moves.push((StepAction::Remove, p.clone(), kept));
        }
        for p in full.predictors.iter().filter(|p| !included.contains(p)) {
            let kept = full
                .predictors
                .iter()
                .filter(|q| included.contains(q) || *q == p)
                .cloned()
                .collect();
            moves.push((StepAction::Add, p.clone(), kept));
        }

        let fits: Vec<Result<GlmFit>> = moves
            .par_iter()
            .map(|(_, _, preds)| family.fit(t, &full.with_predictors(preds.clone())))
            .collect();

        let mut best: Option<(usize, GlmFit)> = None;
        for (i, fit) in fits.into_iter().enumerate() {
            let (action, term, _) = &moves[i];
            match fit {
                Ok(fit) if family == Family::Logistic && !fit.converged => warnings.push(format!(
                    "skipped {action:?} `{term}`: candidate fit did not converge"
                )),
                Ok(fit) => {
                    let better = match &best {
                        None => true,
                        Some((j, b)) => {
                            fit.aic < b.aic || (fit.aic == b.aic && *term < moves[*j].1)
                        }
                    };
                    if better {
                        best = Some((i, fit));
                    }
                }
                Err(e) => warnings.push(format!("skipped {action:?} `{term}`: {e}")),
            }
        }

        match best {
            Some((i, fit)) if fit.aic < current.aic => {
                let (action, term, _) = &moves[i];
                trace.push(Step {
                    action: action.clone(),
                    term: Some(term.clone()),
                    aic: fit.aic,
                });
                current = fit;
            }
            _ => break,
        }
    }

    Ok(StepwiseResult {
        fit: current,
        trace,
        warnings,
    })
}
