//! Counterfactual mediation analysis.
//!
//! A linear mediator model `M ~ T + C` and an outcome model
//! `Y ~ T + M + C` (linear, or logistic for a 0/1 outcome) are fitted once.
//! A [`ParameterSampler`] then produces `S` parameter draws. Each draw is
//! turned into the four potential-outcome contrasts averaged over the
//! observed covariate rows. Binary outcomes are summarized on the
//! probability scale.

pub mod direction;
pub mod resolve;
pub mod simulation;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::seq::IndexedRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::{fit_linear, fit_logistic, predictor_matrix, Family, GlmFit, ModelFormula, SIGNIFICANCE};
use crate::registry::Registry;
use crate::rng::{self, StdRng};
use crate::stats;
use crate::tabular::Table;

pub use direction::{direction_test, DirectionTestResult, OrderingStat, Verdict};
pub use resolve::{resolve_direction, DirectionResolution, OrderingEvidence, PathWeight, Resolved, ResolveOptions};
pub use simulation::{
    generate_group, run_simulation_suite, run_simulation_suite_with, Pathway, SimulationGroup,
    SimulationGroupSpec, SimulationReport, SimulationRow,
};

pub const MIN_SIMS: usize = 100;
pub const DEFAULT_SIMS: usize = 1000;
pub const DEFAULT_METHOD: &str = "quasi-bayesian";

/// Treatment values compared for every row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Contrast {
    /// Control is the observed value, treat is one unit above it.
    UnitShift,
    Fixed { control: f64, treat: f64 },
    /// Sample mean minus and plus one sample standard deviation.
    MeanSd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediationSpec {
    pub treatment: String,
    pub mediator: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// `None` picks 0/1 for a binary treatment and a unit shift otherwise.
    #[serde(default)]
    pub contrast: Option<Contrast>,
    #[serde(default = "default_sims")]
    pub sims: usize,
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_sims() -> usize {
    DEFAULT_SIMS
}

fn default_method() -> String {
    DEFAULT_METHOD.to_string()
}

impl MediationSpec {
    pub fn new(treatment: &str, mediator: &str, outcome: &str, seed: u64) -> Self {
        MediationSpec {
            treatment: treatment.to_string(),
            mediator: mediator.to_string(),
            outcome: outcome.to_string(),
            covariates: Vec::new(),
            contrast: None,
            sims: DEFAULT_SIMS,
            seed,
            method: DEFAULT_METHOD.to_string(),
        }
    }

    pub fn with_covariates<S: AsRef<str>>(mut self, covariates: &[S]) -> Self {
        self.covariates = covariates.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    pub fn with_sims(mut self, sims: usize) -> Self {
        self.sims = sims;
        self
    }

    pub fn with_method(mut self, method: &str) -> Self {
        self.method = method.to_string();
        self
    }

    pub fn with_contrast(mut self, contrast: Contrast) -> Self {
        self.contrast = Some(contrast);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let roles = [&self.treatment, &self.mediator, &self.outcome];
        for i in 0..3 {
            for j in (i + 1)..3 {
                if roles[i] == roles[j] {
                    return Err(Error::InvalidParameter(format!(
                        "treatment, mediator and outcome must differ (`{}` repeated)",
                        roles[i]
                    )));
                }
            }
        }
        if let Some(c) = self.covariates.iter().find(|c| roles.contains(c)) {
            return Err(Error::InvalidParameter(format!(
                "covariate `{c}` is also a mediation role"
            )));
        }
        if self.sims < MIN_SIMS {
            return Err(Error::InvalidParameter(format!(
                "at least {MIN_SIMS} simulations required, got {}",
                self.sims
            )));
        }
        if let Some(Contrast::Fixed { control, treat }) = self.contrast {
            if !control.is_finite() || !treat.is_finite() || control == treat {
                return Err(Error::InvalidParameter(
                    "fixed contrast needs two distinct finite values".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn mediator_formula(&self) -> ModelFormula {
        let mut preds = vec![self.treatment.clone()];
        preds.extend(self.covariates.iter().cloned());
        ModelFormula::new(&self.mediator, &preds)
    }

    pub fn outcome_formula(&self) -> ModelFormula {
        let mut preds = vec![self.treatment.clone(), self.mediator.clone()];
        preds.extend(self.covariates.iter().cloned());
        ModelFormula::new(&self.outcome, &preds)
    }
}

fn is_zero_one(values: &[f64]) -> bool {
    values.iter().all(|v| *v == 0.0 || *v == 1.0)
}

#[derive(Clone, Debug)]
pub struct FittedModels {
    pub mediator: GlmFit,
    pub outcome: GlmFit,
}

/// Outcome family implied by the data: logistic when every value is 0 or 1
/// and both occur.
pub fn outcome_family(t: &Table, outcome: &str) -> Result<Family> {
    let y = t.complete(outcome)?;
    let binary = is_zero_one(&y) && y.contains(&0.0) && y.contains(&1.0);
    Ok(if binary { Family::Logistic } else { Family::Linear })
}

pub fn fit_models(t: &Table, spec: &MediationSpec) -> Result<FittedModels> {
    spec.validate()?;
    let family = outcome_family(t, &spec.outcome)?;
    fit_models_with(t, spec, family)
}

fn fit_models_with(t: &Table, spec: &MediationSpec, family: Family) -> Result<FittedModels> {
    let mediator = fit_linear(t, &spec.mediator_formula())?;
    let outcome = match family {
        Family::Linear => fit_linear(t, &spec.outcome_formula())?,
        Family::Logistic => fit_logistic(t, &spec.outcome_formula())?,
    };
    Ok(FittedModels { mediator, outcome })
}

/// Everything a sampler may need to produce a draw.
pub struct MediationContext<'a> {
    pub table: &'a Table,
    pub spec: &'a MediationSpec,
    pub models: &'a FittedModels,
}

/// One simulated parameter set.
#[derive(Clone, Debug)]
pub struct ParameterDraw {
    pub mediator: DVector<f64>,
    pub outcome: DVector<f64>,
    pub mediator_sigma: f64,
}

pub trait ParameterSampler: Send + Sync {
    fn draw(&self, ctx: &MediationContext<'_>, rng: &mut StdRng) -> Result<ParameterDraw>;
}

/// Normal draws centered on the estimates with the estimated covariance.
pub struct QuasiBayesian;

fn perturb(fit: &GlmFit, rng: &mut StdRng) -> DVector<f64> {
    let p = fit.coefficients.len();
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    &fit.coefficients + fit.cov_factor() * z
}

impl ParameterSampler for QuasiBayesian {
    fn draw(&self, ctx: &MediationContext<'_>, rng: &mut StdRng) -> Result<ParameterDraw> {
        let mediator = perturb(&ctx.models.mediator, rng);
        let outcome = perturb(&ctx.models.outcome, rng);
        Ok(ParameterDraw {
            mediator,
            outcome,
            mediator_sigma: ctx.models.mediator.sigma.unwrap_or(0.0),
        })
    }
}

/// Both models refitted on a row resample.
pub struct Bootstrap;

impl ParameterSampler for Bootstrap {
    fn draw(&self, ctx: &MediationContext<'_>, rng: &mut StdRng) -> Result<ParameterDraw> {
        let n = ctx.table.n_rows();
        let all: Vec<usize> = (0..n).collect();
        let rows: Vec<usize> = (0..n).map(|_| *all.choose(rng).expect("non-empty")).collect();
        let sample = ctx.table.take_rows(&rows);
        let refit = fit_models_with(&sample, ctx.spec, ctx.models.outcome.family)?;
        Ok(ParameterDraw {
            mediator_sigma: refit.mediator.sigma.unwrap_or(0.0),
            mediator: refit.mediator.coefficients,
            outcome: refit.outcome.coefficients,
        })
    }
}

pub fn samplers() -> Registry<dyn ParameterSampler> {
    let mut reg: Registry<dyn ParameterSampler> = Registry::new("mediation");
    reg.register("quasi-bayesian", Arc::new(QuasiBayesian));
    reg.register("bootstrap", Arc::new(Bootstrap));
    reg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub estimate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub std_error: f64,
    pub significant: bool,
}

impl EffectSummary {
    fn from_draws(draws: &[f64], estimate: f64) -> Self {
        let sorted = stats::sorted(draws);
        let p_value = stats::simulation_p_value(draws);
        EffectSummary {
            estimate,
            ci_lower: stats::quantile_sorted(&sorted, 0.025),
            ci_upper: stats::quantile_sorted(&sorted, 0.975),
            p_value,
            std_error: stats::std_dev(draws),
            significant: p_value < SIGNIFICANCE,
        }
    }

    fn mean_of(draws: &[f64]) -> Self {
        Self::from_draws(draws, stats::mean(draws))
    }
}

/// Effects evaluated under each arm before averaging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmEffects {
    pub acme_control: EffectSummary,
    pub acme_treated: EffectSummary,
    pub ade_control: EffectSummary,
    pub ade_treated: EffectSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    /// `total - (acme + ade)` on the point estimates.
    pub gap: f64,
    pub tolerance: f64,
}

/// One line of the familiar effect table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub label: String,
    pub estimate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediationResult {
    pub treatment: String,
    pub mediator: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub method: String,
    pub sims: usize,
    pub seed: u64,
    pub n_obs: usize,
    pub outcome_family: Family,
    pub contrast: Contrast,
    /// Treatment coefficient of the mediator model.
    pub mediator_coefficient: f64,
    /// Mediator coefficient of the outcome model.
    pub outcome_mediator_coefficient: f64,
    pub acme: EffectSummary,
    pub ade: EffectSummary,
    pub total: EffectSummary,
    /// `None` when every draw had a zero total effect.
    pub prop_mediated: Option<EffectSummary>,
    pub arms: ArmEffects,
    pub decomposition: DecompositionCheck,
}

impl MediationResult {
    pub fn table(&self) -> Vec<EffectRow> {
        let row = |label: &str, e: &EffectSummary| EffectRow {
            label: label.to_string(),
            estimate: e.estimate,
            ci_lower: e.ci_lower,
            ci_upper: e.ci_upper,
            p_value: e.p_value,
            significant: e.significant,
        };
        let mut rows = vec![
            row("ACME (control)", &self.arms.acme_control),
            row("ACME (treated)", &self.arms.acme_treated),
            row("ADE (control)", &self.arms.ade_control),
            row("ADE (treated)", &self.arms.ade_treated),
            row("Total Effect", &self.total),
            row("ACME (average)", &self.acme),
            row("ADE (average)", &self.ade),
        ];
        if let Some(p) = &self.prop_mediated {
            rows.push(row("Prop. Mediated (average)", p));
        }
        rows
    }
}

/// Per-draw effects averaged over rows.
#[derive(Clone, Copy, Debug)]
struct EffectDraw {
    d1: f64,
    d0: f64,
    z1: f64,
    z0: f64,
    total: f64,
}

/// Row-level pieces that do not change between draws.
struct Frame {
    control: Vec<f64>,
    treat: Vec<f64>,
    observed_t: Vec<f64>,
    observed_m: Vec<f64>,
    xm: DMatrix<f64>,
    xy: DMatrix<f64>,
    /// Position of the treatment in the mediator design.
    m_t: usize,
    /// Positions of treatment and mediator in the outcome design.
    y_t: usize,
    y_m: usize,
    family: Family,
}

fn resolve_contrast(spec: &MediationSpec, t_values: &[f64]) -> Contrast {
    match &spec.contrast {
        Some(c) => c.clone(),
        None if is_zero_one(t_values) => Contrast::Fixed {
            control: 0.0,
            treat: 1.0,
        },
        None => Contrast::UnitShift,
    }
}

impl Frame {
    fn build(t: &Table, spec: &MediationSpec, models: &FittedModels, contrast: &Contrast) -> Result<Self> {
        let observed_t = t.complete(&spec.treatment)?;
        let observed_m = t.complete(&spec.mediator)?;
        let n = observed_t.len();
        let (control, treat) = match contrast {
            Contrast::UnitShift => (observed_t.clone(), observed_t.iter().map(|v| v + 1.0).collect()),
            Contrast::Fixed { control, treat } => (vec![*control; n], vec![*treat; n]),
            Contrast::MeanSd => {
                let m = stats::mean(&observed_t);
                let s = stats::std_dev(&observed_t);
                if s == 0.0 {
                    return Err(Error::Degenerate(format!(
                        "treatment `{}` has zero variance",
                        spec.treatment
                    )));
                }
                (vec![m - s; n], vec![m + s; n])
            }
        };
        let mf = &models.mediator;
        let of = &models.outcome;
        let idx = |fit: &GlmFit, term: &str| {
            fit.term_index(term)
                .ok_or_else(|| Error::Numerical(format!("term `{term}` missing from fit")))
        };
        Ok(Frame {
            control,
            treat,
            m_t: idx(mf, &spec.treatment)?,
            y_t: idx(of, &spec.treatment)?,
            y_m: idx(of, &spec.mediator)?,
            observed_t,
            observed_m,
            xm: predictor_matrix(t, &mf.formula)?,
            xy: predictor_matrix(t, &of.formula)?,
            family: of.family,
        })
    }

    fn effects(&self, draw: &ParameterDraw, rng: &mut StdRng) -> Result<EffectDraw> {
        let n = self.observed_t.len();
        let bm = &draw.mediator;
        let by = &draw.outcome;
        let base_m = &self.xm * bm;
        let base_y = &self.xy * by;
        let (bmt, byt, bym) = (bm[self.m_t], by[self.y_t], by[self.y_m]);
        let noise = match self.family {
            // Mediator noise cancels between arms in a linear outcome.
            Family::Linear => None,
            Family::Logistic if draw.mediator_sigma > 0.0 => Some(
                Normal::new(0.0, draw.mediator_sigma)
                    .map_err(|e| Error::Numerical(e.to_string()))?,
            ),
            Family::Logistic => None,
        };
        let link = |eta: f64| match self.family {
            Family::Linear => eta,
            Family::Logistic => stats::sigmoid(eta),
        };
        let mut acc = [0.0f64; 5];
        for i in 0..n {
            let eps = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            let mrow = base_m[i] - bmt * self.observed_t[i] + eps;
            let yrow = base_y[i] - byt * self.observed_t[i] - bym * self.observed_m[i];
            let (c, k) = (self.control[i], self.treat[i]);
            let m0 = mrow + bmt * c;
            let m1 = mrow + bmt * k;
            let y = |a: f64, m: f64| link(yrow + byt * a + bym * m);
            let y11 = y(k, m1);
            let y10 = y(k, m0);
            let y01 = y(c, m1);
            let y00 = y(c, m0);
            acc[0] += y11 - y10;
            acc[1] += y01 - y00;
            acc[2] += y11 - y01;
            acc[3] += y10 - y00;
            acc[4] += y11 - y00;
        }
        let nf = n as f64;
        Ok(EffectDraw {
            d1: acc[0] / nf,
            d0: acc[1] / nf,
            z1: acc[2] / nf,
            z0: acc[3] / nf,
            total: acc[4] / nf,
        })
    }
}

/// Estimate ACME, ADE, total effect and proportion mediated.
pub fn mediate(t: &Table, spec: &MediationSpec) -> Result<MediationResult> {
    spec.validate()?;
    let sampler = samplers().get(&spec.method)?;
    let models = fit_models(t, spec)?;
    let t_values = t.complete(&spec.treatment)?;
    let contrast = resolve_contrast(spec, &t_values);
    let frame = Frame::build(t, spec, &models, &contrast)?;
    let ctx = MediationContext {
        table: t,
        spec,
        models: &models,
    };
    let draws: Vec<EffectDraw> = (0..spec.sims as u64)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(spec.seed, s);
            let params = sampler.draw(&ctx, &mut r)?;
            frame.effects(&params, &mut r)
        })
        .collect::<Result<_>>()?;
    summarize(spec, &models, contrast, t.n_rows(), &draws)
}

fn summarize(
    spec: &MediationSpec,
    models: &FittedModels,
    contrast: Contrast,
    n_obs: usize,
    draws: &[EffectDraw],
) -> Result<MediationResult> {
    let col = |f: fn(&EffectDraw) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    let d1 = col(|d| d.d1);
    let d0 = col(|d| d.d0);
    let z1 = col(|d| d.z1);
    let z0 = col(|d| d.z0);
    let acme = col(|d| (d.d1 + d.d0) / 2.0);
    let ade = col(|d| (d.z1 + d.z0) / 2.0);
    let total = col(|d| d.total);
    if total.iter().chain(&acme).chain(&ade).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite effect draw".into()));
    }
    let ratios: Vec<f64> = draws
        .iter()
        .filter(|d| d.total != 0.0)
        .map(|d| (d.d1 + d.d0) / 2.0 / d.total)
        .collect();
    let prop_mediated = (!ratios.is_empty())
        .then(|| EffectSummary::from_draws(&ratios, stats::median(&ratios)));

    let acme_s = EffectSummary::mean_of(&acme);
    let ade_s = EffectSummary::mean_of(&ade);
    let total_s = EffectSummary::mean_of(&total);
    let s = draws.len() as f64;
    let mc_se = ((acme_s.std_error.powi(2) + ade_s.std_error.powi(2)) / s).sqrt();
    let gap = total_s.estimate - (acme_s.estimate + ade_s.estimate);
    let tolerance = 3.0 * mc_se + 1e-9 * (1.0 + total_s.estimate.abs());
    if gap.abs() > tolerance {
        return Err(Error::Numerical(format!(
            "total effect does not decompose: gap {gap:e} exceeds {tolerance:e}"
        )));
    }
    let coef = |fit: &GlmFit, term: &str| fit.coefficient(term).unwrap_or(f64::NAN);
    Ok(MediationResult {
        treatment: spec.treatment.clone(),
        mediator: spec.mediator.clone(),
        outcome: spec.outcome.clone(),
        covariates: spec.covariates.clone(),
        method: spec.method.clone(),
        sims: spec.sims,
        seed: spec.seed,
        n_obs,
        outcome_family: models.outcome.family,
        contrast,
        mediator_coefficient: coef(&models.mediator, &spec.treatment),
        outcome_mediator_coefficient: coef(&models.outcome, &spec.mediator),
        acme: acme_s,
        ade: ade_s,
        total: total_s,
        prop_mediated,
        arms: ArmEffects {
            acme_control: EffectSummary::mean_of(&d0),
            acme_treated: EffectSummary::mean_of(&d1),
            ade_control: EffectSummary::mean_of(&z0),
            ade_treated: EffectSummary::mean_of(&z1),
        },
        decomposition: DecompositionCheck { gap, tolerance },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Uniform;

    /// X ~ N(0,1), M = a·X + ε, Y = b·M + c·X + ε.
    pub(crate) fn chain(n: usize, a: f64, b: f64, c: f64, seed: u64) -> Table {
        let mut r = rng::seeded(seed);
        let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let m: Vec<f64> = x.iter().map(|x| a * x + r.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&m)
            .map(|(x, m)| b * m + c * x + r.sample::<f64, _>(StandardNormal))
            .collect();
        Table::from_numeric(vec![("x", x), ("m", m), ("y", y)]).unwrap()
    }

    fn within(e: &EffectSummary, target: f64) -> bool {
        (e.estimate - target).abs() <= 3.0 * e.std_error
    }

    #[test]
    fn linear_chain_recovers_product() {
        let t = chain(5000, 0.7, 0.5, 0.0, 3);
        let r = mediate(&t, &MediationSpec::new("x", "m", "y", 11)).unwrap();
        assert!(within(&r.acme, 0.35), "{:?}", r.acme);
        assert!(within(&r.ade, 0.0), "{:?}", r.ade);
        assert_eq!(r.contrast, Contrast::UnitShift);
        assert!(r.decomposition.gap.abs() <= r.decomposition.tolerance);
        let p = r.prop_mediated.unwrap();
        assert!((p.estimate - 1.0).abs() < 0.2);
    }

    #[test]
    fn unrelated_mediator_gives_null_acme() {
        let t = chain(2000, 0.0, 0.5, 1.0, 5);
        let r = mediate(&t, &MediationSpec::new("x", "m", "y", 2)).unwrap();
        assert!(within(&r.acme, 0.0), "{:?}", r.acme);
        assert!(within(&r.ade, 1.0));
    }

    #[test]
    fn per_arm_effects_average() {
        let t = chain(500, 0.4, 0.6, 0.2, 8);
        let r = mediate(&t, &MediationSpec::new("x", "m", "y", 9).with_sims(200)).unwrap();
        let avg = (r.arms.acme_control.estimate + r.arms.acme_treated.estimate) / 2.0;
        assert!((avg - r.acme.estimate).abs() < 1e-12);
        assert!((r.acme.estimate + r.ade.estimate - r.total.estimate).abs() < 1e-9);
        let labels: Vec<String> = r.table().into_iter().map(|row| row.label).collect();
        assert!(labels.contains(&"ACME (average)".to_string()));
        assert!(labels.contains(&"Prop. Mediated (average)".to_string()));
    }

    #[test]
    fn binary_outcome_on_probability_scale() {
        let mut r = rng::seeded(21);
        let n = 3000;
        let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let m: Vec<f64> = x.iter().map(|x| 0.8 * x + r.sample::<f64, _>(StandardNormal)).collect();
        let u = Uniform::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = m
            .iter()
            .map(|m| f64::from(r.sample(u) < stats::sigmoid(0.9 * m)))
            .collect();
        let t = Table::from_numeric(vec![("x", x), ("m", m), ("y", y)]).unwrap();
        let res = mediate(&t, &MediationSpec::new("x", "m", "y", 4).with_sims(300)).unwrap();
        assert_eq!(res.outcome_family, Family::Logistic);
        assert!(res.acme.estimate > 0.05 && res.acme.estimate < 0.3);
        assert!(res.total.ci_lower >= -1.0 && res.total.ci_upper <= 1.0);
        assert!(res.acme.significant);
    }

    #[test]
    fn binary_treatment_uses_zero_one() {
        let mut r = rng::seeded(2);
        let n = 800;
        let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let m: Vec<f64> = x.iter().map(|x| 0.5 * x + r.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = m.iter().map(|m| m + r.sample::<f64, _>(StandardNormal)).collect();
        let t = Table::from_numeric(vec![("x", x), ("m", m), ("y", y)]).unwrap();
        let res = mediate(&t, &MediationSpec::new("x", "m", "y", 4).with_sims(200)).unwrap();
        assert_eq!(
            res.contrast,
            Contrast::Fixed {
                control: 0.0,
                treat: 1.0
            }
        );
    }

    #[test]
    fn mean_sd_contrast_scales_effects() {
        let t = chain(1000, 0.7, 0.5, 0.0, 13);
        let unit = mediate(&t, &MediationSpec::new("x", "m", "y", 1).with_sims(200)).unwrap();
        let wide = mediate(
            &t,
            &MediationSpec::new("x", "m", "y", 1)
                .with_sims(200)
                .with_contrast(Contrast::MeanSd),
        )
        .unwrap();
        let sd = stats::std_dev(&t.complete("x").unwrap());
        assert!((wide.acme.estimate - 2.0 * sd * unit.acme.estimate).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        let t = chain(200, 0.5, 0.5, 0.0, 1);
        let same = MediationSpec::new("x", "x", "y", 1);
        assert!(matches!(mediate(&t, &same), Err(Error::InvalidParameter(_))));
        let few = MediationSpec::new("x", "m", "y", 1).with_sims(99);
        assert!(matches!(mediate(&t, &few), Err(Error::InvalidParameter(_))));
        let unknown = MediationSpec::new("x", "m", "y", 1).with_method("jackknife");
        assert!(matches!(mediate(&t, &unknown), Err(Error::UnknownStrategy { .. })));
        let missing = MediationSpec::new("x", "w", "y", 1);
        assert!(matches!(mediate(&t, &missing), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let t = chain(400, 0.5, 0.5, 0.1, 6);
        let spec = MediationSpec::new("x", "m", "y", 77).with_sims(150);
        let a = mediate(&t, &spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mediate(&t, &spec).unwrap());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn bootstrap_agrees_with_quasi_bayesian() {
        let t = chain(1500, 0.7, 0.5, 0.0, 17);
        let qb = mediate(&t, &MediationSpec::new("x", "m", "y", 3).with_sims(200)).unwrap();
        let bs = mediate(
            &t,
            &MediationSpec::new("x", "m", "y", 3)
                .with_sims(200)
                .with_method("bootstrap"),
        )
        .unwrap();
        assert!((qb.acme.estimate - bs.acme.estimate).abs() < 3.0 * qb.acme.std_error);
        assert!((qb.acme.std_error / bs.acme.std_error - 1.0).abs() < 0.35);
    }

    #[test]
    fn interval_noise_shrinks_with_more_draws() {
        let t = chain(300, 0.5, 0.5, 0.0, 23);
        let lowers = |sims: usize| -> Vec<f64> {
            (0..20)
                .map(|s| {
                    mediate(&t, &MediationSpec::new("x", "m", "y", 1000 + s).with_sims(sims))
                        .unwrap()
                        .acme
                        .ci_lower
                })
                .collect()
        };
        let small = stats::std_dev(&lowers(200));
        let large = stats::std_dev(&lowers(400));
        assert!(large < small, "{large} vs {small}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn acme_sign_follows_path_product(
                a in prop_oneof![-1.0f64..-0.4, 0.4f64..1.0],
                b in prop_oneof![-1.0f64..-0.4, 0.4f64..1.0],
                seed in 0u64..1000,
            ) {
                let t = chain(400, a, b, 0.3, seed);
                let r = mediate(&t, &MediationSpec::new("x", "m", "y", seed).with_sims(100)).unwrap();
                prop_assert_eq!(r.acme.estimate.signum(), (a * b).signum());
            }

            #[test]
            fn decomposition_holds(seed in 0u64..1000, c in -1.0f64..1.0) {
                let t = chain(200, 0.3, 0.4, c, seed);
                let r = mediate(&t, &MediationSpec::new("x", "m", "y", seed).with_sims(100)).unwrap();
                prop_assert!(r.decomposition.gap.abs() <= r.decomposition.tolerance);
                prop_assert!(r.acme.ci_lower <= r.acme.ci_upper);
                prop_assert!((0.0..=1.0).contains(&r.acme.p_value));
            }
        }
    }
}
