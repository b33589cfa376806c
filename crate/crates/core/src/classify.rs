//! Binary classifiers behind a common interface, looked up by name.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forest::{fit_forest, importance, predict_forest, ForestModel, ForestParams, ImportanceReport};
use crate::regress::{fit_logistic, stepwise, CoefficientReport, Family, GlmFit, ModelFormula, Step};
use crate::registry::Registry;
use crate::tabular::Table;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOptions {
    #[serde(default)]
    pub forest: ForestParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ClassifierReport {
    Logistic {
        coefficients: CoefficientReport,
        trace: Vec<Step>,
        warnings: Vec<String>,
    },
    RandomForest {
        n_trees: usize,
        mtry: usize,
        importance: ImportanceReport,
    },
}

pub trait Classifier: Send + Sync {
    fn fit(
        &self,
        train: &Table,
        formula: &ModelFormula,
        options: &ClassifierOptions,
        seed: u64,
    ) -> Result<Box<dyn FittedClassifier>>;
}

pub trait FittedClassifier: Send + Sync {
    /// Estimated probability of class 1 per row.
    fn probabilities(&self, t: &Table) -> Result<Vec<f64>>;

    /// Class 1 iff the probability exceeds one half.
    fn predict(&self, t: &Table) -> Result<Vec<f64>> {
        Ok(self
            .probabilities(t)?
            .into_iter()
            .map(|p| if p > 0.5 { 1.0 } else { 0.0 })
            .collect())
    }

    fn report(&self) -> ClassifierReport;
}

/// Logistic regression, optionally reduced by stepwise AIC.
pub struct Logistic {
    pub stepwise: bool,
}

struct FittedLogistic {
    fit: GlmFit,
    trace: Vec<Step>,
    warnings: Vec<String>,
}

impl Classifier for Logistic {
    fn fit(
        &self,
        train: &Table,
        formula: &ModelFormula,
        _options: &ClassifierOptions,
        _seed: u64,
    ) -> Result<Box<dyn FittedClassifier>> {
        let fitted = if self.stepwise {
            let s = stepwise(train, formula, Family::Logistic)?;
            FittedLogistic {
                fit: s.fit,
                trace: s.trace,
                warnings: s.warnings,
            }
        } else {
            let fit = fit_logistic(train, formula)?;
            FittedLogistic {
                warnings: fit.warnings.clone(),
                fit,
                trace: Vec::new(),
            }
        };
        Ok(Box::new(fitted))
    }
}

impl FittedClassifier for FittedLogistic {
    fn probabilities(&self, t: &Table) -> Result<Vec<f64>> {
        self.fit.predict_prob(t)
    }

    fn report(&self) -> ClassifierReport {
        ClassifierReport::Logistic {
            coefficients: self.fit.report(),
            trace: self.trace.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

pub struct RandomForest;

struct FittedForest(ForestModel);

impl Classifier for RandomForest {
    fn fit(
        &self,
        train: &Table,
        formula: &ModelFormula,
        options: &ClassifierOptions,
        seed: u64,
    ) -> Result<Box<dyn FittedClassifier>> {
        Ok(Box::new(FittedForest(fit_forest(
            train,
            formula,
            &options.forest,
            seed,
        )?)))
    }
}

impl FittedClassifier for FittedForest {
    fn probabilities(&self, t: &Table) -> Result<Vec<f64>> {
        Ok(predict_forest(&self.0, t)?.probabilities)
    }

    fn report(&self) -> ClassifierReport {
        ClassifierReport::RandomForest {
            n_trees: self.0.trees.len(),
            mtry: self.0.params.resolved_mtry(self.0.features.len()),
            importance: importance(&self.0),
        }
    }
}

pub fn classifiers() -> Registry<dyn Classifier> {
    let mut reg: Registry<dyn Classifier> = Registry::new("classifier");
    reg.register("logistic", Arc::new(Logistic { stepwise: false }));
    reg.register("logistic-stepwise", Arc::new(Logistic { stepwise: true }));
    reg.register("random-forest", Arc::new(RandomForest));
    reg
}
