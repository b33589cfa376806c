use std::path::{Path, PathBuf};

use pathwise_core::classify::ClassifierOptions;
use pathwise_core::forest::ForestParams;
use pathwise_core::hetero::CausalForestParams;
use pathwise_core::mediate::{Contrast, PathWeight, DEFAULT_METHOD, DEFAULT_SIMS};
use pathwise_core::mediate::direction::DEFAULT_BOOT;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Everything a run depends on. Reports embed the resolved form, so a
/// report can be passed back through `--config` to replay the run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prepare: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hetero: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mediate: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<Value>,
}

impl RunConfig {
    /// Read TOML, JSON, or a previously written report.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: String| CliError::Validation(format!("config {}: {e}", path.display()));
        let is_json = path.extension().is_some_and(|e| e == "json");
        let value: Value = if is_json {
            let v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            match v.get("provenance").and_then(|p| p.get("config")) {
                Some(embedded) => embedded.clone(),
                None => v,
            }
        } else {
            let t: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
            serde_json::to_value(t).map_err(|e| bad(e.to_string()))?
        };
        serde_json::from_value(value).map_err(|e| bad(e.to_string()))
    }

    pub fn section(&self, command: &str) -> Option<&Value> {
        match command {
            "prepare" => self.prepare.as_ref(),
            "fit" => self.fit.as_ref(),
            "hetero" => self.hetero.as_ref(),
            "mediate" => self.mediate.as_ref(),
            "direction" => self.direction.as_ref(),
            "simulate" => self.simulate.as_ref(),
            _ => None,
        }
    }

    /// The config as embedded in a report: seed plus the one section used.
    pub fn resolved<T: Serialize>(command: &str, seed: u64, section: &T) -> Self {
        let value = serde_json::to_value(section).expect("config sections serialize");
        let mut cfg = RunConfig {
            seed: Some(seed),
            ..RunConfig::default()
        };
        let slot = match command {
            "prepare" => &mut cfg.prepare,
            "fit" => &mut cfg.fit,
            "hetero" => &mut cfg.hetero,
            "mediate" => &mut cfg.mediate,
            "direction" => &mut cfg.direction,
            _ => &mut cfg.simulate,
        };
        *slot = Some(value);
        cfg
    }
}

/// Command-line values that replace or extend a config section.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0
                .insert(key.to_string(), serde_json::to_value(v).expect("serializable override"));
        }
    }

    pub fn set_list(&mut self, key: &str, values: &[String]) {
        if !values.is_empty() {
            self.set(key, Some(values));
        }
    }

    /// Merge onto the config section and decode it.
    pub fn apply<T: DeserializeOwned>(self, command: &str, base: Option<&Value>) -> Result<T, CliError> {
        let mut merged = match base {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => {
                return Err(CliError::Validation(format!("[{command}] must be a table")));
            }
            None => Map::new(),
        };
        merged.extend(self.0);
        serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::Validation(format!("[{command}] {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    pub column: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareInput {
    pub path: PathBuf,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub filter: Option<Filter>,
    /// File name of the harmonized table inside the output directory.
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareConfig {
    pub inputs: Vec<PrepareInput>,
    /// Columns to keep, in order; every column when absent.
    #[serde(default)]
    pub keep: Option<Vec<String>>,
    /// Columns to impute; every column with missing cells when absent.
    #[serde(default)]
    pub impute: Option<Vec<String>>,
    /// Impute within the levels of this column.
    #[serde(default)]
    pub group: Option<String>,
}

fn default_classifiers() -> Vec<String> {
    vec!["logistic-stepwise".into(), "random-forest".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub external: Option<PathBuf>,
    pub response: String,
    pub predictors: Vec<String>,
    pub test_size: usize,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<String>,
    #[serde(default)]
    pub forest: ForestParams,
}

impl FitConfig {
    pub fn options(&self) -> ClassifierOptions {
        ClassifierOptions {
            forest: self.forest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroConfig {
    pub data: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub forest: CausalForestParams,
}

fn default_sims() -> usize {
    DEFAULT_SIMS
}

fn default_method() -> String {
    DEFAULT_METHOD.to_string()
}

fn default_boot() -> usize {
    DEFAULT_BOOT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediateConfig {
    pub data: PathBuf,
    pub treatment: String,
    pub mediator: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub contrast: Option<Contrast>,
    #[serde(default = "default_sims")]
    pub sims: usize,
    #[serde(default = "default_method")]
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    pub data: PathBuf,
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    /// When set, both mediation orderings of x and y are also compared.
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub weight: PathWeight,
    #[serde(default = "default_sims")]
    pub sims: usize,
    #[serde(default = "default_method")]
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_sims")]
    pub sims: usize,
    #[serde(default = "default_method")]
    pub method: String,
}
