use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pathwise_core::classify::{classifiers, ClassifierReport};
use pathwise_core::hetero::{
    calibration_test_with, cate_by_variable_with, cate_out_of_bag, fit_causal_forest,
    CalibrationReport, CateSummary,
};
use pathwise_core::mediate::{
    direction_test, mediate, resolve_direction, run_simulation_suite_with, DirectionResolution,
    DirectionTestResult, EffectRow, MediationResult, MediationSpec, ResolveOptions, SimulationReport,
};
use pathwise_core::regress::ModelFormula;
use pathwise_core::rng::derive;
use pathwise_core::tabular::{evaluate, load_csv, random_impute, split, EvalReport, RuleSet, SplitSpec, Table};
use serde::Serialize;

use crate::config::{
    DirectionConfig, FitConfig, HeteroConfig, MediateConfig, PrepareConfig, RunConfig, SimulateConfig,
};
use crate::report::{check_inputs, Provenance, Writer};
use crate::CliError;

/// Seed and output directory shared by every command.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    fn writer<T: Serialize>(
        &self,
        command: &'static str,
        section: &T,
        inputs: &[&Path],
    ) -> Result<Writer, CliError> {
        let config = RunConfig::resolved(command, self.seed, section);
        Writer::new(&self.out, Provenance::new(command, self.seed, config, inputs)?)
    }
}

fn load(path: &Path) -> Result<Table, CliError> {
    Ok(load_csv(path, &RuleSet::default())?)
}

#[derive(Serialize)]
struct InputCounts {
    path: PathBuf,
    output: String,
    rows_read: usize,
    rows_filtered_out: usize,
    rows_written: usize,
    cells_recoded: usize,
}

#[derive(Serialize)]
struct PrepareReport {
    inputs: Vec<InputCounts>,
    columns: Vec<String>,
    group: Option<String>,
    missing_before: BTreeMap<String, usize>,
    imputed: BTreeMap<String, usize>,
    missing_after: BTreeMap<String, usize>,
    total_imputed: usize,
    rows_dropped: usize,
}

fn missing_counts(t: &Table) -> BTreeMap<String, usize> {
    t.columns()
        .iter()
        .map(|c| (c.name().to_string(), c.missing_count()))
        .collect()
}

pub fn prepare(ctx: &Context, cfg: PrepareConfig) -> Result<(), CliError> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Validation("[prepare] needs at least one input".into()));
    }
    let mut paths: Vec<&Path> = Vec::new();
    for input in &cfg.inputs {
        paths.push(&input.path);
        if let Some(r) = &input.rules {
            paths.push(r);
        }
        let name = &input.output;
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(CliError::Validation(format!("invalid output name `{name}`")));
        }
        if cfg.inputs.iter().filter(|i| &i.output == name).count() > 1 {
            return Err(CliError::Validation(format!("output `{name}` used twice")));
        }
    }
    check_inputs(&paths)?;

    let mut parts = Vec::new();
    let mut counts = Vec::new();
    for input in &cfg.inputs {
        let rules = match &input.rules {
            Some(p) => RuleSet::from_path(p)?,
            None => RuleSet::default(),
        };
        let raw = load_csv(&input.path, &rules)?;
        let rows_read = raw.n_rows();
        let mut t = match &input.filter {
            Some(f) => raw.filter_eq(&f.column, &f.value)?,
            None => raw,
        };
        if let Some(keep) = &cfg.keep {
            let present: Vec<&str> = keep
                .iter()
                .map(String::as_str)
                .filter(|k| t.has_column(k))
                .collect();
            t = t.select(&present)?;
        }
        let cells_recoded = rules
            .rules()
            .iter()
            .filter_map(|r| t.column(r.target()).ok())
            .map(|c| c.len() - c.missing_count())
            .sum();
        counts.push(InputCounts {
            path: input.path.clone(),
            output: input.output.clone(),
            rows_read,
            rows_filtered_out: rows_read - t.n_rows(),
            rows_written: t.n_rows(),
            cells_recoded,
        });
        parts.push(t);
    }
    let mut combined = Table::concat(&parts)?;
    if let Some(keep) = &cfg.keep {
        let names: Vec<&str> = keep.iter().map(String::as_str).collect();
        combined = combined.select(&names)?;
    }
    if let Some(g) = &cfg.group {
        combined.column(g)?;
    }

    let missing_before = missing_counts(&combined);
    let targets: Vec<String> = match &cfg.impute {
        Some(cols) => {
            let mut cols = cols.clone();
            cols.sort();
            cols.dedup();
            cols
        }
        None => missing_before
            .iter()
            .filter(|(name, n)| **n > 0 && Some(*name) != cfg.group.as_ref())
            .map(|(name, _)| name.clone())
            .collect(),
    };
    let mut imputed = BTreeMap::new();
    for col in &targets {
        let before = combined.column(col)?.missing_count();
        combined = random_impute(
            &combined,
            col,
            cfg.group.as_deref(),
            derive(ctx.seed, &format!("prepare/impute/{col}")),
        )?;
        imputed.insert(col.clone(), before - combined.column(col)?.missing_count());
    }

    let writer = ctx.writer("prepare", &cfg, &paths)?;
    let mut offset = 0;
    for (input, part) in cfg.inputs.iter().zip(&parts) {
        let rows: Vec<usize> = (offset..offset + part.n_rows()).collect();
        offset += part.n_rows();
        writer.data(&input.output, &combined.take_rows(&rows).to_csv_string()?)?;
    }
    let report = PrepareReport {
        columns: combined.names().iter().map(|s| s.to_string()).collect(),
        group: cfg.group.clone(),
        missing_after: missing_counts(&combined),
        total_imputed: imputed.values().sum(),
        rows_dropped: counts.iter().map(|c| c.rows_filtered_out).sum(),
        inputs: counts,
        missing_before,
        imputed,
    };
    writer.json("prepare_report.json", &report)
}

#[derive(Serialize)]
struct AccuracyRow {
    set: &'static str,
    model: String,
    status: &'static str,
    evaluation: Option<EvalReport>,
}

#[derive(Serialize)]
struct ModelEntry {
    name: String,
    report: ClassifierReport,
}

#[derive(Serialize)]
struct FitReport {
    n_rows: usize,
    n_train: usize,
    n_test: usize,
    n_external: Option<usize>,
    external: &'static str,
    accuracy: Vec<AccuracyRow>,
    models: Vec<ModelEntry>,
}

pub fn fit(ctx: &Context, cfg: FitConfig) -> Result<(), CliError> {
    let mut paths: Vec<&Path> = vec![&cfg.data];
    if let Some(e) = &cfg.external {
        paths.push(e);
    }
    check_inputs(&paths)?;
    let registry = classifiers();
    for name in &cfg.classifiers {
        registry.get(name)?;
    }
    let data = load(&cfg.data)?;
    let external = cfg.external.as_deref().map(load).transpose()?;
    let formula = ModelFormula::new(&cfg.response, &cfg.predictors);
    formula.validate()?;
    let (train, test) = split(
        &data,
        &SplitSpec {
            test_size: cfg.test_size,
            seed: derive(ctx.seed, "fit/split"),
        },
    )?;
    let options = cfg.options();

    let mut accuracy = Vec::new();
    let mut models = Vec::new();
    let mut unconverged = Vec::new();
    for name in &cfg.classifiers {
        let fitted = registry
            .get(name)?
            .fit(&train, &formula, &options, derive(ctx.seed, &format!("fit/{name}")))?;
        let internal = evaluate(&fitted.predict(&test)?, &test.complete(&cfg.response)?)?;
        accuracy.push(AccuracyRow {
            set: "internal",
            model: name.clone(),
            status: "ok",
            evaluation: Some(internal),
        });
        accuracy.push(match &external {
            Some(ext) => AccuracyRow {
                set: "external",
                model: name.clone(),
                status: "ok",
                evaluation: Some(evaluate(&fitted.predict(ext)?, &ext.complete(&cfg.response)?)?),
            },
            None => AccuracyRow {
                set: "external",
                model: name.clone(),
                status: "skipped",
                evaluation: None,
            },
        });
        let report = fitted.report();
        if let ClassifierReport::Logistic { coefficients, .. } = &report {
            if !coefficients.converged {
                unconverged.push(name.clone());
            }
        }
        models.push(ModelEntry {
            name: name.clone(),
            report,
        });
    }

    let writer = ctx.writer("fit", &cfg, &paths)?;
    let mut acc_csv = String::from("set,model,status,accuracy,tp,tn,fp,fn\n");
    for row in &accuracy {
        match &row.evaluation {
            Some(e) => acc_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.set, row.model, row.status, e.accuracy, e.tp, e.tn, e.fp, e.fn_
            )),
            None => acc_csv.push_str(&format!("{},{},{},,,,,\n", row.set, row.model, row.status)),
        }
    }
    writer.csv("accuracy.csv", &acc_csv)?;
    for m in &models {
        match &m.report {
            ClassifierReport::Logistic { coefficients, .. } => {
                let mut body = String::from("term,estimate,std_error,z,p,significant\n");
                for r in &coefficients.rows {
                    body.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        r.term, r.estimate, r.std_error, r.z, r.p, r.significant
                    ));
                }
                writer.csv(&format!("coefficients_{}.csv", m.name), &body)?;
            }
            ClassifierReport::RandomForest { importance, .. } => {
                writer.csv(&format!("importance_{}.csv", m.name), &importance.to_csv_string())?;
            }
        }
    }
    let report = FitReport {
        n_rows: data.n_rows(),
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        n_external: external.as_ref().map(Table::n_rows),
        external: if external.is_some() { "evaluated" } else { "skipped" },
        accuracy,
        models,
    };
    writer.json("fit_report.json", &report)?;
    if unconverged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "logistic fit did not converge: {}",
            unconverged.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct HeteroReport {
    n_rows: usize,
    n_trees: usize,
    treatment_threshold: f64,
    ate: f64,
    n_defined: usize,
    calibration: CalibrationReport,
    by_variable: CateSummary,
}

pub fn hetero(ctx: &Context, cfg: HeteroConfig) -> Result<(), CliError> {
    let paths: Vec<&Path> = vec![&cfg.data];
    check_inputs(&paths)?;
    let t = load(&cfg.data)?;
    let model = fit_causal_forest(
        &t,
        &cfg.outcome,
        &cfg.treatment,
        &cfg.covariates,
        &cfg.forest,
        derive(ctx.seed, "hetero/forest"),
    )?;
    let oob = cate_out_of_bag(&model, &t)?;
    let calibration = calibration_test_with(&model, &t, &oob)?;
    let by_variable = cate_by_variable_with(&model, &t, &oob)?;
    let writer = ctx.writer("hetero", &cfg, &paths)?;
    writer.csv("cate.csv", &oob.to_csv_string())?;
    writer.json(
        "hetero_report.json",
        &HeteroReport {
            n_rows: t.n_rows(),
            n_trees: model.trees.len(),
            treatment_threshold: model.treatment_threshold,
            ate: oob.ate,
            n_defined: oob.n_defined,
            calibration,
            by_variable,
        },
    )
}

#[derive(Serialize)]
struct MediateReport {
    table: Vec<EffectRow>,
    detail: MediationResult,
}

fn effect_csv(rows: &[EffectRow]) -> String {
    let mut body = String::from("effect,estimate,ci_lower,ci_upper,p_value,significant\n");
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label, r.estimate, r.ci_lower, r.ci_upper, r.p_value, r.significant
        ));
    }
    body
}

pub fn mediate_cmd(ctx: &Context, cfg: MediateConfig) -> Result<(), CliError> {
    let paths: Vec<&Path> = vec![&cfg.data];
    check_inputs(&paths)?;
    let t = load(&cfg.data)?;
    let mut spec = MediationSpec::new(&cfg.treatment, &cfg.mediator, &cfg.outcome, derive(ctx.seed, "mediate"))
        .with_covariates(&cfg.covariates)
        .with_sims(cfg.sims)
        .with_method(&cfg.method);
    spec.contrast = cfg.contrast.clone();
    let result = mediate(&t, &spec)?;
    let writer = ctx.writer("mediate", &cfg, &paths)?;
    let table = result.table();
    writer.csv("mediation.csv", &effect_csv(&table))?;
    writer.json(
        "mediation_report.json",
        &MediateReport {
            table,
            detail: result,
        },
    )
}

#[derive(Serialize)]
struct DirectionReport {
    test: DirectionTestResult,
    resolution: Option<DirectionResolution>,
}

pub fn direction(ctx: &Context, cfg: DirectionConfig) -> Result<(), CliError> {
    let paths: Vec<&Path> = vec![&cfg.data];
    check_inputs(&paths)?;
    let t = load(&cfg.data)?;
    let test = direction_test(
        &t,
        &cfg.x,
        &cfg.y,
        &cfg.covariates,
        cfg.n_boot,
        derive(ctx.seed, "direction/test"),
    )?;
    let resolution = match &cfg.outcome {
        Some(outcome) => Some(resolve_direction(
            &t,
            &cfg.x,
            &cfg.y,
            outcome,
            &cfg.covariates,
            &ResolveOptions {
                weight: cfg.weight,
                sims: cfg.sims,
                seed: derive(ctx.seed, "direction/resolve"),
                method: cfg.method.clone(),
            },
        )?),
        None => None,
    };
    let writer = ctx.writer("direction", &cfg, &paths)?;
    let verdict = serde_json::to_value(test.verdict).expect("verdict serializes");
    let mut body = String::from("ordering,covariance,ci_lower,ci_upper,significant,verdict\n");
    for o in [&test.x_to_y, &test.y_to_x] {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.ordering,
            o.covariance,
            o.ci_lower,
            o.ci_upper,
            o.significant,
            verdict.as_str().unwrap_or_default()
        ));
    }
    writer.csv("direction.csv", &body)?;
    if let Some(r) = &resolution {
        let mut body = String::from("pathway,expected_acme,observed_acme,sign_match,relative_discrepancy\n");
        for e in &r.evidence {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                e.pathway,
                e.expected_acme,
                e.observed_acme,
                e.sign_match,
                e.relative_discrepancy.map(|d| d.to_string()).unwrap_or_default()
            ));
        }
        writer.csv("resolution.csv", &body)?;
    }
    writer.json("direction_report.json", &DirectionReport { test, resolution })
}

pub fn simulate(ctx: &Context, cfg: SimulateConfig) -> Result<(), CliError> {
    let report: SimulationReport = run_simulation_suite_with(ctx.seed, cfg.sims, &cfg.method)?;
    let writer = ctx.writer("simulate", &cfg, &[])?;
    let mut body = String::from(
        "group,pathway,expected_acme,observed_acme,acme_lower,acme_upper,acme_pass,expected_ade,observed_ade,ade_lower,ade_upper,ade_pass,pass\n",
    );
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    for r in &report.rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.group.label(),
            r.pathway.label(),
            r.expected_acme,
            r.observed_acme,
            r.acme_band.lower,
            r.acme_band.upper,
            r.acme_pass,
            opt(r.expected_ade),
            r.observed_ade,
            opt(r.ade_band.map(|b| b.lower)),
            opt(r.ade_band.map(|b| b.upper)),
            r.ade_pass.map(|p| p.to_string()).unwrap_or_else(|| "exempt".into()),
            r.pass
        ));
    }
    writer.csv("simulation.csv", &body)?;
    writer.json("simulation_report.json", &report)?;
    if report.summary.passed {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!(
            "simulation cells out of tolerance: {}",
            report.summary.failed.join("; ")
        )))
    }
}
