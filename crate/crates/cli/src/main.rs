//! `pathwise`: reproducible command-line runs of the analysis pipeline.

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathwise_core::mediate::PathWeight;

use crate::commands::Context;
use crate::config::{Filter, Overrides, PrepareInput, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Acceptance(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Acceptance(m) => write!(f, "acceptance failure: {m}"),
        }
    }
}

impl From<pathwise_core::Error> for CliError {
    fn from(e: pathwise_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "pathwise", version, about = "Depression predictor, heterogeneity and mediation analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config; a previously written JSON report replays its run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: pathwise-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode, filter, impute and write harmonized tables.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Raw CSV; repeat for several inputs. Replaces the configured inputs.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Encoding rules applied to every `--input`.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Row filter `column=value` applied to every `--input`.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long = "keep")]
        keep: Vec<String>,
        #[arg(long = "impute")]
        impute: Vec<String>,
        #[arg(long)]
        group: Option<String>,
    },
    /// Split, fit the classifiers and report accuracy.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        response: Option<String>,
        #[arg(long = "predictor")]
        predictors: Vec<String>,
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long = "classifier")]
        classifiers: Vec<String>,
    },
    /// Causal forest effects, calibration and per-variable summaries.
    Hetero {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        outcome: Option<String>,
        #[arg(long)]
        treatment: Option<String>,
        #[arg(long = "covariate")]
        covariates: Vec<String>,
    },
    /// Mediation analysis of one treatment, mediator and outcome.
    Mediate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        treatment: Option<String>,
        #[arg(long)]
        mediator: Option<String>,
        #[arg(long)]
        outcome: Option<String>,
        #[arg(long = "covariate")]
        covariates: Vec<String>,
        #[arg(long)]
        sims: Option<usize>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Direction-of-dependence test, optionally with mediation ordering.
    Direction {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: Option<String>,
        #[arg(long = "covariate")]
        covariates: Vec<String>,
        #[arg(long)]
        n_boot: Option<usize>,
        #[arg(long)]
        outcome: Option<String>,
        #[arg(long, value_parser = parse_weight)]
        weight: Option<PathWeight>,
    },
    /// Run the synthetic mediation suite; exits 3 if any cell fails.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sims: Option<usize>,
        #[arg(long)]
        method: Option<String>,
    },
}

fn parse_weight(s: &str) -> Result<PathWeight, String> {
    match s {
        "unit" => Ok(PathWeight::Unit),
        "product" => Ok(PathWeight::Product),
        _ => Err(format!("expected `unit` or `product`, got `{s}`")),
    }
}

fn context(common: &Common) -> Result<(Context, RunConfig), CliError> {
    let config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = common
        .seed
        .or(config.seed)
        .ok_or_else(|| CliError::Validation("a seed is required (--seed or `seed` in the config)".into()))?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("pathwise-out"));
    Ok((Context { seed, out }, config))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare {
            common,
            inputs,
            rules,
            filter,
            keep,
            impute,
            group,
        } => {
            let (ctx, cfg) = context(&common)?;
            let filter = filter
                .map(|f| match f.split_once('=') {
                    Some((column, value)) => Ok(Filter {
                        column: column.to_string(),
                        value: value.to_string(),
                    }),
                    None => Err(CliError::Validation(format!("filter `{f}` is not `column=value`"))),
                })
                .transpose()?;
            let mut o = Overrides::default();
            if !inputs.is_empty() {
                let list: Vec<PrepareInput> = inputs
                    .iter()
                    .map(|p| PrepareInput {
                        output: format!(
                            "{}.harmonized.csv",
                            p.file_stem().and_then(|s| s.to_str()).unwrap_or("input")
                        ),
                        path: p.clone(),
                        rules: rules.clone(),
                        filter: filter.clone(),
                    })
                    .collect();
                o.set("inputs", Some(list));
            }
            o.set_list("keep", &keep);
            o.set_list("impute", &impute);
            o.set("group", group);
            commands::prepare(&ctx, o.apply("prepare", cfg.section("prepare"))?)
        }
        Command::Fit {
            common,
            data,
            external,
            response,
            predictors,
            test_size,
            classifiers,
        } => {
            let (ctx, cfg) = context(&common)?;
            let mut o = Overrides::default();
            o.set("data", data);
            o.set("external", external);
            o.set("response", response);
            o.set_list("predictors", &predictors);
            o.set("test_size", test_size);
            o.set_list("classifiers", &classifiers);
            commands::fit(&ctx, o.apply("fit", cfg.section("fit"))?)
        }
        Command::Hetero {
            common,
            data,
            outcome,
            treatment,
            covariates,
        } => {
            let (ctx, cfg) = context(&common)?;
            let mut o = Overrides::default();
            o.set("data", data);
            o.set("outcome", outcome);
            o.set("treatment", treatment);
            o.set_list("covariates", &covariates);
            commands::hetero(&ctx, o.apply("hetero", cfg.section("hetero"))?)
        }
        Command::Mediate {
            common,
            data,
            treatment,
            mediator,
            outcome,
            covariates,
            sims,
            method,
        } => {
            let (ctx, cfg) = context(&common)?;
            let mut o = Overrides::default();
            o.set("data", data);
            o.set("treatment", treatment);
            o.set("mediator", mediator);
            o.set("outcome", outcome);
            o.set_list("covariates", &covariates);
            o.set("sims", sims);
            o.set("method", method);
            commands::mediate_cmd(&ctx, o.apply("mediate", cfg.section("mediate"))?)
        }
        Command::Direction {
            common,
            data,
            x,
            y,
            covariates,
            n_boot,
            outcome,
            weight,
        } => {
            let (ctx, cfg) = context(&common)?;
            let mut o = Overrides::default();
            o.set("data", data);
            o.set("x", x);
            o.set("y", y);
            o.set_list("covariates", &covariates);
            o.set("n_boot", n_boot);
            o.set("outcome", outcome);
            o.set("weight", weight);
            commands::direction(&ctx, o.apply("direction", cfg.section("direction"))?)
        }
        Command::Simulate {
            common,
            sims,
            method,
        } => {
            let (ctx, cfg) = context(&common)?;
            let mut o = Overrides::default();
            o.set("sims", sims);
            o.set("method", method);
            commands::simulate(&ctx, o.apply("simulate", cfg.section("simulate"))?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
