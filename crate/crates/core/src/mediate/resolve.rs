//! Choose between the two mediation orderings of a variable pair by
//! comparing each ordering's observed ACME with the value it implies.

use serde::{Deserialize, Serialize};

use super::{mediate, MediationResult, MediationSpec, DEFAULT_METHOD, DEFAULT_SIMS};
use crate::error::Result;
use crate::rng;
use crate::tabular::Table;

const ZERO: f64 = 1e-9;

/// Weight given to the mediator → outcome path when forming the expectation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathWeight {
    /// Expected ACME is the treatment → mediator coefficient alone.
    #[default]
    Unit,
    /// Expected ACME is the product of both path coefficients.
    Product,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolveOptions {
    #[serde(default)]
    pub weight: PathWeight,
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

impl ResolveOptions {
    pub fn new(seed: u64) -> Self {
        ResolveOptions {
            weight: PathWeight::Unit,
            sims: DEFAULT_SIMS,
            seed,
            method: DEFAULT_METHOD.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingEvidence {
    /// `treatment-mediator-outcome`.
    pub pathway: String,
    pub treatment: String,
    pub mediator: String,
    pub mediator_coefficient: f64,
    pub path_weight: f64,
    pub expected_acme: f64,
    pub observed_acme: f64,
    pub sign_match: bool,
    pub relative_discrepancy: Option<f64>,
    pub mediation: MediationResult,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolved {
    /// `a` acts on the outcome through `b`.
    AThroughB,
    /// `b` acts on the outcome through `a`.
    BThroughA,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionResolution {
    pub verdict: Resolved,
    /// Winning pathway label, when there is one.
    pub pathway: Option<String>,
    pub reason: String,
    pub weight: PathWeight,
    pub evidence: [OrderingEvidence; 2],
}

fn evidence(
    t: &Table,
    treatment: &str,
    mediator: &str,
    outcome: &str,
    covariates: &[String],
    opts: &ResolveOptions,
) -> Result<OrderingEvidence> {
    let pathway = format!("{treatment}-{mediator}-{outcome}");
    let spec = MediationSpec::new(treatment, mediator, outcome, rng::derive(opts.seed, &pathway))
        .with_covariates(covariates)
        .with_sims(opts.sims)
        .with_method(&opts.method);
    let mediation = mediate(t, &spec)?;
    let path_weight = match opts.weight {
        PathWeight::Unit => 1.0,
        PathWeight::Product => mediation.outcome_mediator_coefficient,
    };
    let expected = mediation.mediator_coefficient * path_weight;
    let observed = mediation.acme.estimate;
    let defined = expected.abs() >= ZERO;
    let sign_match = defined && observed != 0.0 && observed.signum() == expected.signum();
    Ok(OrderingEvidence {
        pathway,
        treatment: treatment.to_string(),
        mediator: mediator.to_string(),
        mediator_coefficient: mediation.mediator_coefficient,
        path_weight,
        expected_acme: expected,
        observed_acme: observed,
        sign_match,
        relative_discrepancy: defined.then(|| (observed - expected).abs() / expected.abs()),
        mediation,
    })
}

/// Run both orderings of `a` and `b` and pick the one whose ACME agrees
/// with its expectation.
pub fn resolve_direction<S: AsRef<str>>(
    t: &Table,
    a: &str,
    b: &str,
    outcome: &str,
    covariates: &[S],
    opts: &ResolveOptions,
) -> Result<DirectionResolution> {
    let covs: Vec<String> = covariates.iter().map(|c| c.as_ref().to_string()).collect();
    let ab = evidence(t, a, b, outcome, &covs, opts)?;
    let ba = evidence(t, b, a, outcome, &covs, opts)?;
    let (verdict, reason) = decide(&ab, &ba);
    let pathway = match verdict {
        Resolved::AThroughB => Some(ab.pathway.clone()),
        Resolved::BThroughA => Some(ba.pathway.clone()),
        Resolved::Inconclusive => None,
    };
    Ok(DirectionResolution {
        verdict,
        pathway,
        reason,
        weight: opts.weight,
        evidence: [ab, ba],
    })
}

fn decide(ab: &OrderingEvidence, ba: &OrderingEvidence) -> (Resolved, String) {
    if ab.expected_acme.abs() < ZERO && ba.expected_acme.abs() < ZERO {
        return (Resolved::Inconclusive, "no mediated path expected".into());
    }
    match (ab.sign_match, ba.sign_match) {
        (false, false) => (Resolved::Inconclusive, "sign mismatch in both orderings".into()),
        (true, false) => (Resolved::AThroughB, format!("only {} matches in sign", ab.pathway)),
        (false, true) => (Resolved::BThroughA, format!("only {} matches in sign", ba.pathway)),
        (true, true) => {
            let da = ab.relative_discrepancy.unwrap_or(f64::INFINITY);
            let db = ba.relative_discrepancy.unwrap_or(f64::INFINITY);
            if da < db {
                (Resolved::AThroughB, format!("{} has the smaller relative discrepancy", ab.pathway))
            } else if db < da {
                (Resolved::BThroughA, format!("{} has the smaller relative discrepancy", ba.pathway))
            } else {
                (Resolved::Inconclusive, "equal relative discrepancies".into())
            }
        }
    }
}
