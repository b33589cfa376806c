//! Synthetic mediation groups with known structure and the suite that
//! checks estimated effects against their analytic values.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mediate, MediationSpec, DEFAULT_METHOD, DEFAULT_SIMS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tabular::Table;

pub const GROUP_ROWS: usize = 3000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimulationGroup {
    #[serde(rename = "1")]
    G1,
    #[serde(rename = "2.1")]
    G2_1,
    #[serde(rename = "2.2")]
    G2_2,
    #[serde(rename = "3.1")]
    G3_1,
    #[serde(rename = "3.2")]
    G3_2,
    #[serde(rename = "3.3")]
    G3_3,
    #[serde(rename = "3.4")]
    G3_4,
}

impl SimulationGroup {
    pub const ALL: [SimulationGroup; 7] = [
        SimulationGroup::G1,
        SimulationGroup::G2_1,
        SimulationGroup::G2_2,
        SimulationGroup::G3_1,
        SimulationGroup::G3_2,
        SimulationGroup::G3_3,
        SimulationGroup::G3_4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SimulationGroup::G1 => "1",
            SimulationGroup::G2_1 => "2.1",
            SimulationGroup::G2_2 => "2.2",
            SimulationGroup::G3_1 => "3.1",
            SimulationGroup::G3_2 => "3.2",
            SimulationGroup::G3_3 => "3.3",
            SimulationGroup::G3_4 => "3.4",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.label() == label)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown simulation group `{label}`")))
    }
}

/// How `y` is produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum YRule {
    /// Drawn over the same range as `x`, independently.
    Independent,
    /// `y = c·x + error`.
    Linear { c: f64 },
}

/// `z = wx·x + wy·y + error`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZRule {
    pub wx: f64,
    pub wy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationGroupSpec {
    pub group: SimulationGroup,
    pub n: usize,
    pub x_range: [i64; 2],
    pub error_range: [i64; 2],
    pub y_rule: YRule,
    pub z_rule: ZRule,
}

impl SimulationGroupSpec {
    pub fn for_group(group: SimulationGroup) -> Self {
        use SimulationGroup::*;
        let y_rule = match group {
            G1 | G2_1 | G2_2 => YRule::Independent,
            G3_1 => YRule::Linear { c: 1.0 },
            G3_2 => YRule::Linear { c: 1000.0 },
            G3_3 => YRule::Linear { c: 0.1 },
            G3_4 => YRule::Linear { c: 0.001 },
        };
        let z_rule = match group {
            G1 => ZRule { wx: 1.0, wy: 0.0 },
            G2_2 => ZRule { wx: 0.8, wy: 0.2 },
            _ => ZRule { wx: 1.0, wy: 1.0 },
        };
        SimulationGroupSpec {
            group,
            n: GROUP_ROWS,
            x_range: [1, 10_000],
            error_range: [1, 10],
            y_rule,
            z_rule,
        }
    }

    /// Variance of a discrete uniform on `[lo, hi]`.
    fn uniform_variance([lo, hi]: [i64; 2]) -> f64 {
        let k = (hi - lo + 1) as f64;
        (k * k - 1.0) / 12.0
    }

    fn var_x(&self) -> f64 {
        Self::uniform_variance(self.x_range)
    }

    fn var_e(&self) -> f64 {
        Self::uniform_variance(self.error_range)
    }

    /// Population least-squares slope of the mediator on the treatment.
    fn mediator_slope(&self, pathway: Pathway) -> f64 {
        match (self.y_rule, pathway) {
            (YRule::Independent, _) => 0.0,
            (YRule::Linear { c }, Pathway::XYZ) => c,
            (YRule::Linear { c }, Pathway::YXZ) => {
                let vx = self.var_x();
                c * vx / (c * c * vx + self.var_e())
            }
        }
    }

    fn outcome_weights(&self, pathway: Pathway) -> (f64, f64) {
        match pathway {
            Pathway::XYZ => (self.z_rule.wx, self.z_rule.wy),
            Pathway::YXZ => (self.z_rule.wy, self.z_rule.wx),
        }
    }

    /// Analytic ACME per unit change of the treatment.
    pub fn expected_acme(&self, pathway: Pathway) -> f64 {
        self.mediator_slope(pathway) * self.outcome_weights(pathway).1
    }

    /// Analytic ADE, defined only when `y` is generated independently.
    pub fn expected_ade(&self, pathway: Pathway) -> Option<f64> {
        match self.y_rule {
            YRule::Independent => Some(self.outcome_weights(pathway).0),
            YRule::Linear { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pathway {
    #[serde(rename = "x-y-z")]
    XYZ,
    #[serde(rename = "y-x-z")]
    YXZ,
}

impl Pathway {
    pub const BOTH: [Pathway; 2] = [Pathway::XYZ, Pathway::YXZ];

    pub fn label(self) -> &'static str {
        match self {
            Pathway::XYZ => "x-y-z",
            Pathway::YXZ => "y-x-z",
        }
    }

    /// `(treatment, mediator)` column names.
    pub fn roles(self) -> (&'static str, &'static str) {
        match self {
            Pathway::XYZ => ("x", "y"),
            Pathway::YXZ => ("y", "x"),
        }
    }
}

/// Draw the `x`, `y`, `z` columns of one group.
pub fn generate_group(spec: &SimulationGroupSpec, seed: u64) -> Table {
    let mut r = rng::seeded(seed);
    let [xl, xh] = spec.x_range;
    let [el, eh] = spec.error_range;
    let n = spec.n;
    let x: Vec<f64> = (0..n).map(|_| r.random_range(xl..=xh) as f64).collect();
    let y: Vec<f64> = match spec.y_rule {
        YRule::Independent => (0..n).map(|_| r.random_range(xl..=xh) as f64).collect(),
        YRule::Linear { c } => x
            .iter()
            .map(|x| c * x + r.random_range(el..=eh) as f64)
            .collect(),
    };
    let z: Vec<f64> = x
        .iter()
        .zip(&y)
        .map(|(x, y)| spec.z_rule.wx * x + spec.z_rule.wy * y + r.random_range(el..=eh) as f64)
        .collect();
    Table::from_numeric(vec![("x", x), ("y", y), ("z", z)]).expect("equal lengths")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    fn around(center: f64, half: f64) -> Self {
        Band {
            lower: center - half,
            upper: center + half,
        }
    }

    fn range(lower: f64, upper: f64) -> Self {
        Band { lower, upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Acceptance bands for ACME and (where compared) ADE.
pub fn bands(group: SimulationGroup, pathway: Pathway) -> (Band, Option<Band>) {
    use Pathway::*;
    use SimulationGroup::*;
    match (group, pathway) {
        (G1, XYZ) => (Band::around(0.0, 0.02), Some(Band::range(0.99, 1.01))),
        (G1, YXZ) => (Band::around(0.0, 0.05), Some(Band::around(0.0, 0.01))),
        (G2_1, _) => (Band::around(0.0, 0.05), Some(Band::range(0.99, 1.01))),
        (G2_2, XYZ) => (Band::around(0.0, 0.05), Some(Band::range(0.79, 0.81))),
        (G2_2, YXZ) => (Band::around(0.0, 0.05), Some(Band::range(0.19, 0.21))),
        (G3_1, _) => (Band::range(0.95, 1.05), None),
        (G3_2, XYZ) => (Band::range(980.0, 1020.0), None),
        (G3_2, YXZ) => (Band::around(0.0, 0.1), None),
        (G3_3, XYZ) => (Band::range(0.09, 0.11), None),
        (G3_3, YXZ) => (Band::range(9.5, 10.5), None),
        (G3_4, XYZ) => (Band::range(0.0005, 0.0015), None),
        (G3_4, YXZ) => (Band::range(488.0, 518.0), None),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub group: SimulationGroup,
    pub pathway: Pathway,
    pub expected_acme: f64,
    pub observed_acme: f64,
    pub acme_band: Band,
    pub acme_pass: bool,
    pub expected_ade: Option<f64>,
    pub observed_ade: f64,
    /// `None` marks a comparison-exempt cell.
    pub ade_band: Option<Band>,
    pub ade_pass: Option<bool>,
    pub pass: bool,
}

impl SimulationRow {
    fn evaluate(&mut self) {
        self.acme_pass = self.acme_band.contains(self.observed_acme);
        self.ade_pass = self.ade_band.map(|b| b.contains(self.observed_ade));
        self.pass = self.acme_pass && self.ade_pass.unwrap_or(true);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub rows: usize,
    pub failed: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub n: usize,
    pub sims: usize,
    pub method: String,
    pub rows: Vec<SimulationRow>,
    pub summary: SimulationSummary,
}

impl SimulationReport {
    fn summarize(rows: &[SimulationRow]) -> SimulationSummary {
        let failed: Vec<String> = rows
            .iter()
            .filter(|r| !r.pass)
            .map(|r| format!("{} {}", r.group.label(), r.pathway.label()))
            .collect();
        SimulationSummary {
            rows: rows.len(),
            passed: failed.is_empty(),
            failed,
        }
    }

    /// Re-derive every verdict from the recorded numbers and bands.
    pub fn recheck(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.iter_mut().for_each(SimulationRow::evaluate);
        rows == self.rows && Self::summarize(&rows) == self.summary
    }

    pub fn row(&self, group: SimulationGroup, pathway: Pathway) -> Option<&SimulationRow> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.pathway == pathway)
    }
}

pub fn run_simulation_suite(seed: u64) -> Result<SimulationReport> {
    run_simulation_suite_with(seed, DEFAULT_SIMS, DEFAULT_METHOD)
}

pub fn run_simulation_suite_with(seed: u64, sims: usize, method: &str) -> Result<SimulationReport> {
    let cells: Vec<(SimulationGroup, Pathway)> = SimulationGroup::ALL
        .into_iter()
        .flat_map(|g| Pathway::BOTH.map(|p| (g, p)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(group, pathway)| {
            let spec = SimulationGroupSpec::for_group(group);
            let data_seed = rng::derive(seed, &format!("group/{}/data", group.label()));
            let table = generate_group(&spec, data_seed);
            let (treatment, mediator) = pathway.roles();
            let med_seed = rng::derive(seed, &format!("group/{}/{}", group.label(), pathway.label()));
            let ms = MediationSpec::new(treatment, mediator, "z", med_seed)
                .with_sims(sims)
                .with_method(method);
            let res = mediate(&table, &ms)?;
            let (acme_band, ade_band) = bands(group, pathway);
            let mut row = SimulationRow {
                group,
                pathway,
                expected_acme: spec.expected_acme(pathway),
                observed_acme: res.acme.estimate,
                acme_band,
                acme_pass: false,
                expected_ade: spec.expected_ade(pathway),
                observed_ade: res.ade.estimate,
                ade_band,
                ade_pass: None,
                pass: false,
            };
            row.evaluate();
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        seed,
        n: GROUP_ROWS,
        sims,
        method: method.to_string(),
        summary: SimulationReport::summarize(&rows),
        rows,
    })
}
