//! Residual-independence test for the direction of dependence.
//!
//! If `a` causes `b` linearly with a non-normal `a`, the residuals of `b ~ a`
//! carry no information about `a`, while the residuals of the reversed model
//! do. The statistic for the ordering `a → b` is `Cov(a², e)` with `e` the
//! residuals of `b ~ a`; a bootstrap interval excluding zero rejects that
//! ordering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::{fit_linear, ModelFormula};
use crate::rng;
use crate::stats;
use crate::tabular::Table;
use rand::Rng;

pub const MIN_ROWS: usize = 30;
pub const DEFAULT_BOOT: usize = 2000;
const MIN_BOOT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "x->y")]
    XCausesY,
    #[serde(rename = "y->x")]
    YCausesX,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingStat {
    pub ordering: String,
    pub covariance: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Interval excludes zero.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionTestResult {
    pub x: String,
    pub y: String,
    pub covariates: Vec<String>,
    pub n_obs: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub x_to_y: OrderingStat,
    pub y_to_x: OrderingStat,
    pub verdict: Verdict,
}

/// `Cov(a², residuals of b ~ a)` over the given rows.
fn statistic(a: &[f64], b: &[f64], rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    let (mut ma, mut mb) = (0.0, 0.0);
    for &i in rows {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    let (mut sab, mut saa) = (0.0, 0.0);
    for &i in rows {
        let da = a[i] - ma;
        sab += da * (b[i] - mb);
        saa += da * da;
    }
    if saa == 0.0 {
        return f64::NAN;
    }
    let slope = sab / saa;
    let mut ma2 = 0.0;
    for &i in rows {
        ma2 += a[i] * a[i];
    }
    ma2 /= n;
    // Residuals have mean zero, so only the squared predictor is centered.
    let mut cov = 0.0;
    for &i in rows {
        let e = b[i] - mb - slope * (a[i] - ma);
        cov += (a[i] * a[i] - ma2) * e;
    }
    cov / (n - 1.0)
}

fn residualize(t: &Table, target: &str, covariates: &[String]) -> Result<Vec<f64>> {
    let values = t.complete(target)?;
    if covariates.is_empty() {
        return Ok(values);
    }
    let fit = fit_linear(t, &ModelFormula::new(target, covariates))?;
    let fitted = fit.linear_predictor(t)?;
    Ok(values.iter().zip(&fitted).map(|(v, f)| v - f).collect())
}

fn ordering(label: &str, point: f64, mut boot: Vec<f64>) -> OrderingStat {
    boot.retain(|v| v.is_finite());
    boot.sort_by(f64::total_cmp);
    let lo = stats::quantile_sorted(&boot, 0.025);
    let hi = stats::quantile_sorted(&boot, 0.975);
    OrderingStat {
        ordering: label.to_string(),
        covariance: point,
        ci_lower: lo,
        ci_upper: hi,
        significant: lo > 0.0 || hi < 0.0,
    }
}

/// Bootstrap both orderings of `x` and `y` after partialling out covariates.
pub fn direction_test<S: AsRef<str>>(
    t: &Table,
    x: &str,
    y: &str,
    covariates: &[S],
    n_boot: usize,
    seed: u64,
) -> Result<DirectionTestResult> {
    if x == y {
        return Err(Error::InvalidParameter("x and y must differ".into()));
    }
    if n_boot < MIN_BOOT {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_BOOT} bootstrap replicates required"
        )));
    }
    let covs: Vec<String> = covariates.iter().map(|c| c.as_ref().to_string()).collect();
    let n = t.n_rows();
    if n < MIN_ROWS {
        return Err(Error::TooFewRows {
            needed: MIN_ROWS,
            found: n,
        });
    }
    let xv = residualize(t, x, &covs)?;
    let yv = residualize(t, y, &covs)?;
    for (name, v) in [(x, &xv), (y, &yv)] {
        if stats::variance(v) <= 1e-12 * (1.0 + stats::mean(v).abs()).powi(2) {
            return Err(Error::Degenerate(format!("`{name}` has zero variance")));
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let pairs: Vec<(f64, f64)> = (0..n_boot as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k);
            let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            (statistic(&xv, &yv, &rows), statistic(&yv, &xv, &rows))
        })
        .collect();
    let x_to_y = ordering("x->y", statistic(&xv, &yv, &all), pairs.iter().map(|p| p.0).collect());
    let y_to_x = ordering("y->x", statistic(&yv, &xv, &all), pairs.iter().map(|p| p.1).collect());
    let verdict = match (x_to_y.significant, y_to_x.significant) {
        (false, true) => Verdict::XCausesY,
        (true, false) => Verdict::YCausesX,
        _ => Verdict::Inconclusive,
    };
    Ok(DirectionTestResult {
        x: x.to_string(),
        y: y.to_string(),
        covariates: covs,
        n_obs: n,
        n_boot,
        seed,
        x_to_y,
        y_to_x,
        verdict,
    })
}
