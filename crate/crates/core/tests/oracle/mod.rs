//! Reference implementations written without nalgebra or QR, used to
//! cross-check the library fits.

#![allow(dead_code)]

use pathwise_core::rng;
use pathwise_core::tabular::Table;
use rand::Rng;
use rand_distr::StandardNormal;

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Rows of `[1, x_1, ..., x_p]`.
pub fn with_intercept(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    (0..n)
        .map(|i| std::iter::once(1.0).chain(cols.iter().map(|c| c[i])).collect())
        .collect()
}

/// OLS through the normal equations.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, yi) in x.iter().zip(y) {
        for a in 0..k {
            xty[a] += row[a] * yi;
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    gauss_solve(xtx, xty)
}

/// Plain Newton–Raphson on the logistic log-likelihood.
pub fn logistic_newton(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut beta = vec![0.0; k];
    for _ in 0..100 {
        let mut grad = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        for (row, yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            for a in 0..k {
                grad[a] += row[a] * (yi - p);
                for b in 0..k {
                    hess[a][b] += w * row[a] * row[b];
                }
            }
        }
        let step = gauss_solve(hess, grad);
        let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-13 {
            break;
        }
    }
    beta
}

pub const PREDICTORS: [&str; 4] = ["x1", "x2", "x3", "x4"];

/// n rows, four standard-normal predictors, a logistic and a linear response.
pub fn glm_dataset(n: usize, seed: u64) -> (Table, Vec<Vec<f64>>) {
    let mut r = rng::seeded(seed);
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..n).map(|_| r.sample(StandardNormal)).collect())
        .collect();
    let beta = [-0.3, 0.8, -0.6, 0.4, 0.2];
    let x = with_intercept(&cols);
    let eta: Vec<f64> = x
        .iter()
        .map(|row| row.iter().zip(&beta).map(|(a, b)| a * b).sum())
        .collect();
    let yb: Vec<f64> = eta
        .iter()
        .map(|e| f64::from(r.random::<f64>() < 1.0 / (1.0 + (-e).exp())))
        .collect();
    let yl: Vec<f64> = eta
        .iter()
        .map(|e| 2.0 * e + r.sample::<f64, _>(StandardNormal))
        .collect();
    let mut named: Vec<(&str, Vec<f64>)> = PREDICTORS.iter().copied().zip(cols).collect();
    named.push(("yb", yb));
    named.push(("yl", yl));
    (Table::from_numeric(named).unwrap(), x)
}

/// Logistic data laid out as a 2×2 table with cell counts a, b, c, d:
/// x=1,y=1: a; x=1,y=0: b; x=0,y=1: c; x=0,y=0: d.
pub fn two_by_two(a: usize, b: usize, c: usize, d: usize) -> Table {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (xv, yv, count) in [(1.0, 1.0, a), (1.0, 0.0, b), (0.0, 1.0, c), (0.0, 0.0, d)] {
        x.extend(std::iter::repeat_n(xv, count));
        y.extend(std::iter::repeat_n(yv, count));
    }
    Table::from_numeric(vec![("x", x), ("y", y)]).unwrap()
}
