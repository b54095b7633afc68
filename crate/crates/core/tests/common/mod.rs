#![allow(dead_code)]

use fragsim::operator::TruncatedGenerator;
use fragsim::rates::{RateFamily, RateModel};
use nalgebra::{DMatrix, DVector};

pub fn constant_rates() -> RateModel {
    RateModel::new(
        RateFamily::constant(1.0),
        RateFamily::constant(0.0),
        RateFamily::constant(1.0),
    )
    .unwrap()
}

pub fn linear_decay() -> RateModel {
    RateModel::new(
        RateFamily::linear(1.0),
        RateFamily::constant(0.0),
        RateFamily::constant(1.0),
    )
    .unwrap()
}

pub fn linear_death() -> RateModel {
    RateModel::new(
        RateFamily::constant(1.0),
        RateFamily::linear(1.0),
        RateFamily::linear(1.0),
    )
    .unwrap()
}

pub fn all_linear() -> RateModel {
    RateModel::new(
        RateFamily::linear(1.0),
        RateFamily::linear(1.0),
        RateFamily::linear(1.0),
    )
    .unwrap()
}

pub fn all_models() -> Vec<(&'static str, RateModel)> {
    vec![
        ("sec4_1", constant_rates()),
        ("sec4_2", linear_decay()),
        ("sec4_3", linear_death()),
        ("sec4_4", all_linear()),
    ]
}

/// Strict minimum of theta at an interior index: theta = (6, 6, 2.5, 6, 7, 10).
pub fn interior_min_model() -> RateModel {
    RateModel::new(
        RateFamily::constant(1.0),
        RateFamily::tabulated(vec![5.0, 4.0, 0.5, 3.0, 4.0, 6.0]),
        RateFamily::tabulated(vec![0.0, 1.0, 1.0, 2.0, 2.0, 3.0]),
    )
    .unwrap()
}

pub fn dense(g: &TruncatedGenerator) -> DMatrix<f64> {
    let rows = g.to_dense();
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub fn mass_norm(v: &[f64]) -> f64 {
    v.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x.abs()).sum()
}

pub fn rel_mass_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mass_norm(&d) / mass_norm(b)
}

/// Inverse iteration on a dense matrix with a fixed shift; result scaled so entry `pin` is 1.
pub fn inverse_iteration(m: &DMatrix<f64>, shift: f64, pin: usize) -> Vec<f64> {
    let n = m.nrows();
    let lu = (m - DMatrix::identity(n, n) * shift).lu();
    let mut x = DVector::from_element(n, 1.0);
    for _ in 0..200 {
        let y = lu.solve(&x).expect("shift is not an eigenvalue");
        let y = &y / y.amax();
        let done = (&y - &x).amax() < 1e-15;
        x = y;
        if done {
            break;
        }
    }
    let p = x[pin];
    x.iter().map(|v| v / p).collect()
}

/// Dense solve `m x = b`.
pub fn dense_solve(m: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    m.clone()
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}
