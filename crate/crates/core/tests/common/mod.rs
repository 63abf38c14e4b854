#![allow(dead_code)]

use nalgebra::DMatrix;
use proptest::prelude::*;

/// Random SPD matrix `A Aᵀ + δ I` of dimension `d`.
pub fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0f64..1.0, d * d), 0.2f64..2.0).prop_map(move |(entries, delta)| {
        let a = DMatrix::from_row_slice(d, d, &entries);
        let mut v = &a * a.transpose();
        for i in 0..d {
            v[(i, i)] += delta;
        }
        // Exact symmetry after the product.
        for i in 0..d {
            for j in 0..i {
                v[(i, j)] = v[(j, i)];
            }
        }
        v
    })
}

/// Random SPD matrix together with a nonempty proper-or-full subset mask.
pub fn spd_with_subset(max_d: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<bool>)> {
    (1..=max_d).prop_flat_map(|d| {
        (spd(d), prop::collection::vec(any::<bool>(), d))
            .prop_filter("nonempty subset", |(_, f)| f.iter().any(|&x| x))
    })
}

/// Inverse by LU decomposition, independent of the Cholesky path under test.
pub fn lu_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

pub fn indices(flags: &[bool], value: bool) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f == value)
        .map(|(i, _)| i)
        .collect()
}

pub fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn max_abs_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
    (a - b).iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale
}
