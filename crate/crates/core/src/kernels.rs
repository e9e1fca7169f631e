//! Kernel evaluations, Gram matrices and bandwidth selection.
//!
//! Two kernel families are supported: the Gaussian kernel on `R^d` and the
//! periodic Sobolev kernel on `[0, 1]`
//!
//! ```text
//! h_a(x, y) = 1 + sum_{l != 0} exp(2 pi i l (x - y)) / |l|^a
//! ```
//!
//! which for even `a = 2k` has the closed form
//! `1 + (-1)^(k+1) (2 pi)^(2k) / (2k)! * B_2k({x - y})` with `B_2k` the
//! Bernoulli polynomial and `{.}` the fractional part.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::median;
use crate::points::Points;

/// Largest supported Sobolev order.
pub const MAX_SOBOLEV_ORDER: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    PeriodicSobolev { order: u32 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn sobolev(order: u32) -> Result<Self> {
        let k = KernelSpec::PeriodicSobolev { order };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                if !(bandwidth.is_finite() && bandwidth > 0.0) {
                    return Err(invalid(format!(
                        "Gaussian bandwidth must be positive and finite, got {bandwidth}"
                    )));
                }
            }
            KernelSpec::PeriodicSobolev { order } => {
                check_sobolev_order(order)?;
            }
        }
        Ok(())
    }

    /// Kernel value; callers are responsible for dimension agreement.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let inv = 1.0 / (2.0 * bandwidth * bandwidth);
                (-squared_distance(x, y) * inv).exp()
            }
            KernelSpec::PeriodicSobolev { order } => sobolev_closed_form(x[0] - y[0], order),
        }
    }
}

fn check_sobolev_order(order: u32) -> Result<()> {
    if order < 2 || order % 2 != 0 || order > MAX_SOBOLEV_ORDER {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(())
}

#[inline]
fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gaussian kernel `exp(-|x - y|^2 / (2 bandwidth^2))`.
pub fn gaussian_eval(x: &[f64], y: &[f64], bandwidth: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid("dimension mismatch"));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(invalid("non-finite coordinate"));
    }
    KernelSpec::gaussian(bandwidth)?;
    Ok((-squared_distance(x, y) / (2.0 * bandwidth * bandwidth)).exp())
}

/// Median of all pairwise Euclidean distances over unordered pairs.
///
/// Zero distances (duplicate points) are kept; only a zero median is an error.
pub fn median_bandwidth(points: &Points) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(invalid("median heuristic needs at least two points"));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = points.row(i);
        for j in (i + 1)..n {
            dists.push(squared_distance(xi, points.row(j)).sqrt());
        }
    }
    let med = median(&mut dists).expect("nonempty");
    if med > 0.0 && med.is_finite() {
        Ok(med)
    } else {
        Err(Error::DegenerateBandwidth)
    }
}

/// Bernoulli polynomial `B_k(x)` for even `k <= 10`.
pub fn bernoulli_even(k: u32, x: f64) -> f64 {
    let x2 = x * x;
    match k {
        0 => 1.0,
        2 => x2 - x + 1.0 / 6.0,
        4 => x2 * x2 - 2.0 * x2 * x + x2 - 1.0 / 30.0,
        6 => {
            let x4 = x2 * x2;
            x4 * x2 - 3.0 * x4 * x + 2.5 * x4 - 0.5 * x2 + 1.0 / 42.0
        }
        8 => {
            let x4 = x2 * x2;
            x4 * x4 - 4.0 * x4 * x2 * x + 14.0 / 3.0 * x4 * x2 - 7.0 / 3.0 * x4 + 2.0 / 3.0 * x2
                - 1.0 / 30.0
        }
        10 => {
            let x4 = x2 * x2;
            let x8 = x4 * x4;
            x8 * x2 - 5.0 * x8 * x + 7.5 * x8 - 7.0 * x4 * x2 + 5.0 * x4 - 1.5 * x2 + 5.0 / 66.0
        }
        _ => panic!("Bernoulli polynomial of order {k} not tabulated"),
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn sobolev_closed_form(diff: f64, order: u32) -> f64 {
    let frac = diff - diff.floor();
    let k = order / 2;
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    1.0 + sign * (2.0 * PI).powi(order as i32) / factorial(order) * bernoulli_even(order, frac)
}

/// Periodic Sobolev kernel `h_order(x, y)` on the unit interval.
pub fn sobolev_eval(x: f64, y: f64, order: u32) -> Result<f64> {
    check_sobolev_order(order)?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(invalid("non-finite coordinate"));
    }
    Ok(sobolev_closed_form(x - y, order))
}

/// Dense row-major kernel matrix between two point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `K v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        out
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        let cols = self.cols;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let row = &self.data[i * cols..(i + 1) * cols];
            *o = dot(row, v);
        });
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Rectangular block `[r0, r1) x [c0, c1)`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(r1 - r0, c1 - c0, |i, j| self.get(r0 + i, c0 + j))
    }
}

/// Four-way unrolled dot product; the reduction order is fixed.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_points(kernel: &KernelSpec, pts: &Points) -> Result<()> {
    if !pts.all_finite() {
        return Err(invalid("non-finite point coordinate"));
    }
    if matches!(kernel, KernelSpec::PeriodicSobolev { .. }) && !pts.is_empty() && pts.dim() != 1 {
        return Err(invalid("periodic Sobolev kernel is defined on one-dimensional points"));
    }
    Ok(())
}

/// Gram matrix with entry `(i, j) = k(rows[i], cols[j])`.
pub fn gram(kernel: &KernelSpec, rows: &Points, cols: &Points) -> Result<GramMatrix> {
    kernel.validate()?;
    if !rows.is_empty() && !cols.is_empty() && rows.dim() != cols.dim() {
        return Err(invalid(format!(
            "dimension mismatch: rows have {}, cols have {}",
            rows.dim(),
            cols.dim()
        )));
    }
    check_points(kernel, rows)?;
    check_points(kernel, cols)?;
    let (nr, nc) = (rows.len(), cols.len());
    let mut data = vec![0.0; nr * nc];
    if nc > 0 {
        data.par_chunks_mut(nc).enumerate().for_each(|(i, out)| {
            let xi = rows.row(i);
            for (j, o) in out.iter_mut().enumerate() {
                *o = kernel.eval(xi, cols.row(j));
            }
        });
    }
    Ok(GramMatrix {
        rows: nr,
        cols: nc,
        data,
    })
}

/// Symmetric Gram matrix of a single point set; the lower triangle mirrors
/// the upper so symmetry is exact.
pub fn gram_symmetric(kernel: &KernelSpec, pts: &Points) -> Result<GramMatrix> {
    let mut g = gram(kernel, pts, pts)?;
    let n = g.rows;
    for i in 0..n {
        for j in (i + 1)..n {
            g.data[j * n + i] = g.data[i * n + j];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Truncated Fourier series of the Sobolev kernel.
    fn sobolev_series(diff: f64, order: u32, terms: usize) -> f64 {
        let mut s = 0.0;
        for l in (1..=terms).rev() {
            let l = l as f64;
            s += (2.0 * PI * l * diff).cos() / l.powi(order as i32);
        }
        1.0 + 2.0 * s
    }

    #[test]
    fn gaussian_examples() {
        assert_eq!(gaussian_eval(&[0.3, -1.0], &[0.3, -1.0], 1.0).unwrap(), 1.0);
        let v = gaussian_eval(&[0.0], &[1.0], 1.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653066).abs() < 1e-8);
        let v = gaussian_eval(&[0.0, 0.0], &[3.0, 4.0], 5.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_rejects_bad_input() {
        assert!(gaussian_eval(&[f64::NAN], &[0.0], 1.0).is_err());
        assert!(gaussian_eval(&[0.0], &[0.0], 0.0).is_err());
        assert!(gaussian_eval(&[0.0], &[0.0], -1.0).is_err());
        assert!(gaussian_eval(&[0.0, 1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn median_bandwidth_examples() {
        let p = Points::from_scalars(&[0.0, 1.0, 3.0]);
        assert_eq!(median_bandwidth(&p).unwrap(), 2.0);
        let p = Points::from_scalars(&[0.0, 2.0]);
        assert_eq!(median_bandwidth(&p).unwrap(), 2.0);
        let p = Points::from_rows(&[[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(median_bandwidth(&p).unwrap(), 5.0);
    }

    #[test]
    fn median_bandwidth_degenerate() {
        let p = Points::from_scalars(&[1.0, 1.0, 1.0]);
        assert!(matches!(median_bandwidth(&p), Err(Error::DegenerateBandwidth)));
        let p = Points::from_scalars(&[1.0]);
        assert!(median_bandwidth(&p).is_err());
    }

    #[test]
    fn sobolev_order_two_against_series() {
        // 1e6-term series; tail is below 1e-6.
        let oracle_zero = sobolev_series(0.0, 2, 1_000_000);
        let oracle_half = sobolev_series(0.5, 2, 1_000_000);
        assert!((oracle_zero - (1.0 + PI * PI / 3.0)).abs() < 1e-5);
        assert!((oracle_half - (1.0 - PI * PI / 6.0)).abs() < 1e-5);
        assert!((sobolev_eval(0.2, 0.2, 2).unwrap() - oracle_zero).abs() < 1e-5);
        assert!((sobolev_eval(0.75, 0.25, 2).unwrap() - oracle_half).abs() < 1e-11);
        assert!((sobolev_eval(0.0, 0.0, 2).unwrap() - (1.0 + PI * PI / 3.0)).abs() < 1e-12);
    }

    /// Same series, with cosines advanced by rotation and reseeded in blocks.
    fn sobolev_series_rotated(diff: f64, order: u32, terms: usize) -> f64 {
        let theta = 2.0 * PI * diff;
        let (sw, cw) = theta.sin_cos();
        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut l = 1usize;
        while l <= terms {
            let (mut s, mut c) = (theta * l as f64).sin_cos();
            let end = (l + 4096).min(terms + 1);
            for j in l..end {
                let term = c / (j as f64).powi(order as i32);
                let t = sum + term;
                comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
                sum = t;
                (s, c) = (s * cw + c * sw, c * cw - s * sw);
            }
            l = end;
        }
        1.0 + 2.0 * (sum + comp)
    }

    #[test]
    fn sobolev_closed_form_matches_series_on_grid() {
        // The order-2 tail is bounded by 2/M, so it needs 1e7 terms for 1e-6.
        for (order, terms) in [(2u32, 10_000_000usize), (4, 100_000), (6, 100_000), (8, 100_000), (10, 100_000)] {
            for i in 0..=100 {
                let d = i as f64 / 100.0;
                let exact = sobolev_eval(d, 0.0, order).unwrap();
                let series = sobolev_series_rotated(d, order, terms);
                assert!(
                    (exact - series).abs() < 1e-6,
                    "order {order}, diff {d}: {exact} vs {series}"
                );
            }
        }
    }

    #[test]
    fn sobolev_periodicity_and_odd_orders() {
        for order in [2u32, 4, 6] {
            let a = sobolev_eval(0.13, 0.71, order).unwrap();
            let b = sobolev_eval(1.13, 0.71, order).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(sobolev_eval(0.1, 0.2, 3), Err(Error::UnsupportedOrder(3))));
        assert!(sobolev_eval(0.1, 0.2, 0).is_err());
        assert!(sobolev_eval(0.1, 0.2, 12).is_err());
    }

    #[test]
    fn gram_examples() {
        let pts = Points::from_scalars(&[0.0, 1.0]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let g = gram(&k, &pts, &pts).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(1, 1), 1.0);
        assert!((g.get(0, 1) - e).abs() < 1e-15);
        assert_eq!(g.get(0, 1), g.get(1, 0));

        let one = Points::from_scalars(&[0.4]);
        let g = gram(&k, &one, &one).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);
    }

    #[test]
    fn gram_dimension_mismatch() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let a = Points::from_rows(&[[0.0, 1.0]]).unwrap();
        let b = Points::from_scalars(&[0.0]);
        assert!(gram(&k, &a, &b).is_err());
        let s = KernelSpec::sobolev(2).unwrap();
        assert!(gram(&s, &a, &a).is_err());
    }

    #[test]
    fn matvec_matches_naive() {
        let pts = Points::from_scalars(&[0.0, 0.3, 0.9, 1.7, 2.2, -0.4, 0.05]);
        let g = gram_symmetric(&KernelSpec::gaussian(0.8).unwrap(), &pts).unwrap();
        let v: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let out = g.matvec(&v);
        for i in 0..7 {
            let naive: f64 = (0..7).map(|j| g.get(i, j) * v[j]).sum();
            assert!((out[i] - naive).abs() < 1e-14);
        }
    }
}
