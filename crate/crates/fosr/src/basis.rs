//! Clamped B-spline bases evaluated on a fixed grid.
//!
//! The knot vector is open/uniform at the boundaries: `degree + 1` copies of
//! 0 and 1 around the interior knots, so the basis dimension is
//! `v = degree + 1 + #interior_knots` and the basis sums to one everywhere
//! on `[0,1]`. Functional coefficients are curves `beta(t) = Phi(t) * coef`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::panel::Grid;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("basis is rank deficient: {0}")]
    RankDeficientBasis(String),
    #[error("coefficient vector has length {got}, basis dimension is {expected}")]
    CoefficientLength { expected: usize, got: usize },
    #[error("invalid degree: {0}")]
    InvalidDegree(String),
}

/// A B-spline basis system evaluated on a grid.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    degree: usize,
    interior_knots: Vec<f64>,
    knots: Vec<f64>,
    grid: Grid,
    phi: DMatrix<f64>,
    ptp: DMatrix<f64>,
}

/// Equidistant interior knots `i/(n+1)`, `i = 1..n`, exclusive of 0 and 1.
pub fn default_knots(n_interior: usize) -> Vec<f64> {
    let denom = (n_interior + 1) as f64;
    (1..=n_interior).map(|i| i as f64 / denom).collect()
}

/// Index of the knot span containing `t`: the unique `mu` with
/// `knots[mu] <= t < knots[mu + 1]`, clamped so the last span is closed on
/// the right (`t = 1` falls in the final non-degenerate span).
fn span_index(knots: &[f64], degree: usize, t: f64) -> usize {
    let n_basis = knots.len() - degree - 1;
    let hi = n_basis - 1; // last valid span start
    if t >= knots[n_basis] {
        return hi;
    }
    let mut lo = degree;
    let mut high = n_basis;
    // binary search over spans [knots[mu], knots[mu+1])
    while lo + 1 < high {
        let mid = (lo + high) / 2;
        if t < knots[mid] {
            high = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Evaluates the `degree + 1` B-splines that are non-zero at `t` by the
/// Cox-de Boor recursion. Returns the index of the first non-zero basis
/// function and the values `N_{mu-degree}, .., N_mu`.
fn basis_window(knots: &[f64], degree: usize, t: f64) -> (usize, Vec<f64>) {
    let mu = span_index(knots, degree, t);
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[mu + 1 - j];
        right[j] = knots[mu + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = n[r] / denom;
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    (mu - degree, n)
}

/// Builds the clamped B-spline basis of the given degree and interior knots,
/// evaluated at every grid point.
pub fn build_basis(grid: &Grid, degree: usize, interior_knots: &[f64]) -> Result<BasisSystem, BasisError> {
    if degree < 1 {
        return Err(BasisError::InvalidDegree(format!(
            "degree must be >= 1, got {degree}"
        )));
    }
    for (idx, &kn) in interior_knots.iter().enumerate() {
        if !kn.is_finite() || kn <= 0.0 || kn >= 1.0 {
            return Err(BasisError::InvalidKnots(format!(
                "interior knot {kn} is outside (0,1)"
            )));
        }
        if idx > 0 && kn <= interior_knots[idx - 1] {
            return Err(BasisError::InvalidKnots(format!(
                "interior knots must be strictly increasing ({} then {})",
                interior_knots[idx - 1],
                kn
            )));
        }
    }
    let v = degree + 1 + interior_knots.len();
    let k = grid.len();
    if k < v {
        return Err(BasisError::RankDeficientBasis(format!(
            "grid has {k} points but the basis has dimension {v}"
        )));
    }

    let mut knots = Vec::with_capacity(2 * (degree + 1) + interior_knots.len());
    knots.extend(std::iter::repeat(0.0).take(degree + 1));
    knots.extend_from_slice(interior_knots);
    knots.extend(std::iter::repeat(1.0).take(degree + 1));

    let mut phi = DMatrix::zeros(k, v);
    for (row, &t) in grid.values().iter().enumerate() {
        let (start, window) = basis_window(&knots, degree, t);
        for (offset, &value) in window.iter().enumerate() {
            phi[(row, start + offset)] = value;
        }
    }

    // Numerical rank check: grids that do not populate every knot span can
    // be rank deficient even when K >= v.
    let svd = phi.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd.rank(smax * k as f64 * f64::EPSILON);
    if rank < v {
        return Err(BasisError::RankDeficientBasis(format!(
            "basis matrix has numerical rank {rank} < dimension {v} on this grid"
        )));
    }

    let ptp = phi.tr_mul(&phi);
    Ok(BasisSystem {
        degree,
        interior_knots: interior_knots.to_vec(),
        knots,
        grid: grid.clone(),
        phi,
        ptp,
    })
}

impl BasisSystem {
    /// Wraps a precomputed basis matrix (rows = grid points). Validates the
    /// partition-of-unity and range invariants plus full column rank; meant
    /// for custom bases, e.g. degenerate single-column systems in tests.
    pub fn from_matrix(grid: Grid, phi: DMatrix<f64>) -> Result<Self, BasisError> {
        let (k, v) = phi.shape();
        if k != grid.len() {
            return Err(BasisError::RankDeficientBasis(format!(
                "matrix has {k} rows but grid has {} points",
                grid.len()
            )));
        }
        if v == 0 || k < v {
            return Err(BasisError::RankDeficientBasis(format!(
                "matrix is {k} x {v}; need K >= v >= 1"
            )));
        }
        for row in 0..k {
            let mut sum = 0.0;
            for col in 0..v {
                let val = phi[(row, col)];
                if !(0.0..=1.0).contains(&val) {
                    return Err(BasisError::InvalidKnots(format!(
                        "entry ({row},{col}) = {val} outside [0,1]"
                    )));
                }
                sum += val;
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(BasisError::InvalidKnots(format!(
                    "row {row} sums to {sum}, breaking the partition of unity"
                )));
            }
        }
        let svd = phi.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if svd.rank(smax * k as f64 * f64::EPSILON) < v {
            return Err(BasisError::RankDeficientBasis(
                "matrix does not have full column rank".into(),
            ));
        }
        let ptp = phi.tr_mul(&phi);
        Ok(BasisSystem {
            degree: 0,
            interior_knots: Vec::new(),
            knots: Vec::new(),
            grid,
            phi,
            ptp,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// The full clamped knot vector (empty for matrix-backed systems).
    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    /// Basis dimension `v`.
    pub fn n_basis(&self) -> usize {
        self.phi.ncols()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The `K x v` matrix of basis values at the grid points.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `Phi' Phi`, precomputed once (the sampler uses it in every update).
    pub fn ptp(&self) -> &DMatrix<f64> {
        &self.ptp
    }

}

/// Evaluates a coefficient curve on the grid: `Phi * coef`.
pub fn eval_coefficient_curve(basis: &BasisSystem, coef: &[f64]) -> Result<Vec<f64>, BasisError> {
    let v = basis.n_basis();
    if coef.len() != v {
        return Err(BasisError::CoefficientLength {
            expected: v,
            got: coef.len(),
        });
    }
    let phi = basis.phi();
    let k = phi.nrows();
    let mut out = vec![0.0; k];
    for row in 0..k {
        let mut acc = 0.0;
        for col in 0..v {
            acc += phi[(row, col)] * coef[col];
        }
        out[row] = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn default_knots_are_equidistant_and_open() {
        assert!(default_knots(0).is_empty());
        assert_eq!(default_knots(1), vec![0.5]);
        let five = default_knots(5);
        for (i, k) in five.iter().enumerate() {
            assert!((k - (i + 1) as f64 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_dimensions() {
        let grid = Grid::midpoints(50);
        let b5 = build_basis(&grid, 3, &default_knots(1)).unwrap();
        assert_eq!(b5.n_basis(), 5);
        let b7 = build_basis(&grid, 3, &default_knots(3)).unwrap();
        assert_eq!(b7.n_basis(), 7);
    }

    #[test]
    fn partition_of_unity_and_range() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let degree = rng.random_range(1..=4usize);
            let n_int = rng.random_range(0..=5usize);
            let k = rng.random_range((degree + 1 + n_int).max(2)..=40usize);
            let grid = Grid::midpoints(k.max(degree + 1 + n_int).max(2));
            let basis = build_basis(&grid, degree, &default_knots(n_int)).unwrap();
            for row in 0..basis.phi().nrows() {
                let mut sum = 0.0;
                for col in 0..basis.n_basis() {
                    let v = basis.phi()[(row, col)];
                    assert!((0.0..=1.0 + 1e-12).contains(&v), "value {v} out of range");
                    sum += v;
                }
                assert!((sum - 1.0).abs() < 1e-10, "row sum {sum}");
            }
        }
    }

    #[test]
    fn local_support_gives_exact_zeros() {
        // v = 9 cubic basis: every row must contain at least v - degree - 1
        // literal zeros.
        let grid = Grid::midpoints(30);
        let basis = build_basis(&grid, 3, &default_knots(5)).unwrap();
        let v = basis.n_basis();
        for row in 0..30 {
            let zeros = (0..v).filter(|&c| basis.phi()[(row, c)] == 0.0).count();
            assert!(zeros >= v - 3 - 1, "row {row} has only {zeros} exact zeros");
        }
    }

    #[test]
    fn endpoint_evaluation_is_clamped() {
        let grid = Grid::new(vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let basis = build_basis(&grid, 3, &default_knots(1)).unwrap();
        // at t = 0 only the first basis function is active; at t = 1 only the last
        assert!((basis.phi()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((basis.phi()[(4, 4)] - 1.0).abs() < 1e-12);
        for c in 1..5 {
            assert_eq!(basis.phi()[(0, c)], 0.0);
        }
        for c in 0..4 {
            assert_eq!(basis.phi()[(4, c)], 0.0);
        }
    }

    #[test]
    fn eval_curve_is_linear_and_checks_length() {
        let grid = Grid::midpoints(20);
        let basis = build_basis(&grid, 3, &default_knots(1)).unwrap();
        assert!(matches!(
            eval_coefficient_curve(&basis, &[1.0, 2.0]),
            Err(BasisError::CoefficientLength { expected: 5, got: 2 })
        ));
        let zero = eval_coefficient_curve(&basis, &[0.0; 5]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let ones = eval_coefficient_curve(&basis, &[1.0; 5]).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-10));

        let mut rng = StdRng::seed_from_u64(3);
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let left = eval_coefficient_curve(&basis, &combo).unwrap();
        let eu = eval_coefficient_curve(&basis, &u).unwrap();
        let ew = eval_coefficient_curve(&basis, &w).unwrap();
        for k in 0..20 {
            assert!((left[k] - (a * eu[k] + b * ew[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let grid = Grid::midpoints(10);
        assert!(matches!(
            build_basis(&grid, 3, &[0.5, 0.5]),
            Err(BasisError::InvalidKnots(_))
        ));
        assert!(matches!(
            build_basis(&grid, 3, &[0.0]),
            Err(BasisError::InvalidKnots(_))
        ));
        assert!(matches!(
            build_basis(&grid, 0, &[]),
            Err(BasisError::InvalidDegree(_))
        ));
        let tiny = Grid::midpoints(3);
        assert!(matches!(
            build_basis(&tiny, 3, &[0.5]),
            Err(BasisError::RankDeficientBasis(_))
        ));
    }

    #[test]
    fn from_matrix_validates_and_accepts_constant_basis() {
        let grid = Grid::midpoints(4);
        let phi = DMatrix::from_element(4, 1, 1.0);
        let basis = BasisSystem::from_matrix(grid.clone(), phi).unwrap();
        assert_eq!(basis.n_basis(), 1);
        assert_eq!(basis.ptp()[(0, 0)], 4.0);

        let bad = DMatrix::from_element(4, 1, 0.5);
        assert!(BasisSystem::from_matrix(grid, bad).is_err());
    }
}
