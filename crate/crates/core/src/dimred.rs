//! Greedy construction of a (C, κ)-significant subspace and projection of
//! the pool onto it.
//!
//! A subspace S is (C, κ)-significant when the pool mass at distance at
//! least `Cκ` from S is at most κ. Starting from S = {0}, each step picks an
//! orthonormal basis of the complement and adds the (signed) basis vector
//! that the largest pool mass clears by `Cκ/√d`.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::model::{dot, norm, Dataset};
use crate::par;

/// Residuals below this (relative to the candidate's norm) are treated as
/// already spanned.
const SPAN_TOL: f64 = 1e-10;

/// Span of an ordered orthonormal basis in `R^ambient_dim`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subspace {
    basis: Vec<Vec<f64>>,
    ambient_dim: usize,
}

impl Subspace {
    pub fn zero(ambient_dim: usize) -> Self {
        Self {
            basis: Vec::new(),
            ambient_dim,
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        let basis = (0..ambient_dim)
            .map(|j| {
                let mut e = vec![0.0; ambient_dim];
                e[j] = 1.0;
                e
            })
            .collect();
        Self { basis, ambient_dim }
    }

    /// Orthonormalize `vectors` (two-pass Gram–Schmidt), dropping dependent ones.
    pub fn spanned_by(ambient_dim: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        let mut s = Self::zero(ambient_dim);
        for v in vectors {
            check_dim(ambient_dim, v.len())?;
            if let Some(u) = orthonormal_residual(&s.basis, v) {
                s.basis.push(u);
            }
        }
        Ok(s)
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Coordinates `⟨x, v_i⟩` in the basis.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|v| dot(v, x)).collect()
    }

    /// Map basis coordinates back to the ambient space.
    pub fn embed(&self, coords: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), coords.len())?;
        let mut out = vec![0.0; self.ambient_dim];
        for (c, v) in coords.iter().zip(&self.basis) {
            for (o, vi) in out.iter_mut().zip(v) {
                *o += c * vi;
            }
        }
        Ok(out)
    }

    /// Orthogonal projection onto the subspace, in ambient coordinates.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ambient_dim, x.len())?;
        self.embed(&self.coordinates(x))
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = x.to_vec();
        for v in &self.basis {
            let c = dot(v, &r);
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri -= c * vi;
            }
        }
        r
    }
}

fn orthonormal_residual(basis: &[Vec<f64>], x: &[f64]) -> Option<Vec<f64>> {
    let scale = norm(x).max(1.0);
    let mut r = x.to_vec();
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, &r);
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri -= c * vi;
            }
        }
    }
    let n = norm(&r);
    if n <= SPAN_TOL * scale {
        return None;
    }
    r.iter_mut().for_each(|ri| *ri /= n);
    Some(r)
}

/// `‖x − Σ⟨x, v_i⟩ v_i‖₂`.
pub fn dist_to_subspace(x: &[f64], s: &Subspace) -> Result<f64> {
    check_dim(s.ambient_dim, x.len())?;
    Ok(norm(&s.residual(x)))
}

fn check_params(c: f64, kappa: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Parameter(format!("C must be positive, got {c}")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    Ok(())
}

/// Pool mass at distance at least `Cκ` from `s`.
pub fn far_mass(s: &Subspace, data: &Dataset, c: f64, kappa: f64) -> Result<f64> {
    check_dim(data.dim(), s.ambient_dim)?;
    let threshold = c * kappa;
    Ok(data
        .rows()
        .zip(data.weights())
        .filter(|(x, _)| norm(&s.residual(x)) >= threshold)
        .map(|(_, w)| w)
        .sum())
}

/// Whether at most κ of the pool mass lies `Cκ` or farther from `s`.
pub fn is_significant(s: &Subspace, data: &Dataset, c: f64, kappa: f64) -> Result<bool> {
    check_params(c, kappa)?;
    Ok(far_mass(s, data, c, kappa)? <= kappa)
}

/// Pool mass with `⟨x, v⟩ ≥ threshold`.
pub fn clearance_mass(v: &[f64], data: &Dataset, threshold: f64) -> f64 {
    data.rows()
        .zip(data.weights())
        .filter(|(x, _)| dot(v, x) >= threshold)
        .map(|(_, w)| w)
        .sum()
}

/// One greedy step: the chosen direction and its clearance mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisPick {
    pub vector: Vec<f64>,
    pub mass: f64,
    /// The negated complement vector scored higher than the original.
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimReduction {
    pub subspace: Subspace,
    pub picks: Vec<BasisPick>,
    pub threshold: f64,
}

/// Orthonormal basis of the complement of `s`: completion from the pool's
/// own residual directions first, then the standard basis.
fn complement_basis(s: &Subspace, data: &Dataset) -> Vec<Vec<f64>> {
    let d = s.ambient_dim;
    let need = d - s.dim();
    let mut all = s.basis.clone();
    let start = all.len();
    let standard = (0..d).map(|j| {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        e
    });
    let pool = data.rows().map(<[f64]>::to_vec);
    for cand in pool.chain(standard) {
        if all.len() - start == need {
            break;
        }
        if let Some(u) = orthonormal_residual(&all, &cand) {
            all.push(u);
        }
    }
    all.split_off(start)
}

/// Grow a subspace from {0} until it is (C, κ)-significant.
pub fn dimension_reduction(data: &Dataset, c: f64, kappa: f64) -> Result<DimReduction> {
    check_params(c, kappa)?;
    let d = data.dim();
    let threshold = c * kappa / (d.max(1) as f64).sqrt();
    let mut s = Subspace::zero(d);
    let mut picks = Vec::new();
    while !is_significant(&s, data, c, kappa)? {
        let complement = complement_basis(&s, data);
        if complement.is_empty() {
            break;
        }
        let scores = par::map_range(complement.len(), |j| {
            let b = &complement[j];
            let neg: Vec<f64> = b.iter().map(|v| -v).collect();
            (clearance_mass(b, data, threshold), clearance_mass(&neg, data, threshold))
        });
        let mut best = (0usize, false, f64::NEG_INFINITY);
        for (j, &(pos, neg)) in scores.iter().enumerate() {
            if pos > best.2 {
                best = (j, false, pos);
            }
            if neg > best.2 {
                best = (j, true, neg);
            }
        }
        let (j, negated, mass) = best;
        let mut v = complement[j].clone();
        if negated {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let v = orthonormal_residual(&s.basis, &v).expect("complement vector is independent");
        s.basis.push(v.clone());
        picks.push(BasisPick {
            vector: v,
            mass,
            negated,
        });
    }
    Ok(DimReduction {
        subspace: s,
        picks,
        threshold,
    })
}

/// Replace each point by its coordinates in the subspace basis.
pub fn project_pool(data: &Dataset, s: &Subspace) -> Result<Dataset> {
    check_dim(data.dim(), s.ambient_dim)?;
    let mut flat = Vec::with_capacity(data.len() * s.dim());
    for x in data.rows() {
        flat.extend(s.coordinates(x));
    }
    Dataset::from_flat(flat, s.dim(), Some(data.weights().to_vec()))?.with_r2_bound(data.r2_bound())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_examples() {
        let s = Subspace::spanned_by(2, &[vec![1.0, 0.0]]).unwrap();
        assert!((dist_to_subspace(&[3.0, 4.0], &s).unwrap() - 4.0).abs() < 1e-15);
        assert!(dist_to_subspace(&[-2.5, 0.0], &s).unwrap() < 1e-15);
        let z = Subspace::zero(2);
        assert!((dist_to_subspace(&[3.0, 4.0], &z).unwrap() - 5.0).abs() < 1e-15);
        assert!(dist_to_subspace(&[3.0], &z).is_err());
    }

    #[test]
    fn significance_examples() {
        let data = Dataset::new(vec![vec![1.0, 2.0, 0.0], vec![-3.0, 0.5, 0.0]], None).unwrap();
        assert!(is_significant(&Subspace::full(3), &data, 0.5, 0.1).unwrap());
        let plane = Subspace::spanned_by(3, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert!(is_significant(&plane, &data, 0.5, 0.1).unwrap());
        assert!(!is_significant(&Subspace::zero(3), &data, 0.5, 0.1).unwrap());
        assert!(is_significant(&Subspace::zero(3), &data, 0.5, 0.0).is_err());
    }

    #[test]
    fn axis_aligned_pool_needs_at_most_two_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let mut x = vec![0.0; 10];
                x[1] = rng.random_range(-1.0..1.0);
                x[2] = rng.random_range(-1.0..1.0);
                x
            })
            .collect();
        let data = Dataset::new(rows, None).unwrap();
        let (c, kappa) = (2.0, 0.05);
        let red = dimension_reduction(&data, c, kappa).unwrap();
        assert!(red.subspace.dim() <= 2);
        assert!(is_significant(&red.subspace, &data, c, kappa).unwrap());
        // Brute force: the coordinate plane itself is significant.
        let mut e1 = vec![0.0; 10];
        e1[1] = 1.0;
        let mut e2 = vec![0.0; 10];
        e2[2] = 1.0;
        let plane = Subspace::spanned_by(10, &[e1, e2]).unwrap();
        assert!(is_significant(&plane, &data, c, kappa).unwrap());
    }

    #[test]
    fn trivial_pools() {
        let zero = Dataset::new(vec![vec![0.0, 0.0, 0.0]], None).unwrap();
        assert_eq!(dimension_reduction(&zero, 1.0, 0.1).unwrap().subspace.dim(), 0);
        let ex = crate::model::make_example1_instance(0.001).unwrap();
        let eps = ex.epsilon;
        let red = dimension_reduction(
            &ex.data,
            2f64.sqrt() / (ex.data.r2_bound() * eps),
            eps * eps / 2.0,
        )
        .unwrap();
        assert_eq!(red.subspace.dim(), 1);
        assert!(!red.picks[0].negated);
    }

    #[test]
    fn negative_direction_can_win() {
        // The first pool point orients the candidate; most mass lies opposite.
        let data = Dataset::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![-2.0, 0.0]],
            Some(vec![0.2, 0.4, 0.4]),
        )
        .unwrap();
        let red = dimension_reduction(&data, 1.0, 0.1).unwrap();
        assert_eq!(red.subspace.dim(), 1);
        assert!(red.picks[0].negated);
        assert!(red.picks[0].vector[0] < 0.0);
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = Dataset::new(rows.clone(), None).unwrap();
        let rotated = Subspace::spanned_by(3, &[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]]).unwrap();
        let proj = project_pool(&data, &rotated).unwrap();
        for i in 0..data.len() {
            assert!((norm(proj.point(i)) - norm(data.point(i))).abs() < 1e-10);
        }
        assert_eq!(proj.weights(), data.weights());

        let line = Subspace::spanned_by(3, &[vec![0.0, 0.0, 1.0]]).unwrap();
        let orth = Dataset::new(vec![vec![1.0, -2.0, 0.0]], None).unwrap();
        assert_eq!(project_pool(&orth, &line).unwrap().point(0), &[0.0]);

        // z = 0 plane: pairwise distances survive the change of coordinates.
        let flat_rows: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[1], 0.0]).collect();
        let flat = Dataset::new(flat_rows, None).unwrap();
        let plane = Subspace::spanned_by(3, &[vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let p = project_pool(&flat, &plane).unwrap();
        assert_eq!(p.dim(), 2);
        for i in 0..flat.len() {
            for j in 0..flat.len() {
                let a: f64 = flat.point(i).iter().zip(flat.point(j)).map(|(x, y)| (x - y).powi(2)).sum();
                let b: f64 = p.point(i).iter().zip(p.point(j)).map(|(x, y)| (x - y).powi(2)).sum();
                assert!((a.sqrt() - b.sqrt()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn returned_bases_are_orthonormal_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let d = 6;
            let rows: Vec<Vec<f64>> = (0..80)
                .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) / (1.0 + j as f64)).collect())
                .collect();
            let data = Dataset::new(rows, None).unwrap();
            let red = dimension_reduction(&data, 1.0 + trial as f64, 0.05).unwrap();
            let b = red.subspace.basis();
            assert!(b.len() <= d);
            for i in 0..b.len() {
                assert!((norm(&b[i]) - 1.0).abs() < 1e-10);
                for j in 0..i {
                    assert!(dot(&b[i], &b[j]).abs() < 1e-10);
                }
            }
        }
    }
}
