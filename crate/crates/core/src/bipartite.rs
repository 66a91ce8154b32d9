//! Helpers for two-particle fields stored on a `1D x 1D` product grid.
//!
//! Axis 0 carries the first particle's coordinate and axis 1 the second's.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, C64};

/// Joint grid for two particles living on the same one-particle grid.
pub fn joint_grid(one: &Grid) -> Result<Grid> {
    if one.n_dims() != 1 {
        return Err(Error::Unsupported("two-particle fields are built on 1D x 1D product grids only".into()));
    }
    Grid::new(2, one.points(), one.extent())
}

/// One-particle grid underlying a joint grid.
pub fn factor_grid(joint: &Grid) -> Result<Grid> {
    if joint.n_dims() != 2 {
        return Err(Error::GridMismatch("expected a two-particle (2D) grid".into()));
    }
    Grid::new(1, joint.points(), joint.extent())
}

/// `psi1(x) psi2(y)` on the joint grid.
pub fn tensor(psi1: &ComplexField, psi2: &ComplexField) -> Result<ComplexField> {
    psi1.same_grid(psi2)?;
    let joint = joint_grid(psi1.grid())?;
    let n = psi1.len();
    let mut data = Vec::with_capacity(n * n);
    for a in psi1.data() {
        for b in psi2.data() {
            data.push(a * b);
        }
    }
    ComplexField::new(joint, data)
}

fn as_matrix(psi: &ComplexField) -> Result<DMatrix<C64>> {
    let g = psi.grid();
    if g.n_dims() != 2 {
        return Err(Error::GridMismatch("expected a two-particle (2D) grid".into()));
    }
    let n = g.points();
    Ok(DMatrix::from_row_slice(n, n, psi.data()))
}

/// Schmidt coefficients in descending order, normalized so that their
/// squares sum to `||psi||^2`.
pub fn schmidt_coefficients(psi: &ComplexField) -> Result<Vec<f64>> {
    let m = as_matrix(psi)?;
    let dx = psi.grid().dx();
    let mut s: Vec<f64> = m.singular_values().iter().map(|v| v * dx).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(s)
}

/// Number of Schmidt coefficients above `rel_tol` times the largest.
pub fn schmidt_rank(psi: &ComplexField, rel_tol: f64) -> Result<usize> {
    let s = schmidt_coefficients(psi)?;
    let top = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&v| v > rel_tol * top).count())
}

/// Best product approximation `sigma u v^dagger` of the joint field.
pub fn rank_one_part(psi: &ComplexField) -> Result<ComplexField> {
    let m = as_matrix(psi)?;
    let n = m.nrows();
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let (top, sigma) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let mut data = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            data.push(u[(x, top)] * vt[(top, y)] * sigma);
        }
    }
    ComplexField::new(psi.grid().clone(), data)
}

/// Phase-aligned distance `min_alpha ||a - e^{i alpha} b||`.
pub fn phase_aligned_distance(a: &ComplexField, b: &ComplexField) -> Result<f64> {
    let overlap = b.inner(a)?;
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
    a.distance(&b.scaled(phase))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_state_has_schmidt_rank_one() {
        let g = Grid::new(1, 16, 8.0).unwrap();
        let a = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.5]).unwrap();
        let b = ComplexField::gaussian(&g, &[1.0], 0.7, &[0.0]).unwrap();
        let p = tensor(&a, &b).unwrap();
        assert!((p.norm_sq() - 1.0).abs() < 1e-12);
        assert_eq!(schmidt_rank(&p, 1e-10).unwrap(), 1);
        let r = rank_one_part(&p).unwrap();
        assert!(p.distance(&r).unwrap() < 1e-12);
        let s = schmidt_coefficients(&p).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn global_phase_is_not_a_defect() {
        let g = Grid::new(1, 16, 8.0).unwrap();
        let a = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.5]).unwrap();
        let b = a.scaled(C64::from_polar(1.0, 1.3));
        assert!(phase_aligned_distance(&a, &b).unwrap() < 1e-14);
        assert!(a.distance(&b).unwrap() > 0.5);
    }
}
