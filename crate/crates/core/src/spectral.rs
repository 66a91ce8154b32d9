//! Fourier-spectral differential calculus on periodic grids.

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, RealField, C64};

fn all_axes(grid: &Grid) -> Vec<usize> {
    (0..grid.n_dims()).collect()
}

/// Spectral Laplacian: Fourier coefficients times `-|k|^2`.
pub fn laplacian(f: &ComplexField) -> ComplexField {
    laplacian_axes(f, &all_axes(f.grid()))
}

/// Laplacian restricted to a block of axes (one particle's coordinates).
pub fn laplacian_axes(f: &ComplexField, axes: &[usize]) -> ComplexField {
    let grid = f.grid();
    let mut data = f.data().to_vec();
    grid.transform(&mut data, false);
    for (i, v) in data.iter_mut().enumerate() {
        let k2: f64 = axes.iter().map(|&a| grid.wavenumber(i, a).powi(2)).sum();
        *v *= -k2;
    }
    grid.transform(&mut data, true);
    ComplexField::new(grid.clone(), data).expect("same grid")
}

fn is_nyquist(grid: &Grid, flat: usize, axis: usize) -> bool {
    grid.points() % 2 == 0 && grid.axis_index(flat, axis) == grid.points() / 2
}

fn derivative_from_spectrum(grid: &Grid, spectrum: &[C64], axis: usize) -> Vec<C64> {
    let mut d: Vec<C64> =
        spectrum
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if is_nyquist(grid, i, axis) {
                    C64::new(0.0, 0.0)
                } else {
                    v * C64::new(0.0, grid.wavenumber(i, axis))
                }
            })
            .collect();
    grid.transform(&mut d, true);
    d
}

/// Spectral first derivative along `axis`. The Nyquist mode is dropped.
pub fn derivative(f: &ComplexField, axis: usize) -> ComplexField {
    let grid = f.grid();
    let mut spec = f.data().to_vec();
    grid.transform(&mut spec, false);
    ComplexField::new(grid.clone(), derivative_from_spectrum(grid, &spec, axis)).expect("same grid")
}

/// All first derivatives along `axes`, sharing a single forward transform.
pub fn gradient_axes(f: &ComplexField, axes: &[usize]) -> Vec<ComplexField> {
    let grid = f.grid();
    let mut spec = f.data().to_vec();
    grid.transform(&mut spec, false);
    axes.iter()
        .map(|&a| ComplexField::new(grid.clone(), derivative_from_spectrum(grid, &spec, a)).expect("same grid"))
        .collect()
}

/// `sum_i |d_i f|^2` per point.
pub fn gradient_norm_sq(f: &ComplexField) -> RealField {
    gradient_norm_sq_axes(f, &all_axes(f.grid()))
}

pub fn gradient_norm_sq_axes(f: &ComplexField, axes: &[usize]) -> RealField {
    let grid = f.grid();
    let mut out = vec![0.0; grid.len()];
    for d in gradient_axes(f, axes) {
        out.iter_mut().zip(d.data()).for_each(|(o, v)| *o += v.norm_sqr());
    }
    RealField::new(grid.clone(), out).expect("same grid")
}

/// Divergence of a real vector field (one component per axis).
pub fn divergence(components: &[RealField]) -> RealField {
    let grid = components[0].grid().clone();
    let mut out = vec![0.0; grid.len()];
    for (axis, c) in components.iter().enumerate() {
        let d = derivative(&c.to_complex(), axis);
        out.iter_mut().zip(d.data()).for_each(|(o, v)| *o += v.re);
    }
    RealField::new(grid, out).expect("same grid")
}

pub fn laplacian_real(f: &RealField) -> RealField {
    laplacian(&f.to_complex()).real_part()
}

/// `||f||^2` evaluated in wavenumber space (Parseval).
pub fn spectral_norm_sq(f: &ComplexField) -> f64 {
    let grid = f.grid();
    let mut spec = f.data().to_vec();
    grid.transform(&mut spec, false);
    spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / grid.len() as f64 * grid.cell_volume()
}

/// Multiplies the spectrum by `multiplier(k^2)` where `k^2` is summed over `axes`.
pub fn apply_fourier_multiplier(f: &ComplexField, axes: &[usize], multiplier: impl Fn(f64) -> C64) -> ComplexField {
    let grid = f.grid();
    let mut data = f.data().to_vec();
    grid.transform(&mut data, false);
    for (i, v) in data.iter_mut().enumerate() {
        let k2: f64 = axes.iter().map(|&a| grid.wavenumber(i, a).powi(2)).sum();
        *v *= multiplier(k2);
    }
    grid.transform(&mut data, true);
    ComplexField::new(grid.clone(), data).expect("same grid")
}

/// Band-limited interpolation of a 1D field onto `points` points over the
/// same extent. Modes the target grid cannot hold, and the Nyquist mode, are
/// dropped.
pub fn resample(f: &ComplexField, points: usize) -> Result<ComplexField> {
    let grid = f.grid();
    if grid.n_dims() != 1 {
        return Err(Error::Unsupported("resampling is implemented for 1D fields".into()));
    }
    let target = Grid::new(1, points, grid.extent())?;
    let n = grid.points();
    let mut spec = f.data().to_vec();
    grid.transform(&mut spec, false);
    let keep = n.min(points).div_ceil(2);
    let mut out = vec![C64::new(0.0, 0.0); points];
    let scale = points as f64 / n as f64;
    for j in 0..keep {
        out[j] = spec[j] * scale;
        if j > 0 {
            out[points - j] = spec[n - j] * scale;
        }
    }
    target.transform(&mut out, true);
    ComplexField::new(target, out)
}
