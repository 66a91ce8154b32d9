//! Periodic grids and the complex/real fields that live on them.
//!
//! Amplitudes are stored row-major with the last axis fastest. Every axis of
//! a grid has the same point count and extent; coordinates run from `-L/2`
//! to `L/2 - dx` so the origin is always a grid point.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Upper bound on the total number of grid points.
pub const MAX_TOTAL_POINTS: usize = 1 << 24;
pub const MIN_POINTS_PER_DIM: usize = 8;
/// Tolerance used for the "normalized" flag on fields.
pub const NORMALIZATION_TOL: f64 = 1e-12;

struct GridData {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
    coords: Vec<f64>,
}

/// Periodic lattice of `points^n_dims` sites with side length `extent`.
#[derive(Clone)]
pub struct Grid {
    n_dims: usize,
    points: usize,
    extent: f64,
    data: Arc<GridData>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_dims", &self.n_dims)
            .field("points", &self.points)
            .field("extent", &self.extent)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n_dims == other.n_dims && self.points == other.points && self.extent == other.extent
    }
}

impl Grid {
    pub fn new(n_dims: usize, points: usize, extent: f64) -> Result<Self> {
        if !(1..=3).contains(&n_dims) {
            return Err(Error::InvalidGrid(format!("n_dims must be 1, 2 or 3 (got {n_dims})")));
        }
        if points < MIN_POINTS_PER_DIM {
            return Err(Error::InvalidGrid(format!("points below minimum: {points} < {MIN_POINTS_PER_DIM}")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid("extent must be positive".into()));
        }
        let total = (points as u128).pow(n_dims as u32);
        if total > MAX_TOTAL_POINTS as u128 {
            return Err(Error::InvalidGrid(format!("{total} points exceeds the memory guard of {MAX_TOTAL_POINTS}")));
        }

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);
        let dx = extent / points as f64;
        let two_pi_over_l = 2.0 * std::f64::consts::PI / extent;
        let wavenumbers = (0..points)
            .map(|j| {
                let signed = if j < points / 2 { j as i64 } else { j as i64 - points as i64 };
                signed as f64 * two_pi_over_l
            })
            .collect();
        let coords = (0..points).map(|j| -0.5 * extent + j as f64 * dx).collect();

        Ok(Grid { n_dims, points, extent, data: Arc::new(GridData { forward, inverse, wavenumbers, coords }) })
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn dx(&self) -> f64 {
        self.extent / self.points as f64
    }

    /// Volume element `dx^n`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.n_dims as i32)
    }

    pub fn volume(&self) -> f64 {
        self.extent.powi(self.n_dims as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.n_dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis wavenumbers in FFT order, `2*pi*j/L` for the symmetric band.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.data.wavenumbers
    }

    /// Per-axis coordinates.
    pub fn coords(&self) -> &[f64] {
        &self.data.coords
    }

    /// Index of the origin along one axis.
    pub fn origin_index(&self) -> usize {
        self.points / 2
    }

    /// Flat index of the origin.
    pub fn origin(&self) -> usize {
        (0..self.n_dims).fold(0, |acc, _| acc * self.points + self.origin_index())
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.n_dims - 1 - axis) as u32)
    }

    /// Index along `axis` of the flat index `flat`.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.points
    }

    pub fn coordinate(&self, flat: usize, axis: usize) -> f64 {
        self.data.coords[self.axis_index(flat, axis)]
    }

    pub fn wavenumber(&self, flat: usize, axis: usize) -> f64 {
        self.data.wavenumbers[self.axis_index(flat, axis)]
    }

    /// Fills `out` with the coordinates of `flat`.
    pub fn point(&self, flat: usize, out: &mut [f64]) {
        for (axis, x) in out.iter_mut().enumerate().take(self.n_dims) {
            *x = self.coordinate(flat, axis);
        }
    }

    /// `sum_{a in axes} k_a^2` at every flat index.
    pub fn k_squared(&self, axes: &[usize]) -> Vec<f64> {
        (0..self.len()).map(|i| axes.iter().map(|&a| self.wavenumber(i, a).powi(2)).sum()).collect()
    }

    /// True when `k` lies on the lattice `2*pi*j/L` and inside the band.
    pub fn is_commensurate(&self, k: f64) -> bool {
        let j = k * self.extent / (2.0 * std::f64::consts::PI);
        (j - j.round()).abs() < 1e-9 && j.round().abs() < (self.points / 2) as f64
    }

    /// Mode index in FFT order for a commensurate wavenumber.
    pub fn mode_index(&self, k: f64) -> Option<usize> {
        if !self.is_commensurate(k) {
            return None;
        }
        let j = (k * self.extent / (2.0 * std::f64::consts::PI)).round() as i64;
        Some(j.rem_euclid(self.points as i64) as usize)
    }

    /// Periodic displacement `x - w` folded into `[-L/2, L/2)`.
    pub fn periodic_offset(&self, x: f64, w: f64) -> f64 {
        let l = self.extent;
        (x - w + 0.5 * l).rem_euclid(l) - 0.5 * l
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::GridMismatch(format!(
                "amplitude count {len} does not match grid point count {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// In-place FFT along one axis. The inverse is normalized by `1/points`.
    pub fn transform_axis(&self, data: &mut [C64], axis: usize, inverse: bool) {
        let n = self.points;
        let plan = if inverse { &self.data.inverse } else { &self.data.forward };
        let stride = self.stride(axis);
        if stride == 1 {
            plan.process(data);
        } else {
            let mut line = vec![C64::new(0.0, 0.0); n];
            let block = n * stride;
            for outer in 0..data.len() / block {
                for inner in 0..stride {
                    let start = outer * block + inner;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[start + j * stride];
                    }
                    plan.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        data[start + j * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / n as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// In-place FFT over all axes.
    pub fn transform(&self, data: &mut [C64], inverse: bool) {
        for axis in 0..self.n_dims {
            self.transform_axis(data, axis, inverse);
        }
    }
}

/// Complex amplitudes over a grid.
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: Grid,
    data: Vec<C64>,
}

impl ComplexField {
    pub fn new(grid: Grid, data: Vec<C64>) -> Result<Self> {
        grid.check_len(data.len())?;
        Ok(ComplexField { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        ComplexField { grid: grid.clone(), data: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> C64) -> Self {
        let mut point = [0.0; 3];
        let n = grid.n_dims();
        let data = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut point);
                f(&point[..n])
            })
            .collect();
        ComplexField { grid: grid.clone(), data }
    }

    /// Box-normalized plane wave `exp(i k.x) / sqrt(L^n)`.
    pub fn plane_wave(grid: &Grid, k: &[f64]) -> Self {
        let amp = grid.volume().powf(-0.5);
        Self::from_fn(grid, |x| {
            let phase: f64 = x.iter().zip(k).map(|(xi, ki)| xi * ki).sum();
            C64::from_polar(amp, phase)
        })
    }

    /// Normalized Gaussian `exp(-|x-c|^2/(2 w^2) + i k0.x)` with periodic distance.
    pub fn gaussian(grid: &Grid, center: &[f64], width: f64, momentum: &[f64]) -> Result<Self> {
        let f = Self::from_fn(grid, |x| {
            let mut r2 = 0.0;
            let mut phase = 0.0;
            for a in 0..x.len() {
                let d = grid.periodic_offset(x[a], center.get(a).copied().unwrap_or(0.0));
                r2 += d * d;
                phase += momentum.get(a).copied().unwrap_or(0.0) * x[a];
            }
            C64::from_polar((-r2 / (2.0 * width * width)).exp(), phase)
        });
        f.normalized()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `sum |psi|^2 dx^n`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sq() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn max_abs_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroField);
        }
        if !n.is_finite() {
            return Err(Error::NonFinite("field norm".into()));
        }
        let inv = 1.0 / n;
        self.data.iter_mut().for_each(|v| *v *= inv);
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn same_grid(&self, other: &ComplexField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    /// `sum conj(self) * other dx^n`.
    pub fn inner(&self, other: &ComplexField) -> Result<C64> {
        self.same_grid(other)?;
        let s: C64 = self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn scaled(&self, z: C64) -> Self {
        ComplexField { grid: self.grid.clone(), data: self.data.iter().map(|v| v * z).collect() }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: C64, other: &ComplexField) -> Result<()> {
        self.same_grid(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(s, o)| *s += a * o);
        Ok(())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        ComplexField { grid: self.grid.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// L2 distance.
    pub fn distance(&self, other: &ComplexField) -> Result<f64> {
        self.same_grid(other)?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }

    /// Cyclic shift by `shift` sites along `axis`.
    pub fn roll(&self, axis: usize, shift: usize) -> Self {
        let g = &self.grid;
        let n = g.points();
        let stride = g.stride(axis);
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        for (i, v) in self.data.iter().enumerate() {
            let j = g.axis_index(i, axis);
            let target = i - j * stride + ((j + shift) % n) * stride;
            out[target] = *v;
        }
        ComplexField { grid: self.grid.clone(), data: out }
    }

    pub fn real_part(&self) -> RealField {
        RealField { grid: self.grid.clone(), data: self.data.iter().map(|v| v.re).collect() }
    }

    pub fn abs_sq(&self) -> RealField {
        RealField { grid: self.grid.clone(), data: self.data.iter().map(|v| v.norm_sqr()).collect() }
    }
}

/// Real values over a grid (densities, potentials, currents).
#[derive(Clone, Debug)]
pub struct RealField {
    grid: Grid,
    data: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        grid.check_len(data.len())?;
        Ok(RealField { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        RealField { grid: grid.clone(), data: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut point = [0.0; 3];
        let n = grid.n_dims();
        let data = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut point);
                f(&point[..n])
            })
            .collect();
        RealField { grid: grid.clone(), data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField { grid: self.grid.clone(), data: self.data.iter().map(|&v| C64::new(v, 0.0)).collect() }
    }
}

/// Writes `index,re,im` records with 17 significant digits.
pub fn write_csv<W: Write>(field: &ComplexField, mut out: W) -> Result<()> {
    writeln!(out, "index,re,im")?;
    for (i, v) in field.data().iter().enumerate() {
        writeln!(out, "{i},{:.16e},{:.16e}", v.re, v.im)?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(grid: &Grid, input: R) -> Result<ComplexField> {
    let mut data = vec![C64::new(0.0, 0.0); grid.len()];
    let mut seen = vec![false; grid.len()];
    let bad = |line: usize, why: &str| Error::InvalidParameter(format!("field csv line {line}: {why}"));
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "index,re,im" {
                return Err(bad(1, "expected header index,re,im"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(bad(lineno + 1, "expected three columns"));
        }
        let idx: usize = parts[0].trim().parse().map_err(|_| bad(lineno + 1, "bad index"))?;
        let re: f64 = parts[1].trim().parse().map_err(|_| bad(lineno + 1, "bad real part"))?;
        let im: f64 = parts[2].trim().parse().map_err(|_| bad(lineno + 1, "bad imaginary part"))?;
        if idx >= data.len() || seen[idx] {
            return Err(bad(lineno + 1, "index out of range or repeated"));
        }
        data[idx] = C64::new(re, im);
        seen[idx] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::GridMismatch("field csv does not cover every grid point".into()));
    }
    ComplexField::new(grid.clone(), data)
}

const BINARY_MAGIC: &[u8; 4] = b"CFLD";

/// Little-endian binary layout: magic `CFLD`, `n_dims: u32`, `points: u32`,
/// `extent: f64`, then `(re, im)` pairs of `f64`.
pub fn to_bytes(field: &ComplexField) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(20 + 16 * field.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(g.n_dims() as u32).to_le_bytes());
    out.extend_from_slice(&(g.points() as u32).to_le_bytes());
    out.extend_from_slice(&g.extent().to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ComplexField> {
    let short = || Error::InvalidParameter("truncated field binary".into());
    if bytes.len() < 20 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::InvalidParameter("missing CFLD header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let grid = Grid::new(u32_at(4), u32_at(8), f64_at(12))?;
    if bytes.len() != 20 + 16 * grid.len() {
        return Err(short());
    }
    let data = (0..grid.len()).map(|i| C64::new(f64_at(20 + 16 * i), f64_at(28 + 16 * i))).collect();
    ComplexField::new(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing_and_size() {
        let g = Grid::new(1, 256, 20.0).unwrap();
        assert_eq!(g.dx(), 0.078125);
        let g2 = Grid::new(2, 64, 10.0).unwrap();
        assert_eq!(g2.len(), 4096);
    }

    #[test]
    fn grid_guards() {
        assert!(matches!(Grid::new(1, 4, 1.0), Err(Error::InvalidGrid(_))));
        assert!(Grid::new(0, 16, 1.0).is_err());
        assert!(Grid::new(4, 16, 1.0).is_err());
        assert!(Grid::new(1, 16, -1.0).is_err());
        assert!(Grid::new(1, 16, 0.0).is_err());
        assert!(Grid::new(3, 512, 1.0).is_err());
        assert!(Grid::new(3, 256, 1.0).is_ok());
    }

    #[test]
    fn wavenumbers_symmetric_band() {
        let g = Grid::new(1, 8, 2.0 * std::f64::consts::PI).unwrap();
        let k: Vec<i64> = g.wavenumbers().iter().map(|k| k.round() as i64).collect();
        assert_eq!(k, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_eq!(g.coords()[g.origin_index()], 0.0);
        assert!(g.is_commensurate(3.0));
        assert!(!g.is_commensurate(4.0));
        assert!(!g.is_commensurate(2.5));
    }

    #[test]
    fn gaussian_self_inner_product_is_one() {
        let g = Grid::new(1, 256, 20.0).unwrap();
        let f = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let ip = f.inner(&f).unwrap();
        assert!((ip.re - 1.0).abs() < 1e-12 && ip.im.abs() < 1e-15);
        assert!(f.is_normalized());
    }

    #[test]
    fn plane_waves_orthogonal() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let k1 = g.wavenumbers()[3];
        let k2 = g.wavenumbers()[5];
        let a = ComplexField::plane_wave(&g, &[k1]);
        let b = ComplexField::plane_wave(&g, &[k2]);
        assert!(a.inner(&b).unwrap().norm() < 1e-12);
        assert!((a.norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let a = ComplexField::zeros(&Grid::new(1, 16, 1.0).unwrap());
        let b = ComplexField::zeros(&Grid::new(1, 32, 1.0).unwrap());
        assert!(matches!(a.inner(&b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn transform_axis_matches_full_transform_in_2d() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let f = ComplexField::from_fn(&g, |x| C64::new(x[0] * 3.0 + x[1], x[0] * x[1]));
        let mut a = f.data().to_vec();
        g.transform(&mut a, false);
        g.transform(&mut a, true);
        for (u, v) in a.iter().zip(f.data()) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn roll_shifts_along_axis() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let f = ComplexField::from_fn(&g, |x| C64::new(x[0], x[1]));
        let r = f.roll(1, 1);
        // value at (i, j+1) equals original at (i, j)
        assert_eq!(r.data()[1], f.data()[0]);
        assert_eq!(r.data()[0], f.data()[7]);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let g = Grid::new(1, 16, 3.0).unwrap();
        let f = ComplexField::gaussian(&g, &[0.2], 0.5, &[1.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&f, &mut buf).unwrap();
        let back = read_csv(&g, buf.as_slice()).unwrap();
        assert_eq!(back.data(), f.data());
        let bin = from_bytes(&to_bytes(&f)).unwrap();
        assert_eq!(bin.data(), f.data());
        assert_eq!(bin.grid(), f.grid());
        assert!(from_bytes(&to_bytes(&f)[..30]).is_err());
    }
}
