//! Gaussian-regularized deltas, the large-`s` expansion of `N(delta^(s))`,
//! and the growth of the first-order signal with localization sharpness.
//!
//! For `delta^(s)(y) = (s/pi)^{n/2} exp(-s |y - w|^2)` and a smooth `f`,
//!
//! ```text
//! int f N(delta^(s)) = 2 n s f(w) + (n/2 + 1) Lap f(w) + O(1/s).
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, RealField, C64};
use crate::signaling::{epr_state, first_order_rate, measure_conditionals, ObservableSpec, Subsystem};
use crate::spectral;
use crate::terms::{dg_functional, HamiltonianSpec, PhysicalConstants};

/// Smallest admissible width in grid spacings.
pub const MIN_WIDTH_CELLS: f64 = 4.0;
/// Mass of `delta^(s)` inside the box must exceed `1 - BOX_MASS_DEFICIT`.
pub const BOX_MASS_DEFICIT: f64 = 1e-6;
/// Condition number above which a least-squares fit is refused.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Clone, Debug)]
pub struct RegularizedDelta {
    pub s: f64,
    pub center: Vec<f64>,
    pub n: usize,
    pub field: ComplexField,
    /// `int delta dy^n` on the grid.
    pub integral: f64,
    /// `1 / sqrt(2 s)`.
    pub width: f64,
}

/// `(s_min, s_max)` for a grid: `s_max` keeps the width at least four cells,
/// `s_min` keeps all but `1e-6` of the mass inside the box.
pub fn admissible_range(grid: &Grid) -> (f64, f64) {
    let dx = grid.dx();
    let s_max = 1.0 / (2.0 * (MIN_WIDTH_CELLS * dx).powi(2));
    let n = grid.n_dims() as i32;
    let half = 0.5 * grid.extent();
    let mass = |s: f64| erf(s.sqrt() * half).powi(n);
    // mass(s) is increasing; bisect on log s
    let (mut lo, mut hi) = (1e-8_f64, s_max.max(1e-8));
    if mass(hi) < 1.0 - BOX_MASS_DEFICIT {
        return (f64::INFINITY, s_max);
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mass(mid) >= 1.0 - BOX_MASS_DEFICIT {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, s_max)
}

pub fn gaussian_delta(grid: &Grid, s: f64, center: &[f64]) -> Result<RegularizedDelta> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter("sharpness s must be positive".into()));
    }
    if center.len() != grid.n_dims() {
        return Err(Error::InvalidParameter(format!(
            "center has {} coordinates, grid has {} dimensions",
            center.len(),
            grid.n_dims()
        )));
    }
    let (_, s_max) = admissible_range(grid);
    if s > s_max {
        return Err(Error::InvalidParameter(format!(
            "s = {s} too large for this grid; maximum admissible s is {s_max:.6e}"
        )));
    }
    let n = grid.n_dims();
    let prefactor = (s / std::f64::consts::PI).powf(0.5 * n as f64);
    let field = ComplexField::from_fn(grid, |x| {
        let r2: f64 = x.iter().zip(center).map(|(&xa, &wa)| grid.periodic_offset(xa, wa).powi(2)).sum();
        C64::new(prefactor * (-s * r2).exp(), 0.0)
    });
    let integral = field.data().iter().map(|v| v.re).sum::<f64>() * grid.cell_volume();
    Ok(RegularizedDelta { s, center: center.to_vec(), n, field, integral, width: (2.0 * s).sqrt().recip() })
}

/// `int f N(delta) dy^n`, with `N` from the Hamiltonian-term implementation.
pub fn pair_nl_with_test(delta: &RegularizedDelta, f: &RealField, c: &PhysicalConstants) -> Result<f64> {
    if f.grid() != delta.field.grid() {
        return Err(Error::GridMismatch("test function and delta live on different grids".into()));
    }
    let nl = dg_functional(&delta.field, c.amplitude_floor)?;
    let v = nl.data().iter().zip(f.data()).map(|(a, b)| a.re * b).sum::<f64>() * f.grid().cell_volume();
    if !v.is_finite() {
        return Err(Error::NonFinite("pairing".into()));
    }
    Ok(v)
}

/// `int f delta dy^n`.
pub fn pair_with_test(delta: &RegularizedDelta, f: &RealField) -> f64 {
    delta.field.data().iter().zip(f.data()).map(|(a, b)| a.re * b).sum::<f64>() * f.grid().cell_volume()
}

/// Band-limited value of `f` at an arbitrary point.
pub fn value_at(f: &RealField, point: &[f64]) -> f64 {
    let grid = f.grid();
    let mut spec: Vec<C64> = f.data().iter().map(|&v| C64::new(v, 0.0)).collect();
    grid.transform(&mut spec, false);
    let x0 = grid.coords()[0];
    let total: C64 = spec
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let phase: f64 = (0..grid.n_dims()).map(|a| grid.wavenumber(i, a) * (point[a] - x0)).sum();
            v * C64::from_polar(1.0, phase)
        })
        .sum();
    total.re / grid.len() as f64
}

/// Smooth test function with `f(w) = 1` and vanishing second derivatives at `w`.
pub fn flat_test_function(grid: &Grid, center: &[f64]) -> RealField {
    let kappa = 2.0 * std::f64::consts::PI / grid.extent();
    RealField::from_fn(grid, |x| {
        x.iter()
            .zip(center)
            .map(|(&xa, &wa)| {
                let y = xa - wa;
                4.0 / 3.0 * (kappa * y).cos() - 1.0 / 3.0 * (2.0 * kappa * y).cos()
            })
            .product()
    })
}

/// Smooth test function with `f(w) = 0` and `Lap f(w) = lap`.
pub fn curved_test_function(grid: &Grid, center: &[f64], lap: f64) -> RealField {
    let kappa = 2.0 * std::f64::consts::PI / grid.extent();
    let n = grid.n_dims() as f64;
    RealField::from_fn(grid, |x| {
        x.iter().zip(center).map(|(&xa, &wa)| lap * (1.0 - (kappa * (xa - wa)).cos()) / (n * kappa * kappa)).sum()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rms_residual: f64,
    pub condition: f64,
}

/// Least squares on the given design rows, refusing ill-conditioned systems.
pub fn least_squares(rows: &[Vec<f64>], values: &[f64]) -> Result<LeastSquares> {
    let m = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if m < k || k == 0 {
        return Err(Error::InvalidParameter(format!("{m} samples cannot determine {k} coefficients")));
    }
    // column scaling keeps the condition number meaningful
    let scale: Vec<f64> =
        (0..k).map(|j| rows.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)).collect();
    let a = DMatrix::from_fn(m, k, |i, j| rows[i][j] / scale[j]);
    let b = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(format!("condition number {condition:.3e}")));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::IllConditioned(e.to_string()))?;
    let r = &a * &x - &b;
    let coefficients = x.iter().zip(&scale).map(|(v, s)| v / s).collect();
    Ok(LeastSquares { coefficients, rms_residual: (r.norm_squared() / m as f64).sqrt(), condition })
}

fn check_decade(s_values: &[f64]) -> Result<()> {
    if s_values.len() < 4 {
        return Err(Error::InvalidParameter("need at least 4 values of s".into()));
    }
    if s_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("s values must be strictly increasing".into()));
    }
    if s_values[s_values.len() - 1] < 10.0 * s_values[0] * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter("s values must span at least one decade".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticFit {
    pub n: usize,
    pub samples: Vec<(f64, f64)>,
    /// Coefficients of `a s + b + c / s`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rms_residual: f64,
    /// `2 n f(w)`.
    pub expected_a: f64,
    /// `(n/2 + 1) Lap f(w)`.
    pub expected_b: f64,
}

impl AsymptoticFit {
    /// Relative error, or absolute error when the expectation vanishes.
    fn error(got: f64, want: f64) -> f64 {
        if want == 0.0 {
            got.abs()
        } else {
            (got - want).abs() / want.abs()
        }
    }

    pub fn error_a(&self) -> f64 {
        Self::error(self.a, self.expected_a)
    }

    pub fn error_b(&self) -> f64 {
        Self::error(self.b, self.expected_b)
    }
}

/// Fits `int f N(delta^(s)) = a s + b + c/s` over `s_values`.
pub fn asymptotic_slope(
    grid: &Grid,
    center: &[f64],
    s_values: &[f64],
    f: &RealField,
    c: &PhysicalConstants,
) -> Result<AsymptoticFit> {
    check_decade(s_values)?;
    let (s_min, s_max) = admissible_range(grid);
    if let Some(bad) = s_values.iter().find(|&&s| s < s_min || s > s_max) {
        return Err(Error::InvalidParameter(format!(
            "s = {bad} outside the admissible range [{s_min:.4e}, {s_max:.4e}]"
        )));
    }
    let samples: Vec<(f64, f64)> = s_values
        .par_iter()
        .map(|&s| Ok((s, pair_nl_with_test(&gaussian_delta(grid, s, center)?, f, c)?)))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|&(s, _)| vec![s, 1.0, 1.0 / s]).collect();
    let values: Vec<f64> = samples.iter().map(|p| p.1).collect();
    let fit = least_squares(&rows, &values)?;
    let n = grid.n_dims();
    let lap = spectral::laplacian_real(f);
    Ok(AsymptoticFit {
        n,
        samples,
        a: fit.coefficients[0],
        b: fit.coefficients[1],
        c: fit.coefficients[2],
        rms_residual: fit.rms_residual,
        expected_a: 2.0 * n as f64 * value_at(f, center),
        expected_b: (0.5 * n as f64 + 1.0) * value_at(&lap, center),
    })
}

/// Log-log slope of `|int f delta^(s) - f(w)|` against `s`.
pub fn distributional_error_slope(grid: &Grid, center: &[f64], s_values: &[f64], f: &RealField) -> Result<f64> {
    check_decade(s_values)?;
    let fw = value_at(f, center);
    let points: Vec<(f64, f64)> = s_values
        .iter()
        .map(|&s| Ok((s.ln(), (pair_with_test(&gaussian_delta(grid, s, center)?, f) - fw).abs().ln())))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0, 1.0]).collect();
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(least_squares(&rows, &values)?.coefficients[0])
}

/// `b(y) = 1 + 0.5 cos(2 pi y / L)` smoothed with width `width`, as an
/// observable on particle 2 whose action on near-delta states is smooth.
pub fn smooth_probe_observable(grid: &Grid, width: f64) -> ObservableSpec {
    let l = grid.extent();
    let profile = grid.coords().iter().map(|x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x / l).cos()).collect();
    ObservableSpec::smoothed(profile, width, Subsystem::Second)
}

#[derive(Clone, Debug, Serialize)]
pub struct AmplificationPoint {
    pub s: f64,
    /// `Delta_1(B|q,p)` with position conditionals rescaled to unit mass.
    pub delta1: f64,
    /// Same with the L2-normalized conditional states of the ensemble.
    pub delta1_normalized: f64,
    /// `sum_w mu_w (delta_w, B delta_w)`.
    pub b_expectation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AmplificationReport {
    pub n: usize,
    pub diffusion: f64,
    pub points: Vec<AmplificationPoint>,
    /// Fit `Delta_1 = alpha s + beta + gamma / s`.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rms_residual: f64,
    /// Large-`s` limit of `(phi, B phi)`, from a fit `E0 + E1 / s`.
    pub b_limit: f64,
    /// `4 n D (phi, B phi)`.
    pub predicted_alpha: f64,
    /// `alpha / predicted_alpha`, absent when the prediction is zero.
    pub ratio: Option<f64>,
    /// Spread of `Delta_1 - alpha s` over the scan, relative to `alpha (s_max - s_min)`.
    pub remainder_spread: f64,
}

fn amplification_point(
    grid: &Grid,
    band: usize,
    s: f64,
    h: &HamiltonianSpec,
    b: &ObservableSpec,
) -> Result<AmplificationPoint> {
    let phi = epr_state(grid, band, s)?;
    let (q, p) = rayon::join(
        || measure_conditionals(&phi, &ObservableSpec::position(Subsystem::First)),
        || measure_conditionals(&phi, &ObservableSpec::momentum(Subsystem::First)),
    );
    let (q, p) = (q?, p?);
    let unit = q.unit_mass()?;
    let e1_p = first_order_rate(&p, b, h)?;
    let delta1 = first_order_rate(&unit, b, h)? - e1_p;
    let delta1_normalized = first_order_rate(&q, b, h)? - e1_p;
    Ok(AmplificationPoint { s, delta1, delta1_normalized, b_expectation: unit.expectation(b)? })
}

/// Scans the localization sharpness of the EPR position conditionals and fits
/// the growth of `Delta_1(B|q,p)` against the `4 n D s (phi, B phi)` law.
pub fn amplification_experiment(
    grid: &Grid,
    band: usize,
    s_values: &[f64],
    h: &HamiltonianSpec,
    b: &ObservableSpec,
) -> Result<AmplificationReport> {
    check_decade(s_values)?;
    let (_, s_max) = admissible_range(grid);
    if let Some(bad) = s_values.iter().find(|&&s| s > s_max) {
        return Err(Error::InvalidParameter(format!("s = {bad} exceeds the maximum admissible s {s_max:.6e}")));
    }
    let points: Vec<AmplificationPoint> =
        s_values.iter().map(|&s| amplification_point(grid, band, s, h, b)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.s, 1.0, 1.0 / p.s]).collect();
    let fit = least_squares(&rows, &points.iter().map(|p| p.delta1).collect::<Vec<_>>())?;
    let erows: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, 1.0 / p.s]).collect();
    let efit = least_squares(&erows, &points.iter().map(|p| p.b_expectation).collect::<Vec<_>>())?;
    let n = grid.n_dims();
    let diffusion = h.dg_diffusion();
    let alpha = fit.coefficients[0];
    let b_limit = efit.coefficients[0];
    let predicted_alpha = 4.0 * n as f64 * diffusion * b_limit;
    let remainders: Vec<f64> = points.iter().map(|p| p.delta1 - alpha * p.s).collect();
    let spread = remainders.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - remainders.iter().copied().fold(f64::INFINITY, f64::min);
    let span = alpha.abs() * (s_values[s_values.len() - 1] - s_values[0]);
    Ok(AmplificationReport {
        n,
        diffusion,
        points,
        alpha,
        beta: fit.coefficients[1],
        gamma: fit.coefficients[2],
        rms_residual: fit.rms_residual,
        b_limit,
        predicted_alpha,
        ratio: (predicted_alpha != 0.0).then(|| alpha / predicted_alpha),
        remainder_spread: if span > 0.0 { spread / span } else { spread },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthCheck {
    pub s: f64,
    pub delta1_at_s: f64,
    pub delta1_at_2s: f64,
    /// `|Delta_1(2s)| <= 1.5 max(|Delta_1(s)|, floor)`.
    pub bounded: bool,
}

/// Absolute level below which `Delta_1` counts as zero in growth checks.
pub const GROWTH_FLOOR: f64 = 1e-10;

/// Compares `Delta_1(B|q,p)` at `s` and `2 s`. A linearly amplified signal
/// roughly doubles; a non-amplifying term stays put.
pub fn growth_check(grid: &Grid, band: usize, s: f64, h: &HamiltonianSpec, b: &ObservableSpec) -> Result<GrowthCheck> {
    let (x, y) =
        rayon::join(|| amplification_point(grid, band, s, h, b), || amplification_point(grid, band, 2.0 * s, h, b));
    let (x, y) = (x?, y?);
    let bounded = y.delta1.abs() <= 1.5 * x.delta1.abs().max(GROWTH_FLOOR);
    Ok(GrowthCheck { s, delta1_at_s: x.delta1, delta1_at_2s: y.delta1, bounded })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_is_normalized_and_scales() {
        let g = Grid::new(1, 256, 10.0).unwrap();
        let d1 = gaussian_delta(&g, 4.0, &[0.3]).unwrap();
        let d2 = gaussian_delta(&g, 8.0, &[0.3]).unwrap();
        assert!((d1.integral - 1.0).abs() < 1e-8);
        assert!((d2.integral - 1.0).abs() < 1e-8);
        let peak = |d: &RegularizedDelta| d.field.data().iter().map(|v| v.re).fold(0.0, f64::max);
        let g2 = Grid::new(2, 128, 10.0).unwrap();
        let e1 = gaussian_delta(&g2, 2.0, &[0.0, 0.0]).unwrap();
        let e2 = gaussian_delta(&g2, 4.0, &[0.0, 0.0]).unwrap();
        assert!((peak(&e2) / peak(&e1) - 2.0).abs() < 1e-12);
        let g3 = Grid::new(1, 256, 10.0).unwrap();
        let f1 = gaussian_delta(&g3, 2.0, &[0.0]).unwrap();
        let f2 = gaussian_delta(&g3, 4.0, &[0.0]).unwrap();
        assert!((peak(&f2) / peak(&f1) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn delta_guard_reports_maximum() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let (_, s_max) = admissible_range(&g);
        assert!((s_max - 1.0 / (32.0 * g.dx() * g.dx())).abs() < 1e-12);
        match gaussian_delta(&g, 2.0 * s_max, &[0.0]) {
            Err(Error::InvalidParameter(msg)) => assert!(msg.contains("maximum admissible")),
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn admissible_minimum_keeps_mass_in_box() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let (s_min, _) = admissible_range(&g);
        assert!(erf(s_min.sqrt() * 5.0) >= 1.0 - 1e-6 - 1e-15);
        assert!(erf((0.99 * s_min).sqrt() * 5.0) < 1.0 - 1e-6);
    }

    #[test]
    fn nl_of_delta_matches_closed_form() {
        let g = Grid::new(1, 512, 10.0).unwrap();
        let s = 20.0;
        let d = gaussian_delta(&g, s, &[0.0]).unwrap();
        // a floor far below the squared tail keeps the ratio exact
        let nl = dg_functional(&d.field, 1e-30).unwrap();
        let want: Vec<f64> = g.coords().iter().zip(d.field.data()).map(|(y, v)| 4.0 * s * s * y * y * v.re).collect();
        let peak = want.iter().copied().fold(0.0, f64::max);
        for ((v, w), y) in nl.data().iter().zip(&want).zip(g.coords()) {
            assert!((v.re - w).abs() <= 1e-8 * peak, "y = {y}");
        }
    }

    #[test]
    fn value_at_interpolates_between_points() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let f = flat_test_function(&g, &[0.123]);
        assert!((value_at(&f, &[0.123]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_refuses_clustered_columns() {
        let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0 + 1e-14], vec![1.0, 1.0]];
        assert!(matches!(least_squares(&rows, &[1.0, 2.0, 3.0]), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn scan_needs_a_decade() {
        let g = Grid::new(1, 256, 10.0).unwrap();
        let f = flat_test_function(&g, &[0.0]);
        let c = PhysicalConstants::default();
        assert!(asymptotic_slope(&g, &[0.0], &[2.0, 3.0, 4.0, 5.0], &f, &c).is_err());
        assert!(asymptotic_slope(&g, &[0.0], &[2.0, 6.0, 20.0], &f, &c).is_err());
    }
}
