//! Numerical dispersion relations from plane-wave evolution, and the
//! cubic-corrected relativistic relation `E^2 = m^2 + p^2 + kappa l_p p^3`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{evolve, stability_bound, EvolutionParams};
use crate::field::{ComplexField, Grid};
use crate::regularization::least_squares;
use crate::terms::HamiltonianSpec;

/// Allowed relative change of `|psi|` over the probe window.
pub const SHAPE_TOL: f64 = 1e-6;
/// Minimum number of distinct `|k|` for a cubic fit.
pub const MIN_DISTINCT_K: usize = 6;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DispersionSample {
    pub k: f64,
    pub omega: f64,
    /// Plane-wave amplitude `|psi|` (box normalization).
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeWindow {
    pub duration: f64,
    /// Number of phase samples after `t = 0`.
    pub samples: usize,
    /// Upper bound on the RK4 step.
    pub max_dt: f64,
}

impl Default for ProbeWindow {
    fn default() -> Self {
        ProbeWindow { duration: 0.1, samples: 20, max_dt: 2.5e-4 }
    }
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * (a / two_pi).round()
}

/// Rotation rate of a single plane wave `e^{i k x}` under `h`.
pub fn probe_frequency(grid: &Grid, h: &HamiltonianSpec, k: f64, window: &ProbeWindow) -> Result<DispersionSample> {
    if !grid.is_commensurate(k) {
        return Err(Error::InvalidParameter(format!("k = {k} is not a wavenumber of this grid")));
    }
    if window.samples < 2 || !(window.duration > 0.0) {
        return Err(Error::InvalidParameter("probe window needs a positive duration and at least 2 samples".into()));
    }
    let mut kv = vec![0.0; grid.n_dims()];
    kv[0] = k;
    let psi0 = ComplexField::plane_wave(grid, &kv);
    let record = window.duration / window.samples as f64;
    let dt_cap = window.max_dt.min(0.9 * stability_bound(grid, h));
    let per_record = (record / dt_cap).ceil().max(1.0) as usize;
    let params =
        EvolutionParams::rk4(record / per_record as f64, per_record * window.samples).recording_every(per_record);
    let traj = evolve(&psi0, h, &params)?;

    let a0 = psi0.data()[0].norm();
    let mut shape = 0.0f64;
    for state in &traj.states {
        for v in state.data() {
            shape = shape.max((v.norm() - a0).abs() / a0);
        }
    }
    if shape > SHAPE_TOL {
        return Err(Error::NotEigenmode(format!("|psi| changed by {shape:.3e} at k = {k}")));
    }

    // overlap with the initial wave carries the phase exp(-i omega t)
    let mut phases = Vec::with_capacity(traj.states.len());
    let mut last = 0.0;
    for state in &traj.states {
        let z = psi0.inner(state)?;
        let p = if phases.is_empty() { z.arg() } else { last + wrap(z.arg() - last) };
        phases.push(p);
        last = p;
    }
    let rows: Vec<Vec<f64>> = traj.times.iter().map(|&t| vec![t, 1.0]).collect();
    let fit = least_squares(&rows, &phases)?;
    Ok(DispersionSample { k, omega: -fit.coefficients[0], amplitude: a0 })
}

pub fn extract_dispersion(
    grid: &Grid,
    h: &HamiltonianSpec,
    k_list: &[f64],
    window: &ProbeWindow,
) -> Result<Vec<DispersionSample>> {
    k_list.par_iter().map(|&k| probe_frequency(grid, h, k, window)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersionFit {
    pub samples: Vec<(f64, f64)>,
    /// `c0 + c1 k + c2 k^2 + c3 k^3`.
    pub coefficients: [f64; 4],
    pub rms_residual: f64,
    pub condition: f64,
}

/// Least-squares cubic through `(k, value)` pairs.
pub fn fit_cubic(samples: &[(f64, f64)]) -> Result<DispersionFit> {
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0.abs()).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    if distinct.len() < MIN_DISTINCT_K {
        return Err(Error::InvalidParameter(format!(
            "cubic fit needs at least {MIN_DISTINCT_K} distinct |k|, got {}",
            distinct.len()
        )));
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|&(k, _)| vec![1.0, k, k * k, k * k * k]).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = least_squares(&rows, &values)?;
    let c = &fit.coefficients;
    Ok(DispersionFit {
        samples: samples.to_vec(),
        coefficients: [c[0], c[1], c[2], c[3]],
        rms_residual: fit.rms_residual,
        condition: fit.condition,
    })
}

/// Cubic fit of `omega(k)`; `c3` detects a modified dispersion relation.
pub fn fit_dispersion(samples: &[DispersionSample]) -> Result<DispersionFit> {
    fit_cubic(&samples.iter().map(|s| (s.k, s.omega)).collect::<Vec<_>>())
}

/// `E = sqrt(m^2 + p^2 + kappa l_p p^3)` with `c = 1`.
pub fn modified_dispersion_energy(mass: f64, p: f64, kappa: f64, planck_length: f64) -> Result<f64> {
    let e2 = mass * mass + p * p + kappa * planck_length * p.powi(3);
    if !(e2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("E^2 = {e2:.6e} is negative at p = {p}")));
    }
    Ok(e2.sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ModifiedDispersionFit {
    pub kappa: f64,
    pub planck_length: f64,
    /// Fitted `m^2`.
    pub mass_sq: f64,
    /// Fitted `p^2` coefficient, 1 for the relativistic relation.
    pub quadratic: f64,
    pub rms_residual: f64,
}

/// Recovers `kappa` from `(p, E)` samples by a cubic fit of `E^2`.
pub fn fit_modified_dispersion(samples: &[(f64, f64)], planck_length: f64) -> Result<ModifiedDispersionFit> {
    if !(planck_length > 0.0) {
        return Err(Error::InvalidParameter("planck_length must be positive".into()));
    }
    let squared: Vec<(f64, f64)> = samples.iter().map(|&(p, e)| (p, e * e)).collect();
    let fit = fit_cubic(&squared)?;
    Ok(ModifiedDispersionFit {
        kappa: fit.coefficients[3] / planck_length,
        planck_length,
        mass_sq: fit.coefficients[0],
        quadratic: fit.coefficients[2],
        rms_residual: fit.rms_residual,
    })
}

/// de Broglie wavelength of a particle of energy `energy` in Planck lengths,
/// `E_planck / E` with `c = hbar = 1`.
pub fn planck_wavelength_ratio(planck_energy: f64, energy: f64) -> Result<f64> {
    if !(planck_energy > 0.0 && energy > 0.0) {
        return Err(Error::InvalidParameter("energies must be positive".into()));
    }
    Ok(planck_energy / energy)
}
