//! Density, current and the Fokker-Planck residual of a trajectory.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{evolve, evolve_reversed, EvolutionParams, Trajectory};
use crate::field::{ComplexField, RealField};
use crate::spectral;
use crate::terms::HamiltonianSpec;
use crate::terms::PhysicalConstants;

#[derive(Clone, Debug)]
pub struct DensityCurrent {
    /// `|psi|^2`
    pub rho: RealField,
    /// `(hbar/m) Im(conj(psi) d_a psi)`, one component per axis.
    pub current: Vec<RealField>,
}

pub fn density_current(psi: &ComplexField, c: &PhysicalConstants) -> DensityCurrent {
    let grid = psi.grid();
    let axes: Vec<usize> = (0..grid.n_dims()).collect();
    let scale = c.hbar / c.mass;
    let current = spectral::gradient_axes(psi, &axes)
        .into_iter()
        .map(|d| {
            let data = psi.data().iter().zip(d.data()).map(|(p, g)| scale * (p.conj() * g).im).collect();
            RealField::new(grid.clone(), data).expect("same grid")
        })
        .collect();
    DensityCurrent { rho: psi.abs_sq(), current }
}

/// Per-snapshot quantities needed to evaluate `d_t rho + div J - D Lap rho`.
pub struct FokkerPlanckData {
    times: Vec<f64>,
    dt: f64,
    rho: Vec<RealField>,
    div_j: Vec<RealField>,
    lap_rho: Vec<RealField>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FokkerPlanckResidual {
    pub diffusion: f64,
    /// Max over interior snapshots of the relative residual.
    pub max: f64,
    /// `(time, relative residual)` for each interior snapshot.
    pub per_time: Vec<(f64, f64)>,
}

impl FokkerPlanckData {
    pub fn from_trajectory(traj: &Trajectory, c: &PhysicalConstants) -> Result<Self> {
        if traj.states.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "Fokker-Planck residual needs at least 3 snapshots, got {}",
                traj.states.len()
            )));
        }
        let dt = traj.times[1] - traj.times[0];
        let uniform = traj.times.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs());
        if !uniform || dt == 0.0 {
            return Err(Error::InvalidParameter("snapshots must be uniformly spaced in time".into()));
        }
        let per: Vec<(RealField, RealField, RealField)> = traj
            .states
            .par_iter()
            .map(|psi| {
                let dc = density_current(psi, c);
                let div = spectral::divergence(&dc.current);
                let lap = spectral::laplacian_real(&dc.rho);
                (dc.rho, div, lap)
            })
            .collect();
        let mut rho = Vec::new();
        let mut div_j = Vec::new();
        let mut lap_rho = Vec::new();
        for (r, d, l) in per {
            rho.push(r);
            div_j.push(d);
            lap_rho.push(l);
        }
        Ok(FokkerPlanckData { times: traj.times.clone(), dt, rho, div_j, lap_rho })
    }

    /// Relative residual of `d_t rho = -div J + D Lap rho`, with `d_t` by
    /// centred differences on the stored snapshots.
    pub fn residual(&self, diffusion: f64) -> FokkerPlanckResidual {
        let per_time: Vec<(f64, f64)> = (1..self.rho.len() - 1)
            .map(|i| {
                let prev = self.rho[i - 1].data();
                let next = self.rho[i + 1].data();
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..prev.len() {
                    let dt_rho = (next[j] - prev[j]) / (2.0 * self.dt);
                    let r = dt_rho + self.div_j[i].data()[j] - diffusion * self.lap_rho[i].data()[j];
                    num += r * r;
                    den += dt_rho * dt_rho;
                }
                let rel = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
                (self.times[i], rel)
            })
            .collect();
        let max = per_time.iter().map(|p| p.1).fold(0.0, f64::max);
        FokkerPlanckResidual { diffusion, max, per_time }
    }
}

pub fn fokker_planck_residual(
    traj: &Trajectory,
    diffusion: f64,
    c: &PhysicalConstants,
) -> Result<FokkerPlanckResidual> {
    Ok(FokkerPlanckData::from_trajectory(traj, c)?.residual(diffusion))
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffusionScan {
    /// `(D', max residual)` for each scanned value.
    pub samples: Vec<(f64, f64)>,
    pub best: f64,
    pub step: f64,
}

/// Residual over an evenly spaced scan of `D'`.
pub fn scan_diffusion(
    traj: &Trajectory,
    c: &PhysicalConstants,
    min: f64,
    max: f64,
    count: usize,
) -> Result<DiffusionScan> {
    if count < 2 || !(max > min) {
        return Err(Error::InvalidParameter("diffusion scan needs max > min and at least 2 points".into()));
    }
    let data = FokkerPlanckData::from_trajectory(traj, c)?;
    let step = (max - min) / (count - 1) as f64;
    let samples: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let d = min + step * i as f64;
            (d, data.residual(d).max)
        })
        .collect();
    let best = samples.iter().min_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap().0;
    Ok(DiffusionScan { samples, best, step })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReversalReport {
    pub forward_norm_drift: f64,
    /// `||psi_back - psi0||`, infinite if the backward run aborted.
    pub residual: f64,
    pub aborted: Option<String>,
}

/// Evolves forward, renormalizes, then integrates the same equation backward
/// for the same time and measures how far it lands from `psi0`. Linear
/// evolution returns to the start up to solver error; diffusive terms amplify
/// high modes on the way back.
pub fn reversal_residual(psi0: &ComplexField, h: &HamiltonianSpec, params: &EvolutionParams) -> Result<ReversalReport> {
    let forward = evolve(psi0, h, params)?;
    let end = forward.final_state().clone().normalized()?;
    match evolve_reversed(&end, h, params) {
        Ok(back) => Ok(ReversalReport {
            forward_norm_drift: forward.norm_drift(),
            residual: back.final_state().distance(psi0)?,
            aborted: None,
        }),
        Err(e) if e.is_instability() => Ok(ReversalReport {
            forward_norm_drift: forward.norm_drift(),
            residual: f64::INFINITY,
            aborted: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Grid, C64};

    #[test]
    fn plane_wave_current() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let k = g.wavenumbers()[3];
        let psi = ComplexField::plane_wave(&g, &[k]);
        let c = PhysicalConstants { mass: 2.0, ..Default::default() };
        let dc = density_current(&psi, &c);
        for (r, j) in dc.rho.data().iter().zip(dc.current[0].data()) {
            assert!((r - 0.1).abs() < 1e-14);
            assert!((j - k / 2.0 * r).abs() < 1e-12);
        }
        assert!((dc.rho.integral() - psi.norm_sq()).abs() < 1e-14);
    }

    #[test]
    fn real_gaussian_has_no_current() {
        let g = Grid::new(1, 128, 20.0).unwrap();
        let psi = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let dc = density_current(&psi, &PhysicalConstants::default());
        assert!(dc.current[0].max_abs() <= 1e-12);
        assert!(dc.rho.data().iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn boosted_gaussian_current_follows_phase_gradient() {
        let g = Grid::new(1, 256, 30.0).unwrap();
        let k0 = 1.5;
        let psi = ComplexField::gaussian(&g, &[0.0], 1.0, &[k0]).unwrap();
        let dc = density_current(&psi, &PhysicalConstants::default());
        for (r, j) in dc.rho.data().iter().zip(dc.current[0].data()) {
            assert!((j - k0 * r).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_snapshots() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let psi = ComplexField::from_fn(&g, |_| C64::new(0.5, 0.0));
        let traj = Trajectory { times: vec![0.0, 0.1], states: vec![psi.clone(), psi], norms: vec![1.0, 1.0] };
        assert!(fokker_planck_residual(&traj, 0.0, &PhysicalConstants::default()).is_err());
    }
}
