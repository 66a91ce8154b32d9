//! Separation test: does joint evolution of a product state stay the
//! product of the separately evolved factors?

use serde::Serialize;

use crate::bipartite::{phase_aligned_distance, tensor};
use crate::error::{Error, Result};
use crate::evolution::{compose_two_particle, evolve, EvolutionParams, Trajectory, TwoParticleHamiltonian};
use crate::field::ComplexField;
use crate::spectral::resample;
use crate::terms::HamiltonianSpec;

pub const DEFAULT_SEPARATION_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Separating,
    CorrelationGenerating,
    /// The linear control run already exceeds the tolerance, so the grid or
    /// time step cannot resolve the question.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparationReport {
    pub times: Vec<f64>,
    /// Phase-aligned `||Psi_joint(t) - psi1(t) (x) psi2(t)||`.
    pub defect: Vec<f64>,
    pub max_defect: f64,
    /// Max defect of the kinetic-only control at the same resolution.
    pub control_floor: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl SeparationReport {
    /// True if the defect is non-decreasing over the first `n` recorded times.
    pub fn grows_monotonically_early(&self, n: usize) -> bool {
        self.defect.iter().take(n.max(2)).collect::<Vec<_>>().windows(2).all(|w| w[1] >= w[0])
    }
}

fn defects(joint: &Trajectory, first: &Trajectory, second: &Trajectory) -> Result<Vec<f64>> {
    joint
        .states
        .iter()
        .zip(first.states.iter().zip(&second.states))
        .map(|(j, (a, b))| phase_aligned_distance(j, &tensor(a, b)?))
        .collect()
}

fn run_triplet(
    psi1: &ComplexField,
    psi2: &ComplexField,
    joint_h: &HamiltonianSpec,
    first: &HamiltonianSpec,
    second: &HamiltonianSpec,
    params: &EvolutionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let psi0 = tensor(psi1, psi2)?;
    let (joint, (a, b)) = rayon::join(
        || evolve(&psi0, joint_h, params),
        || rayon::join(|| evolve(psi1, first, params), || evolve(psi2, second, params)),
    );
    let (joint, a, b) = (joint?, a?, b?);
    Ok((joint.times.clone(), defects(&joint, &a, &b)?))
}

/// Evolves `psi1 (x) psi2` jointly and each factor on its own, and compares.
pub fn separation_defect(
    psi1: &ComplexField,
    psi2: &ComplexField,
    tp: &TwoParticleHamiltonian,
    params: &EvolutionParams,
) -> Result<SeparationReport> {
    separation_defect_with_tolerance(psi1, psi2, tp, params, DEFAULT_SEPARATION_TOL)
}

pub fn separation_defect_with_tolerance(
    psi1: &ComplexField,
    psi2: &ComplexField,
    tp: &TwoParticleHamiltonian,
    params: &EvolutionParams,
    tolerance: f64,
) -> Result<SeparationReport> {
    let grid = psi1.grid();
    let joint_h = compose_two_particle(tp, grid)?;

    let control_first = HamiltonianSpec::free(*tp.first.constants());
    let control_second = HamiltonianSpec::free(*tp.second.constants());
    let control_tp = TwoParticleHamiltonian::new(control_first.clone(), control_second.clone());
    let control_joint = compose_two_particle(&control_tp, grid)?;

    let (main, control) = rayon::join(
        || run_triplet(psi1, psi2, &joint_h, &tp.first, &tp.second, params),
        || run_triplet(psi1, psi2, &control_joint, &control_first, &control_second, params),
    );
    let (times, defect) = main?;
    let (_, control_defect) = control?;

    let max_defect = defect.iter().copied().fold(0.0, f64::max);
    let control_floor = control_defect.iter().copied().fold(0.0, f64::max);
    let verdict = if control_floor > tolerance {
        Verdict::Inconclusive
    } else if max_defect <= tolerance {
        Verdict::Separating
    } else {
        Verdict::CorrelationGenerating
    };
    Ok(SeparationReport { times, defect, max_defect, control_floor, tolerance, verdict })
}

/// Relative change allowed between resolutions for a defect to count as
/// refinement-stable.
pub const REFINEMENT_STABILITY: f64 = 0.1;

#[derive(Clone, Debug, Serialize)]
pub struct RefinementReport {
    pub coarse: SeparationReport,
    pub fine: SeparationReport,
    pub fine_points: usize,
    pub verdict: Verdict,
}

/// Runs the separation test twice: as given, and on a grid with half again
/// as many points (fields interpolated spectrally) with half the time step.
///
/// Separating: the defect stays below tolerance at both resolutions and does
/// not grow under refinement, unless it already sits within ten times the
/// fine control floor. Correlation-generating: the defect exceeds tolerance
/// at both resolutions and changes by at most `REFINEMENT_STABILITY`.
pub fn separation_with_refinement(
    psi1: &ComplexField,
    psi2: &ComplexField,
    tp: &TwoParticleHamiltonian,
    params: &EvolutionParams,
    tolerance: f64,
) -> Result<RefinementReport> {
    let points = psi1.grid().points();
    let fine_points = points + points / 2;
    if fine_points % 2 != 0 {
        return Err(Error::InvalidParameter("refinement needs points divisible by 4".into()));
    }
    let (f1, f2) = (resample(psi1, fine_points)?.normalized()?, resample(psi2, fine_points)?.normalized()?);
    let mut fine_params = *params;
    fine_params.dt *= 0.5;
    fine_params.steps *= 2;
    fine_params.record_every *= 2;
    let fine_tp =
        TwoParticleHamiltonian { first: rebuild(&tp.first, &f1)?, second: rebuild(&tp.second, &f2)?, ..tp.clone() };
    let (coarse, fine) = rayon::join(
        || separation_defect_with_tolerance(psi1, psi2, tp, params, tolerance),
        || separation_defect_with_tolerance(&f1, &f2, &fine_tp, &fine_params, tolerance),
    );
    let (coarse, fine) = (coarse?, fine?);
    let verdict = if coarse.verdict == Verdict::Inconclusive || fine.verdict == Verdict::Inconclusive {
        Verdict::Inconclusive
    } else if coarse.max_defect <= tolerance && fine.max_defect <= tolerance {
        if fine.max_defect <= coarse.max_defect || fine.max_defect <= 10.0 * fine.control_floor {
            Verdict::Separating
        } else {
            Verdict::Inconclusive
        }
    } else if coarse.max_defect > tolerance && fine.max_defect > tolerance {
        if (fine.max_defect - coarse.max_defect).abs() <= REFINEMENT_STABILITY * coarse.max_defect {
            Verdict::CorrelationGenerating
        } else {
            Verdict::Inconclusive
        }
    } else {
        Verdict::Inconclusive
    };
    Ok(RefinementReport { coarse, fine, fine_points, verdict })
}

// Potentials are sampled on a specific grid; resample them along with the state.
fn rebuild(h: &HamiltonianSpec, target: &ComplexField) -> Result<HamiltonianSpec> {
    use crate::terms::{TermKind, TermSpec};
    let grid = target.grid();
    let terms = h
        .terms()
        .iter()
        .map(|t| match &t.kind {
            TermKind::Potential(v) if v.grid() != grid => {
                let fine = resample(&v.to_complex(), grid.points())?.real_part();
                Ok(TermSpec { kind: TermKind::Potential(std::sync::Arc::new(fine)), ..t.clone() })
            }
            _ => Ok(t.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    HamiltonianSpec::new(terms, *h.constants())
}
