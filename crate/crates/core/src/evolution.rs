//! Time integration of `i hbar d_t psi = H(psi)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, C64};
use crate::terms::{HamiltonianSpec, RFunctional, TermKind, TermSpec};

/// Relative norm drift that aborts a run.
pub const MAX_NORM_DRIFT: f64 = 1e-3;
/// Tolerance on `||psi0||^2 = 1` accepted by `evolve`.
pub const INITIAL_NORM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    SplitStep,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvolutionParams {
    pub dt: f64,
    pub steps: usize,
    pub integrator: Integrator,
    pub record_every: usize,
    /// Skip the explicit-scheme time-step guard.
    pub override_stability: bool,
}

impl EvolutionParams {
    pub fn rk4(dt: f64, steps: usize) -> Self {
        EvolutionParams { dt, steps, integrator: Integrator::Rk4, record_every: 1, override_stability: false }
    }

    pub fn split_step(dt: f64, steps: usize) -> Self {
        EvolutionParams { integrator: Integrator::SplitStep, ..Self::rk4(dt, steps) }
    }

    /// Steps of at most `max_dt` covering exactly `total` time.
    pub fn covering(total: f64, max_dt: f64) -> Self {
        let steps = (total / max_dt).ceil().max(0.0) as usize;
        let dt = if steps == 0 { max_dt } else { total / steps as f64 };
        Self::rk4(dt, steps)
    }

    pub fn recording_every(mut self, n: usize) -> Self {
        self.record_every = n;
        self
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ComplexField>,
    /// `||psi||^2` at every snapshot.
    pub norms: Vec<f64>,
}

impl Trajectory {
    pub fn initial(&self) -> &ComplexField {
        &self.states[0]
    }

    pub fn final_state(&self) -> &ComplexField {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// `| ||psi_T||^2 - ||psi_0||^2 |`.
    pub fn norm_drift(&self) -> f64 {
        (self.norms.last().unwrap() - self.norms[0]).abs()
    }

    pub fn max_norm_drift(&self) -> f64 {
        self.norms.iter().map(|n| (n - self.norms[0]).abs()).fold(0.0, f64::max)
    }
}

/// Largest RK4 time step accepted without the override flag:
/// `0.5 dx^2 (m/hbar) / (1 + |D| m/hbar)`, minimized over species.
pub fn stability_bound(grid: &Grid, h: &HamiltonianSpec) -> f64 {
    let dx2 = grid.dx().powi(2);
    h.terms()
        .iter()
        .filter(|t| matches!(t.kind, TermKind::Kinetic | TermKind::DgImag))
        .map(|t| {
            let c = h.constants_for(t);
            let ratio = c.mass / c.hbar;
            0.5 * dx2 * ratio / (1.0 + c.diffusion.abs() * ratio)
        })
        .fold(f64::INFINITY, f64::min)
}

fn rhs(h: &HamiltonianSpec, psi: &ComplexField) -> Result<Vec<C64>> {
    let factor = C64::new(0.0, -1.0 / h.constants().hbar);
    Ok(h.apply(psi)?.into_data().into_iter().map(|v| v * factor).collect())
}

fn shifted(psi: &ComplexField, k: &[C64], a: f64) -> ComplexField {
    let data = psi.data().iter().zip(k).map(|(p, d)| p + d * a).collect();
    ComplexField::new(psi.grid().clone(), data).expect("same grid")
}

fn rk4_step(h: &HamiltonianSpec, psi: &ComplexField, dt: f64) -> Result<ComplexField> {
    let k1 = rhs(h, psi)?;
    let k2 = rhs(h, &shifted(psi, &k1, 0.5 * dt))?;
    let k3 = rhs(h, &shifted(psi, &k2, 0.5 * dt))?;
    let k4 = rhs(h, &shifted(psi, &k3, dt))?;
    let w = dt / 6.0;
    let data =
        psi.data().iter().enumerate().map(|(i, p)| p + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * w).collect();
    ComplexField::new(psi.grid().clone(), data)
}

/// Exact kinetic propagator and the pointwise terms for Strang splitting.
struct SplitPlan<'a> {
    kinetic_phase: Vec<f64>,
    pointwise: Vec<&'a TermSpec>,
}

impl<'a> SplitPlan<'a> {
    fn new(h: &'a HamiltonianSpec, grid: &Grid) -> Result<Self> {
        let hbar = h.constants().hbar;
        let mut kinetic_phase = vec![0.0; grid.len()];
        let mut pointwise = Vec::new();
        for t in h.terms() {
            match &t.kind {
                TermKind::Kinetic => {
                    let c = h.constants_for(t);
                    let coef = c.hbar * c.hbar / (2.0 * c.mass * hbar);
                    let k2 = grid.k_squared(&t.axes_for(grid));
                    kinetic_phase.iter_mut().zip(k2).for_each(|(p, k)| *p += coef * k);
                }
                _ if t.properties().pointwise => pointwise.push(t),
                other => {
                    return Err(Error::Unsupported(format!(
                        "split-step needs pointwise nonlinear terms; {} is not pointwise",
                        other.name()
                    )))
                }
            }
        }
        Ok(SplitPlan { kinetic_phase, pointwise })
    }

    fn kinetic(&self, psi: &mut ComplexField, dt: f64) {
        let grid = psi.grid().clone();
        let data = psi.data_mut();
        grid.transform(data, false);
        data.iter_mut().zip(&self.kinetic_phase).for_each(|(v, p)| *v *= C64::from_polar(1.0, -p * dt));
        grid.transform(data, true);
    }

    fn pointwise_flow(h: &HamiltonianSpec, term: &TermSpec, psi: &mut ComplexField, tau: f64) {
        let c = h.constants_for(term);
        let hbar = h.constants().hbar;
        let grid = psi.grid().clone();
        let max = psi.max_abs_sq();
        let data = psi.data_mut();
        // every pointwise term is real-valued coefficient times psi, so |psi| is invariant
        match &term.kind {
            TermKind::Kostin => {
                let growth = (2.0 * c.kostin * tau / hbar).exp();
                data.iter_mut().for_each(|v| *v = C64::from_polar(v.norm(), v.arg() * growth));
            }
            kind => {
                for (i, v) in data.iter_mut().enumerate() {
                    let rho = v.norm_sqr();
                    let coef = match kind {
                        TermKind::Potential(pot) => {
                            if pot.grid() == &grid {
                                pot.data()[i]
                            } else {
                                pot.data()[grid.axis_index(i, term.axes.as_ref().expect("validated")[0])]
                            }
                        }
                        TermKind::BbmLog => c.bbm * 0.5 * rho.max(c.amplitude_floor * max).ln(),
                        TermKind::CubicNls { g } => g * rho,
                        TermKind::GenericR { functional: RFunctional::DensityContrast, strength } => {
                            strength * rho / max
                        }
                        _ => unreachable!("filtered by SplitPlan::new"),
                    };
                    *v *= C64::from_polar(1.0, -coef * tau / hbar);
                }
            }
        }
    }

    fn step(&self, h: &HamiltonianSpec, psi: &ComplexField, dt: f64) -> ComplexField {
        let mut out = psi.clone();
        for t in &self.pointwise {
            Self::pointwise_flow(h, t, &mut out, 0.5 * dt);
        }
        self.kinetic(&mut out, dt);
        for t in self.pointwise.iter().rev() {
            Self::pointwise_flow(h, t, &mut out, 0.5 * dt);
        }
        out
    }
}

fn run(psi0: &ComplexField, h: &HamiltonianSpec, params: &EvolutionParams, direction: f64) -> Result<Trajectory> {
    let grid = psi0.grid();
    h.validate_for(grid)?;
    if !(params.dt.is_finite() && params.dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive".into()));
    }
    if params.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be positive".into()));
    }
    let n0 = psi0.norm_sq();
    if (n0 - 1.0).abs() > INITIAL_NORM_TOL {
        return Err(Error::NotNormalized(n0));
    }
    let split = match params.integrator {
        Integrator::Rk4 => {
            let bound = stability_bound(grid, h);
            if params.dt > bound && !params.override_stability {
                return Err(Error::InvalidParameter(format!(
                    "dt = {} exceeds the stability bound {bound:.6e}",
                    params.dt
                )));
            }
            None
        }
        Integrator::SplitStep => Some(SplitPlan::new(h, grid)?),
    };
    let check_norm = h.is_norm_preserving();
    let dt = direction * params.dt;

    let mut traj = Trajectory { times: vec![0.0], states: vec![psi0.clone()], norms: vec![n0] };
    let mut psi = psi0.clone();
    for step in 1..=params.steps {
        psi = match &split {
            None => rk4_step(h, &psi, dt).map_err(|e| match e {
                Error::NonFinite(what) => Error::Instability(format!("non-finite {what} at step {step}")),
                other => other,
            })?,
            Some(plan) => plan.step(h, &psi, dt),
        };
        if !psi.is_finite() {
            return Err(Error::Instability(format!("non-finite amplitudes at step {step}")));
        }
        let norm = psi.norm_sq();
        if check_norm && (norm - n0).abs() > MAX_NORM_DRIFT * n0 {
            return Err(Error::Instability(format!(
                "norm drift {:.3e} at step {step} (t = {:.6})",
                (norm - n0).abs(),
                step as f64 * dt
            )));
        }
        if step % params.record_every == 0 {
            traj.times.push(step as f64 * dt);
            traj.states.push(psi.clone());
            traj.norms.push(norm);
        }
    }
    Ok(traj)
}

/// Integrates `i hbar d_t psi = H(psi)` forward from a normalized `psi0`.
pub fn evolve(psi0: &ComplexField, h: &HamiltonianSpec, params: &EvolutionParams) -> Result<Trajectory> {
    run(psi0, h, params, 1.0)
}

/// Same equation integrated backward in time; recorded times are negative.
pub fn evolve_reversed(psi0: &ComplexField, h: &HamiltonianSpec, params: &EvolutionParams) -> Result<Trajectory> {
    run(psi0, h, params, -1.0)
}

/// Final state after `t`, using RK4 steps no longer than `max_dt`.
pub fn propagate(psi0: &ComplexField, h: &HamiltonianSpec, t: f64, max_dt: f64) -> Result<ComplexField> {
    if t == 0.0 {
        return Ok(psi0.clone());
    }
    let mut params = EvolutionParams::covering(t, max_dt);
    params.record_every = params.steps.max(1);
    Ok(evolve(psi0, h, &params)?.final_state().clone())
}

/// `K_ab = K_a^(1) + K_b^(2) + Q` on a `1D x 1D` product grid.
#[derive(Clone, Debug)]
pub struct TwoParticleHamiltonian {
    pub first: HamiltonianSpec,
    pub second: HamiltonianSpec,
    /// Strength of the sample product-complement `Q`; `None` leaves it out.
    pub interaction: Option<f64>,
    pub species: (usize, usize),
}

impl TwoParticleHamiltonian {
    pub fn new(first: HamiltonianSpec, second: HamiltonianSpec) -> Self {
        TwoParticleHamiltonian { first, second, interaction: None, species: (0, 1) }
    }

    pub fn with_interaction(mut self, strength: f64) -> Self {
        self.interaction = Some(strength);
        self
    }
}

fn universal_constant(name: &str, first: Option<f64>, second: Option<f64>) -> Result<Option<f64>> {
    match (first, second) {
        (None, None) => Ok(None),
        (Some(a), Some(b)) if a == b => Ok(Some(a)),
        _ => Err(Error::InvalidParameter(format!(
            "{name} is a universal constant: both particles must carry the term with the same value"
        ))),
    }
}

/// Builds the joint Hamiltonian acting on two-particle fields over the
/// product of `one_grid` with itself.
///
/// One-particle derivatives and `N` act on their own axis. Logarithmic and
/// Kostin terms carry universal constants; on product fields they split as
/// `ln|psi1 psi2| = ln|psi1| + ln|psi2|`, so they enter the joint operator once.
pub fn compose_two_particle(tp: &TwoParticleHamiltonian, one_grid: &Grid) -> Result<HamiltonianSpec> {
    if one_grid.n_dims() != 1 {
        return Err(Error::Unsupported("two-particle composition needs 1D one-particle grids".into()));
    }
    tp.first.validate_for(one_grid)?;
    tp.second.validate_for(one_grid)?;
    if tp.first.constants().hbar != tp.second.constants().hbar {
        return Err(Error::InvalidParameter("both particles must share hbar".into()));
    }

    let mut terms = Vec::new();
    let mut bbm = [None, None];
    let mut kostin = [None, None];
    let blocks = [(&tp.first, tp.species.0), (&tp.second, tp.species.1)];
    for (axis, (h, species)) in blocks.into_iter().enumerate() {
        for t in h.terms() {
            let c = *h.constants_for(t);
            match t.kind {
                TermKind::BbmLog => bbm[axis] = Some(c.bbm),
                TermKind::Kostin => kostin[axis] = Some(c.kostin),
                TermKind::ProductComplement { .. } => {
                    return Err(Error::InvalidParameter("Q is a two-particle term; use `interaction`".into()))
                }
                _ => terms.push(t.clone().on_axes(vec![axis]).with_constants(c).with_species(species)),
            }
        }
    }
    let base = *tp.first.constants();
    if let Some(p) = universal_constant("BBM constant p", bbm[0], bbm[1])? {
        let mut c = base;
        c.bbm = p;
        terms.push(TermSpec::bbm_log().with_constants(c));
    }
    if let Some(q) = universal_constant("Kostin constant q", kostin[0], kostin[1])? {
        let mut c = base;
        c.kostin = q;
        terms.push(TermSpec::kostin().with_constants(c));
    }
    if let Some(strength) = tp.interaction {
        terms.push(TermSpec::new(TermKind::ProductComplement { strength }));
    }
    HamiltonianSpec::new(terms, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bipartite::tensor;
    use crate::terms::PhysicalConstants;

    #[test]
    fn zero_steps_returns_initial_state() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let psi = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let h = HamiltonianSpec::free(PhysicalConstants::default());
        let traj = evolve(&psi, &h, &EvolutionParams::rk4(1e-3, 0)).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.final_state().data(), psi.data());
    }

    #[test]
    fn rejects_unnormalized_and_unstable_inputs() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let psi = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let h = HamiltonianSpec::free(PhysicalConstants::default());
        assert!(matches!(
            evolve(&psi.scaled(C64::new(2.0, 0.0)), &h, &EvolutionParams::rk4(1e-3, 1)),
            Err(Error::NotNormalized(_))
        ));
        let bound = stability_bound(&g, &h);
        assert!((bound - 0.5 * g.dx().powi(2)).abs() < 1e-15);
        let err = evolve(&psi, &h, &EvolutionParams::rk4(2.0 * bound, 1)).unwrap_err();
        assert!(err.to_string().contains("dt"));
        let mut p = EvolutionParams::rk4(1.5 * bound, 1);
        p.override_stability = true;
        assert!(evolve(&psi, &h, &p).is_ok());
    }

    #[test]
    fn split_step_rejects_dg() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let psi = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let h = HamiltonianSpec::doebner_goldin(PhysicalConstants::default(), 0.05).unwrap();
        assert!(matches!(evolve(&psi, &h, &EvolutionParams::split_step(1e-3, 2)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn split_step_matches_rk4_for_cubic() {
        let g = Grid::new(1, 128, 20.0).unwrap();
        let psi = ComplexField::gaussian(&g, &[0.0], 1.0, &[1.0]).unwrap();
        let c = PhysicalConstants::default().with_bbm(0.3).with_kostin(0.05);
        let h = HamiltonianSpec::new(
            vec![TermSpec::kinetic(), TermSpec::cubic(1.0), TermSpec::bbm_log(), TermSpec::kostin()],
            c,
        )
        .unwrap();
        let dt = 0.002;
        let a = evolve(&psi, &h, &EvolutionParams::rk4(dt, 100)).unwrap();
        let b = evolve(&psi, &h, &EvolutionParams::split_step(dt / 2.0, 200)).unwrap();
        let d = a.final_state().distance(b.final_state()).unwrap();
        assert!(d < 1e-4, "split-step vs rk4 distance {d}");
    }

    #[test]
    fn joint_kinetic_has_plane_wave_eigenvalue() {
        let g = Grid::new(1, 16, 2.0 * std::f64::consts::PI).unwrap();
        let h = HamiltonianSpec::free(PhysicalConstants::default());
        let tp = TwoParticleHamiltonian::new(h.clone(), h);
        let joint = compose_two_particle(&tp, &g).unwrap();
        let jg = crate::bipartite::joint_grid(&g).unwrap();
        let (k1, k2) = (2.0, -3.0);
        let psi = ComplexField::plane_wave(&jg, &[k1, k2]);
        let out = joint.apply(&psi).unwrap();
        let expected = psi.scaled(C64::new((k1 * k1 + k2 * k2) / 2.0, 0.0));
        assert!(out.distance(&expected).unwrap() < 1e-10);
    }

    #[test]
    fn joint_dg_on_product_is_sum_of_factors() {
        let g = Grid::new(1, 64, 16.0).unwrap();
        let c = PhysicalConstants::default();
        let ha = HamiltonianSpec::free(c);
        let hb = HamiltonianSpec::doebner_goldin(c, 0.05).unwrap();
        let tp = TwoParticleHamiltonian::new(ha.clone(), hb.clone());
        let joint = compose_two_particle(&tp, &g).unwrap();
        let p1 = ComplexField::gaussian(&g, &[0.5], 1.0, &[0.7]).unwrap();
        let p2 = ComplexField::gaussian(&g, &[-1.0], 1.3, &[-0.4]).unwrap();
        let out = joint.apply(&tensor(&p1, &p2).unwrap()).unwrap();
        let mut expected = tensor(&p1, &hb.apply(&p2).unwrap()).unwrap();
        expected.axpy(C64::new(1.0, 0.0), &tensor(&ha.apply(&p1).unwrap(), &p2).unwrap()).unwrap();
        let d = out.distance(&expected).unwrap();
        assert!(d < 1e-8, "distance {d}");
    }

    #[test]
    fn product_complement_vanishes_on_products() {
        let g = Grid::new(1, 32, 16.0).unwrap();
        let h = HamiltonianSpec::free(PhysicalConstants::default());
        let jg = crate::bipartite::joint_grid(&g).unwrap();
        let q = TermSpec::new(TermKind::ProductComplement { strength: 2.0 });
        let p1 = ComplexField::gaussian(&g, &[0.5], 1.0, &[0.7]).unwrap();
        let p2 = ComplexField::gaussian(&g, &[-1.0], 1.3, &[-0.4]).unwrap();
        let prod = tensor(&p1, &p2).unwrap();
        let qv = crate::terms::apply_term(&q, &prod, h.constants()).unwrap();
        assert!(qv.norm() <= 1e-10);
        // but not on an entangled field
        let mut ent = prod.clone();
        ent.axpy(C64::new(1.0, 0.0), &tensor(&p2, &p1).unwrap()).unwrap();
        let ent = ent.normalized().unwrap();
        assert!(crate::terms::apply_term(&q, &ent, h.constants()).unwrap().norm() > 1e-3);
        let composed =
            compose_two_particle(&TwoParticleHamiltonian::new(h.clone(), h).with_interaction(2.0), &g).unwrap();
        assert!(composed.validate_for(&jg).is_ok());
    }

    #[test]
    fn universal_constants_must_match() {
        let g = Grid::new(1, 16, 8.0).unwrap();
        let c = PhysicalConstants::default();
        let with_bbm = HamiltonianSpec::new(vec![TermSpec::kinetic(), TermSpec::bbm_log()], c.with_bbm(0.2)).unwrap();
        let free = HamiltonianSpec::free(c);
        assert!(compose_two_particle(&TwoParticleHamiltonian::new(with_bbm.clone(), free), &g).is_err());
        let joint = compose_two_particle(&TwoParticleHamiltonian::new(with_bbm.clone(), with_bbm), &g).unwrap();
        let logs = joint.terms().iter().filter(|t| matches!(t.kind, TermKind::BbmLog)).count();
        assert_eq!(logs, 1);
    }
}
