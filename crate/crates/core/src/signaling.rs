//! Conditional ensembles after a measurement on particle 1, and the signal
//! that a nonlinear evolution of particle 2 carries about which observable
//! was measured.
//!
//! For a measurement of `A` on the first particle of `Phi`, the expected value
//! of `B` (acting on the second particle) after a delay `t` is
//!
//! ```text
//! E(B,t|A) = sum_l ||P_l Phi||^2 (E_t phi_l, B E_t phi_l)
//! ```
//!
//! and its first-order rate is `E_1(B|A) = (2/hbar) sum_l w_l Im(B phi_l, H phi_l)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bipartite::factor_grid;
use crate::error::{Error, Result};
use crate::evolution::propagate;
use crate::field::{ComplexField, Grid, C64};
use crate::spectral;
use crate::terms::HamiltonianSpec;

/// Outcomes whose Born weight falls below this are discarded.
pub const WEIGHT_CUTOFF: f64 = 1e-24;
/// Allowed `|Delta(B,0|A,A')|` before an ensemble is considered broken.
pub const ZERO_DELAY_TOL: f64 = 1e-9;
/// Allowed imaginary residue of `(phi, B phi)` relative to `||B phi||`.
pub const HERMITIAN_RESIDUE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsystem {
    First,
    Second,
    Whole,
}

#[derive(Clone, Debug)]
pub enum ObservableKind {
    Identity,
    /// Multiplication by the axis-0 coordinate.
    Position,
    /// Wavenumber operator `-i d/dx` (momentum in units of `hbar`).
    Momentum,
    /// Multiplication by real values, one per grid point.
    Multiplication(Arc<Vec<f64>>),
    /// `M_b G M_b`: Gaussian smoothing of width `width` sandwiched between
    /// multiplications by `profile`. Its kernel is smooth, so `B delta_w` is
    /// a well-defined function.
    Smoothed {
        profile: Arc<Vec<f64>>,
        width: f64,
    },
    /// Dense hermitian matrix acting on amplitude vectors.
    Matrix(Arc<DMatrix<C64>>),
}

#[derive(Clone, Debug)]
pub struct ObservableSpec {
    pub kind: ObservableKind,
    pub subsystem: Subsystem,
    pub label: String,
}

impl ObservableSpec {
    pub fn new(kind: ObservableKind, subsystem: Subsystem, label: impl Into<String>) -> Self {
        ObservableSpec { kind, subsystem, label: label.into() }
    }

    pub fn identity(subsystem: Subsystem) -> Self {
        Self::new(ObservableKind::Identity, subsystem, "identity")
    }

    pub fn position(subsystem: Subsystem) -> Self {
        Self::new(ObservableKind::Position, subsystem, "position")
    }

    pub fn momentum(subsystem: Subsystem) -> Self {
        Self::new(ObservableKind::Momentum, subsystem, "momentum")
    }

    pub fn multiplication(values: Vec<f64>, subsystem: Subsystem) -> Self {
        Self::new(ObservableKind::Multiplication(Arc::new(values)), subsystem, "multiplication")
    }

    pub fn smoothed(profile: Vec<f64>, width: f64, subsystem: Subsystem) -> Self {
        Self::new(ObservableKind::Smoothed { profile: Arc::new(profile), width }, subsystem, "smoothed")
    }

    pub fn matrix(m: DMatrix<C64>, subsystem: Subsystem) -> Self {
        Self::new(ObservableKind::Matrix(Arc::new(m)), subsystem, "matrix")
    }

    /// Random hermitian matrix with entries of order one.
    pub fn random_hermitian(n: usize, seed: u64, subsystem: Subsystem) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        Self::new(ObservableKind::Matrix(Arc::new(m)), subsystem, "random_hermitian")
    }

    fn check_len(&self, grid: &Grid) -> Result<()> {
        let n = match &self.kind {
            ObservableKind::Multiplication(v) => Some(v.len()),
            ObservableKind::Smoothed { profile, .. } => Some(profile.len()),
            ObservableKind::Matrix(m) => Some(m.nrows()),
            _ => None,
        };
        match n {
            Some(n) if n != grid.len() => Err(Error::GridMismatch(format!(
                "observable {} has dimension {n}, grid has {} points",
                self.label,
                grid.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Action on a one-particle field.
    pub fn apply(&self, f: &ComplexField) -> Result<ComplexField> {
        let grid = f.grid();
        self.check_len(grid)?;
        Ok(match &self.kind {
            ObservableKind::Identity => f.clone(),
            ObservableKind::Position => {
                let data = f.data().iter().enumerate().map(|(i, v)| v * grid.coordinate(i, 0)).collect();
                ComplexField::new(grid.clone(), data)?
            }
            ObservableKind::Momentum => spectral::derivative(f, 0).scaled(C64::new(0.0, -1.0)),
            ObservableKind::Multiplication(v) => {
                ComplexField::new(grid.clone(), f.data().iter().zip(v.iter()).map(|(a, b)| a * b).collect())?
            }
            ObservableKind::Smoothed { profile, width } => {
                let axes: Vec<usize> = (0..grid.n_dims()).collect();
                let inner =
                    ComplexField::new(grid.clone(), f.data().iter().zip(profile.iter()).map(|(a, b)| a * b).collect())?;
                let smooth = spectral::apply_fourier_multiplier(&inner, &axes, |k2| {
                    C64::new((-0.5 * width * width * k2).exp(), 0.0)
                });
                ComplexField::new(grid.clone(), smooth.data().iter().zip(profile.iter()).map(|(a, b)| a * b).collect())?
            }
            ObservableKind::Matrix(m) => {
                let v = nalgebra::DVector::from_column_slice(f.data());
                ComplexField::new(grid.clone(), (m.as_ref() * v).as_slice().to_vec())?
            }
        })
    }

    /// Dense matrix of the operator on amplitude vectors.
    pub fn to_matrix(&self, grid: &Grid) -> Result<DMatrix<C64>> {
        if let ObservableKind::Matrix(m) = &self.kind {
            self.check_len(grid)?;
            return Ok(m.as_ref().clone());
        }
        let n = grid.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = ComplexField::zeros(grid);
            e.data_mut()[j] = C64::new(1.0, 0.0);
            let col = self.apply(&e)?;
            for (i, v) in col.data().iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    /// `max |(f, O g) - conj((g, O f))| / (||f|| ||O g||)` over random pairs.
    pub fn hermiticity_residual(&self, grid: &Grid, seed: u64, trials: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            // smooth random fields, so unbounded operators stay resolved
            let coeffs: Vec<(C64, C64, f64)> = (0..6)
                .map(|_| {
                    (
                        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                        rng.gen_range(-4.0..4.0_f64).round(),
                    )
                })
                .collect();
            let l = grid.extent();
            let make = |pick: usize| {
                ComplexField::from_fn(grid, |x| {
                    coeffs
                        .iter()
                        .map(|(a, b, j)| {
                            let c = if pick == 0 { a } else { b };
                            c * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j * x[0] / l)
                        })
                        .sum()
                })
            };
            let (f, g) = (make(0), make(1));
            let og = self.apply(&g)?;
            let of = self.apply(&f)?;
            let lhs = f.inner(&og)?;
            let rhs = g.inner(&of)?.conj();
            let scale = f.norm() * og.norm().max(of.norm());
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).norm() / scale);
            }
        }
        Ok(worst)
    }

    /// `(phi, B phi)`, asserting that the imaginary residue is negligible.
    pub fn expectation(&self, phi: &ComplexField) -> Result<f64> {
        let bphi = self.apply(phi)?;
        let v = phi.inner(&bphi)?;
        let scale = bphi.norm() * phi.norm();
        if v.im.abs() > HERMITIAN_RESIDUE_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::BrokenEnsemble(format!(
                "observable {} gives imaginary expectation residue {:.3e}",
                self.label, v.im
            )));
        }
        Ok(v.re)
    }
}

/// One measurement outcome: Born weight and the normalized conditional
/// state of the unmeasured particle.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub weight: f64,
    pub eigenvalue: f64,
    /// Grid index of the outcome for position measurements.
    pub index: Option<usize>,
    pub state: ComplexField,
}

#[derive(Clone, Debug)]
pub struct ConditionalEnsemble {
    pub outcomes: Vec<Outcome>,
    pub measured: String,
}

impl ConditionalEnsemble {
    pub fn total_weight(&self) -> f64 {
        self.outcomes.iter().map(|o| o.weight).sum()
    }

    /// `sum_l w_l (phi_l, B phi_l)`.
    pub fn expectation(&self, b: &ObservableSpec) -> Result<f64> {
        let parts: Result<Vec<f64>> =
            self.outcomes.par_iter().map(|o| Ok(o.weight * b.expectation(&o.state)?)).collect();
        Ok(parts?.iter().sum())
    }

    /// Same outcomes with each conditional state rescaled to unit integral,
    /// `int phi_l dy = 1`. For position outcomes of a Gaussian-weighted EPR
    /// state this turns each conditional state into the regularized delta
    /// `delta^(s)_w` itself rather than its L2-normalized version.
    pub fn unit_mass(&self) -> Result<Self> {
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| {
                let g = o.state.grid();
                let mass: C64 = o.state.data().iter().sum::<C64>() * g.cell_volume();
                if mass.norm() < 1e-12 * o.state.norm() {
                    return Err(Error::InvalidParameter("conditional state has no net mass".into()));
                }
                Ok(Outcome { state: o.state.scaled(mass.inv()), ..o.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConditionalEnsemble { outcomes, measured: format!("{} (unit mass)", self.measured) })
    }
}

/// Zero-total-momentum two-particle state
/// `Phi(x, y) ~ sum_{|j| <= band} c_j e^{i k_j x} e^{-i k_j y}`
/// on the product of `grid` with itself.
///
/// With finite `s_loc` the weights are `c_j = exp(-k_j^2 / (4 s_loc))`, so a
/// position measurement on particle 1 leaves particle 2 in a (band-limited)
/// Gaussian `exp(-s_loc (y - w)^2)`. `s_loc = inf` gives uniform weights.
pub fn epr_state(grid: &Grid, band: usize, s_loc: f64) -> Result<ComplexField> {
    if grid.n_dims() != 1 {
        return Err(Error::Unsupported("EPR states are built from 1D one-particle grids".into()));
    }
    let n = grid.points();
    if 2 * band + 1 > n {
        return Err(Error::InvalidParameter(format!("band {band} too large for {n} points (need 2*band+1 <= points)")));
    }
    if !(s_loc > 0.0) {
        return Err(Error::InvalidParameter("s_loc must be positive".into()));
    }
    let joint = crate::bipartite::joint_grid(grid)?;
    let dk = 2.0 * std::f64::consts::PI / grid.extent();
    let dx = grid.dx();
    // Phi depends only on x - y; tabulate on lattice differences
    let profile: Vec<C64> = (0..n)
        .map(|m| {
            let d = m as f64 * dx;
            (-(band as i64)..=band as i64)
                .map(|j| {
                    let k = j as f64 * dk;
                    let c = if s_loc.is_finite() { (-k * k / (4.0 * s_loc)).exp() } else { 1.0 };
                    C64::from_polar(c, k * d)
                })
                .sum()
        })
        .collect();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(profile[(i + n - j) % n]);
        }
    }
    ComplexField::new(joint, data)?.normalized()
}

fn conditional_from_basis(phi: &ComplexField, one: &Grid, basis: &[C64]) -> (f64, ComplexField) {
    // phi_l(y) = sum_x conj(e_l(x)) Phi(x, y) dx
    let n = one.points();
    let dx = one.dx();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (x, e) in basis.iter().enumerate() {
        let c = e.conj() * dx;
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        let row = &phi.data()[x * n..(x + 1) * n];
        out.iter_mut().zip(row).for_each(|(o, v)| *o += c * v);
    }
    let f = ComplexField::new(one.clone(), out).expect("one-particle grid");
    (f.norm_sq(), f)
}

fn push_outcome(
    outcomes: &mut Vec<Outcome>,
    total: f64,
    weight: f64,
    eigenvalue: f64,
    index: Option<usize>,
    state: ComplexField,
) {
    if weight > WEIGHT_CUTOFF * total {
        let state = state.scaled(C64::new(weight.sqrt().recip(), 0.0));
        outcomes.push(Outcome { weight, eigenvalue, index, state });
    }
}

fn reject_degenerate(values: &[(f64, f64)], scale: f64, label: &str) -> Result<()> {
    // values: (eigenvalue, weight), sorted by eigenvalue
    let tol = 1e-9 * scale.max(1e-300);
    for w in values.windows(2) {
        if (w[1].0 - w[0].0).abs() <= tol && w[0].1 > 0.0 && w[1].1 > 0.0 {
            return Err(Error::Degenerate(format!(
                "{label} has a degenerate eigenvalue {:.6e} with nonzero weight",
                w[0].0
            )));
        }
    }
    Ok(())
}

/// Measures `a` on particle 1 of the joint field `phi` and returns the Born
/// weights and normalized conditional states of particle 2.
pub fn measure_conditionals(phi: &ComplexField, a: &ObservableSpec) -> Result<ConditionalEnsemble> {
    let one = factor_grid(phi.grid())?;
    if a.subsystem == Subsystem::Second {
        return Err(Error::InvalidParameter("measured observable must act on particle 1".into()));
    }
    let n = one.points();
    let total = phi.norm_sq();
    let dx = one.dx();
    let mut outcomes = Vec::new();
    match &a.kind {
        ObservableKind::Identity => {
            return Err(Error::Degenerate("identity has a fully degenerate spectrum".into()));
        }
        ObservableKind::Position => {
            for x in 0..n {
                let row = &phi.data()[x * n..(x + 1) * n];
                let state = ComplexField::new(one.clone(), row.iter().map(|v| v * dx.sqrt()).collect()).expect("row");
                let w = state.norm_sq();
                push_outcome(&mut outcomes, total, w, one.coords()[x], Some(x), state);
            }
        }
        ObservableKind::Momentum => {
            let mut spec = phi.data().to_vec();
            phi.grid().transform_axis(&mut spec, 0, false);
            let x0 = one.coords()[0];
            let norm = dx / one.extent().sqrt();
            for m in 0..n {
                let k = one.wavenumbers()[m];
                // e^{-i k x_j} = e^{-i k x_0} e^{-2 pi i j m / n}
                let phase = C64::from_polar(norm, -k * x0);
                let row = &spec[m * n..(m + 1) * n];
                let state = ComplexField::new(one.clone(), row.iter().map(|v| v * phase).collect()).expect("row");
                let w = state.norm_sq();
                push_outcome(&mut outcomes, total, w, k, None, state);
            }
        }
        ObservableKind::Multiplication(values) => {
            a.check_len(&one)?;
            let mut ev = Vec::new();
            for x in 0..n {
                let row = &phi.data()[x * n..(x + 1) * n];
                let state = ComplexField::new(one.clone(), row.iter().map(|v| v * dx.sqrt()).collect()).expect("row");
                let w = state.norm_sq();
                ev.push((values[x], if w > WEIGHT_CUTOFF * total { w } else { 0.0 }));
                push_outcome(&mut outcomes, total, w, values[x], Some(x), state);
            }
            ev.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
            let scale = ev.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
            reject_degenerate(&ev, scale, &a.label)?;
        }
        ObservableKind::Smoothed { .. } | ObservableKind::Matrix(_) => {
            let m = a.to_matrix(&one)?;
            let eig = m.symmetric_eigen();
            let mut ev = Vec::new();
            for l in 0..n {
                let v = eig.eigenvectors.column(l);
                let basis: Vec<C64> = v.iter().map(|c| c / dx.sqrt()).collect();
                let (w, state) = conditional_from_basis(phi, &one, &basis);
                let lambda = eig.eigenvalues[l];
                ev.push((lambda, if w > WEIGHT_CUTOFF * total { w } else { 0.0 }));
                push_outcome(&mut outcomes, total, w, lambda, None, state);
            }
            ev.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
            let scale = ev.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
            reject_degenerate(&ev, scale, &a.label)?;
        }
    }
    Ok(ConditionalEnsemble { outcomes, measured: a.label.clone() })
}

/// `E(B, t | A)`: every conditional state is evolved for `t` under the
/// one-particle `h`, then the weighted `B` expectation is summed.
pub fn expected_value_after(
    ensemble: &ConditionalEnsemble,
    b: &ObservableSpec,
    h: &HamiltonianSpec,
    t: f64,
    max_dt: f64,
) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidParameter("delay t must be non-negative".into()));
    }
    let parts: Result<Vec<f64>> = ensemble
        .outcomes
        .par_iter()
        .map(|o| {
            let evolved = propagate(&o.state, h, t, max_dt)?;
            Ok(o.weight * b.expectation(&evolved)?)
        })
        .collect();
    Ok(parts?.iter().sum())
}

/// `E_1(B|A) = (2/hbar) sum_l w_l Im(B phi_l, H phi_l)`.
pub fn first_order_rate(ensemble: &ConditionalEnsemble, b: &ObservableSpec, h: &HamiltonianSpec) -> Result<f64> {
    let hbar = h.constants().hbar;
    let parts: Result<Vec<f64>> = ensemble
        .outcomes
        .par_iter()
        .map(|o| {
            let bphi = b.apply(&o.state)?;
            let hphi = h.apply(&o.state)?;
            Ok(o.weight * bphi.inner(&hphi)?.im)
        })
        .collect();
    Ok(2.0 / hbar * parts?.iter().sum::<f64>())
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SignalReport {
    pub e_b_t_given_a: f64,
    pub e_b_t_given_aprime: f64,
    /// `E(B,t|A) - E(B,t|A')`.
    pub delta: f64,
    /// `Delta(B,0|A,A')`, the zero-delay sanity value.
    pub delta_at_zero: f64,
    pub e1_given_a: f64,
    pub e1_given_aprime: f64,
    /// `Delta_1(B|A,A') = E_1(B|A) - E_1(B|A')`.
    pub delta1: f64,
    pub t: f64,
    /// `(Delta(t) - Delta(0)) / t`.
    pub slope: Option<f64>,
    /// Same slope at `t/2`.
    pub slope_half: Option<f64>,
    /// Second-order contribution below 10% of `t Delta_1`, judged by halving `t`.
    pub taylor_regime: Option<bool>,
    pub s: Option<f64>,
    pub d_b: f64,
}

impl SignalReport {
    /// Richardson-extrapolated slope `2 slope(t/2) - slope(t)`.
    pub fn extrapolated_slope(&self) -> Option<f64> {
        Some(2.0 * self.slope_half? - self.slope?)
    }
}

/// First-order signal from two prepared ensembles. With `check_zero_delay`
/// the ensembles must agree on `E(B,0|.)` to `ZERO_DELAY_TOL`.
pub fn first_order_signal_from(
    ens_a: &ConditionalEnsemble,
    ens_aprime: &ConditionalEnsemble,
    b: &ObservableSpec,
    h: &HamiltonianSpec,
    check_zero_delay: bool,
) -> Result<SignalReport> {
    let e0_a = ens_a.expectation(b)?;
    let e0_ap = ens_aprime.expectation(b)?;
    let delta0 = e0_a - e0_ap;
    if check_zero_delay && delta0.abs() > ZERO_DELAY_TOL {
        return Err(Error::BrokenEnsemble(format!("Delta(B,0|A,A') = {delta0:.3e}")));
    }
    let e1_a = first_order_rate(ens_a, b, h)?;
    let e1_ap = first_order_rate(ens_aprime, b, h)?;
    Ok(SignalReport {
        e_b_t_given_a: e0_a,
        e_b_t_given_aprime: e0_ap,
        delta: delta0,
        delta_at_zero: delta0,
        e1_given_a: e1_a,
        e1_given_aprime: e1_ap,
        delta1: e1_a - e1_ap,
        d_b: h.dg_diffusion(),
        ..Default::default()
    })
}

pub fn first_order_signal(
    phi: &ComplexField,
    a: &ObservableSpec,
    aprime: &ObservableSpec,
    b: &ObservableSpec,
    h: &HamiltonianSpec,
) -> Result<SignalReport> {
    let (ens_a, ens_ap) = rayon::join(|| measure_conditionals(phi, a), || measure_conditionals(phi, aprime));
    first_order_signal_from(&ens_a?, &ens_ap?, b, h, true)
}

/// Full nonlinear `Delta(B,t|A,A')` plus the first-order prediction and the
/// finite-difference slopes at `t` and `t/2`.
pub fn signal_difference(
    phi: &ComplexField,
    a: &ObservableSpec,
    aprime: &ObservableSpec,
    b: &ObservableSpec,
    h: &HamiltonianSpec,
    t: f64,
    max_dt: f64,
) -> Result<SignalReport> {
    let (ens_a, ens_ap) = rayon::join(|| measure_conditionals(phi, a), || measure_conditionals(phi, aprime));
    signal_difference_from(&ens_a?, &ens_ap?, b, h, t, max_dt)
}

pub fn signal_difference_from(
    ens_a: &ConditionalEnsemble,
    ens_ap: &ConditionalEnsemble,
    b: &ObservableSpec,
    h: &HamiltonianSpec,
    t: f64,
    max_dt: f64,
) -> Result<SignalReport> {
    let mut report = first_order_signal_from(ens_a, ens_ap, b, h, true)?;
    if t == 0.0 {
        return Ok(report);
    }
    let delta_at = |tau: f64| -> Result<(f64, f64)> {
        let (x, y) = rayon::join(
            || expected_value_after(ens_a, b, h, tau, max_dt),
            || expected_value_after(ens_ap, b, h, tau, max_dt),
        );
        Ok((x?, y?))
    };
    let (ea, eap) = delta_at(t)?;
    let (ea_half, eap_half) = delta_at(0.5 * t)?;
    let delta = ea - eap;
    let slope = (delta - report.delta_at_zero) / t;
    let slope_half = (ea_half - eap_half - report.delta_at_zero) / (0.5 * t);
    let curvature_share = 2.0 * (slope - slope_half).abs();
    report.e_b_t_given_a = ea;
    report.e_b_t_given_aprime = eap;
    report.delta = delta;
    report.t = t;
    report.slope = Some(slope);
    report.slope_half = Some(slope_half);
    report.taylor_regime = Some(curvature_share <= 0.1 * report.delta1.abs().max(slope.abs()));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bipartite::{schmidt_rank, tensor};
    use crate::terms::PhysicalConstants;

    #[test]
    fn epr_band_zero_is_constant() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let phi = epr_state(&g, 0, f64::INFINITY).unwrap();
        let v0 = phi.data()[0];
        assert!(phi.data().iter().all(|v| (v - v0).norm() < 1e-14));
    }

    #[test]
    fn epr_has_zero_total_momentum() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        for &(band, s) in &[(3, f64::INFINITY), (7, 2.0)] {
            let phi = epr_state(&g, band, s).unwrap();
            let mut p = spectral::derivative(&phi, 0);
            p.axpy(C64::new(1.0, 0.0), &spectral::derivative(&phi, 1)).unwrap();
            let expectation = phi.inner(&p.scaled(C64::new(0.0, -1.0))).unwrap();
            assert!(expectation.norm() < 1e-10);
        }
    }

    #[test]
    fn epr_schmidt_rank_is_two_band_plus_one() {
        let g = Grid::new(1, 128, 10.0).unwrap();
        let phi = epr_state(&g, 8, f64::INFINITY).unwrap();
        assert_eq!(schmidt_rank(&phi, 1e-8).unwrap(), 17);
    }

    #[test]
    fn epr_band_guard() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        assert!(epr_state(&g, 8, 1.0).is_err());
        assert!(epr_state(&g, 7, 1.0).is_ok());
    }

    #[test]
    fn momentum_conditionals_are_plane_waves_with_uniform_weights() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        let band = 4;
        let phi = epr_state(&g, band, f64::INFINITY).unwrap();
        let ens = measure_conditionals(&phi, &ObservableSpec::momentum(Subsystem::First)).unwrap();
        assert_eq!(ens.outcomes.len(), 2 * band + 1);
        assert!((ens.total_weight() - 1.0).abs() < 1e-10);
        for o in &ens.outcomes {
            assert!((o.weight - 1.0 / 9.0).abs() < 1e-12);
            let expected = ComplexField::plane_wave(&g, &[-o.eigenvalue]);
            let overlap = expected.inner(&o.state).unwrap().norm();
            assert!((overlap - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn position_conditionals_are_localized_gaussians() {
        let g = Grid::new(1, 128, 10.0).unwrap();
        let s = 4.0;
        let phi = epr_state(&g, 63, s).unwrap();
        let ens = measure_conditionals(&phi, &ObservableSpec::position(Subsystem::First)).unwrap();
        assert_eq!(ens.outcomes.len(), 128);
        assert!((ens.total_weight() - 1.0).abs() < 1e-10);
        let o = &ens.outcomes[40];
        let w = o.eigenvalue;
        let expected = ComplexField::from_fn(&g, |y| {
            let d = g.periodic_offset(y[0], w);
            C64::new((-s * d * d).exp(), 0.0)
        })
        .normalized()
        .unwrap();
        let overlap = expected.inner(&o.state).unwrap().norm();
        assert!((overlap - 1.0).abs() < 1e-10);
    }

    #[test]
    fn product_state_conditionals_equal_second_factor() {
        let g = Grid::new(1, 16, 6.0).unwrap();
        let a = ComplexField::gaussian(&g, &[0.3], 1.0, &[1.0]).unwrap();
        let b = ComplexField::gaussian(&g, &[-0.5], 0.8, &[-0.6]).unwrap();
        let phi = tensor(&a, &b).unwrap();
        let observables = [
            ObservableSpec::position(Subsystem::First),
            ObservableSpec::momentum(Subsystem::First),
            ObservableSpec::random_hermitian(16, 4, Subsystem::First),
        ];
        for obs in &observables {
            let ens = measure_conditionals(&phi, obs).unwrap();
            for o in &ens.outcomes {
                if o.weight > 1e-12 {
                    assert!((b.inner(&o.state).unwrap().norm() - 1.0).abs() < 1e-8, "{}", obs.label);
                }
            }
        }
    }

    #[test]
    fn degenerate_custom_observable_is_rejected() {
        let g = Grid::new(1, 16, 6.0).unwrap();
        let phi = epr_state(&g, 3, f64::INFINITY).unwrap();
        let mut values = vec![0.0; 16];
        values.iter_mut().enumerate().for_each(|(i, v)| *v = (i / 2) as f64);
        let a = ObservableSpec::multiplication(values, Subsystem::First);
        assert!(matches!(measure_conditionals(&phi, &a), Err(Error::Degenerate(_))));
        assert!(measure_conditionals(&phi, &ObservableSpec::identity(Subsystem::First)).is_err());
    }

    #[test]
    fn observables_are_hermitian() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        let profile: Vec<f64> = g.coords().iter().map(|x| 1.0 + 0.3 * x.sin()).collect();
        let values: Vec<f64> = g.coords().iter().map(|x| x.cos()).collect();
        let obs = [
            ObservableSpec::identity(Subsystem::Second),
            ObservableSpec::position(Subsystem::Second),
            ObservableSpec::momentum(Subsystem::Second),
            ObservableSpec::multiplication(values, Subsystem::Second),
            ObservableSpec::smoothed(profile, 0.5, Subsystem::Second),
            ObservableSpec::random_hermitian(32, 9, Subsystem::Second),
        ];
        for o in &obs {
            let r = o.hermiticity_residual(&g, 1, 5).unwrap();
            assert!(r <= 1e-10, "{} residual {r}", o.label);
        }
    }

    #[test]
    fn identity_expectation_at_zero_delay_is_one() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        let phi = epr_state(&g, 5, 2.0).unwrap();
        let ens = measure_conditionals(&phi, &ObservableSpec::momentum(Subsystem::First)).unwrap();
        let h = HamiltonianSpec::free(PhysicalConstants::default());
        let e = expected_value_after(&ens, &ObservableSpec::identity(Subsystem::Second), &h, 0.0, 1e-3).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_mass_rescaling_gives_unit_integrals() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let phi = epr_state(&g, 31, 3.0).unwrap();
        let ens = measure_conditionals(&phi, &ObservableSpec::position(Subsystem::First)).unwrap();
        let unit = ens.unit_mass().unwrap();
        for o in &unit.outcomes {
            let mass: C64 = o.state.data().iter().sum::<C64>() * g.dx();
            assert!((mass - 1.0).norm() < 1e-12);
            assert!(o.state.data().iter().all(|v| v.im.abs() < 1e-12));
        }
    }
}
