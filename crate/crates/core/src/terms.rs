//! Linear and nonlinear Hamiltonian terms.
//!
//! Each term is applied to a field as `T(psi)`, so that the equation of
//! motion reads `i hbar d_t psi = sum_T T(psi)`. Terms carry a declared
//! property triple (homogeneous of degree one, norm preserving, separating)
//! that the test harnesses check numerically.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bipartite;
use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, RealField, C64};
use crate::spectral;

/// Default relative floor on `|psi|^2` used by `N(psi)` and `ln|psi|`.
pub const DEFAULT_AMPLITUDE_FLOOR: f64 = 1e-12;
/// Residual below which a term counts as numerically homogeneous.
pub const HOMOGENEITY_TOL: f64 = 1e-10;
/// Relative `|Im(psi, T psi)|` below which a term counts as norm preserving.
pub const NORM_PRESERVATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
    /// Doebner-Goldin diffusion constant `D`.
    pub diffusion: f64,
    /// Bialynicki-Birula-Mycielski constant `p`.
    pub bbm: f64,
    /// Kostin constant `q`.
    pub kostin: f64,
    pub kappa: f64,
    pub planck_length: f64,
    pub amplitude_floor: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            hbar: 1.0,
            mass: 1.0,
            diffusion: 0.0,
            bbm: 0.0,
            kostin: 0.0,
            kappa: 0.0,
            planck_length: 1.0,
            amplitude_floor: DEFAULT_AMPLITUDE_FLOOR,
        }
    }
}

impl PhysicalConstants {
    pub fn with_diffusion(mut self, d: f64) -> Self {
        self.diffusion = d;
        self
    }

    pub fn with_bbm(mut self, p: f64) -> Self {
        self.bbm = p;
        self
    }

    pub fn with_kostin(mut self, q: f64) -> Self {
        self.kostin = q;
        self
    }

    /// Every guard violation, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [("hbar", self.hbar), ("mass", self.mass), ("planck_length", self.planck_length)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in
            [("diffusion", self.diffusion), ("bbm", self.bbm), ("kostin", self.kostin), ("kappa", self.kappa)]
        {
            if !v.is_finite() {
                out.push(format!("{name} must be finite"));
            }
        }
        if !(self.amplitude_floor > 0.0 && self.amplitude_floor <= 1e-6) {
            out.push("amplitude_floor must lie in (0, 1e-6]".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            Some(v) => Err(Error::InvalidParameter(v.clone())),
            None => Ok(()),
        }
    }
}

/// Built-in real functionals `R` that are homogeneous of degree zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RFunctional {
    /// `|grad psi|^2 / |psi|^2`, derivatives restricted to the term's axes.
    GradientRatio,
    /// `|psi|^2 / max |psi|^2`.
    DensityContrast,
}

#[derive(Clone, Debug)]
pub enum TermKind {
    Kinetic,
    Potential(Arc<RealField>),
    DgImag,
    BbmLog,
    Kostin,
    CubicNls {
        g: f64,
    },
    GenericR {
        functional: RFunctional,
        strength: f64,
    },
    /// Sample two-particle `Q`: `lambda (Psi - best product approximation)`.
    /// Vanishes on product fields.
    ProductComplement {
        strength: f64,
    },
}

/// Declared algebraic properties of a term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TermProperties {
    pub homogeneous: bool,
    pub norm_preserving: bool,
    pub separating: bool,
    /// The term is `f(|psi|, arg psi) psi` pointwise, so split-step can flow it exactly.
    pub pointwise: bool,
}

impl TermKind {
    pub fn name(&self) -> &'static str {
        match self {
            TermKind::Kinetic => "KINETIC",
            TermKind::Potential(_) => "POTENTIAL",
            TermKind::DgImag => "DG_IMAG",
            TermKind::BbmLog => "BBM_LOG",
            TermKind::Kostin => "KOSTIN",
            TermKind::CubicNls { .. } => "CUBIC_NLS",
            TermKind::GenericR { .. } => "GENERIC_R",
            TermKind::ProductComplement { .. } => "PRODUCT_COMPLEMENT",
        }
    }

    pub fn properties(&self) -> TermProperties {
        let (homogeneous, norm_preserving, separating, pointwise) = match self {
            TermKind::Kinetic => (true, true, true, false),
            TermKind::Potential(_) => (true, true, true, true),
            TermKind::DgImag => (true, true, true, false),
            TermKind::BbmLog => (false, true, true, true),
            // arg(z psi) = arg psi + arg z, so complex rescaling is not homogeneous
            TermKind::Kostin => (false, true, true, true),
            TermKind::CubicNls { .. } => (false, true, false, true),
            TermKind::GenericR { functional: RFunctional::GradientRatio, .. } => (true, true, true, false),
            TermKind::GenericR { functional: RFunctional::DensityContrast, .. } => (true, true, false, true),
            TermKind::ProductComplement { .. } => (true, true, true, false),
        };
        TermProperties { homogeneous, norm_preserving, separating, pointwise }
    }
}

#[derive(Clone, Debug)]
pub struct TermSpec {
    pub kind: TermKind,
    pub species: usize,
    /// Axes the term's derivatives act on; `None` means every axis.
    pub axes: Option<Vec<usize>>,
    /// Per-term constants overriding the Hamiltonian's shared ones.
    pub constants: Option<PhysicalConstants>,
}

impl TermSpec {
    pub fn new(kind: TermKind) -> Self {
        TermSpec { kind, species: 0, axes: None, constants: None }
    }

    pub fn kinetic() -> Self {
        Self::new(TermKind::Kinetic)
    }

    pub fn dg_imag() -> Self {
        Self::new(TermKind::DgImag)
    }

    pub fn bbm_log() -> Self {
        Self::new(TermKind::BbmLog)
    }

    pub fn kostin() -> Self {
        Self::new(TermKind::Kostin)
    }

    pub fn cubic(g: f64) -> Self {
        Self::new(TermKind::CubicNls { g })
    }

    pub fn generic_r(functional: RFunctional, strength: f64) -> Self {
        Self::new(TermKind::GenericR { functional, strength })
    }

    pub fn potential(v: RealField) -> Self {
        Self::new(TermKind::Potential(Arc::new(v)))
    }

    pub fn with_species(mut self, species: usize) -> Self {
        self.species = species;
        self
    }

    pub fn on_axes(mut self, axes: Vec<usize>) -> Self {
        self.axes = Some(axes);
        self
    }

    pub fn with_constants(mut self, c: PhysicalConstants) -> Self {
        self.constants = Some(c);
        self
    }

    pub fn properties(&self) -> TermProperties {
        self.kind.properties()
    }

    pub fn axes_for(&self, grid: &Grid) -> Vec<usize> {
        self.axes.clone().unwrap_or_else(|| (0..grid.n_dims()).collect())
    }
}

/// Ordered list of terms plus the constants they share.
#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    terms: Vec<TermSpec>,
    constants: PhysicalConstants,
}

impl HamiltonianSpec {
    pub fn new(terms: Vec<TermSpec>, constants: PhysicalConstants) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("hamiltonian needs at least one term".into()));
        }
        constants.validate()?;
        for t in &terms {
            if let Some(c) = &t.constants {
                c.validate()?;
            }
        }
        Ok(HamiltonianSpec { terms, constants })
    }

    /// `-hbar^2/(2m) Laplacian`.
    pub fn free(constants: PhysicalConstants) -> Self {
        Self::new(vec![TermSpec::kinetic()], constants).expect("valid constants")
    }

    /// Kinetic plus Doebner-Goldin term with diffusion `d`.
    pub fn doebner_goldin(constants: PhysicalConstants, d: f64) -> Result<Self> {
        Self::new(vec![TermSpec::kinetic(), TermSpec::dg_imag()], constants.with_diffusion(d))
    }

    pub fn terms(&self) -> &[TermSpec] {
        &self.terms
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn constants_for<'a>(&'a self, term: &'a TermSpec) -> &'a PhysicalConstants {
        term.constants.as_ref().unwrap_or(&self.constants)
    }

    pub fn is_linear(&self) -> bool {
        self.terms.iter().all(|t| matches!(t.kind, TermKind::Kinetic | TermKind::Potential(_)))
    }

    pub fn is_norm_preserving(&self) -> bool {
        self.terms.iter().all(|t| t.properties().norm_preserving)
    }

    /// Largest `|D|` carried by a DG term, zero if there is none.
    pub fn dg_diffusion(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| matches!(t.kind, TermKind::DgImag))
            .map(|t| self.constants_for(t).diffusion.abs())
            .fold(0.0, f64::max)
    }

    /// Checks that every term is meaningful on `grid`.
    pub fn validate_for(&self, grid: &Grid) -> Result<()> {
        for t in &self.terms {
            if let Some(axes) = &t.axes {
                if axes.is_empty() || axes.iter().any(|&a| a >= grid.n_dims()) {
                    return Err(Error::GridMismatch(format!(
                        "{} term references axes {axes:?} on a {}-dimensional grid",
                        t.kind.name(),
                        grid.n_dims()
                    )));
                }
            }
            match &t.kind {
                TermKind::Potential(v) => {
                    let ok = v.grid() == grid
                        || (v.grid().n_dims() == 1
                            && v.grid().points() == grid.points()
                            && v.grid().extent() == grid.extent()
                            && t.axes.as_ref().is_some_and(|a| a.len() == 1));
                    if !ok {
                        return Err(Error::GridMismatch("potential defined on an incompatible grid".into()));
                    }
                }
                TermKind::ProductComplement { .. } if grid.n_dims() != 2 => {
                    return Err(Error::GridMismatch("product-complement term needs a two-particle grid".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// `H(psi) = sum_T T(psi)`.
    pub fn apply(&self, psi: &ComplexField) -> Result<ComplexField> {
        let mut out = ComplexField::zeros(psi.grid());
        for t in &self.terms {
            let v = apply_term(t, psi, self.constants_for(t))?;
            out.axpy(C64::new(1.0, 0.0), &v)?;
        }
        Ok(out)
    }
}

fn floored_density(psi: &ComplexField, floor: f64) -> Result<Vec<f64>> {
    let max = psi.max_abs_sq();
    if max == 0.0 {
        return Err(Error::ZeroField);
    }
    let lower = floor * max;
    Ok(psi.data().iter().map(|v| v.norm_sqr().max(lower)).collect())
}

/// `|psi|^2` floored at `floor` times its maximum over the fiber through
/// each point along `axes`. On product fields the floor then factorizes, so
/// a block-restricted `N` matches the one-particle `N` of that factor.
fn fiber_floored_density(psi: &ComplexField, floor: f64, axes: &[usize]) -> Result<Vec<f64>> {
    let grid = psi.grid();
    if psi.max_abs_sq() == 0.0 {
        return Err(Error::ZeroField);
    }
    let key = |i: usize| i - axes.iter().map(|&a| grid.axis_index(i, a) * grid.stride(a)).sum::<usize>();
    let mut fiber_max = vec![0.0f64; grid.len()];
    for (i, v) in psi.data().iter().enumerate() {
        let k = key(i);
        fiber_max[k] = fiber_max[k].max(v.norm_sqr());
    }
    Ok(psi.data().iter().enumerate().map(|(i, v)| v.norm_sqr().max(floor * fiber_max[key(i)])).collect())
}

/// `N(psi) = (|grad psi|^2 / |psi|^2) psi` with `|psi|^2` floored at
/// `floor * max |psi|^2`.
pub fn dg_functional(psi: &ComplexField, floor: f64) -> Result<ComplexField> {
    dg_functional_axes(psi, floor, &(0..psi.grid().n_dims()).collect::<Vec<_>>())
}

pub fn dg_functional_axes(psi: &ComplexField, floor: f64, axes: &[usize]) -> Result<ComplexField> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter("amplitude floor must be positive".into()));
    }
    let rho = fiber_floored_density(psi, floor, axes)?;
    let grad = spectral::gradient_norm_sq_axes(psi, axes);
    let data = psi.data().iter().zip(grad.data()).zip(&rho).map(|((v, g), r)| v * (g / r)).collect();
    ComplexField::new(psi.grid().clone(), data)
}

fn potential_at(v: &RealField, grid: &Grid, axes: &Option<Vec<usize>>, flat: usize) -> f64 {
    if v.grid() == grid {
        v.data()[flat]
    } else {
        let axis = axes.as_ref().expect("validated")[0];
        v.data()[grid.axis_index(flat, axis)]
    }
}

/// Applies one term to `psi`.
pub fn apply_term(term: &TermSpec, psi: &ComplexField, c: &PhysicalConstants) -> Result<ComplexField> {
    let grid = psi.grid();
    if psi.max_abs_sq() == 0.0 {
        return Err(Error::ZeroField);
    }
    let axes = term.axes_for(grid);
    let out = match &term.kind {
        TermKind::Kinetic => {
            spectral::laplacian_axes(psi, &axes).scaled(C64::new(-c.hbar * c.hbar / (2.0 * c.mass), 0.0))
        }
        TermKind::Potential(v) => {
            let data = psi.data().iter().enumerate().map(|(i, p)| p * potential_at(v, grid, &term.axes, i)).collect();
            ComplexField::new(grid.clone(), data)?
        }
        TermKind::DgImag => {
            let mut sum = spectral::laplacian_axes(psi, &axes);
            sum.axpy(C64::new(1.0, 0.0), &dg_functional_axes(psi, c.amplitude_floor, &axes)?)?;
            sum.scaled(C64::new(0.0, c.diffusion * c.hbar))
        }
        TermKind::BbmLog => {
            let rho = floored_density(psi, c.amplitude_floor)?;
            let data = psi.data().iter().zip(&rho).map(|(v, r)| v * (c.bbm * 0.5 * r.ln())).collect();
            ComplexField::new(grid.clone(), data)?
        }
        TermKind::Kostin => psi.map(|v| v * (-2.0 * c.kostin * v.arg())),
        TermKind::CubicNls { g } => psi.map(|v| v * (g * v.norm_sqr())),
        TermKind::GenericR { functional: RFunctional::GradientRatio, strength } => {
            dg_functional_axes(psi, c.amplitude_floor, &axes)?.scaled(C64::new(*strength, 0.0))
        }
        TermKind::GenericR { functional: RFunctional::DensityContrast, strength } => {
            let max = psi.max_abs_sq();
            psi.map(|v| v * (strength * v.norm_sqr() / max))
        }
        TermKind::ProductComplement { strength } => {
            let mut out = psi.clone();
            out.axpy(C64::new(-1.0, 0.0), &bipartite::rank_one_part(psi)?)?;
            out.scaled(C64::new(*strength, 0.0))
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("{} term output", term.kind.name())));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HomogeneityReport {
    /// `||T(z psi) - z T(psi)|| / ||z T(psi)||`.
    pub residual: f64,
    /// Residual within `HOMOGENEITY_TOL`.
    pub passed: bool,
    pub declared: bool,
    pub matches_declaration: bool,
}

pub fn check_homogeneity(
    term: &TermSpec,
    psi: &ComplexField,
    z: C64,
    c: &PhysicalConstants,
) -> Result<HomogeneityReport> {
    if z == C64::new(0.0, 0.0) {
        return Err(Error::InvalidParameter("homogeneity probe needs z != 0".into()));
    }
    let base = apply_term(term, psi, c)?.scaled(z);
    let scaled = apply_term(term, &psi.scaled(z), c)?;
    let denom = base.norm();
    let diff = scaled.distance(&base)?;
    let residual = if denom > 0.0 { diff / denom } else { diff };
    let passed = residual <= HOMOGENEITY_TOL;
    let declared = term.properties().homogeneous;
    Ok(HomogeneityReport { residual, passed, declared, matches_declaration: passed == declared })
}

/// `|Im(psi, T psi)| / (||psi|| ||T psi||)`; zero when `T psi` vanishes.
pub fn norm_preservation_residual(term: &TermSpec, psi: &ComplexField, c: &PhysicalConstants) -> Result<f64> {
    let t = apply_term(term, psi, c)?;
    let denom = psi.norm() * t.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(psi.inner(&t)?.im.abs() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1() -> Grid {
        Grid::new(1, 128, 20.0).unwrap()
    }

    fn smooth_random(grid: &Grid, seed: u64) -> ComplexField {
        // random low modes under a Gaussian envelope
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<(f64, f64, f64)> =
            (0..5).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0))).collect();
        ComplexField::from_fn(grid, |x| {
            let env = (-x[0] * x[0] / 8.0).exp();
            let s: C64 = coeffs.iter().map(|&(a, b, k)| C64::new(a, b) * C64::from_polar(1.0, k * x[0])).sum();
            (s + C64::new(2.0, 0.0)) * env
        })
        .normalized()
        .unwrap()
    }

    fn close(a: &ComplexField, b: &ComplexField, tol: f64) {
        let d = a.distance(b).unwrap();
        assert!(d <= tol, "distance {d} > {tol}");
    }

    #[test]
    fn dg_functional_on_plane_wave() {
        let g = grid1();
        let k = g.wavenumbers()[3];
        let psi = ComplexField::from_fn(&g, |x| C64::from_polar(1.0, k * x[0]));
        let n = dg_functional(&psi, DEFAULT_AMPLITUDE_FLOOR).unwrap();
        close(&n, &psi.scaled(C64::new(k * k, 0.0)), 1e-10);
    }

    #[test]
    fn dg_functional_on_constant_is_zero() {
        let g = grid1();
        let psi = ComplexField::from_fn(&g, |_| C64::new(0.3, 0.4));
        assert!(dg_functional(&psi, DEFAULT_AMPLITUDE_FLOOR).unwrap().norm() < 1e-12);
    }

    #[test]
    fn dg_functional_on_gaussian_is_x_squared_psi() {
        let g = Grid::new(1, 256, 30.0).unwrap();
        let psi =
            ComplexField::from_fn(&g, |x| C64::new((-x[0] * x[0] / 2.0).exp() / std::f64::consts::PI.powf(0.25), 0.0));
        let n = dg_functional(&psi, DEFAULT_AMPLITUDE_FLOOR).unwrap();
        for (i, v) in n.data().iter().enumerate() {
            let x = g.coords()[i];
            if x.abs() < 4.0 {
                assert!((v.re - x * x * psi.data()[i].re).abs() < 1e-6, "at x={x}");
            }
        }
    }

    #[test]
    fn dg_functional_rejects_zero_field() {
        let psi = ComplexField::zeros(&grid1());
        assert!(matches!(dg_functional(&psi, 1e-12), Err(Error::ZeroField)));
        assert!(matches!(apply_term(&TermSpec::kinetic(), &psi, &PhysicalConstants::default()), Err(Error::ZeroField)));
    }

    #[test]
    fn dg_term_vanishes_on_plane_waves() {
        let g = grid1();
        let k = g.wavenumbers()[6];
        let psi = ComplexField::plane_wave(&g, &[k]);
        let c = PhysicalConstants::default().with_diffusion(0.3);
        let out = apply_term(&TermSpec::dg_imag(), &psi, &c).unwrap();
        assert!(out.norm() < 1e-10);
    }

    #[test]
    fn bbm_on_unit_modulus_is_zero() {
        let g = grid1();
        let psi = ComplexField::from_fn(&g, |x| C64::from_polar(1.0, 0.7 * x[0].sin()));
        let c = PhysicalConstants::default().with_bbm(0.8);
        assert!(apply_term(&TermSpec::bbm_log(), &psi, &c).unwrap().norm() < 1e-14);
    }

    #[test]
    fn kinetic_eigenvalue_on_plane_wave() {
        let g = grid1();
        let k = g.wavenumbers()[5];
        let psi = ComplexField::plane_wave(&g, &[k]);
        let out = apply_term(&TermSpec::kinetic(), &psi, &PhysicalConstants::default()).unwrap();
        close(&out, &psi.scaled(C64::new(k * k / 2.0, 0.0)), 1e-10);
    }

    #[test]
    fn kostin_uses_principal_argument() {
        let g = grid1();
        let psi = ComplexField::from_fn(&g, |_| C64::from_polar(1.0, 3.0));
        let c = PhysicalConstants::default().with_kostin(0.5);
        let out = apply_term(&TermSpec::kostin(), &psi, &c).unwrap();
        close(&out, &psi.scaled(C64::new(-3.0, 0.0)), 1e-12);
        // a phase just beyond pi folds to the negative branch
        let psi = ComplexField::from_fn(&g, |_| C64::from_polar(1.0, 3.3));
        let out = apply_term(&TermSpec::kostin(), &psi, &c).unwrap();
        let folded = 3.3 - 2.0 * std::f64::consts::PI;
        close(&out, &psi.scaled(C64::new(-folded, 0.0)), 1e-12);
    }

    #[test]
    fn homogeneity_of_dg_kinetic_and_bbm() {
        let g = grid1();
        let psi = smooth_random(&g, 3);
        let c = PhysicalConstants::default().with_diffusion(0.1).with_bbm(0.5);
        let dg = check_homogeneity(&TermSpec::dg_imag(), &psi, C64::new(2.0, 3.0), &c).unwrap();
        assert!(dg.residual <= 1e-10 && dg.passed && dg.matches_declaration);
        let kin = check_homogeneity(&TermSpec::kinetic(), &psi, C64::new(-0.4, 1.7), &c).unwrap();
        assert!(kin.residual <= 1e-12 && kin.passed);

        let bbm_term = TermSpec::bbm_log();
        let bbm = check_homogeneity(&bbm_term, &psi, C64::new(2.0, 0.0), &c).unwrap();
        // ln|2 psi| = ln 2 + ln|psi|: residual = |p ln 2| ||psi|| / ||T psi||
        let t = apply_term(&bbm_term, &psi, &c).unwrap();
        let expected = (c.bbm * 2f64.ln()).abs() * psi.norm() / t.norm();
        assert!((bbm.residual - expected).abs() < 1e-10 * expected);
        assert!(!bbm.passed && bbm.matches_declaration);

        assert!(check_homogeneity(&TermSpec::kinetic(), &psi, C64::new(0.0, 0.0), &c).is_err());
    }

    #[test]
    fn declared_triples_are_consistent_with_numerics() {
        let g = grid1();
        let psi = smooth_random(&g, 11);
        let c = PhysicalConstants::default().with_diffusion(0.1).with_bbm(0.5).with_kostin(0.3);
        let v = RealField::from_fn(&g, |x| 0.5 * x[0] * x[0]);
        let terms = vec![
            TermSpec::kinetic(),
            TermSpec::potential(v),
            TermSpec::dg_imag(),
            TermSpec::bbm_log(),
            TermSpec::kostin(),
            TermSpec::cubic(1.0),
            TermSpec::generic_r(RFunctional::GradientRatio, 0.4),
            TermSpec::generic_r(RFunctional::DensityContrast, 0.4),
        ];
        for t in &terms {
            let props = t.properties();
            let h = check_homogeneity(t, &psi, C64::new(1.5, -0.5), &c).unwrap();
            assert!(h.matches_declaration, "{} homogeneity", t.kind.name());
            let r = norm_preservation_residual(t, &psi, &c).unwrap();
            assert_eq!(r <= NORM_PRESERVATION_TOL, props.norm_preserving, "{} residual {r}", t.kind.name());
        }
        assert!(!TermSpec::cubic(1.0).properties().separating);
    }

    #[test]
    fn dg_global_phase_covariance() {
        let g = grid1();
        let psi = smooth_random(&g, 5);
        let c = PhysicalConstants::default().with_diffusion(0.2);
        let phase = C64::from_polar(1.0, 0.9);
        let a = apply_term(&TermSpec::dg_imag(), &psi.scaled(phase), &c).unwrap();
        let b = apply_term(&TermSpec::dg_imag(), &psi, &c).unwrap().scaled(phase);
        close(&a, &b, 1e-13 * b.norm().max(1.0));
    }

    #[test]
    fn terms_commute_with_grid_translation() {
        let g = grid1();
        let psi = smooth_random(&g, 8);
        let c = PhysicalConstants::default().with_diffusion(0.1).with_bbm(0.5).with_kostin(0.3);
        let terms = [
            TermSpec::kinetic(),
            TermSpec::dg_imag(),
            TermSpec::bbm_log(),
            TermSpec::kostin(),
            TermSpec::cubic(2.0),
            TermSpec::generic_r(RFunctional::GradientRatio, 1.0),
            TermSpec::generic_r(RFunctional::DensityContrast, 1.0),
        ];
        for t in &terms {
            let shifted_then = apply_term(t, &psi.roll(0, 7), &c).unwrap();
            let then_shifted = apply_term(t, &psi, &c).unwrap().roll(0, 7);
            close(&shifted_then, &then_shifted, 1e-10 * then_shifted.norm().max(1.0));
        }
    }

    #[test]
    fn constants_guards() {
        let mut c = PhysicalConstants::default();
        c.amplitude_floor = 1e-3;
        c.mass = 0.0;
        assert_eq!(c.violations().len(), 2);
        assert!(HamiltonianSpec::new(vec![], PhysicalConstants::default()).is_err());
    }
}
