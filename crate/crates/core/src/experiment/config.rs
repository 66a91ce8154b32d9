//! Strict TOML experiment configuration. Validation walks the whole document
//! and reports every problem at once.

use std::fmt::Display;

use serde::Serialize;
use toml::{Table, Value};

use crate::evolution::{stability_bound, Integrator};
use crate::field::Grid;
use crate::regularization::admissible_range;
use crate::terms::{HamiltonianSpec, PhysicalConstants, RFunctional, TermSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Evolve,
    Separation,
    Signal,
    Amplification,
    Regcheck,
    Dispersion,
    FokkerPlanck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Evolve,
        ExperimentKind::Separation,
        ExperimentKind::Signal,
        ExperimentKind::Amplification,
        ExperimentKind::Regcheck,
        ExperimentKind::Dispersion,
        ExperimentKind::FokkerPlanck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Separation => "separation",
            ExperimentKind::Signal => "signal",
            ExperimentKind::Amplification => "amplification",
            ExperimentKind::Regcheck => "regcheck",
            ExperimentKind::Dispersion => "dispersion",
            ExperimentKind::FokkerPlanck => "fokker_planck",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        let s = s.replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridConfig {
    pub n_dims: usize,
    pub points: usize,
    pub extent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialShape {
    /// `strength * x^2 / 2` summed over axes.
    Harmonic,
    /// `strength * cos(2 pi x / L)` summed over axes.
    Cosine,
}

pub const TERM_KINDS: [&str; 8] =
    ["KINETIC", "POTENTIAL", "DG_IMAG", "BBM_LOG", "KOSTIN", "CUBIC", "GENERIC_R", "PRODUCT_COMPLEMENT"];

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TermConfig {
    Kinetic,
    Potential { shape: PotentialShape, strength: f64 },
    DgImag,
    BbmLog,
    Kostin,
    Cubic { g: f64 },
    GenericR { functional: RFunctional, strength: f64 },
    ProductComplement { strength: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub steps: usize,
    pub integrator: Integrator,
    pub record_every: usize,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateConfig {
    Gaussian { center: Vec<f64>, width: f64, momentum: Vec<f64> },
    PlaneWave { k: Vec<f64> },
}

#[derive(Clone, Debug, Serialize)]
pub struct FokkerPlanckConfig {
    pub scan_min: f64,
    pub scan_max: f64,
    pub scan_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparationConfig {
    pub first: StateConfig,
    pub second: StateConfig,
    pub tolerance: f64,
    pub refine: bool,
    pub interaction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasuredConfig {
    Position,
    Momentum,
    /// Seeded random hermitian matrix.
    Random,
}

#[derive(Clone, Debug, Serialize)]
pub struct SignalConfig {
    pub band: usize,
    pub s_loc: f64,
    pub measured: MeasuredConfig,
    pub measured_prime: MeasuredConfig,
    pub observable_width: f64,
    pub t_values: Vec<f64>,
    pub max_dt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AmplificationConfig {
    pub band: usize,
    pub s_values: Vec<f64>,
    pub observable_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegcheckConfig {
    pub s_values: Vec<f64>,
    pub center: Vec<f64>,
    pub laplacian: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersionConfig {
    pub k_list: Vec<f64>,
    pub duration: f64,
    pub samples: usize,
    pub max_dt: f64,
}

/// Fully resolved configuration; every default has been filled in.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output: Option<String>,
    pub allow_unstable_dt: bool,
    pub grid: GridConfig,
    pub constants: PhysicalConstants,
    pub terms: Vec<TermConfig>,
    pub evolution: Option<EvolutionConfig>,
    pub initial: Option<StateConfig>,
    pub fokker_planck: Option<FokkerPlanckConfig>,
    pub separation: Option<SeparationConfig>,
    pub signal: Option<SignalConfig>,
    pub amplification: Option<AmplificationConfig>,
    pub regcheck: Option<RegcheckConfig>,
    pub dispersion: Option<DispersionConfig>,
}

impl ExperimentConfig {
    pub fn build_grid(&self) -> crate::Result<Grid> {
        Grid::new(self.grid.n_dims, self.grid.points, self.grid.extent)
    }

    pub fn build_hamiltonian(&self, grid: &Grid) -> crate::Result<HamiltonianSpec> {
        let terms = self.terms.iter().map(|t| term_spec(t, grid)).collect();
        HamiltonianSpec::new(terms, self.constants)
    }
}

fn term_spec(t: &TermConfig, grid: &Grid) -> TermSpec {
    match t {
        TermConfig::Kinetic => TermSpec::kinetic(),
        TermConfig::Potential { shape, strength } => {
            let l = grid.extent();
            let v = crate::field::RealField::from_fn(grid, |x| {
                x.iter()
                    .map(|&xa| match shape {
                        PotentialShape::Harmonic => 0.5 * strength * xa * xa,
                        PotentialShape::Cosine => strength * (2.0 * std::f64::consts::PI * xa / l).cos(),
                    })
                    .sum()
            });
            TermSpec::potential(v)
        }
        TermConfig::DgImag => TermSpec::dg_imag(),
        TermConfig::BbmLog => TermSpec::bbm_log(),
        TermConfig::Kostin => TermSpec::kostin(),
        TermConfig::Cubic { g } => TermSpec::cubic(*g),
        TermConfig::GenericR { functional, strength } => TermSpec::generic_r(*functional, *strength),
        TermConfig::ProductComplement { strength } => {
            TermSpec::new(crate::terms::TermKind::ProductComplement { strength: *strength })
        }
    }
}

/// Collects every violation found while reading the document.
#[derive(Default)]
struct Checker {
    errors: Vec<String>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Checker {
    fn err(&mut self, path: &str, msg: impl Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn keys(&mut self, t: &Table, path: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.err(&join(path, k), format!("unknown key (allowed: {})", allowed.join(", ")));
            }
        }
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(path, format!("expected a number, found {}", v.type_str()));
                None
            }
        }
    }

    fn f64_opt(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        t.get(key).and_then(|v| self.number(v, &join(path, key)))
    }

    fn f64_req(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        if !t.contains_key(key) {
            self.err(&join(path, key), "missing required key");
            return None;
        }
        self.f64_opt(t, path, key)
    }

    fn usize_opt(&mut self, t: &Table, path: &str, key: &str) -> Option<usize> {
        match t.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            v => {
                self.err(&join(path, key), format!("expected a non-negative integer, found {v}"));
                None
            }
        }
    }

    fn usize_req(&mut self, t: &Table, path: &str, key: &str) -> Option<usize> {
        if !t.contains_key(key) {
            self.err(&join(path, key), "missing required key");
            return None;
        }
        self.usize_opt(t, path, key)
    }

    fn bool_opt(&mut self, t: &Table, path: &str, key: &str) -> Option<bool> {
        match t.get(key)? {
            Value::Boolean(b) => Some(*b),
            v => {
                self.err(&join(path, key), format!("expected a boolean, found {}", v.type_str()));
                None
            }
        }
    }

    fn str_opt<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a str> {
        match t.get(key)? {
            Value::String(s) => Some(s.as_str()),
            v => {
                self.err(&join(path, key), format!("expected a string, found {}", v.type_str()));
                None
            }
        }
    }

    fn list_opt(&mut self, t: &Table, path: &str, key: &str) -> Option<Vec<f64>> {
        let p = join(path, key);
        match t.get(key)? {
            Value::Array(items) => {
                let mut out = Vec::new();
                for (i, v) in items.iter().enumerate() {
                    out.push(self.number(v, &format!("{p}[{i}]"))?);
                }
                Some(out)
            }
            v => {
                self.err(&p, format!("expected an array of numbers, found {}", v.type_str()));
                None
            }
        }
    }

    fn list_req(&mut self, t: &Table, path: &str, key: &str) -> Option<Vec<f64>> {
        if !t.contains_key(key) {
            self.err(&join(path, key), "missing required key");
            return None;
        }
        self.list_opt(t, path, key)
    }

    fn table<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a Table> {
        match t.get(key)? {
            Value::Table(inner) => Some(inner),
            v => {
                self.err(&join(path, key), format!("expected a table, found {}", v.type_str()));
                None
            }
        }
    }

    fn section<'a>(&mut self, t: &'a Table, key: &str, needed: bool) -> Option<&'a Table> {
        let s = self.table(t, "", key);
        if s.is_none() && needed && !t.contains_key(key) {
            self.err(key, "missing required section");
        }
        s
    }

    fn positive(&mut self, path: &str, name: &str, v: Option<f64>) -> Option<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(_) => {
                self.err(path, format!("{name} must be positive"));
                None
            }
            None => None,
        }
    }
}

fn read_grid(c: &mut Checker, root: &Table) -> Option<(GridConfig, Option<Grid>)> {
    let t = c.section(root, "grid", true)?;
    c.keys(t, "grid", &["n_dims", "points", "extent"]);
    let n_dims = c.usize_req(t, "grid", "n_dims");
    let points = c.usize_req(t, "grid", "points");
    let extent = c.f64_req(t, "grid", "extent");
    let extent = c.positive("grid.extent", "extent", extent);
    let (n_dims, points, extent) = (n_dims?, points?, extent?);
    let cfg = GridConfig { n_dims, points, extent };
    match Grid::new(n_dims, points, extent) {
        Ok(g) => Some((cfg, Some(g))),
        Err(e) => {
            c.err("grid", e);
            Some((cfg, None))
        }
    }
}

fn read_constants(c: &mut Checker, root: &Table) -> PhysicalConstants {
    let mut k = PhysicalConstants::default();
    let Some(t) = c.section(root, "constants", false) else { return k };
    c.keys(
        t,
        "constants",
        &["hbar", "mass", "diffusion", "bbm", "kostin", "kappa", "planck_length", "amplitude_floor"],
    );
    let fields: [(&str, &mut f64); 8] = [
        ("hbar", &mut k.hbar),
        ("mass", &mut k.mass),
        ("diffusion", &mut k.diffusion),
        ("bbm", &mut k.bbm),
        ("kostin", &mut k.kostin),
        ("kappa", &mut k.kappa),
        ("planck_length", &mut k.planck_length),
        ("amplitude_floor", &mut k.amplitude_floor),
    ];
    for (name, slot) in fields {
        if let Some(v) = c.f64_opt(t, "constants", name) {
            *slot = v;
        }
    }
    for v in k.violations() {
        c.err("constants", v);
    }
    k
}

fn read_term(c: &mut Checker, t: &Table, path: &str) -> Option<TermConfig> {
    let Some(kind) = c.str_opt(t, path, "kind") else {
        if !t.contains_key("kind") {
            c.err(&join(path, "kind"), "missing required key");
        }
        return None;
    };
    let kind = kind.to_ascii_uppercase();
    let allowed: &[&str] = match kind.as_str() {
        "POTENTIAL" => &["kind", "shape", "strength"],
        "CUBIC" => &["kind", "g"],
        "GENERIC_R" => &["kind", "functional", "strength"],
        "PRODUCT_COMPLEMENT" => &["kind", "strength"],
        k if TERM_KINDS.contains(&k) => &["kind"],
        _ => {
            c.err(
                &join(path, "kind"),
                format!("unknown term kind \"{kind}\"; admissible kinds: {}", TERM_KINDS.join(", ")),
            );
            return None;
        }
    };
    c.keys(t, path, allowed);
    match kind.as_str() {
        "KINETIC" => Some(TermConfig::Kinetic),
        "DG_IMAG" => Some(TermConfig::DgImag),
        "BBM_LOG" => Some(TermConfig::BbmLog),
        "KOSTIN" => Some(TermConfig::Kostin),
        "CUBIC" => Some(TermConfig::Cubic { g: c.f64_req(t, path, "g")? }),
        "PRODUCT_COMPLEMENT" => Some(TermConfig::ProductComplement { strength: c.f64_req(t, path, "strength")? }),
        "POTENTIAL" => {
            let strength = c.f64_req(t, path, "strength");
            let shape = match c.str_opt(t, path, "shape") {
                Some("harmonic") => Some(PotentialShape::Harmonic),
                Some("cosine") => Some(PotentialShape::Cosine),
                Some(other) => {
                    c.err(&join(path, "shape"), format!("unknown shape \"{other}\" (allowed: harmonic, cosine)"));
                    None
                }
                None => {
                    c.err(&join(path, "shape"), "missing required key");
                    None
                }
            };
            Some(TermConfig::Potential { shape: shape?, strength: strength? })
        }
        "GENERIC_R" => {
            let strength = c.f64_req(t, path, "strength");
            let functional = match c.str_opt(t, path, "functional") {
                Some("gradient_ratio") | None => Some(RFunctional::GradientRatio),
                Some("density_contrast") => Some(RFunctional::DensityContrast),
                Some(other) => {
                    c.err(
                        &join(path, "functional"),
                        format!("unknown functional \"{other}\" (allowed: gradient_ratio, density_contrast)"),
                    );
                    None
                }
            };
            Some(TermConfig::GenericR { functional: functional?, strength: strength? })
        }
        _ => unreachable!(),
    }
}

fn read_terms(c: &mut Checker, root: &Table, needed: bool) -> Vec<TermConfig> {
    let Some(h) = c.section(root, "hamiltonian", needed) else { return Vec::new() };
    c.keys(h, "hamiltonian", &["terms"]);
    let Some(list) = h.get("terms") else {
        c.err("hamiltonian.terms", "missing required key");
        return Vec::new();
    };
    let Value::Array(items) = list else {
        c.err("hamiltonian.terms", "expected an array of term tables");
        return Vec::new();
    };
    if items.is_empty() && needed {
        c.err("hamiltonian.terms", "at least one term is required");
    }
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let path = format!("hamiltonian.terms[{i}]");
        match item {
            Value::Table(t) => out.extend(read_term(c, t, &path)),
            _ => c.err(&path, "expected a table"),
        }
    }
    out
}

fn read_evolution(c: &mut Checker, root: &Table, needed: bool) -> Option<EvolutionConfig> {
    let t = c.section(root, "evolution", needed)?;
    c.keys(t, "evolution", &["dt", "steps", "integrator", "record_every"]);
    let dt = c.f64_req(t, "evolution", "dt");
    let dt = c.positive("evolution.dt", "dt", dt);
    let steps = c.usize_req(t, "evolution", "steps");
    let record_every = c.usize_opt(t, "evolution", "record_every").unwrap_or(1);
    if record_every == 0 {
        c.err("evolution.record_every", "record_every must be positive");
    }
    let integrator = match c.str_opt(t, "evolution", "integrator") {
        None | Some("rk4") => Some(Integrator::Rk4),
        Some("split_step") => Some(Integrator::SplitStep),
        Some(other) => {
            c.err("evolution.integrator", format!("unknown integrator \"{other}\" (allowed: rk4, split_step)"));
            None
        }
    };
    Some(EvolutionConfig { dt: dt?, steps: steps?, integrator: integrator?, record_every: record_every.max(1) })
}

fn read_state(c: &mut Checker, t: &Table, path: &str, n_dims: usize) -> Option<StateConfig> {
    match c.str_opt(t, path, "kind").unwrap_or("gaussian") {
        "gaussian" => {
            c.keys(t, path, &["kind", "center", "width", "momentum"]);
            let center = c.list_opt(t, path, "center").unwrap_or_else(|| vec![0.0; n_dims]);
            let momentum = c.list_opt(t, path, "momentum").unwrap_or_else(|| vec![0.0; n_dims]);
            let width = c.f64_req(t, path, "width");
            let width = c.positive(&join(path, "width"), "width", width);
            for (name, v) in [("center", &center), ("momentum", &momentum)] {
                if v.len() != n_dims {
                    c.err(&join(path, name), format!("expected {n_dims} components, found {}", v.len()));
                }
            }
            Some(StateConfig::Gaussian { center, width: width?, momentum })
        }
        "plane_wave" => {
            c.keys(t, path, &["kind", "k"]);
            let k = c.list_req(t, path, "k")?;
            if k.len() != n_dims {
                c.err(&join(path, "k"), format!("expected {n_dims} components, found {}", k.len()));
            }
            Some(StateConfig::PlaneWave { k })
        }
        other => {
            c.err(&join(path, "kind"), format!("unknown state kind \"{other}\" (allowed: gaussian, plane_wave)"));
            None
        }
    }
}

fn read_s_values(c: &mut Checker, t: &Table, path: &str, grid: Option<&Grid>) -> Option<Vec<f64>> {
    let s = c.list_req(t, path, "s_values")?;
    let p = join(path, "s_values");
    if s.len() < 4 {
        c.err(&p, "need at least 4 values");
    }
    if s.windows(2).any(|w| w[1] <= w[0]) {
        c.err(&p, "values must be strictly increasing");
    }
    if let (Some(first), Some(last)) = (s.first(), s.last()) {
        if *last < 10.0 * first {
            c.err(&p, "values must span at least one decade");
        }
    }
    if let Some(g) = grid {
        let (lo, hi) = admissible_range(g);
        for v in &s {
            if *v < lo || *v > hi {
                c.err(&p, format!("s = {v} outside the admissible range [{lo:.4e}, {hi:.4e}] for this grid"));
            }
        }
    }
    Some(s)
}

fn read_measured(c: &mut Checker, t: &Table, path: &str, key: &str, default: MeasuredConfig) -> Option<MeasuredConfig> {
    match c.str_opt(t, path, key) {
        None => Some(default),
        Some("position") => Some(MeasuredConfig::Position),
        Some("momentum") => Some(MeasuredConfig::Momentum),
        Some("random") => Some(MeasuredConfig::Random),
        Some(other) => {
            c.err(&join(path, key), format!("unknown observable \"{other}\" (allowed: position, momentum, random)"));
            None
        }
    }
}

fn check_band(c: &mut Checker, path: &str, band: usize, grid: Option<&Grid>) {
    if let Some(g) = grid {
        if 2 * band + 1 > g.points() {
            c.err(path, format!("band {band} too large for {} points (need 2*band+1 <= points)", g.points()));
        }
    }
}

/// Parses and validates a configuration document. `experiment` fills in or
/// must match the document's own `experiment` key.
pub fn validate_config(
    text: &str,
    experiment: Option<ExperimentKind>,
    allow_unstable_dt: bool,
) -> Result<ExperimentConfig, Vec<String>> {
    let root: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return Err(vec![format!("syntax: {e}")]),
    };
    let mut c = Checker::default();
    c.keys(
        &root,
        "",
        &[
            "experiment",
            "seed",
            "output",
            "allow_unstable_dt",
            "grid",
            "constants",
            "hamiltonian",
            "evolution",
            "initial",
            "fokker_planck",
            "separation",
            "signal",
            "amplification",
            "regcheck",
            "dispersion",
        ],
    );
    let named = match c.str_opt(&root, "", "experiment") {
        Some(name) => match ExperimentKind::from_name(name) {
            Some(k) => Some(k),
            None => {
                let all: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                c.err("experiment", format!("unknown experiment \"{name}\" (allowed: {})", all.join(", ")));
                None
            }
        },
        None => None,
    };
    let kind = match (named, experiment) {
        (Some(a), Some(b)) if a != b => {
            c.err("experiment", format!("config is for \"{}\" but \"{}\" was requested", a.name(), b.name()));
            None
        }
        (Some(a), _) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => {
            if !root.contains_key("experiment") {
                c.err("experiment", "missing required key");
            }
            None
        }
    };
    let seed = match root.get("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(v) => {
            c.err("seed", format!("expected a non-negative integer, found {v}"));
            0
        }
    };
    let output = c.str_opt(&root, "", "output").map(str::to_string);
    let allow_unstable_dt = allow_unstable_dt || c.bool_opt(&root, "", "allow_unstable_dt").unwrap_or(false);

    let grid = read_grid(&mut c, &root);
    let built = grid.as_ref().and_then(|g| g.1.clone());
    let n_dims = grid.as_ref().map_or(1, |g| g.0.n_dims);
    let constants = read_constants(&mut c, &root);
    let needs_terms = kind != Some(ExperimentKind::Regcheck);
    let terms = read_terms(&mut c, &root, needs_terms);

    let uses = |k: ExperimentKind| kind == Some(k);
    let evolving =
        uses(ExperimentKind::Evolve) || uses(ExperimentKind::FokkerPlanck) || uses(ExperimentKind::Separation);
    let evolution = read_evolution(&mut c, &root, evolving);
    let initial = match c.section(&root, "initial", uses(ExperimentKind::Evolve) || uses(ExperimentKind::FokkerPlanck))
    {
        Some(t) => read_state(&mut c, t, "initial", n_dims),
        None => None,
    };

    let one_d = [ExperimentKind::Separation, ExperimentKind::Signal, ExperimentKind::Amplification];
    if let Some(k) = kind {
        if one_d.contains(&k) && n_dims != 1 {
            c.err("grid.n_dims", format!("the {} experiment runs on 1D one-particle grids", k.name()));
        }
        if k == ExperimentKind::Regcheck && n_dims > 2 {
            c.err("grid.n_dims", "regcheck supports 1 or 2 dimensions");
        }
    }

    let fokker_planck = match c.section(&root, "fokker_planck", uses(ExperimentKind::FokkerPlanck)) {
        Some(t) => {
            c.keys(t, "fokker_planck", &["scan_min", "scan_max", "scan_count"]);
            let scan_min = c.f64_opt(t, "fokker_planck", "scan_min").unwrap_or(0.0);
            let scan_max = c.f64_req(t, "fokker_planck", "scan_max");
            let scan_count = c.usize_opt(t, "fokker_planck", "scan_count").unwrap_or(21);
            if scan_count < 2 {
                c.err("fokker_planck.scan_count", "scan_count must be at least 2");
            }
            if let Some(m) = scan_max {
                if m <= scan_min {
                    c.err("fokker_planck.scan_max", "scan_max must exceed scan_min");
                }
            }
            if let Some(e) = &evolution {
                if e.steps / e.record_every < 2 {
                    c.err("evolution", "the residual needs at least 3 recorded snapshots");
                }
            }
            scan_max.map(|scan_max| FokkerPlanckConfig { scan_min, scan_max, scan_count })
        }
        None => None,
    };

    let separation = match c.section(&root, "separation", uses(ExperimentKind::Separation)) {
        Some(t) => {
            c.keys(t, "separation", &["first", "second", "tolerance", "refine", "interaction"]);
            let first = c.table(t, "separation", "first");
            let second = c.table(t, "separation", "second");
            for (name, v) in [("first", first), ("second", second)] {
                if v.is_none() && !t.contains_key(name) {
                    c.err(&join("separation", name), "missing required section");
                }
            }
            let first = first.and_then(|f| read_state(&mut c, f, "separation.first", n_dims));
            let second = second.and_then(|f| read_state(&mut c, f, "separation.second", n_dims));
            let tolerance =
                c.f64_opt(t, "separation", "tolerance").unwrap_or(crate::separation::DEFAULT_SEPARATION_TOL);
            let tolerance = c.positive("separation.tolerance", "tolerance", Some(tolerance));
            let refine = c.bool_opt(t, "separation", "refine").unwrap_or(true);
            if refine && grid.as_ref().is_some_and(|g| g.0.points % 4 != 0) {
                c.err("separation.refine", "refinement needs grid.points divisible by 4");
            }
            let interaction = c.f64_opt(t, "separation", "interaction");
            match (first, second, tolerance) {
                (Some(first), Some(second), Some(tolerance)) => {
                    Some(SeparationConfig { first, second, tolerance, refine, interaction })
                }
                _ => None,
            }
        }
        None => None,
    };

    let signal = match c.section(&root, "signal", uses(ExperimentKind::Signal)) {
        Some(t) => {
            c.keys(
                t,
                "signal",
                &["band", "s_loc", "measured", "measured_prime", "observable_width", "t_values", "max_dt"],
            );
            let band = c.usize_req(t, "signal", "band");
            if let Some(b) = band {
                check_band(&mut c, "signal.band", b, built.as_ref());
            }
            let s_loc = c.f64_opt(t, "signal", "s_loc").unwrap_or(f64::INFINITY);
            if !(s_loc > 0.0) {
                c.err("signal.s_loc", "s_loc must be positive");
            }
            let measured = read_measured(&mut c, t, "signal", "measured", MeasuredConfig::Position);
            let measured_prime = read_measured(&mut c, t, "signal", "measured_prime", MeasuredConfig::Momentum);
            let width = c.f64_opt(t, "signal", "observable_width").unwrap_or(0.5);
            let width = c.positive("signal.observable_width", "observable_width", Some(width));
            let t_values = c.list_req(t, "signal", "t_values");
            if let Some(ts) = &t_values {
                if ts.iter().any(|v| *v < 0.0) {
                    c.err("signal.t_values", "delays must be non-negative");
                }
            }
            let max_dt = c.f64_req(t, "signal", "max_dt");
            let max_dt = c.positive("signal.max_dt", "max_dt", max_dt);
            match (band, measured, measured_prime, width, t_values, max_dt) {
                (
                    Some(band),
                    Some(measured),
                    Some(measured_prime),
                    Some(observable_width),
                    Some(t_values),
                    Some(max_dt),
                ) => Some(SignalConfig { band, s_loc, measured, measured_prime, observable_width, t_values, max_dt }),
                _ => None,
            }
        }
        None => None,
    };

    let amplification = match c.section(&root, "amplification", uses(ExperimentKind::Amplification)) {
        Some(t) => {
            c.keys(t, "amplification", &["band", "s_values", "observable_width"]);
            let band = c.usize_req(t, "amplification", "band");
            if let Some(b) = band {
                check_band(&mut c, "amplification.band", b, built.as_ref());
            }
            let s_values = read_s_values(&mut c, t, "amplification", built.as_ref());
            let width = c.f64_opt(t, "amplification", "observable_width").unwrap_or(0.5);
            let width = c.positive("amplification.observable_width", "observable_width", Some(width));
            match (band, s_values, width) {
                (Some(band), Some(s_values), Some(observable_width)) => {
                    Some(AmplificationConfig { band, s_values, observable_width })
                }
                _ => None,
            }
        }
        None => None,
    };

    let regcheck = match c.section(&root, "regcheck", uses(ExperimentKind::Regcheck)) {
        Some(t) => {
            c.keys(t, "regcheck", &["s_values", "center", "laplacian"]);
            let s_values = read_s_values(&mut c, t, "regcheck", built.as_ref());
            let center = c.list_opt(t, "regcheck", "center").unwrap_or_else(|| vec![0.0; n_dims]);
            if center.len() != n_dims {
                c.err("regcheck.center", format!("expected {n_dims} components, found {}", center.len()));
            }
            let laplacian = c.f64_opt(t, "regcheck", "laplacian").unwrap_or(2.0);
            if laplacian == 0.0 {
                c.err("regcheck.laplacian", "laplacian must be nonzero");
            }
            s_values.map(|s_values| RegcheckConfig { s_values, center, laplacian })
        }
        None => None,
    };

    let dispersion = match c.section(&root, "dispersion", uses(ExperimentKind::Dispersion)) {
        Some(t) => {
            c.keys(t, "dispersion", &["k_list", "duration", "samples", "max_dt"]);
            let k_list = c.list_req(t, "dispersion", "k_list");
            if let (Some(ks), Some(g)) = (&k_list, built.as_ref()) {
                for k in ks {
                    if !g.is_commensurate(*k) {
                        c.err("dispersion.k_list", format!("k = {k} is not a wavenumber of this grid"));
                    }
                }
            }
            let defaults = crate::dispersion::ProbeWindow::default();
            let duration = c.f64_opt(t, "dispersion", "duration").unwrap_or(defaults.duration);
            let duration = c.positive("dispersion.duration", "duration", Some(duration));
            let samples = c.usize_opt(t, "dispersion", "samples").unwrap_or(defaults.samples);
            if samples < 2 {
                c.err("dispersion.samples", "samples must be at least 2");
            }
            let max_dt = c.f64_opt(t, "dispersion", "max_dt").unwrap_or(defaults.max_dt);
            let max_dt = c.positive("dispersion.max_dt", "max_dt", Some(max_dt));
            match (k_list, duration, max_dt) {
                (Some(k_list), Some(duration), Some(max_dt)) => {
                    Some(DispersionConfig { k_list, duration, samples, max_dt })
                }
                _ => None,
            }
        }
        None => None,
    };

    // guards that need the assembled Hamiltonian
    if let Some(g) = &built {
        if !terms.is_empty() {
            let cfg_terms: Vec<TermSpec> = terms.iter().map(|t| term_spec(t, g)).collect();
            match HamiltonianSpec::new(cfg_terms, constants) {
                Ok(h) => {
                    if let Err(e) = h.validate_for(g) {
                        c.err("hamiltonian", e);
                    }
                    let bound = stability_bound(g, &h);
                    if let Some(e) = &evolution {
                        if e.integrator == Integrator::Rk4 && e.dt > bound && !allow_unstable_dt {
                            c.err(
                                "evolution.dt",
                                format!("dt = {} exceeds the stability bound {bound:.6e} (use --allow-unstable-dt to override)", e.dt),
                            );
                        }
                        if e.integrator == Integrator::SplitStep {
                            for t in h.terms() {
                                let p = t.properties();
                                if !p.pointwise && !matches!(t.kind, crate::terms::TermKind::Kinetic) {
                                    c.err(
                                        "evolution.integrator",
                                        format!("split_step cannot flow the {} term; use rk4", t.kind.name()),
                                    );
                                }
                            }
                        }
                    }
                    if let Some(s) = &signal {
                        if s.max_dt > bound && !allow_unstable_dt {
                            c.err(
                                "signal.max_dt",
                                format!("max_dt = {} exceeds the stability bound {bound:.6e}", s.max_dt),
                            );
                        }
                    }
                }
                Err(e) => c.err("hamiltonian", e),
            }
        }
    }

    if !c.errors.is_empty() {
        return Err(c.errors);
    }
    let (grid, _) = grid.expect("validated");
    Ok(ExperimentConfig {
        experiment: kind.expect("validated"),
        seed,
        output,
        allow_unstable_dt,
        grid,
        constants,
        terms,
        evolution,
        initial,
        fokker_planck,
        separation,
        signal,
        amplification,
        regcheck,
        dispersion,
    })
}
