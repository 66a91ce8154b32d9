//! Runners for each experiment kind.

use log::info;

use super::config::{ExperimentConfig, ExperimentKind, MeasuredConfig, StateConfig, TermConfig};
use super::report::{DataTable, ReportBundle, Status};
use crate::diagnostics::{fokker_planck_residual, scan_diffusion};
use crate::dispersion::{
    extract_dispersion, fit_dispersion, fit_modified_dispersion, modified_dispersion_energy, ProbeWindow,
};
use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolutionParams, Trajectory, TwoParticleHamiltonian};
use crate::field::{ComplexField, Grid};
use crate::regularization::{
    amplification_experiment, asymptotic_slope, curved_test_function, distributional_error_slope, flat_test_function,
    growth_check, smooth_probe_observable,
};
use crate::separation::{separation_defect_with_tolerance, separation_with_refinement, Verdict};
use crate::signaling::{epr_state, measure_conditionals, signal_difference_from, ObservableSpec, Subsystem};
use crate::terms::HamiltonianSpec;

/// Runs the configured experiment. Failures never escape as errors; they
/// land in the bundle's status and `error` field.
pub fn run_experiment(cfg: &ExperimentConfig) -> ReportBundle {
    let mut bundle = ReportBundle::new(cfg);
    info!("running {} experiment", cfg.experiment.name());
    let result = match cfg.experiment {
        ExperimentKind::Evolve => run_evolve(cfg, &mut bundle),
        ExperimentKind::FokkerPlanck => run_fokker_planck(cfg, &mut bundle),
        ExperimentKind::Separation => run_separation(cfg, &mut bundle),
        ExperimentKind::Signal => run_signal(cfg, &mut bundle),
        ExperimentKind::Amplification => run_amplification(cfg, &mut bundle),
        ExperimentKind::Regcheck => run_regcheck(cfg, &mut bundle),
        ExperimentKind::Dispersion => run_dispersion(cfg, &mut bundle),
    };
    if let Err(e) = result {
        bundle.status = if e.is_instability() { Status::Instability } else { Status::Fail };
        bundle.error = Some(e.to_string());
    }
    bundle.finish();
    bundle
}

fn build_state(grid: &Grid, s: &StateConfig) -> Result<ComplexField> {
    match s {
        StateConfig::Gaussian { center, width, momentum } => ComplexField::gaussian(grid, center, *width, momentum),
        StateConfig::PlaneWave { k } => {
            for &ka in k {
                if !grid.is_commensurate(ka) {
                    return Err(Error::InvalidParameter(format!("plane-wave k = {ka} is not a grid wavenumber")));
                }
            }
            Ok(ComplexField::plane_wave(grid, k))
        }
    }
}

fn evolution_params(cfg: &ExperimentConfig) -> Result<EvolutionParams> {
    let e = cfg.evolution.as_ref().ok_or_else(|| Error::InvalidParameter("missing [evolution]".into()))?;
    Ok(EvolutionParams {
        dt: e.dt,
        steps: e.steps,
        integrator: e.integrator,
        record_every: e.record_every,
        override_stability: cfg.allow_unstable_dt,
    })
}

fn setup(cfg: &ExperimentConfig) -> Result<(Grid, HamiltonianSpec)> {
    let grid = cfg.build_grid()?;
    let h = cfg.build_hamiltonian(&grid)?;
    Ok((grid, h))
}

fn moments(psi: &ComplexField) -> (f64, f64) {
    let g = psi.grid();
    let mut mass = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (i, v) in psi.data().iter().enumerate() {
        let x = g.coordinate(i, 0);
        let p = v.norm_sqr();
        mass += p;
        mean += p * x;
        second += p * x * x;
    }
    let mean = mean / mass;
    (mean, second / mass - mean * mean)
}

fn trajectory_table(traj: &Trajectory, record_every: usize) -> DataTable {
    let mut t = DataTable::new("trajectory", &["step", "time", "norm", "mean_x", "variance_x"]);
    for (i, ((time, state), norm)) in traj.times.iter().zip(&traj.states).zip(&traj.norms).enumerate() {
        let (mean, var) = moments(state);
        t.push(vec![(i * record_every) as f64, *time, *norm, mean, var]);
    }
    t
}

fn run_evolve(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let (grid, h) = setup(cfg)?;
    let psi0 = build_state(&grid, cfg.initial.as_ref().expect("validated"))?;
    let params = evolution_params(cfg)?;
    let traj = evolve(&psi0, &h, &params)?;
    let drift = traj.max_norm_drift();
    bundle.metric("final_time", traj.final_time());
    bundle.metric("max_norm_drift", drift);
    if h.is_norm_preserving() {
        bundle.check("norm_preserved", drift <= 1e-6, format!("max |N(t) - N(0)| = {drift:.3e} (limit 1e-6)"));
    }
    bundle.tables.push(trajectory_table(&traj, params.record_every));
    let mut bytes = Vec::new();
    crate::field::write_csv(traj.final_state(), &mut bytes)?;
    bundle.files.push(("final_state.csv".into(), bytes));
    Ok(())
}

fn run_fokker_planck(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let (grid, h) = setup(cfg)?;
    let fp = cfg.fokker_planck.as_ref().expect("validated");
    let psi0 = build_state(&grid, cfg.initial.as_ref().expect("validated"))?;
    let traj = evolve(&psi0, &h, &evolution_params(cfg)?)?;
    let d = h.dg_diffusion();
    let matched = fokker_planck_residual(&traj, d, &cfg.constants)?;
    let continuity = fokker_planck_residual(&traj, 0.0, &cfg.constants)?;
    let scan = scan_diffusion(&traj, &cfg.constants, fp.scan_min, fp.scan_max, fp.scan_count)?;
    bundle.metric("diffusion", d);
    bundle.metric("residual_at_diffusion", matched.max);
    bundle.metric("continuity_residual", continuity.max);
    bundle.metric("scan_best", scan.best);
    bundle.metric("scan_step", scan.step);
    bundle.check(
        "residual_at_configured_diffusion",
        matched.max <= 1e-2,
        format!("max relative residual {:.3e} at D = {d} (limit 1e-2)", matched.max),
    );
    bundle.check(
        "scan_minimum_at_configured_diffusion",
        (scan.best - d).abs() <= 0.5 * scan.step + 1e-12,
        format!("scan minimum at D' = {} with step {}", scan.best, scan.step),
    );
    let mut per_time = DataTable::new("residual_vs_time", &["time", "continuity_residual", "fp_residual_at_d"]);
    for ((t, r), (_, r0)) in matched.per_time.iter().zip(&continuity.per_time) {
        per_time.push(vec![*t, *r0, *r]);
    }
    let mut scan_table = DataTable::new("diffusion_scan", &["diffusion", "residual"]);
    for (dd, r) in &scan.samples {
        scan_table.push(vec![*dd, *r]);
    }
    bundle.tables.push(per_time);
    bundle.tables.push(scan_table);
    Ok(())
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Separating => "separating",
        Verdict::CorrelationGenerating => "correlation_generating",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn run_separation(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let (grid, h) = setup(cfg)?;
    let sep = cfg.separation.as_ref().expect("validated");
    let psi1 = build_state(&grid, &sep.first)?;
    let psi2 = build_state(&grid, &sep.second)?;
    let mut tp = TwoParticleHamiltonian::new(h.clone(), h.clone());
    if let Some(q) = sep.interaction.filter(|q| *q != 0.0) {
        tp = tp.with_interaction(q);
    }
    let params = evolution_params(cfg)?;
    // the product-complement interaction vanishes on product states, so it never correlates them
    let declared = h.terms().iter().all(|t| t.properties().separating);
    let expected = if declared { Verdict::Separating } else { Verdict::CorrelationGenerating };

    let (report, verdict) = if sep.refine {
        let r = separation_with_refinement(&psi1, &psi2, &tp, &params, sep.tolerance)?;
        bundle.metric("fine_points", r.fine_points);
        bundle.metric("fine_max_defect", r.fine.max_defect);
        bundle.metric("fine_control_floor", r.fine.control_floor);
        let v = r.verdict;
        (r.coarse, v)
    } else {
        let r = separation_defect_with_tolerance(&psi1, &psi2, &tp, &params, sep.tolerance)?;
        let v = r.verdict;
        (r, v)
    };
    bundle.metric("max_defect", report.max_defect);
    bundle.metric("control_floor", report.control_floor);
    bundle.metric("tolerance", report.tolerance);
    bundle.metric("verdict", verdict);
    bundle.metric("declared", expected);
    bundle.check(
        "verdict_matches_declaration",
        verdict == expected,
        format!("measured {}, declared {}", verdict_name(verdict), verdict_name(expected)),
    );
    let mut table = DataTable::new("defect", &["time", "defect"]);
    for (t, d) in report.times.iter().zip(&report.defect) {
        table.push(vec![*t, *d]);
    }
    table.footer.push(format!("verdict: {}", verdict_name(verdict)));
    bundle.tables.push(table);
    Ok(())
}

fn measured_observable(m: MeasuredConfig, grid: &Grid, seed: u64) -> ObservableSpec {
    match m {
        MeasuredConfig::Position => ObservableSpec::position(Subsystem::First),
        MeasuredConfig::Momentum => ObservableSpec::momentum(Subsystem::First),
        MeasuredConfig::Random => ObservableSpec::random_hermitian(grid.points(), seed, Subsystem::First),
    }
}

fn run_signal(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let (grid, h) = setup(cfg)?;
    let sc = cfg.signal.as_ref().expect("validated");
    let phi = epr_state(&grid, sc.band, sc.s_loc)?;
    let a = measured_observable(sc.measured, &grid, cfg.seed);
    let ap = measured_observable(sc.measured_prime, &grid, cfg.seed.wrapping_add(1));
    let b = smooth_probe_observable(&grid, sc.observable_width);
    let (ens_a, ens_ap) = rayon::join(|| measure_conditionals(&phi, &a), || measure_conditionals(&phi, &ap));
    let (ens_a, ens_ap) = (ens_a?, ens_ap?);

    let mut table = DataTable::new("signal", &["t", "delta", "delta1", "slope", "slope_half"]);
    let mut reports = Vec::new();
    for &t in &sc.t_values {
        info!("signal at t = {t}");
        let r = signal_difference_from(&ens_a, &ens_ap, &b, &h, t, sc.max_dt)?;
        table.push(vec![t, r.delta, r.delta1, r.slope.unwrap_or(f64::NAN), r.slope_half.unwrap_or(f64::NAN)]);
        reports.push(r);
    }
    let delta0 = reports.first().map_or(0.0, |r| r.delta_at_zero);
    let delta1 = reports.first().map_or(0.0, |r| r.delta1);
    bundle.metric("delta_at_zero", delta0);
    bundle.metric("delta1", delta1);
    bundle.metric("diffusion", h.dg_diffusion());
    bundle.check("zero_delay_agreement", delta0.abs() <= 1e-9, format!("|Delta(0)| = {:.3e}", delta0.abs()));
    if h.is_linear() {
        let worst = reports.iter().map(|r| r.delta.abs()).fold(0.0, f64::max);
        bundle.metric("max_abs_delta", worst);
        bundle.check("linear_no_signal", worst <= 1e-8, format!("max |Delta(t)| = {worst:.3e} (limit 1e-8)"));
        bundle.check("linear_first_order_zero", delta1.abs() <= 1e-9, format!("|Delta_1| = {:.3e}", delta1.abs()));
    } else {
        let in_regime: Vec<_> = reports.iter().filter(|r| r.t > 0.0 && r.taylor_regime == Some(true)).collect();
        match in_regime.first() {
            Some(r) => {
                let slope = r.slope.unwrap_or(f64::NAN);
                let err = (slope - delta1).abs();
                bundle.check(
                    "first_order_consistency",
                    err <= 0.05 * delta1.abs() + 1e-9,
                    format!("slope {slope:.6e} at t = {} vs Delta_1 {delta1:.6e}", r.t),
                );
            }
            None => bundle.check("first_order_consistency", false, "no delay is in the first-order regime"),
        }
    }
    bundle.tables.push(table);
    Ok(())
}

fn run_amplification(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let (grid, h) = setup(cfg)?;
    let ac = cfg.amplification.as_ref().expect("validated");
    let b = smooth_probe_observable(&grid, ac.observable_width);
    let report = amplification_experiment(&grid, ac.band, &ac.s_values, &h, &b)?;
    bundle.metric("alpha", report.alpha);
    bundle.metric("beta", report.beta);
    bundle.metric("gamma", report.gamma);
    bundle.metric("b_limit", report.b_limit);
    bundle.metric("predicted_alpha", report.predicted_alpha);
    bundle.metric("ratio", report.ratio);
    bundle.metric("remainder_spread", report.remainder_spread);
    let d = report.diffusion;
    if h.is_linear() {
        bundle.check(
            "no_amplification_when_linear",
            report.alpha.abs() <= 1e-9,
            format!("alpha = {:.3e}", report.alpha),
        );
    } else if d != 0.0 {
        let ratio = report.ratio.unwrap_or(f64::NAN);
        bundle.check(
            "amplification_law",
            (ratio - 1.0).abs() <= 0.05,
            format!("alpha / (4 n D (phi,B phi)) = {ratio:.4}"),
        );
        bundle.check(
            "remainder_bounded",
            report.remainder_spread <= 0.1,
            format!("relative spread of Delta_1 - alpha s = {:.3e}", report.remainder_spread),
        );
        let terms: Vec<_> = h.terms().to_vec();
        let doubled = HamiltonianSpec::new(terms, h.constants().with_diffusion(2.0 * d))?;
        let r2 = amplification_experiment(&grid, ac.band, &ac.s_values, &doubled, &b)?;
        let scale = r2.alpha / report.alpha;
        bundle.metric("alpha_doubled_diffusion", r2.alpha);
        bundle.check(
            "alpha_linear_in_diffusion",
            (scale - 2.0).abs() <= 0.04,
            format!("alpha(2D) / alpha(D) = {scale:.4}"),
        );
    } else {
        let g = growth_check(&grid, ac.band, ac.s_values[0], &h, &b)?;
        bundle.metric("growth_check", &g);
        bundle.check(
            "bounded_growth",
            g.bounded,
            format!("Delta_1 = {:.3e} at s = {}, {:.3e} at 2s", g.delta1_at_s, g.s, g.delta1_at_2s),
        );
    }
    let mut table = DataTable::new("delta1_vs_s", &["s", "delta1", "delta1_normalized", "b_expectation"]);
    for p in &report.points {
        table.push(vec![p.s, p.delta1, p.delta1_normalized, p.b_expectation]);
    }
    bundle.tables.push(table);
    Ok(())
}

fn run_regcheck(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let grid = cfg.build_grid()?;
    let rc = cfg.regcheck.as_ref().expect("validated");
    let flat = flat_test_function(&grid, &rc.center);
    let curved = curved_test_function(&grid, &rc.center, rc.laplacian);
    let (ff, cf) = rayon::join(
        || asymptotic_slope(&grid, &rc.center, &rc.s_values, &flat, &cfg.constants),
        || asymptotic_slope(&grid, &rc.center, &rc.s_values, &curved, &cfg.constants),
    );
    let (ff, cf) = (ff?, cf?);
    let slope = distributional_error_slope(&grid, &rc.center, &rc.s_values, &curved)?;
    bundle.metric("flat_fit", &ff);
    bundle.metric("curved_fit", &cf);
    bundle.metric("distributional_error_slope", slope);
    bundle.check("leading_coefficient", ff.error_a() <= 0.02, format!("a = {:.6e} vs {:.6e}", ff.a, ff.expected_a));
    bundle.check("subleading_coefficient", cf.error_b() <= 0.05, format!("b = {:.6e} vs {:.6e}", cf.b, cf.expected_b));
    bundle.check(
        "leading_vanishes_where_f_vanishes",
        cf.a.abs() <= 1e-3 * rc.laplacian.abs(),
        format!("a = {:.3e}", cf.a),
    );
    bundle.check(
        "distributional_convergence",
        (slope + 1.0).abs() <= 0.1,
        format!("log-log slope {slope:.4} (expected -1)"),
    );
    let mut table = DataTable::new("pairing", &["s", "flat", "curved"]);
    for (a, b) in ff.samples.iter().zip(&cf.samples) {
        table.push(vec![a.0, a.1, b.1]);
    }
    bundle.tables.push(table);
    Ok(())
}

fn run_dispersion(cfg: &ExperimentConfig, bundle: &mut ReportBundle) -> Result<()> {
    let (grid, h) = setup(cfg)?;
    let dc = cfg.dispersion.as_ref().expect("validated");
    let window = ProbeWindow { duration: dc.duration, samples: dc.samples, max_dt: dc.max_dt };
    let half = ProbeWindow { duration: 0.5 * dc.duration, samples: (dc.samples / 2).max(2), max_dt: dc.max_dt };
    let samples = extract_dispersion(&grid, &h, &dc.k_list, &window)?;
    let halved = extract_dispersion(&grid, &h, &dc.k_list, &half)?;
    let fit = fit_dispersion(&samples)?;
    bundle.metric("coefficients", fit.coefficients);
    bundle.metric("condition", fit.condition);
    bundle.metric("rms_residual", fit.rms_residual);

    let change = samples
        .iter()
        .zip(&halved)
        .map(|(a, b)| (a.omega - b.omega).abs() / a.omega.abs().max(1.0))
        .fold(0.0, f64::max);
    bundle.check(
        "window_independent",
        change <= 1e-8,
        format!("max relative change {change:.3e} on halving the window"),
    );

    let c = &cfg.constants;
    let free = |k: f64| c.hbar * k * k / (2.0 * c.mass);
    if cfg.terms.iter().all(|t| matches!(t, TermConfig::Kinetic | TermConfig::DgImag)) {
        let worst = samples.iter().map(|s| (s.omega - free(s.k)).abs() / free(s.k).max(1e-300)).fold(0.0, f64::max);
        bundle.check("matches_free_dispersion", worst <= 1e-6, format!("max relative deviation {worst:.3e}"));
        let c2 = c.hbar / (2.0 * c.mass);
        bundle.check(
            "quadratic_coefficient",
            (fit.coefficients[2] - c2).abs() <= 1e-6,
            format!("c2 = {:.10} vs {c2:.10}", fit.coefficients[2]),
        );
    }
    if h.is_linear() {
        bundle.check(
            "cubic_coefficient_vanishes",
            fit.coefficients[3].abs() <= 1e-8,
            format!("c3 = {:.3e}", fit.coefficients[3]),
        );
    }
    if c.kappa != 0.0 {
        let pairs: Vec<(f64, f64)> = dc
            .k_list
            .iter()
            .map(|&p| Ok((p, modified_dispersion_energy(c.mass, p, c.kappa, c.planck_length)?)))
            .collect::<Result<_>>()?;
        let m = fit_modified_dispersion(&pairs, c.planck_length)?;
        let err = (m.kappa - c.kappa).abs() / c.kappa.abs();
        bundle.metric("modified_dispersion_fit", &m);
        bundle.check("kappa_recovered", err <= 1e-6, format!("kappa {:.8e} vs {:.8e}", m.kappa, c.kappa));
    }

    let mut table = DataTable::new("dispersion", &["k", "omega", "omega_half_window", "amplitude"]);
    for (s, hs) in samples.iter().zip(&halved) {
        table.push(vec![s.k, s.omega, hs.omega, s.amplitude]);
    }
    bundle.tables.push(table);
    Ok(())
}
