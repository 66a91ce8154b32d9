//! Acceptance checks. Runs as a plain binary so every criterion prints its
//! own PASS/FAIL line even when the run succeeds.

use std::time::{Duration, Instant};

use nlqm::diagnostics::{fokker_planck_residual, scan_diffusion};
use nlqm::dispersion::{
    extract_dispersion, fit_dispersion, fit_modified_dispersion, modified_dispersion_energy, planck_wavelength_ratio,
    ProbeWindow,
};
use nlqm::evolution::{evolve, stability_bound, EvolutionParams, TwoParticleHamiltonian};
use nlqm::regularization::{
    admissible_range, amplification_experiment, asymptotic_slope, curved_test_function, flat_test_function,
    growth_check, smooth_probe_observable,
};
use nlqm::separation::{separation_with_refinement, Verdict};
use nlqm::signaling::{epr_state, measure_conditionals, signal_difference_from, ObservableSpec, Subsystem};
use nlqm::terms::{HamiltonianSpec, PhysicalConstants, RFunctional, TermSpec};
use nlqm::{ComplexField, Grid, RealField, Result};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn fokker_planck_law() -> Result<Outcome> {
    let g = Grid::new(1, 256, 20.0)?;
    let c = PhysicalConstants::default();
    let h = HamiltonianSpec::doebner_goldin(c, 0.05)?;
    let psi0 = ComplexField::gaussian(&g, &[0.0], 1.0, &[1.0])?;
    let traj = evolve(&psi0, &h, &EvolutionParams::rk4(1e-3, 500))?;
    let matched = fokker_planck_residual(&traj, 0.05, &c)?.max;
    let unmatched = fokker_planck_residual(&traj, 0.0, &c)?.max;
    let scan = scan_diffusion(&traj, &c, 0.0, 0.1, 21)?;
    let passed = matched <= 1e-2 && unmatched >= 10.0 * matched && (scan.best - 0.05).abs() <= scan.step;
    outcome(
        passed,
        format!(
            "residual {matched:.2e} at D, {unmatched:.2e} at D=0, scan minimum at {} (step {})",
            scan.best, scan.step
        ),
    )
}

fn separation() -> Result<Outcome> {
    let g = Grid::new(1, 64, 14.0)?;
    let a = ComplexField::gaussian(&g, &[0.0], 1.5, &[0.0])?;
    let b = ComplexField::gaussian(&g, &[0.0], 1.4, &[0.0])?;
    let params = EvolutionParams::rk4(2e-3, 250).recording_every(25);
    let c = PhysicalConstants::default();
    let with = |t: TermSpec, c: PhysicalConstants| HamiltonianSpec::new(vec![TermSpec::kinetic(), t], c);
    let cases = [
        ("DG", with(TermSpec::dg_imag(), c.with_diffusion(0.05))?, Verdict::Separating),
        // the default relative floor activates in the joint grid's corners
        (
            "BBM",
            with(TermSpec::bbm_log(), PhysicalConstants { amplitude_floor: 1e-30, ..c.with_bbm(0.3) })?,
            Verdict::Separating,
        ),
        ("Kostin", with(TermSpec::kostin(), c.with_kostin(0.1))?, Verdict::Separating),
        ("cubic", with(TermSpec::cubic(1.0), c)?, Verdict::CorrelationGenerating),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, h, want) in cases {
        let tp = TwoParticleHamiltonian::new(h.clone(), h);
        let r = separation_with_refinement(&a, &b, &tp, &params, 1e-5)?;
        let mut ok = r.verdict == want;
        if want == Verdict::CorrelationGenerating {
            ok &= r.coarse.grows_monotonically_early(3);
        }
        passed &= ok;
        parts.push(format!("{name} {:?} ({:.1e} -> {:.1e})", r.verdict, r.coarse.max_defect, r.fine.max_defect));
    }
    outcome(passed, parts.join(", "))
}

fn no_signal_control() -> Result<Outcome> {
    let g = Grid::new(1, 64, 10.0)?;
    let phi = epr_state(&g, 20, 2.0)?;
    let h = HamiltonianSpec::free(PhysicalConstants::default());
    let b = smooth_probe_observable(&g, 0.5);
    let ens_q = measure_conditionals(&phi, &ObservableSpec::position(Subsystem::First))?;
    let ens_p = measure_conditionals(&phi, &ObservableSpec::momentum(Subsystem::First))?;
    let mut worst = 0.0f64;
    for t in [0.0, 0.01, 0.1] {
        let r = signal_difference_from(&ens_q, &ens_p, &b, &h, t, 5e-4)?;
        worst = worst.max(r.delta.abs());
    }
    outcome(worst <= 1e-8, format!("max |Delta| = {worst:.2e} over t in {{0, 0.01, 0.1}}"))
}

fn first_order_consistency() -> Result<Outcome> {
    let g = Grid::new(1, 128, 10.0)?;
    let phi = epr_state(&g, 63, 2.0)?;
    let h = HamiltonianSpec::doebner_goldin(PhysicalConstants::default(), 1e-3)?;
    let b = smooth_probe_observable(&g, 0.5);
    let ens_q = measure_conditionals(&phi, &ObservableSpec::position(Subsystem::First))?;
    let ens_p = measure_conditionals(&phi, &ObservableSpec::momentum(Subsystem::First))?;
    let r = signal_difference_from(&ens_q, &ens_p, &b, &h, 1e-3, 1e-4)?;
    let slope = r.slope.unwrap_or(f64::NAN);
    let rel = (slope - r.delta1).abs() / r.delta1.abs();
    outcome(
        rel <= 0.05 && r.delta1 != 0.0,
        format!("Delta_1 = {:.4e}, slope at t=1e-3 = {slope:.4e}, relative gap {rel:.1e}", r.delta1),
    )
}

fn regularization_asymptotics() -> Result<Outcome> {
    let c = PhysicalConstants::default();
    let mut passed = true;
    let mut parts = Vec::new();
    for (n, points) in [(1usize, 512usize), (2, 256)] {
        let g = Grid::new(n, points, 10.0)?;
        let (lo, hi) = admissible_range(&g);
        let s_max = hi.min(60.0);
        let s_values = log_spaced((s_max / 10.0).max(lo), s_max, 6);
        let center = vec![0.0; n];
        let flat = asymptotic_slope(&g, &center, &s_values, &flat_test_function(&g, &center), &c)?;
        let curved = asymptotic_slope(&g, &center, &s_values, &curved_test_function(&g, &center, 2.0), &c)?;
        let ok = flat.error_a() <= 0.02 && curved.error_b() <= 0.05;
        passed &= ok;
        parts.push(format!(
            "n={n}: a {:.4} vs {:.4}, b {:.4} vs {:.4}",
            flat.a, flat.expected_a, curved.b, curved.expected_b
        ));
    }
    outcome(passed, parts.join("; "))
}

fn amplification_law() -> Result<Outcome> {
    let g = Grid::new(1, 512, 10.0)?;
    let c = PhysicalConstants::default();
    let b = smooth_probe_observable(&g, 0.5);
    let s = [4.0, 6.0, 9.0, 13.0, 19.0, 27.0, 40.0];
    let r1 = amplification_experiment(&g, 255, &s, &HamiltonianSpec::doebner_goldin(c, 1e-3)?, &b)?;
    let r2 = amplification_experiment(&g, 255, &s, &HamiltonianSpec::doebner_goldin(c, 2e-3)?, &b)?;
    let ratio = r1.ratio.unwrap_or(f64::NAN);
    let doubling = r2.alpha / r1.alpha;
    let with = |t: TermSpec, c: PhysicalConstants| HamiltonianSpec::new(vec![TermSpec::kinetic(), t], c);
    let quiet = [
        ("BBM", with(TermSpec::bbm_log(), c.with_bbm(0.3))?),
        ("Kostin", with(TermSpec::kostin(), c.with_kostin(0.1))?),
        ("R gradient", with(TermSpec::generic_r(RFunctional::GradientRatio, 0.1), c)?),
        ("R contrast", with(TermSpec::generic_r(RFunctional::DensityContrast, 0.1), c)?),
    ];
    let mut bounded = true;
    let mut quiet_parts = Vec::new();
    for (name, h) in quiet {
        let gc = growth_check(&g, 255, 10.0, &h, &b)?;
        bounded &= gc.bounded;
        quiet_parts.push(format!("{name} {:.1e}->{:.1e}", gc.delta1_at_s, gc.delta1_at_2s));
    }
    outcome(
        (ratio - 1.0).abs() <= 0.05 && (doubling - 2.0).abs() <= 0.04 && bounded,
        format!(
            "alpha/(4nD(phi,B phi)) = {ratio:.4}, alpha(2D)/alpha(D) = {doubling:.4}, bounded: {}",
            quiet_parts.join(", ")
        ),
    )
}

fn dispersion() -> Result<Outcome> {
    let g = Grid::new(1, 64, 2.0 * std::f64::consts::PI)?;
    let c = PhysicalConstants::default();
    let ks: Vec<f64> = (1..=8).map(f64::from).collect();
    let window = ProbeWindow::default();
    let linear = extract_dispersion(&g, &HamiltonianSpec::free(c), &ks, &window)?;
    let dg = extract_dispersion(&g, &HamiltonianSpec::doebner_goldin(c, 0.05)?, &ks, &window)?;
    let fit = fit_dispersion(&linear)?;
    let c2_err = (fit.coefficients[2] - c.hbar / (2.0 * c.mass)).abs();
    let c3 = fit.coefficients[3].abs();
    let dg_gap = linear.iter().zip(&dg).map(|(a, b)| (a.omega - b.omega).abs() / a.omega).fold(0.0, f64::max);

    let (kappa, lp) = (1.0, 1e-3);
    let synthetic: Vec<(f64, f64)> = (1..=10)
        .map(|i| {
            let p = 10.0 * i as f64;
            Ok((p, modified_dispersion_energy(1.0, p, kappa, lp)?))
        })
        .collect::<Result<_>>()?;
    let refit = fit_modified_dispersion(&synthetic, lp)?;
    let kappa_err = (refit.kappa - kappa).abs() / kappa;
    let planck = planck_wavelength_ratio(1e28, 10f64.powf(20.5))?;
    let planck_err = (planck / 3.17e7 - 1.0).abs();
    outcome(
        c2_err <= 1e-6 && c3 <= 1e-8 && dg_gap <= 1e-9 && kappa_err <= 0.01 && planck_err <= 0.01,
        format!(
            "c2 error {c2_err:.1e}, |c3| {c3:.1e}, DG gap {dg_gap:.1e}, kappa {:.6}, Planck ratio {planck:.4e}",
            refit.kappa
        ),
    )
}

fn solver_hygiene() -> Result<Outcome> {
    let g = Grid::new(1, 128, 20.0)?;
    let c = PhysicalConstants::default();
    let psi0 = ComplexField::gaussian(&g, &[0.0], 1.0, &[0.0])?;
    let with = |t: TermSpec, c: PhysicalConstants| HamiltonianSpec::new(vec![TermSpec::kinetic(), t], c);
    let v = RealField::from_fn(&g, |x| 0.05 * x[0] * x[0]);
    let catalog = [
        with(TermSpec::potential(v.clone()), c)?,
        with(TermSpec::dg_imag(), c.with_diffusion(0.05))?,
        with(TermSpec::bbm_log(), c.with_bbm(0.3))?,
        with(TermSpec::kostin(), c.with_kostin(0.1))?,
        with(TermSpec::cubic(1.0), c)?,
        with(TermSpec::generic_r(RFunctional::GradientRatio, 0.05), c)?,
        with(TermSpec::generic_r(RFunctional::DensityContrast, 0.2), c)?,
    ];
    let mut worst = 0.0f64;
    for h in &catalog {
        let steps = (1.0 / (0.5 * stability_bound(&g, h))).ceil() as usize;
        worst = worst.max(evolve(&psi0, h, &EvolutionParams::rk4(1.0 / steps as f64, steps))?.max_norm_drift());
    }

    let g = Grid::new(1, 64, 20.0)?;
    let psi0 = ComplexField::gaussian(&g, &[-1.0], 1.0, &[1.5])?;
    let v = RealField::from_fn(&g, |x| 0.05 * x[0] * x[0]);
    let h = HamiltonianSpec::new(vec![TermSpec::kinetic(), TermSpec::potential(v)], c)?;
    let run = |dt: f64| -> Result<ComplexField> {
        Ok(evolve(&psi0, &h, &EvolutionParams::rk4(dt, (1.0 / dt).round() as usize))?.final_state().clone())
    };
    let reference = run(0.005)?;
    let ratio = run(0.04)?.distance(&reference)? / run(0.02)?.distance(&reference)?;
    outcome(
        worst <= 1e-6 && (12.0..20.0).contains(&ratio),
        format!("max norm drift {worst:.1e} over T=1, RK4 error ratio per halving {ratio:.1}"),
    )
}

fn main() {
    type Check = fn() -> Result<Outcome>;
    let criteria: [(&str, Check, Option<u64>); 8] = [
        ("Fokker-Planck law", fokker_planck_law, Some(30)),
        ("separation verdicts", separation, Some(120)),
        ("no-signal control", no_signal_control, Some(60)),
        ("first-order consistency", first_order_consistency, None),
        ("regularization asymptotics", regularization_asymptotics, None),
        ("amplification law", amplification_law, Some(300)),
        ("dispersion", dispersion, None),
        ("solver hygiene", solver_hygiene, None),
    ];
    let mut failures = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = limit.map_or(true, |s| elapsed <= Duration::from_secs(s));
        let (passed, detail) = match result {
            Ok(o) => (o.passed && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = limit.map_or(String::new(), |s| format!(" / {s} s"));
        println!(
            "criterion {} {name}: {} [{:.1} s{budget}] {detail}",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !passed {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
