//! End-to-end acceptance checks. Each test prints a PASS/FAIL block straight
//! to stdout (bypassing the harness capture) and then asserts its verdict.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nvspin::extraction::{
    extract_params, fit_axial_field, synthetic_measurements, thermal_models, transition_table, FitOptions,
    FitResult, Measurement, MeasurementSet, ParamVector, ThermalModels,
};
use nvspin::perturbation::{
    beta_coefficient, exact_angular_shift, exact_beta, nuclear_freqs_2nd, nuclear_freqs_full, AngularTransition,
    PerturbationContext,
};
use nvspin::presets::{
    reference_transitions, table1_params, thermal_preset, A_PAR_ISOTOPE_RATIO, GAMMA_N_ISOTOPE_RATIO,
    GAMMA_RATIO_N14, REFERENCE_BZ, REFERENCE_TEMPERATURE,
};
use nvspin::ramsey::{fit_fringes_auto, synthesize, uniform_times, RamseyParams};
use nvspin::transitions::{isotopic_d_shift, ratio_estimators, transition_set, transition_set_with, MwLines};
use nvspin::{FieldConfig, HamiltonianOptions, Isotope, TransitionLabel};

struct Check {
    what: String,
    detail: String,
    pass: bool,
    gating: bool,
}

/// Printed for context, never decides the verdict.
fn note(what: impl Into<String>, detail: String) -> Check {
    Check { what: what.into(), detail, pass: true, gating: false }
}

fn within(what: impl Into<String>, value: f64, target: f64, tol: f64) -> Check {
    let pass = (value - target).abs() <= tol;
    Check { what: what.into(), detail: format!("{value:.6} vs {target} (tol {tol})"), pass, gating: true }
}

fn within_rel(what: impl Into<String>, value: f64, target: f64, rel: f64) -> Check {
    let err = (value / target - 1.0).abs();
    Check {
        what: what.into(),
        detail: format!("{value:.6} vs {target} ({:.3}% , tol {:.3}%)", err * 100.0, rel * 100.0),
        pass: err <= rel,
        gating: true,
    }
}

fn below(what: impl Into<String>, value: f64, limit: f64) -> Check {
    Check { what: what.into(), detail: format!("{value:.6} < {limit}"), pass: value < limit, gating: true }
}

fn report(id: u8, title: &str, checks: &[Check]) {
    let ok = checks.iter().all(|c| c.pass);
    let mut s = format!("criterion {id:02} {} {title}\n", if ok { "PASS" } else { "FAIL" });
    for c in checks {
        let mark = match (c.gating, c.pass) {
            (false, _) => "--",
            (true, true) => "ok",
            (true, false) => "XX",
        };
        s.push_str(&format!("    [{mark}] {}: {}\n", c.what, c.detail));
    }
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.what.as_str()).collect();
    assert!(failed.is_empty(), "criterion {id:02} failed: {failed:?}");
}

fn reference_value(iso: Isotope, name: &str) -> f64 {
    reference_transitions(iso).iter().find(|r| r.name == name).unwrap().value
}

#[test]
fn criterion_01_reference_lines_n14() {
    let ts = transition_set(&table1_params(Isotope::N14), &FieldConfig::axial(REFERENCE_BZ), &Isotope::N14.spec())
        .unwrap();
    let mut checks = Vec::new();
    for k in 1..=6u8 {
        let name = format!("f{k}");
        checks.push(within(&name, ts.f(k).unwrap(), reference_value(Isotope::N14, &name), 0.1));
    }
    let f = |k| ts.f(k).unwrap();
    checks.push(within("f1-f2", f(1) - f(2), 286.299, 0.06));
    checks.push(within("f3-f6", f(3) - f(6), 289.081, 0.06));
    report(1, "reference transitions (14N, 470 G)", &checks);
}

#[test]
fn criterion_02_reference_lines_n15() {
    let p = table1_params(Isotope::N15);
    let ts = transition_set(&p, &FieldConfig::axial(REFERENCE_BZ), &Isotope::N15.spec()).unwrap();
    let mut checks = Vec::new();
    for k in 7..=9u8 {
        let name = format!("f{k}");
        checks.push(within(&name, ts.f(k).unwrap(), reference_value(Isotope::N15, &name), 0.5));
    }
    let ms = MeasurementSet {
        temperature: REFERENCE_TEMPERATURE,
        isotope: Isotope::N15,
        entries: reference_transitions(Isotope::N15)
            .iter()
            .map(|r| Measurement { label: r.name.parse().unwrap(), freq: r.value, sigma: r.value_sigma })
            .collect(),
        sample: None,
        nominal_bz: Some(REFERENCE_BZ),
    };
    let fit = fit_axial_field(&p, REFERENCE_BZ, &ms).unwrap();
    checks.push(note("shared Bz", format!("{:.4} G", fit.bz)));
    for r in &fit.residuals {
        checks.push(below(format!("{} residual after shared Bz", r.label), r.residual.abs(), 0.05));
    }
    report(2, "reference transitions (15N) and shared field offset", &checks);
}

#[test]
fn criterion_03_temperature_derivatives() {
    let mut checks = Vec::new();
    for iso in [Isotope::N14, Isotope::N15] {
        let table = transition_table(&ThermalModels::from_preset(iso), REFERENCE_TEMPERATURE, REFERENCE_BZ, iso).unwrap();
        for r in reference_transitions(iso) {
            let row = table.iter().find(|t| t.name == r.name).unwrap_or_else(|| panic!("no row {}", r.name));
            let tol = match r.name {
                "f1-f2" | "f3-f6" => 0.01,
                _ => 2.0 * r.derivative_sigma,
            };
            checks.push(within(format!("d{}/dT Hz/K", r.name), row.derivative, r.derivative, tol));
        }
    }
    report(3, "transition temperature derivatives at 297 K", &checks);
}

#[test]
fn criterion_04_angular_coefficients() {
    // β against the Hamiltonian the series expands; point shifts against the full one
    let series_h = HamiltonianOptions::perturbative();
    let thetas: Vec<f64> = [0.02f64, 0.05, 0.1].iter().map(|d| d.to_radians()).collect();
    let cases = [
        (AngularTransition::Dq, 480.0, -9.9),
        (AngularTransition::Dq, 10.0, -0.003),
        (AngularTransition::F7, 480.0, 460.0),
        (AngularTransition::F7, 10.0, 280.0),
    ];
    let mut checks = Vec::new();
    for (t, bz, target) in cases {
        let iso = t.isotope();
        let p = table1_params(iso);
        let exact = exact_beta(&p, bz, &thetas, t, series_h).unwrap().beta;
        let series = beta_coefficient(&p, bz, t).unwrap().beta;
        let mut c = within_rel(format!("beta {} at {bz} G (exact diag)", t.label()), exact, target, 0.05);
        c.detail.push_str(&format!("; closed form {series:.6}"));
        checks.push(c);
    }
    let theta = 0.1f64.to_radians();
    let dq = exact_angular_shift(&table1_params(Isotope::N14), 480.0, theta, AngularTransition::Dq, HamiltonianOptions::default())
        .unwrap();
    checks.push(within("fDQ shift at 0.1 deg, 480 G (Hz)", dq * 1e3, -5.0, 1.0));
    let f7 = exact_angular_shift(&table1_params(Isotope::N15), 480.0, theta, AngularTransition::F7, HamiltonianOptions::default())
        .unwrap();
    checks.push(within_rel("f7 shift at 0.1 deg, 480 G (Hz)", f7 * 1e3, 130.0, 0.15));
    report(4, "misalignment coefficients and point shifts", &checks);
}

#[test]
fn criterion_05_perturbation_tripwire() {
    let bzs: Vec<f64> = (0..=12).map(|i| 300.0 + 25.0 * i as f64).collect();
    let bxs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let opts = HamiltonianOptions::perturbative();
    let mut checks = Vec::new();
    for iso in [Isotope::N14, Isotope::N15] {
        let p = table1_params(iso);
        let spec = iso.spec();
        let (mut worst_full, mut at_full) = (0.0f64, (0.0, 0.0, TransitionLabel::Dq));
        let (mut worst_2nd, mut at_2nd) = (0.0f64, (0.0, TransitionLabel::Dq));
        for &bz in &bzs {
            for &bx in &bxs {
                let field = FieldConfig::new(bz, bx);
                let ctx = PerturbationContext::new(p, &field).unwrap();
                let exact = transition_set_with(&p, &field, &spec, opts).unwrap();
                for t in nuclear_freqs_full(&ctx, &spec).unwrap().iter() {
                    let d = (t.freq - exact.require(t.label).unwrap()).abs();
                    if d > worst_full {
                        (worst_full, at_full) = (d, (bz, bx, t.label));
                    }
                }
                if bx == 0.0 {
                    for t in nuclear_freqs_2nd(&ctx, &spec).unwrap().iter() {
                        let d = (t.freq - exact.require(t.label).unwrap()).abs();
                        if d > worst_2nd {
                            (worst_2nd, at_2nd) = (d, (bz, t.label));
                        }
                    }
                }
            }
        }
        let mut c = below(format!("{iso} full-shift formulas, max |residual| kHz"), worst_full, 0.020);
        c.detail.push_str(&format!(" ({} at Bz {} G, Bx {} G)", at_full.2, at_full.0, at_full.1));
        checks.push(c);
        let mut c = below(format!("{iso} second-order formulas at Bx = 0, max |residual| kHz"), worst_2nd, 0.010);
        c.detail.push_str(&format!(" ({} at Bz {} G)", at_2nd.1, at_2nd.0));
        checks.push(c);
    }
    report(5, "closed-form nuclear frequencies vs exact diagonalization", &checks);
}

fn start_guess(p: &nvspin::CouplingParams, iso: Isotope) -> ParamVector {
    let mut g = *p;
    g.d += 40.0;
    g.a_par *= 1.002;
    g.a_perp *= 1.01;
    g.q *= 1.0005;
    ParamVector::from_model(&g, &FieldConfig::axial(REFERENCE_BZ + 0.3), iso).unwrap()
}

fn fit_one(iso: Isotope, noise_scale: f64, seed: u64, opts: &FitOptions) -> FitResult {
    let p = table1_params(iso);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = FieldConfig::axial(REFERENCE_BZ);
    let ms = synthetic_measurements(&p, &field, iso, REFERENCE_TEMPERATURE, noise_scale, &mut rng).unwrap();
    let mut guess = start_guess(&p, iso);
    if !opts.fix_bx {
        guess.gamma_e_bx = 50.0;
    }
    extract_params(&ms, &guess, opts).unwrap()
}

fn monte_carlo(iso: Isotope, trials: u64, opts: &FitOptions) -> Vec<FitResult> {
    std::thread::scope(|s| {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8) as u64;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..trials).step_by(workers as usize).map(|k| (k, fit_one(iso, 1.0, 1000 + k, opts))).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(u64, FitResult)> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_by_key(|(k, _)| *k);
        all.into_iter().map(|(_, f)| f).collect()
    })
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt())
}

#[test]
fn criterion_06_inverse_fit() {
    let opts = FitOptions::default();
    let mut checks = Vec::new();
    for iso in [Isotope::N14, Isotope::N15] {
        let p = table1_params(iso);
        let fit = fit_one(iso, 0.0, 0, &opts);
        let (q, _) = fit.params.to_model(p.gamma_e).unwrap();
        checks.push(within(format!("{iso} noiseless D"), q.d, p.d, 1.0));
        if iso == Isotope::N14 {
            checks.push(within(format!("{iso} noiseless Q"), q.q, p.q, 0.01));
        }
        checks.push(within(format!("{iso} noiseless A_par"), q.a_par, p.a_par, 0.01));
        checks.push(within(format!("{iso} noiseless A_perp"), q.a_perp, p.a_perp, 0.5));

        let truth = ParamVector::from_model(&p, &FieldConfig::axial(REFERENCE_BZ), iso).unwrap().to_vec();
        let fits = monte_carlo(iso, 100, &opts);
        for (i, name) in ParamVector::names(iso).iter().enumerate() {
            let Some(_) = fits[0].uncertainties[i] else { continue };
            let errors: Vec<f64> = fits.iter().map(|f| f.params.to_vec()[i] - truth[i]).collect();
            let pulls: Vec<f64> = fits.iter().zip(&errors).map(|(f, e)| e / f.uncertainties[i].unwrap()).collect();
            let (em, es) = mean_std(&errors);
            let (pm, ps) = mean_std(&pulls);
            let mut c = below(format!("{iso} {name} bias / MC spread"), (em / es).abs(), 0.3);
            c.detail.push_str(&format!("; linearized pull mean {pm:.3} (< 0.3), std {ps:.3} (in [0.7, 1.3])"));
            c.pass &= pm.abs() < 0.3 && (0.7..=1.3).contains(&ps);
            checks.push(c);
        }
    }
    // same data with the transverse field left free
    let free = FitOptions { fix_bx: false, ..FitOptions::default() };
    let p = table1_params(Isotope::N14);
    let truth_d = p.d;
    let fits = monte_carlo(Isotope::N14, 40, &free);
    let (em, es) = mean_std(&fits.iter().map(|f| f.params.d - truth_d).collect::<Vec<_>>());
    let (bm, _) = mean_std(&fits.iter().map(|f| f.params.gamma_e_bx / p.gamma_e).collect::<Vec<_>>());
    checks.push(note(
        "n14 with gamma_e*Bx free",
        format!("D bias {em:.2} kHz, spread {es:.2} kHz, mean fitted Bx {bm:.3} G (true 0)"),
    ));
    report(6, "inverse-fit roundtrip and Monte-Carlo pulls", &checks);
}

#[test]
fn criterion_07_ratio_estimators() {
    let ts = transition_set(&table1_params(Isotope::N14), &FieldConfig::axial(REFERENCE_BZ), &Isotope::N14.spec())
        .unwrap();
    let est = ratio_estimators(&ts, MwLines::from_set(&ts, 2).unwrap()).unwrap();
    let p14 = table1_params(Isotope::N14);
    let p15 = table1_params(Isotope::N15);
    let checks = vec![
        within_rel("gamma_e/gamma_n (14N) from line combinations", est.gamma_ratio, GAMMA_RATIO_N14, 0.002),
        within_rel("|gamma_n 15N / gamma_n 14N|", (p15.gamma_n / p14.gamma_n).abs(), GAMMA_N_ISOTOPE_RATIO, 1e-4),
        within_rel("|A_par 15N / A_par 14N|", (p15.a_par / p14.a_par).abs(), A_PAR_ISOTOPE_RATIO, 1e-4),
    ];
    report(7, "ratio estimators and isotope ratios", &checks);
}

#[test]
fn criterion_08_isotopic_d_shift() {
    let field = FieldConfig::axial(REFERENCE_BZ);
    let mw = |iso: Isotope| {
        let ts = transition_set(&table1_params(iso), &field, &iso.spec()).unwrap();
        MwLines::from_set(&ts, iso.two_i()).unwrap()
    };
    let (a, b) = (mw(Isotope::N14), mw(Isotope::N15));
    let shift_mhz = isotopic_d_shift(a.f_plus, a.f_minus, b.f_plus, b.f_minus).unwrap() / 1e3;
    // reported at the 10 kHz resolution of the comparison value
    let rounded = (shift_mhz * 100.0).round() / 100.0;
    let checks = vec![Check {
        what: "D(14N) - D(15N) from line centers, MHz".into(),
        detail: format!("{shift_mhz:.5} (rounded {rounded:.2}) in [0.10, 0.12]"),
        pass: (0.10..=0.12).contains(&rounded),
        gating: true,
    }];
    report(8, "isotopic zero-field-splitting shift", &checks);
}

#[test]
fn criterion_09_ramsey() {
    let truth = RamseyParams { delta: 4.0, t2_star: 1e-3, amplitude: 1.0, phase: 0.3, offset: 0.0 };
    let times = uniform_times(200, 2e-3);
    let clean = fit_fringes_auto(&synthesize(&truth, &times, 0.0, 0).unwrap()).unwrap();
    let mut checks = vec![within("noiseless detuning (Hz)", clean.params.delta * 1e3, truth.delta * 1e3, 1.0)];
    let deltas: Vec<f64> = (0..100u64)
        .map(|seed| fit_fringes_auto(&synthesize(&truth, &times, 0.05, seed).unwrap()).unwrap().params.delta * 1e3)
        .collect();
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (deltas.len() - 1) as f64).sqrt();
    let mut c = below("5% noise detuning std over 100 seeds (Hz)", std, 5.0);
    c.detail.push_str(&format!(" (mean offset {:.3} Hz)", mean - truth.delta * 1e3));
    checks.push(c);
    report(9, "Ramsey fringe detuning recovery", &checks);
}

#[test]
fn criterion_10_thermal_models() {
    let temps: Vec<f64> = (0..12).map(|i| 77.0 + (400.0 - 77.0) * i as f64 / 11.0).collect();
    let mut checks = Vec::new();
    for iso in [Isotope::N14, Isotope::N15] {
        let models = ThermalModels::from_preset(iso);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let series: Vec<(f64, FitResult)> = temps
            .iter()
            .map(|&t| {
                let p = models.params_at(t);
                let ms = synthetic_measurements(&p, &FieldConfig::axial(REFERENCE_BZ), iso, t, 0.0, &mut rng).unwrap();
                let guess = ParamVector::from_model(&p, &FieldConfig::axial(REFERENCE_BZ + 0.2), iso).unwrap();
                (t, extract_params(&ms, &guess, &FitOptions::default()).unwrap())
            })
            .collect();
        let fitted = thermal_models(&series).unwrap().summary(REFERENCE_TEMPERATURE);
        let preset = thermal_preset(iso);
        let entries = [("D", Some(preset.d)), ("Q", preset.q), ("A_par", Some(preset.a_par)), ("A_perp", Some(preset.a_perp))];
        // entries without a tabulated fractional slope are skipped
        let targets = entries.iter().filter_map(|(n, e)| Some((*n, (*e)?.fractional_ppm?)));
        for (name, target) in targets {
            let s = fitted.iter().find(|s| s.parameter == name).unwrap();
            checks.push(within_rel(format!("{iso} {name} fractional derivative ppm/K"), s.fractional_ppm, target, 0.02));
        }
    }
    report(10, "thermal polynomial fractional derivatives", &checks);
}
