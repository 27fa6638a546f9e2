use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use nvspin::error::Error;
use nvspin::extraction::{
    extract_params, synthetic_measurements, thermal_models, transition_table, FitOptions, FitResult,
    MeasurementSet, ParamVector, ThermalModels, MODEL_T_MAX, MODEL_T_MIN,
};
use nvspin::io::{format_khz, read_measurements_file, write_measurements, write_ramsey, OutputFormat, ParamsSource, RunConfig};
use nvspin::perturbation::{
    beta_coefficient, check_field_range, exact_angular_frequency, exact_beta, nuclear_freqs_full, AngularTransition,
    PerturbationContext,
};
use nvspin::presets::REFERENCE_TEMPERATURE;
use nvspin::ramsey::{
    fit_fringes_auto, frequency_from_detuning, resolve_detuning_sign, synthesize, uniform_times, RamseyParams,
};
use nvspin::spin::{CouplingParams, FieldConfig, HamiltonianOptions, Isotope};
use nvspin::transitions::{transition_set, transition_set_with, TransitionLabel};

const EXIT_CONFIG: u8 = 2;
const EXIT_AMBIGUOUS: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;
const EXIT_TRIPWIRE: u8 = 5;

#[derive(Parser)]
#[command(name = "nvspin", version, about = "NV-center ground-state Hamiltonian toolkit (14N / 15N)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact-diagonalization transition frequencies.
    Transitions(TransitionsArgs),
    /// Fit coupling parameters to a measurement CSV, one fit per temperature.
    Fit(FitArgs),
    /// Parameter and transition temperature dependence from the preset models.
    Thermal(ThermalArgs),
    /// fDQ (14N) or f7 (15N) versus field misalignment at fixed Bz.
    AngularScan(AngularArgs),
    /// Closed-form perturbative frequencies versus exact diagonalization.
    PerturbCheck(PerturbArgs),
    /// Synthetic measurement CSV from the preset temperature models.
    Synth(SynthArgs),
    /// Ramsey synthesize-and-fit roundtrip for one transition.
    Ramsey(RamseyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum IsotopeArg {
    N14,
    N15,
}

impl From<IsotopeArg> for Isotope {
    fn from(a: IsotopeArg) -> Self {
        match a {
            IsotopeArg::N14 => Isotope::N14,
            IsotopeArg::N15 => Isotope::N15,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_enum, default_value = "n14")]
    isotope: IsotopeArg,
    /// Axial field, G.
    #[arg(long, default_value_t = 470.0, allow_negative_numbers = true)]
    bz: f64,
    /// Transverse field, G.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "theta_deg")]
    bx: Option<f64>,
    /// Misalignment angle in degrees; sets Bx = Bz·tan θ.
    #[arg(long = "theta-deg", allow_negative_numbers = true)]
    theta_deg: Option<f64>,
    /// Temperature, K. With a preset, parameters follow its temperature model.
    #[arg(long, allow_negative_numbers = true)]
    temp: Option<f64>,
    #[arg(long)]
    preset: Option<String>,
    /// JSON parameter file with d, q, a_par, a_perp (kHz) and optional gamma_e, gamma_n.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override D, kHz.
    #[arg(long, allow_negative_numbers = true)]
    d: Option<f64>,
    /// Override Q, kHz.
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    /// Override A∥, kHz.
    #[arg(long = "a-par", allow_negative_numbers = true)]
    a_par: Option<f64>,
    /// Override A⊥, kHz.
    #[arg(long = "a-perp", allow_negative_numbers = true)]
    a_perp: Option<f64>,
}

#[derive(Args)]
struct TransitionsArgs {
    #[command(flatten)]
    common: Common,
    /// Add dT derivatives from the preset temperature models (axial field only).
    #[arg(long)]
    derivatives: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Measurement CSV (temperature_K,transition,freq_khz,sigma_khz).
    measurements: PathBuf,
    /// Append degree-4 temperature models of the fitted parameters.
    #[arg(long)]
    thermal: bool,
    /// Also fit γe·Bx instead of holding it at the --bx / --theta-deg value.
    #[arg(long)]
    free_bx: bool,
    /// Simplex iteration cap per restart.
    #[arg(long, default_value_t = 20_000)]
    max_iter: usize,
}

#[derive(Args)]
struct ThermalArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AngularArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.5)]
    theta_max_deg: f64,
    #[arg(long, default_value_t = 11)]
    steps: usize,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 300.0)]
    bz_min: f64,
    #[arg(long, default_value_t = 600.0)]
    bz_max: f64,
    #[arg(long, default_value_t = 7)]
    bz_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    bx_max: f64,
    #[arg(long, default_value_t = 5)]
    bx_steps: usize,
    #[arg(long, default_value_t = 20.0)]
    tolerance_hz: f64,
    /// Compare against the Hamiltonian with the transverse nuclear Zeeman term.
    #[arg(long)]
    full_hamiltonian: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated temperatures in K; default 12 points over 77–400 K.
    #[arg(long, value_delimiter = ',')]
    temps: Option<Vec<f64>>,
    /// Gaussian noise in units of each line's reference uncertainty.
    #[arg(long, default_value_t = 0.0)]
    noise_scale: f64,
}

#[derive(Args)]
struct RamseyArgs {
    #[command(flatten)]
    common: Common,
    /// Transition to probe; default f1 (14N) or f7 (15N).
    #[arg(long)]
    transition: Option<String>,
    /// Drive offset f_rf − f, kHz.
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    detuning_khz: f64,
    #[arg(long, default_value_t = 1.0)]
    rf_step_khz: f64,
    #[arg(long, default_value_t = 1e-3)]
    t2_star_s: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 2e-3)]
    duration_s: f64,
    #[arg(long, default_value_t = 0.2)]
    amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Also write the first trace as tau_s,signal CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::AmbiguousLabeling(_) => EXIT_AMBIGUOUS,
            Error::FitNoConvergence(_) => EXIT_NO_CONVERGENCE,
            Error::EigenNoConvergence { .. } | Error::NonFiniteObjective { .. } => 1,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: msg.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parameters, field and provenance resolved from the shared flags.
struct Resolved {
    isotope: Isotope,
    source: ParamsSource,
    params: CouplingParams,
    field: FieldConfig,
    temperature: f64,
    has_overrides: bool,
}

impl Common {
    fn resolve(&self) -> CliResult<Resolved> {
        let isotope: Isotope = self.isotope.into();
        let source = ParamsSource::select(self.preset.as_deref(), self.params.as_deref())?;
        let mut params = source.load(isotope)?;
        let temperature = self.temp.unwrap_or(REFERENCE_TEMPERATURE);
        if let Some(t) = self.temp {
            if !(MODEL_T_MIN..=MODEL_T_MAX).contains(&t) {
                return Err(config_error(format!(
                    "--temp {t} K outside model range [{MODEL_T_MIN}, {MODEL_T_MAX}] K"
                )));
            }
            if matches!(source, ParamsSource::Preset(_)) {
                params = ThermalModels::from_preset(isotope).params_at(t);
            }
        }
        self.apply_overrides(&mut params);
        params.validate(&isotope.spec())?;
        Ok(Resolved {
            isotope,
            source,
            params,
            field: self.field()?,
            temperature,
            has_overrides: self.d.is_some() || self.q.is_some() || self.a_par.is_some() || self.a_perp.is_some(),
        })
    }

    fn apply_overrides(&self, p: &mut CouplingParams) {
        if let Some(v) = self.d {
            p.d = v;
        }
        if let Some(v) = self.q {
            p.q = v;
        }
        if let Some(v) = self.a_par {
            p.a_par = v;
        }
        if let Some(v) = self.a_perp {
            p.a_perp = v;
        }
    }

    fn field(&self) -> CliResult<FieldConfig> {
        if !self.bz.is_finite() {
            return Err(config_error("--bz must be finite"));
        }
        let bx = match (self.bx, self.theta_deg) {
            (Some(bx), None) => bx,
            (None, Some(th)) => {
                if !(th.is_finite() && th.abs() < 90.0) {
                    return Err(config_error(format!("--theta-deg {th} must lie in (-90, 90)")));
                }
                self.bz * th.to_radians().tan()
            }
            (None, None) => 0.0,
            (Some(_), Some(_)) => return Err(config_error("give either --bx or --theta-deg, not both")),
        };
        if !bx.is_finite() {
            return Err(config_error("--bx must be finite"));
        }
        Ok(FieldConfig::new(self.bz, bx))
    }

    fn output_format(&self) -> OutputFormat {
        match self.format {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }

    fn run_config(&self, command: &str, r: &Resolved, extra: BTreeMap<String, Value>) -> RunConfig {
        RunConfig {
            command: command.to_string(),
            isotope: r.isotope,
            params_source: r.source.clone(),
            params: r.params,
            bz: r.field.bz,
            bx: r.field.bx,
            theta_deg: self.theta_deg,
            temperature: r.temperature,
            format: self.output_format(),
            out: self.out.clone(),
            seed: self.seed,
            extra,
        }
    }

    fn emit(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => fs::write(path, text).map_err(|e| Failure::from(Error::from(e))),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes()).map_err(|e| Failure::from(Error::from(e)))
            }
        }
    }

    fn emit_json<T: Serialize>(&self, config: &RunConfig, result: &T) -> CliResult<()> {
        let doc = json!({ "config": config, "result": result });
        let mut text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
        text.push('\n');
        self.emit(&text)
    }
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn extra(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn cmd_transitions(a: &TransitionsArgs) -> CliResult<()> {
    let c = &a.common;
    let r = c.resolve()?;
    let config = c.run_config("transitions", &r, extra(&[("derivatives", json!(a.derivatives))]));
    if a.derivatives {
        if !matches!(r.source, ParamsSource::Preset(_)) || r.has_overrides || r.field.bx != 0.0 {
            return Err(config_error("--derivatives needs a preset without overrides and Bx = 0"));
        }
        let models = ThermalModels::from_preset(r.isotope);
        let table = transition_table(&models, r.temperature, r.field.bz, r.isotope)?;
        return match config.format {
            OutputFormat::Json => c.emit_json(&config, &table),
            OutputFormat::Csv => {
                let rows: Vec<Vec<String>> = table
                    .iter()
                    .map(|t| vec![t.name.clone(), format_khz(t.freq), format!("{:.4}", t.derivative)])
                    .collect();
                c.emit(&csv_text(&["transition", "freq_khz", "dfdT_hz_per_k"], &rows))
            }
        };
    }
    let ts = transition_set(&r.params, &r.field, &r.isotope.spec())?;
    match config.format {
        OutputFormat::Json => c.emit_json(&config, &ts.iter().collect::<Vec<_>>()),
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = ts
                .iter()
                .map(|t| vec![t.label.to_string(), format_khz(t.freq), t.upper.to_string(), t.lower.to_string()])
                .collect();
            c.emit(&csv_text(&["transition", "freq_khz", "upper", "lower"], &rows))
        }
    }
}

fn fit_all(sets: &[MeasurementSet], guesses: &[ParamVector], opts: &FitOptions) -> Vec<nvspin::Result<FitResult>> {
    // independent per temperature; results keep input order
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(sets.len()).max(1);
    let mut out: Vec<Option<nvspin::Result<FitResult>>> = (0..sets.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..sets.len())
                        .step_by(workers)
                        .map(|i| (i, extract_params(&sets[i], &guesses[i], opts)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("fit worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every index fitted")).collect()
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let c = &a.common;
    let r = c.resolve()?;
    let sets = read_measurements_file(&a.measurements, r.isotope)?;
    if sets.is_empty() {
        return Err(config_error("measurement file has no rows"));
    }
    let preset_models = matches!(r.source, ParamsSource::Preset(_)).then(|| ThermalModels::from_preset(r.isotope));
    let mut guesses = Vec::with_capacity(sets.len());
    for s in &sets {
        let mut p = match &preset_models {
            Some(m) if c.temp.is_none() => m.params_at(s.temperature),
            _ => r.params,
        };
        c.apply_overrides(&mut p);
        guesses.push(ParamVector::from_model(&p, &r.field, r.isotope)?);
    }
    if a.max_iter == 0 {
        return Err(config_error("--max-iter must be positive"));
    }
    let mut opts = FitOptions { fix_bx: !a.free_bx, ..FitOptions::default() };
    opts.optim.max_iter = a.max_iter;

    let mut fits = Vec::with_capacity(sets.len());
    for (s, res) in sets.iter().zip(fit_all(&sets, &guesses, &opts)) {
        match res {
            Ok(f) => fits.push(f),
            Err(e) => {
                let mut f = Failure::from(e);
                f.message = format!("fit at {} K: {}", s.temperature, f.message);
                return Err(f);
            }
        }
    }
    let thermal = if a.thermal {
        let series: Vec<(f64, FitResult)> = fits.iter().map(|f| (f.temperature, f.clone())).collect();
        Some(thermal_models(&series)?)
    } else {
        None
    };

    let config = c.run_config(
        "fit",
        &r,
        extra(&[
            ("measurements", json!(a.measurements)),
            ("thermal", json!(a.thermal)),
            ("fix_bx", json!(opts.fix_bx)),
            ("max_iter", json!(a.max_iter)),
        ]),
    );
    match config.format {
        OutputFormat::Json => {
            let summary = thermal.as_ref().map(|m| m.summary(REFERENCE_TEMPERATURE));
            c.emit_json(&config, &json!({ "fits": fits, "thermal": thermal, "thermal_summary": summary }))
        }
        OutputFormat::Csv => {
            let names = ParamVector::names(r.isotope);
            let mut header = vec!["temperature_K"];
            header.extend_from_slice(names);
            header.extend_from_slice(&["objective", "converged"]);
            let rows: Vec<Vec<String>> = fits
                .iter()
                .map(|f| {
                    let mut row = vec![f.temperature.to_string()];
                    row.extend(f.params.to_vec().iter().map(|v| format_khz(*v)));
                    row.push(format!("{:.6e}", f.objective));
                    row.push(f.converged.to_string());
                    row
                })
                .collect();
            let mut text = csv_text(&header, &rows);
            if let Some(m) = &thermal {
                text.push('\n');
                text.push_str(&thermal_summary_csv(m));
            }
            c.emit(&text)
        }
    }
}

fn thermal_summary_csv(m: &ThermalModels) -> String {
    let rows: Vec<Vec<String>> = m
        .summary(REFERENCE_TEMPERATURE)
        .iter()
        .map(|s| {
            vec![
                s.parameter.clone(),
                format_khz(s.value),
                format!("{:.6}", s.d1 * 1e3),
                format!("{:.4}", s.fractional_ppm),
                format!("{:.6}", s.d2 * 1e3),
            ]
        })
        .collect();
    csv_text(&["parameter", "value_khz", "d1_hz_per_k", "fractional_ppm_per_k", "d2_hz_per_k2"], &rows)
}

fn cmd_thermal(a: &ThermalArgs) -> CliResult<()> {
    let c = &a.common;
    let r = c.resolve()?;
    if !matches!(r.source, ParamsSource::Preset(_)) || r.has_overrides {
        return Err(config_error("thermal uses the preset temperature models; --params and overrides do not apply"));
    }
    if r.field.bx != 0.0 {
        return Err(config_error("thermal tables are computed at Bx = 0"));
    }
    let models = ThermalModels::from_preset(r.isotope);
    let table = transition_table(&models, r.temperature, r.field.bz, r.isotope)?;
    let params = models.summary(r.temperature);
    let config = c.run_config("thermal", &r, BTreeMap::new());
    match config.format {
        OutputFormat::Json => c.emit_json(&config, &json!({ "parameters": params, "transitions": table })),
        OutputFormat::Csv => {
            let mut rows: Vec<Vec<String>> = params
                .iter()
                .map(|s| {
                    vec![
                        s.parameter.clone(),
                        format_khz(s.value),
                        format!("{:.4}", s.d1 * 1e3),
                        format!("{:.4}", s.fractional_ppm),
                    ]
                })
                .collect();
            rows.extend(table.iter().map(|t| {
                vec![
                    t.name.clone(),
                    format_khz(t.freq),
                    format!("{:.4}", t.derivative),
                    format!("{:.4}", t.derivative / t.freq * 1e3),
                ]
            }));
            c.emit(&csv_text(&["quantity", "value_khz", "ddT_hz_per_k", "fractional_ppm_per_k"], &rows))
        }
    }
}

/// Angles used for the exact quadratic-law coefficient, degrees.
const BETA_FIT_ANGLES_DEG: [f64; 3] = [0.02, 0.05, 0.1];

fn cmd_angular(a: &AngularArgs) -> CliResult<()> {
    let c = &a.common;
    if !(a.theta_max_deg > 0.0 && a.theta_max_deg <= 2.0) || a.steps < 2 {
        return Err(config_error("need 0 < --theta-max-deg <= 2 and --steps >= 2"));
    }
    if c.bx.is_some() || c.theta_deg.is_some() {
        return Err(config_error("angular-scan sets the transverse field itself"));
    }
    let r = c.resolve()?;
    let transition = AngularTransition::for_isotope(r.isotope);
    let opts = HamiltonianOptions::default();
    let bz = r.field.bz;
    let baseline = transition.baseline(&r.params, bz);
    let f0 = exact_angular_frequency(&r.params, bz, 0.0, transition, opts)?;
    let mut points = Vec::with_capacity(a.steps);
    for i in 0..a.steps {
        let theta_deg = a.theta_max_deg * i as f64 / (a.steps - 1) as f64;
        let f = exact_angular_frequency(&r.params, bz, theta_deg.to_radians(), transition, opts)?;
        points.push((theta_deg, f, (f - f0) / baseline));
    }
    let beta_pert = beta_coefficient(&r.params, bz, transition)?.beta;
    let thetas: Vec<f64> = BETA_FIT_ANGLES_DEG.iter().map(|d| d.to_radians()).collect();
    let beta_exact = exact_beta(&r.params, bz, &thetas, transition, opts)?.beta;

    let config = c.run_config(
        "angular-scan",
        &r,
        extra(&[
            ("theta_max_deg", json!(a.theta_max_deg)),
            ("steps", json!(a.steps)),
            ("transition", json!(transition.label().to_string())),
        ]),
    );
    match config.format {
        OutputFormat::Json => {
            let pts: Vec<Value> = points
                .iter()
                .map(|(t, f, s)| json!({ "theta_deg": t, "f_khz": f, "fractional_shift": s }))
                .collect();
            c.emit_json(
                &config,
                &json!({ "points": pts, "baseline_khz": baseline, "beta_perturbative": beta_pert, "beta_exact": beta_exact }),
            )
        }
        OutputFormat::Csv => {
            let mut rows: Vec<Vec<String>> = points
                .iter()
                .map(|(t, f, s)| vec![format!("{t:.6}"), format_khz(*f), format!("{s:.6e}")])
                .collect();
            rows.push(vec!["beta".into(), format!("{beta_pert:.6}"), format!("{beta_exact:.6}")]);
            c.emit(&csv_text(&["theta_deg", "f_khz", "fractional_shift"], &rows))
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cmd_perturb(a: &PerturbArgs) -> CliResult<()> {
    let c = &a.common;
    let ranges = [a.bz_min, a.bz_max, a.bx_max, a.tolerance_hz];
    if ranges.iter().any(|v| !v.is_finite()) || a.bz_min > a.bz_max || a.bx_max < 0.0 || a.tolerance_hz <= 0.0 {
        return Err(config_error("invalid grid: need bz_min <= bz_max, bx_max >= 0, tolerance > 0"));
    }
    if a.bz_steps == 0 || a.bx_steps == 0 {
        return Err(config_error("grid step counts must be positive"));
    }
    let r = c.resolve()?;
    check_field_range(&r.params, a.bz_min, a.bz_max)?;
    let iso = r.isotope.spec();
    let opts = if a.full_hamiltonian { HamiltonianOptions::default() } else { HamiltonianOptions::perturbative() };
    // (max residual kHz, bz, bx) per transition
    let mut worst: BTreeMap<TransitionLabel, (f64, f64, f64)> = BTreeMap::new();
    for bz in grid(a.bz_min, a.bz_max, a.bz_steps) {
        for bx in grid(0.0, a.bx_max, a.bx_steps) {
            let field = FieldConfig::new(bz, bx);
            let ctx = PerturbationContext::new(r.params, &field)?;
            let pert = nuclear_freqs_full(&ctx, &iso)?;
            let exact = transition_set_with(&r.params, &field, &iso, opts)?;
            for t in pert.iter() {
                let d = (t.freq - exact.require(t.label)?).abs();
                let e = worst.entry(t.label).or_insert((0.0, bz, bx));
                if d > e.0 {
                    *e = (d, bz, bx);
                }
            }
        }
    }
    let tol_khz = a.tolerance_hz / 1e3;
    let failed: Vec<String> =
        worst.iter().filter(|(_, (d, _, _))| *d > tol_khz).map(|(l, (d, _, _))| format!("{l} {:.3} Hz", d * 1e3)).collect();

    let config = c.run_config(
        "perturb-check",
        &r,
        extra(&[
            ("bz_range", json!([a.bz_min, a.bz_max, a.bz_steps])),
            ("bx_range", json!([0.0, a.bx_max, a.bx_steps])),
            ("tolerance_hz", json!(a.tolerance_hz)),
            ("full_hamiltonian", json!(a.full_hamiltonian)),
        ]),
    );
    match config.format {
        OutputFormat::Json => {
            let rows: Vec<Value> = worst
                .iter()
                .map(|(l, (d, bz, bx))| json!({ "transition": l, "max_residual_hz": d * 1e3, "bz": bz, "bx": bx, "pass": *d <= tol_khz }))
                .collect();
            c.emit_json(&config, &json!({ "residuals": rows, "pass": failed.is_empty() }))?;
        }
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = worst
                .iter()
                .map(|(l, (d, bz, bx))| {
                    vec![
                        l.to_string(),
                        format!("{:.6}", d * 1e3),
                        format!("{bz}"),
                        format!("{bx}"),
                        if *d <= tol_khz { "PASS".into() } else { "FAIL".into() },
                    ]
                })
                .collect();
            c.emit(&csv_text(&["transition", "max_residual_hz", "bz_at_max", "bx_at_max", "status"], &rows))?;
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_TRIPWIRE,
            message: format!("residuals above {} Hz: {}", a.tolerance_hz, failed.join(", ")),
        })
    }
}

fn default_temperatures() -> Vec<f64> {
    (0..12).map(|i| MODEL_T_MIN + (MODEL_T_MAX - MODEL_T_MIN) * i as f64 / 11.0).collect()
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let c = &a.common;
    if !(a.noise_scale >= 0.0 && a.noise_scale.is_finite()) {
        return Err(config_error("--noise-scale must be nonnegative"));
    }
    if c.temp.is_some() && a.temps.is_some() {
        return Err(config_error("give either --temp or --temps"));
    }
    let r = c.resolve()?;
    let temps = match (&a.temps, c.temp) {
        (Some(t), _) => t.clone(),
        (None, Some(t)) => vec![t],
        (None, None) => default_temperatures(),
    };
    if temps.iter().any(|t| !(MODEL_T_MIN..=MODEL_T_MAX).contains(t)) {
        return Err(config_error(format!("temperatures must lie in [{MODEL_T_MIN}, {MODEL_T_MAX}] K")));
    }
    let models = matches!(r.source, ParamsSource::Preset(_)).then(|| ThermalModels::from_preset(r.isotope));
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut sets = Vec::with_capacity(temps.len());
    for &t in &temps {
        let mut p = models.as_ref().map_or(r.params, |m| m.params_at(t));
        c.apply_overrides(&mut p);
        sets.push(synthetic_measurements(&p, &r.field, r.isotope, t, a.noise_scale, &mut rng)?);
    }
    let config = c.run_config(
        "synth",
        &r,
        extra(&[("temps", json!(temps)), ("noise_scale", json!(a.noise_scale))]),
    );
    match config.format {
        OutputFormat::Json => c.emit_json(&config, &sets),
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            write_measurements(&mut buf, &sets)?;
            c.emit(&String::from_utf8(buf).expect("csv output is utf-8"))
        }
    }
}

#[derive(Serialize)]
struct RamseyReport {
    transition: String,
    f_model_khz: f64,
    f_rf_khz: f64,
    delta_fit_khz: f64,
    delta_fit_stepped_khz: f64,
    sign: f64,
    f_recovered_khz: f64,
    error_hz: f64,
    t2_star_fit_s: f64,
    rms_residual: f64,
}

fn cmd_ramsey(a: &RamseyArgs) -> CliResult<()> {
    let c = &a.common;
    let r = c.resolve()?;
    let label: TransitionLabel = match &a.transition {
        Some(s) => s.parse()?,
        None => match r.isotope {
            Isotope::N14 => TransitionLabel::Nuclear(1),
            Isotope::N15 => TransitionLabel::Nuclear(7),
        },
    };
    if !label.is_valid_for(r.isotope) {
        return Err(config_error(format!("{label} is not a {} transition", r.isotope)));
    }
    let positive = |x: f64| x > 0.0 && x.is_finite();
    if a.samples < 8 || !positive(a.duration_s) || !positive(a.t2_star_s) || a.rf_step_khz == 0.0 {
        return Err(config_error("need --samples >= 8, positive duration and T2*, nonzero RF step"));
    }
    let ts = transition_set(&r.params, &r.field, &r.isotope.spec())?;
    let f_model = ts.require(label)?;
    let f_rf = f_model + a.detuning_khz;
    let times = uniform_times(a.samples, a.duration_s);
    let trace_at = |rf: f64, seed: u64| {
        let p = RamseyParams {
            delta: rf - f_model,
            t2_star: a.t2_star_s,
            amplitude: a.amplitude,
            phase: 0.0,
            offset: 1.0,
        };
        synthesize(&p, &times, a.noise, seed)
    };
    let first = trace_at(f_rf, c.seed)?;
    let second = trace_at(f_rf + a.rf_step_khz, c.seed.wrapping_add(1))?;
    let fit1 = fit_fringes_auto(&first)?;
    let fit2 = fit_fringes_auto(&second)?;
    let sign = resolve_detuning_sign(f_rf, fit1.params.delta, f_rf + a.rf_step_khz, fit2.params.delta)?;
    let f_rec = frequency_from_detuning(f_rf, fit1.params.delta, sign);
    if let Some(path) = &a.trace_out {
        let mut buf = Vec::new();
        write_ramsey(&mut buf, &first)?;
        fs::write(path, buf).map_err(Error::from)?;
    }
    let report = RamseyReport {
        transition: label.to_string(),
        f_model_khz: f_model,
        f_rf_khz: f_rf,
        delta_fit_khz: fit1.params.delta,
        delta_fit_stepped_khz: fit2.params.delta,
        sign,
        f_recovered_khz: f_rec,
        error_hz: (f_rec - f_model) * 1e3,
        t2_star_fit_s: fit1.params.t2_star,
        rms_residual: fit1.rms_residual,
    };
    let config = c.run_config(
        "ramsey",
        &r,
        extra(&[
            ("transition", json!(label.to_string())),
            ("detuning_khz", json!(a.detuning_khz)),
            ("rf_step_khz", json!(a.rf_step_khz)),
            ("t2_star_s", json!(a.t2_star_s)),
            ("samples", json!(a.samples)),
            ("duration_s", json!(a.duration_s)),
            ("amplitude", json!(a.amplitude)),
            ("noise", json!(a.noise)),
        ]),
    );
    match config.format {
        OutputFormat::Json => c.emit_json(&config, &report),
        OutputFormat::Csv => {
            let row = vec![
                report.transition.clone(),
                format_khz(report.f_model_khz),
                format_khz(report.f_rf_khz),
                format!("{:.9}", report.delta_fit_khz),
                format!("{:.9}", report.delta_fit_stepped_khz),
                format!("{}", report.sign),
                format!("{:.9}", report.f_recovered_khz),
                format!("{:.4}", report.error_hz),
            ];
            c.emit(&csv_text(
                &["transition", "f_model_khz", "f_rf_khz", "delta_khz", "delta_stepped_khz", "sign", "f_recovered_khz", "error_hz"],
                &[row],
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Transitions(a) => cmd_transitions(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Thermal(a) => cmd_thermal(a),
        Command::AngularScan(a) => cmd_angular(a),
        Command::PerturbCheck(a) => cmd_perturb(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Ramsey(a) => cmd_ramsey(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
