//! File formats: measurement and Ramsey CSV, parameter JSON, run provenance.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{Measurement, MeasurementSet};
use crate::presets::{named_params, PRESET_NAME};
use crate::ramsey::RamseyTrace;
use crate::spin::{CouplingParams, Isotope, GAMMA_E};
use crate::transitions::TransitionLabel;

pub const MEASUREMENT_HEADER: [&str; 4] = ["temperature_K", "transition", "freq_khz", "sigma_khz"];
pub const RAMSEY_HEADER: [&str; 2] = ["tau_s", "signal"];

/// kHz values are written with 1 mHz granularity.
pub fn format_khz(v: f64) -> String {
    format!("{v:.6}")
}

/// 12 significant digits.
pub fn format_sci(v: f64) -> String {
    format!("{v:.11e}")
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    #[serde(rename = "temperature_K")]
    temperature: f64,
    transition: String,
    freq_khz: f64,
    sigma_khz: f64,
}

/// Reads a measurement CSV into one set per temperature, in ascending
/// temperature order.
pub fn read_measurements<R: Read>(reader: R, isotope: Isotope) -> Result<Vec<MeasurementSet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MEASUREMENT_HEADER {
        return Err(Error::Parse(format!(
            "measurement header must be '{}', got '{}'",
            MEASUREMENT_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut groups: BTreeMap<i64, MeasurementSet> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<MeasurementRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("measurement row {}: {e}", line + 2)))?;
        let label: TransitionLabel = row.transition.parse()?;
        if !row.temperature.is_finite() {
            return Err(Error::Parse(format!("row {}: non-finite temperature", line + 2)));
        }
        // group on the millikelvin grid
        let key = (row.temperature * 1e3).round() as i64;
        groups
            .entry(key)
            .or_insert_with(|| MeasurementSet {
                temperature: row.temperature,
                isotope,
                entries: Vec::new(),
                sample: None,
                nominal_bz: None,
            })
            .entries
            .push(Measurement { label, freq: row.freq_khz, sigma: row.sigma_khz });
    }
    let sets: Vec<MeasurementSet> = groups.into_values().collect();
    for s in &sets {
        s.validate()?;
    }
    Ok(sets)
}

pub fn read_measurements_file(path: &Path, isotope: Isotope) -> Result<Vec<MeasurementSet>> {
    read_measurements(fs::File::open(path)?, isotope)
}

pub fn write_measurements<W: Write>(writer: W, sets: &[MeasurementSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MEASUREMENT_HEADER)?;
    for s in sets {
        for m in &s.entries {
            w.write_record([
                s.temperature.to_string(),
                m.label.to_string(),
                format_khz(m.freq),
                format_khz(m.sigma),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ramsey<R: Read>(reader: R) -> Result<RamseyTrace> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RAMSEY_HEADER {
        return Err(Error::Parse(format!("Ramsey header must be '{}'", RAMSEY_HEADER.join(","))));
    }
    let (mut times, mut signal) = (Vec::new(), Vec::new());
    for (line, row) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (t, s) = row.map_err(|e| Error::Parse(format!("Ramsey row {}: {e}", line + 2)))?;
        times.push(t);
        signal.push(s);
    }
    let trace = RamseyTrace { times, signal, noise_sigma: 0.0 };
    trace.validate()?;
    Ok(trace)
}

pub fn write_ramsey<W: Write>(writer: W, trace: &RamseyTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RAMSEY_HEADER)?;
    for (t, s) in trace.times.iter().zip(&trace.signal) {
        w.write_record([format_sci(*t), format_sci(*s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Parameter file; gyromagnetic ratios default to the isotope constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub d: f64,
    #[serde(default)]
    pub q: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_e: Option<f64>,
    pub gamma_n: Option<f64>,
}

impl ParamsFile {
    pub fn resolve(&self, isotope: Isotope) -> Result<CouplingParams> {
        let p = CouplingParams {
            d: self.d,
            q: self.q,
            a_par: self.a_par,
            a_perp: self.a_perp,
            gamma_e: self.gamma_e.unwrap_or(GAMMA_E),
            gamma_n: self.gamma_n.unwrap_or(isotope.gamma_n()),
        };
        p.validate(&isotope.spec())?;
        Ok(p)
    }
}

pub fn read_params_file(path: &Path, isotope: Isotope) -> Result<CouplingParams> {
    let text = fs::read_to_string(path)?;
    let pf: ParamsFile = serde_json::from_str(&text)?;
    pf.resolve(isotope)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ParamsSource {
    Preset(String),
    File(PathBuf),
}

impl ParamsSource {
    /// Exactly one source; the reference preset when neither is given.
    pub fn select(preset: Option<&str>, file: Option<&Path>) -> Result<Self> {
        match (preset, file) {
            (Some(_), Some(_)) => Err(Error::InvalidInput("give either --preset or --params, not both".into())),
            (Some(name), None) => Ok(ParamsSource::Preset(name.to_string())),
            (None, Some(path)) => Ok(ParamsSource::File(path.to_path_buf())),
            (None, None) => Ok(ParamsSource::Preset(PRESET_NAME.to_string())),
        }
    }

    pub fn load(&self, isotope: Isotope) -> Result<CouplingParams> {
        match self {
            ParamsSource::Preset(name) => named_params(name, isotope)
                .ok_or_else(|| Error::InvalidInput(format!("unknown preset '{name}' (available: {PRESET_NAME})"))),
            ParamsSource::File(path) => read_params_file(path, isotope),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Everything needed to rerun a command, embedded in JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub isotope: Isotope,
    pub params_source: ParamsSource,
    pub params: CouplingParams,
    pub bz: f64,
    pub bx: f64,
    pub theta_deg: Option<f64>,
    pub temperature: f64,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Command-specific settings.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}
