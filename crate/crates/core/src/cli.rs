//! Command-line front end: five subcommands over one strict JSON config.
//!
//! `embedded-jc <estimate|spectrum|dynamics|gate|sweep> --config FILE
//! [--set path=value ...] [--out DIR]` loads a [`RunConfig`], runs the
//! requested study, and writes its artifacts into the output directory.
//! Every run is deterministic: floats are printed with 17 significant
//! digits, JSON keys are sorted, and re-running a command on the same
//! config reproduces each output byte for byte.
//!
//! Results are computed fully in memory and written only on success, so a
//! config that fails validation leaves no partial files behind. The one
//! exception is the sweep manifest, an append-only JSONL log that makes an
//! interrupted sweep resumable; it is rewritten in index order at the end
//! so the final artifacts do not depend on completion order or worker
//! count. `EMBEDDED_JC_THREADS` caps the worker pool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{
    basis_vector, evolve_lindblad, evolve_unitary, fit_decay, FitResult, LindbladMethod,
    LindbladOptions,
};
use crate::effective::{build_effective, validate_effective, DEFAULT_INCLUDE_STARK};
use crate::error::{Error, Result};
use crate::gates::{
    evaluate_gate, sqrt_swap_schedule, transfer_schedule, validate_schedule, Endpoint, GateTarget,
    PulseSegment, ScheduleOptions,
};
use crate::hamiltonian::{
    build_collapse_ops, build_hamiltonian, collective_number, photon_number,
    total_excitation_number, transmon_excited,
};
use crate::hilbert::{enumerate_basis, BasisState, EnumeratedBasis, SpaceTruncation};
use crate::linalg::KrylovOptions;
use crate::operator::SparseOperator;
use crate::params::{
    classify_regime, collective_coupling, magnetic_coupling, max_electric_coupling, spin_count,
    thermal_occupation, SystemParams,
};
use crate::spectra::{anharmonicity, eigensystem, embedded_jc_analysis};

/// Typical single-spin magnetic coupling of a centimeter-scale cavity,
/// used to flag whether an estimated g_m lands at the expected order.
pub const G_M_REFERENCE_RAD_PER_S: f64 = 1e3;

/// Hard cap on the sweep grid size.
pub const SWEEP_POINT_CAP: usize = 100_000;

// ---------------------------------------------------------------------------
// argument and config types
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "embedded-jc", version, about = "Spin-ensemble embedded Jaynes-Cummings toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Device-scale couplings and spin counts from geometry and material data.
    Estimate(CommonArgs),
    /// Block-diagonal eigensystem, anharmonicity and hybrid-qubit report.
    Spectrum(CommonArgs),
    /// Time evolution of named observables, unitary or dissipative.
    Dynamics(CommonArgs),
    /// Pulse-schedule synthesis and two-qubit gate evaluation.
    Gate(CommonArgs),
    /// Cartesian parameter sweep with a resumable manifest.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path override applied before validation, e.g. --set params.g_m=1e-5.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    /// Output directory; overrides output_dir from the config (default ".").
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Unit convention of the config: dimensionless runs measure every rate in
/// units of g_c, SI runs use angular frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitMode {
    Dimensionless,
    #[serde(alias = "SI")]
    Si,
}

/// One config file drives every subcommand; unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: UnitMode,
    pub params: SystemParams,
    #[serde(default)]
    pub truncation: Option<SpaceTruncation>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Recorded in run metadata; reserved for future stochastic methods.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub estimate: Option<EstimateSection>,
    #[serde(default)]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default)]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default)]
    pub gate: Option<GateSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub mode_volume_m3: f64,
    pub dopant_density_per_cm3: f64,
    pub sample_thickness_m: f64,
    pub sample_width_m: f64,
    pub sample_length_m: f64,
    #[serde(default)]
    pub temperature_k: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Write the eigenvector sidecar (columns as [re, im] pairs).
    pub eigenvectors: bool,
    /// Write the hybrid-qubit report (splitting, coefficients, leakage).
    pub embedded: bool,
    /// Write the enumerated basis labels.
    pub dump_basis: bool,
    /// Write the Hamiltonian in COO text form.
    pub dump_hamiltonian: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub initial_state: BasisState,
    pub t_end: f64,
    /// Uniform samples including both endpoints; at least 2.
    pub samples: usize,
    /// Observable columns; defaults to photon, transmon and collective numbers.
    #[serde(default)]
    pub observables: Vec<String>,
    /// Master-equation route: auto, dense_exponential or adaptive_rk.
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    /// Fit A exp(-rate t) + C to this column and record the rate.
    #[serde(default)]
    pub fit_observable: Option<String>,
    /// Also run the full-vs-effective deviation study over [0, t_end].
    #[serde(default)]
    pub effective_deviation: Option<EffectiveDeviationSection>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveDeviationSection {
    pub t_end: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    pub kind: GateKind,
    #[serde(default)]
    pub options: ScheduleOptions,
    /// Evaluation target; defaults to the synthesized gate, and to none for
    /// transfer and file schedules (which are not two-qubit gates by themselves).
    #[serde(default)]
    pub target: Option<GateTarget>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Transfer { source: Endpoint, target: Endpoint },
    SqrtSwap { i: usize, j: usize },
    Swap { i: usize, j: usize },
    /// External schedule JSON, resolved relative to the config file.
    Schedule { file: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axes: Vec<SweepAxis>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted config path the axis writes to, e.g. "params.ensembles.0.n_s".
    pub path: String,
    pub values: AxisValues,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AxisValues {
    List(Vec<Value>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

/// Files plus the human summary printed to stdout.
#[derive(Debug)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
}

// ---------------------------------------------------------------------------
// config loading and dotted-path overrides
// ---------------------------------------------------------------------------

/// Reads, overrides and strictly deserializes a config, returning both the
/// raw JSON (needed by sweeps) and the typed form.
pub fn load_config(path: &Path, sets: &[String]) -> Result<(Value, RunConfig)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)?;
    for spec in sets {
        apply_set(&mut value, spec)?;
    }
    let config: RunConfig = serde_json::from_value(value.clone())?;
    Ok((value, config))
}

fn apply_set(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("--set expects PATH=VALUE, got '{spec}'")))?;
    let raw = raw.trim();
    // Bare words become strings so enum values need no shell-escaped quotes.
    let value = serde_json::from_str::<Value>(raw)
        .unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, path.trim(), value)
}

/// Writes `new` at a dotted path; numeric segments index arrays (which must
/// already be long enough), string segments descend into objects (created on
/// demand).
pub fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    if path.is_empty() {
        return Err(Error::validation("config path must not be empty"));
    }
    let parts: Vec<&str> = path.split('.').collect();
    let mut new = Some(new);
    let mut cur = root;
    for (pos, part) in parts.iter().enumerate() {
        let last = pos + 1 == parts.len();
        if let Ok(idx) = part.parse::<usize>() {
            let arr = cur.as_array_mut().ok_or_else(|| {
                Error::validation(format!("config path '{path}': segment '{part}' indexes a non-array"))
            })?;
            if idx >= arr.len() {
                return Err(Error::validation(format!(
                    "config path '{path}': index {idx} is out of range for an array of {}",
                    arr.len()
                )));
            }
            if last {
                arr[idx] = new.take().expect("value set once");
                return Ok(());
            }
            cur = &mut arr[idx];
        } else {
            let obj = cur.as_object_mut().ok_or_else(|| {
                Error::validation(format!(
                    "config path '{path}': segment '{part}' descends into a non-object"
                ))
            })?;
            if last {
                obj.insert(part.to_string(), new.take().expect("value set once"));
                return Ok(());
            }
            cur = obj
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    unreachable!("loop returns on the last segment")
}

// ---------------------------------------------------------------------------
// deterministic formatting
// ---------------------------------------------------------------------------

/// 17 significant digits: every f64 round-trips exactly.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Pretty JSON with sorted keys and 17-digit floats, trailing newline.
pub fn render_json(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, 0, true, &mut out);
    out.push('\n');
    out
}

/// Single-line JSON with the same number formatting, for manifest rows.
pub fn render_json_compact(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, 0, false, &mut out);
    out
}

fn write_json(value: &Value, depth: usize, pretty: bool, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&escape_json(s)),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    newline_indent(out, depth + 1);
                }
                write_json(item, depth + 1, pretty, out);
            }
            if pretty {
                newline_indent(out, depth);
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    newline_indent(out, depth + 1);
                }
                out.push_str(&escape_json(key));
                out.push_str(if pretty { ": " } else { ":" });
                write_json(&map[key.as_str()], depth + 1, pretty, out);
            }
            if pretty {
                newline_indent(out, depth);
            }
            out.push('}');
        }
    }
}

fn escape_json(s: &str) -> String {
    serde_json::to_string(s).expect("strings always encode")
}

fn newline_indent(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn to_json_value<T: Serialize>(value: &T) -> Result<Value> {
    serde_json::to_value(value).map_err(Error::ConfigParse)
}

fn csv_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_row(fields: &[String]) -> String {
    let mut row = fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    row.push('\n');
    row
}

fn version_string() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Runs one parsed invocation and returns the summary to print.
pub fn run(cli: Cli) -> Result<String> {
    init_thread_pool()?;
    let (args, name): (&CommonArgs, &str) = match &cli.command {
        Command::Estimate(a) => (a, "estimate"),
        Command::Spectrum(a) => (a, "spectrum"),
        Command::Dynamics(a) => (a, "dynamics"),
        Command::Gate(a) => (a, "gate"),
        Command::Sweep(a) => (a, "sweep"),
    };
    let (value, config) = load_config(&args.config, &args.set)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let output = match name {
        "estimate" => cmd_estimate(&config)?,
        "spectrum" => cmd_spectrum(&config)?,
        "dynamics" => cmd_dynamics(&config)?,
        "gate" => cmd_gate(&config, args.config.parent())?,
        "sweep" => cmd_sweep(&value, &config, &out_dir)?,
        _ => unreachable!(),
    };
    write_outputs(&out_dir, &output.files)?;
    Ok(output.summary)
}

/// Honors EMBEDDED_JC_THREADS once per process; later calls keep the pool.
fn init_thread_pool() -> Result<()> {
    if let Ok(raw) = std::env::var("EMBEDDED_JC_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::validation(format!(
                    "EMBEDDED_JC_THREADS must be a positive integer, got '{raw}'"
                ))
            })?;
        static INIT: std::sync::Once = std::sync::Once::new();
        INIT.call_once(|| {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        });
    }
    Ok(())
}

fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    if files.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn section_missing(cmd: &str) -> Error {
    Error::validation(format!("config has no \"{cmd}\" section"))
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EstimateReport {
    omega_c: f64,
    electric_coupling_limit: f64,
    g_c: f64,
    g_c_within_limit: bool,
    mode_volume_m3: f64,
    g_m: f64,
    g_m_reference_rad_per_s: f64,
    g_m_over_reference: f64,
    g_m_same_order_as_reference: bool,
    spin_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    spin_count_warning: Option<String>,
    collective_coupling: f64,
    regime: crate::params::RegimeReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thermal_occupation: Option<f64>,
}

/// Material and geometry numbers to couplings, spin count and regime flags.
pub fn cmd_estimate(config: &RunConfig) -> Result<RunOutput> {
    let sec = config.estimate.as_ref().ok_or_else(|| section_missing("estimate"))?;
    if config.mode != UnitMode::Si {
        return Err(Error::validation(
            "estimate works on absolute units; set mode = \"si\"",
        ));
    }
    let params = &config.params;
    params.validate()?;
    let omega_c = params
        .omega_c
        .ok_or_else(|| Error::validation("estimate requires params.omega_c"))?;

    let limit = max_electric_coupling(omega_c)?;
    let g_m = magnetic_coupling(omega_c, params.g_c, sec.mode_volume_m3)?;
    let spins = spin_count(
        sec.dopant_density_per_cm3,
        sec.sample_thickness_m,
        sec.sample_width_m,
        sec.sample_length_m,
    )?;
    let g_big = collective_coupling(g_m, spins.count);

    // Regime flags for the estimated device, not the placeholder ensemble.
    let mut scenario = params.clone();
    scenario.g_m = g_m;
    scenario.ensembles[0].n_s = spins.count;
    let regime = classify_regime(&scenario)?;

    let thermal = match sec.temperature_k {
        Some(t) => Some(thermal_occupation(omega_c, t)?),
        None => None,
    };
    let ratio = g_m / G_M_REFERENCE_RAD_PER_S;
    let report = EstimateReport {
        omega_c,
        electric_coupling_limit: limit,
        g_c: params.g_c,
        g_c_within_limit: params.g_c <= limit,
        mode_volume_m3: sec.mode_volume_m3,
        g_m,
        g_m_reference_rad_per_s: G_M_REFERENCE_RAD_PER_S,
        g_m_over_reference: ratio,
        g_m_same_order_as_reference: (0.1..10.0).contains(&ratio),
        spin_count: spins.count,
        spin_count_warning: spins.warning.clone(),
        collective_coupling: g_big,
        regime: regime.clone(),
        temperature_k: sec.temperature_k,
        thermal_occupation: thermal,
    };

    let mut summary = String::new();
    let _ = writeln!(summary, "device estimate at omega_c = {:.6e} rad/s", omega_c);
    let _ = writeln!(
        summary,
        "  electric coupling g_c = {:.6e} rad/s (fine-structure limit {:.6e}; {})",
        params.g_c,
        limit,
        if params.g_c <= limit { "within limit" } else { "EXCEEDS limit" }
    );
    let _ = writeln!(
        summary,
        "  magnetic coupling g_m = {:.6e} rad/s ({:.3}x the {:.0e} rad/s reference{})",
        g_m,
        ratio,
        G_M_REFERENCE_RAD_PER_S,
        if report.g_m_same_order_as_reference { ", same order" } else { "" }
    );
    let _ = writeln!(
        summary,
        "  spin count N_s = {} -> collective coupling G = {:.6e} rad/s",
        spins.count, g_big
    );
    if let Some(w) = &spins.warning {
        let _ = writeln!(summary, "  warning: {w}");
    }
    let _ = writeln!(
        summary,
        "  regime: resonant_strong_coupling={} two_level_valid={} dispersive_strong_coupling={}",
        regime.resonant_strong_coupling, regime.two_level_valid, regime.dispersive_strong_coupling
    );
    if let (Some(t), Some(n)) = (sec.temperature_k, thermal) {
        let _ = writeln!(summary, "  thermal occupation at {t} K: {n:.6e}");
    }
    summary.push_str("wrote estimate.json");

    let json = render_json(&to_json_value(&report)?);
    Ok(RunOutput { files: vec![("estimate.json".into(), json.into_bytes())], summary })
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct BasisRow<'a> {
    index: usize,
    label: String,
    transmon: u8,
    photons: u32,
    k: &'a [u32],
}

/// Eigenvalues per excitation block plus the optional sidecars.
pub fn cmd_spectrum(config: &RunConfig) -> Result<RunOutput> {
    let sec = config.spectrum.unwrap_or_default();
    let params = &config.params;
    params.validate()?;
    let trunc = config.truncation.unwrap_or_default();
    let basis = enumerate_basis(&trunc, &params.ensembles)?;
    let h = build_hamiltonian(params, &basis)?;
    let spec = eigensystem(&h, &basis, sec.eigenvectors)?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut csv = String::from("block,index,eigenvalue\n");
    let mut prev_tag: Option<u32> = None;
    let mut idx = 0usize;
    for (val, tag) in spec.eigenvalues.iter().zip(&spec.block_tags) {
        if prev_tag != Some(*tag) {
            prev_tag = Some(*tag);
            idx = 0;
        }
        csv.push_str(&csv_row(&[tag.to_string(), idx.to_string(), format_float(*val)]));
        idx += 1;
    }
    files.push(("spectrum.csv".into(), csv.into_bytes()));

    let mut summary = format!(
        "spectrum: {} states in {} excitation blocks\n",
        basis.len(),
        basis.blocks().len()
    );
    match anharmonicity(&spec) {
        Ok(metrics) => {
            files.push((
                "anharmonicity.json".into(),
                render_json(&to_json_value(&metrics)?).into_bytes(),
            ));
            let _ = writeln!(
                summary,
                "  ladder_step = {:.6e}, manifold_gap = {:.6e}",
                metrics.ladder_step, metrics.manifold_gap
            );
        }
        Err(Error::Validation(msg)) => {
            let _ = writeln!(summary, "  anharmonicity skipped: {msg}");
        }
        Err(e) => return Err(e),
    }
    if sec.embedded {
        let report = embedded_jc_analysis(params, &trunc)?;
        let _ = writeln!(
            summary,
            "  hybrid splitting = {:.6e} (coefficients {:.4}, {:.4}, {:.4})",
            report.splitting,
            report.coefficient_magnitudes[0],
            report.coefficient_magnitudes[1],
            report.coefficient_magnitudes[2]
        );
        files.push((
            "embedded_report.json".into(),
            render_json(&to_json_value(&report)?).into_bytes(),
        ));
    }
    if sec.dump_basis {
        let rows: Vec<BasisRow> = basis
            .states()
            .iter()
            .enumerate()
            .map(|(index, s)| BasisRow {
                index,
                label: s.label(),
                transmon: s.transmon,
                photons: s.photons,
                k: &s.k,
            })
            .collect();
        files.push(("basis.json".into(), render_json(&to_json_value(&rows)?).into_bytes()));
    }
    if sec.dump_hamiltonian {
        let mut coo = Vec::new();
        h.write_coo(&mut coo)?;
        files.push(("hamiltonian.coo".into(), coo));
    }
    if sec.eigenvectors {
        let vectors = spec.eigenvectors.as_ref().expect("requested eigenvectors");
        let columns: Vec<Vec<[f64; 2]>> = (0..vectors.ncols())
            .map(|c| (0..vectors.nrows()).map(|r| [vectors[(r, c)].re, vectors[(r, c)].im]).collect())
            .collect();
        let sidecar = serde_json::json!({
            "eigenvalues": spec.eigenvalues,
            "block_tags": spec.block_tags,
            "columns": columns,
        });
        files.push(("eigenvectors.json".into(), render_json(&sidecar).into_bytes()));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    let _ = write!(summary, "wrote {}", names.join(", "));
    Ok(RunOutput { files, summary })
}

// ---------------------------------------------------------------------------
// dynamics
// ---------------------------------------------------------------------------

fn default_observables(n_ens: usize) -> Vec<String> {
    let mut names = vec![
        "photon_number".to_string(),
        "transmon_excited".to_string(),
        "total_excitation".to_string(),
    ];
    for j in 0..n_ens {
        names.push(format!("collective_excitation_{j}"));
    }
    names
}

fn resolve_observable(name: &str, basis: &EnumeratedBasis) -> Result<SparseOperator> {
    match name {
        "photon_number" => Ok(photon_number(basis)),
        "transmon_excited" => Ok(transmon_excited(basis)),
        "total_excitation" => Ok(total_excitation_number(basis)),
        _ => {
            if let Some(j) = name.strip_prefix("collective_excitation_") {
                let j: usize = j.parse().map_err(|_| {
                    Error::validation(format!("bad ensemble index in observable '{name}'"))
                })?;
                if j >= basis.ensemble_count() {
                    return Err(Error::validation(format!(
                        "observable '{name}' addresses ensemble {j}, but only {} exist",
                        basis.ensemble_count()
                    )));
                }
                Ok(collective_number(basis, j))
            } else {
                Err(Error::validation(format!(
                    "unknown observable '{name}'; available: photon_number, transmon_excited, \
                     total_excitation, collective_excitation_<j>"
                )))
            }
        }
    }
}

fn parse_method(name: Option<&str>) -> Result<LindbladMethod> {
    match name {
        None | Some("auto") => Ok(LindbladMethod::Auto),
        Some("dense_exponential") => Ok(LindbladMethod::DenseExponential),
        Some("adaptive_rk") => Ok(LindbladMethod::AdaptiveRk),
        Some(other) => Err(Error::validation(format!(
            "unknown method '{other}'; available: auto, dense_exponential, adaptive_rk"
        ))),
    }
}

#[derive(Debug, Serialize)]
struct FitMeta {
    observable: String,
    #[serde(flatten)]
    result: FitResult,
}

#[derive(Debug, Serialize)]
struct DynamicsMeta<'a> {
    command: &'a str,
    version: String,
    params: &'a SystemParams,
    truncation: SpaceTruncation,
    initial_state: &'a BasisState,
    initial_label: String,
    t_end: f64,
    samples: usize,
    method: String,
    observables: &'a [String],
    tolerances: BTreeMap<&'a str, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitMeta>,
}

/// Time evolution with named observable columns and a metadata sidecar.
pub fn cmd_dynamics(config: &RunConfig) -> Result<RunOutput> {
    let sec = config.dynamics.as_ref().ok_or_else(|| section_missing("dynamics"))?;
    let params = &config.params;
    params.validate()?;
    let trunc = config.truncation.unwrap_or_default();
    if sec.samples < 2 {
        return Err(Error::validation(format!(
            "dynamics needs at least 2 samples to span a grid, got {}",
            sec.samples
        )));
    }
    if !(sec.t_end > 0.0) || !sec.t_end.is_finite() {
        return Err(Error::validation("t_end must be positive and finite"));
    }
    let n = sec.samples;
    let t_grid: Vec<f64> =
        (0..n).map(|i| sec.t_end * i as f64 / (n - 1) as f64).collect();

    let basis = enumerate_basis(&trunc, &params.ensembles)?;
    let h = build_hamiltonian(params, &basis)?;
    let psi0 = basis_vector(&basis, &sec.initial_state)?;
    let names = if sec.observables.is_empty() {
        default_observables(basis.ensemble_count())
    } else {
        sec.observables.clone()
    };
    let ops: Vec<(String, SparseOperator)> = names
        .iter()
        .map(|n| Ok((n.clone(), resolve_observable(n, &basis)?)))
        .collect::<Result<_>>()?;

    let dissipative = params.kappa_c > 0.0 || params.gamma_jj > 0.0 || params.gamma_spin > 0.0;
    let defaults = LindbladOptions::default();
    let opts = LindbladOptions {
        method: parse_method(sec.method.as_deref())?,
        rtol: sec.rtol.unwrap_or(defaults.rtol),
        atol: sec.atol.unwrap_or(defaults.atol),
    };
    let krylov = KrylovOptions::default();
    let (mut traj, method, tolerances) = if dissipative {
        let model = build_collapse_ops(params, &basis)?;
        let rho0 = &psi0 * psi0.adjoint();
        let traj = evolve_lindblad(&model, &rho0, &t_grid, &opts)?;
        let mut tol = BTreeMap::new();
        tol.insert("rtol", opts.rtol);
        tol.insert("atol", opts.atol);
        (traj, format!("lindblad_{:?}", opts.method).to_lowercase(), tol)
    } else {
        let traj = evolve_unitary(&h, &psi0, &t_grid, &krylov)?;
        let mut tol = BTreeMap::new();
        tol.insert("krylov_tol", krylov.tol);
        (traj, "unitary".to_string(), tol)
    };
    for (name, op) in &ops {
        traj.record(name, op);
    }

    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    let mut csv = csv_row(&header);
    for (i, t) in t_grid.iter().enumerate() {
        let mut fields = vec![format_float(*t)];
        for name in &names {
            fields.push(format_float(traj.observables[name][i]));
        }
        csv.push_str(&csv_row(&fields));
    }

    let fit = match &sec.fit_observable {
        Some(name) => {
            let series = traj.observables.get(name).ok_or_else(|| {
                Error::validation(format!(
                    "fit_observable '{name}' is not among the recorded observables"
                ))
            })?;
            Some(FitMeta { observable: name.clone(), result: fit_decay(series, &t_grid)? })
        }
        None => None,
    };

    let mut summary = format!(
        "dynamics: {} samples to t = {} ({method})\n  columns: t, {}\n",
        n,
        sec.t_end,
        names.join(", ")
    );
    if let Some(f) = &fit {
        let _ = writeln!(
            summary,
            "  fit {}: rate = {:.6e} (rms residual {:.3e})",
            f.observable, f.result.rate, f.result.rms_residual
        );
    }

    let meta = DynamicsMeta {
        command: "dynamics",
        version: version_string(),
        params,
        truncation: trunc,
        initial_state: &sec.initial_state,
        initial_label: sec.initial_state.label(),
        t_end: sec.t_end,
        samples: n,
        method,
        observables: &names,
        tolerances,
        seed: config.seed,
        fit,
    };
    let mut files = vec![
        ("trajectory.csv".to_string(), csv.into_bytes()),
        ("run_meta.json".to_string(), render_json(&to_json_value(&meta)?).into_bytes()),
    ];

    if let Some(dev) = &sec.effective_deviation {
        let report = validate_effective(params, &trunc, dev.t_end)?;
        let _ = writeln!(
            summary,
            "  effective deviation: freq_full = {:.6e}, freq_eff = {:.6e}, rel_error = {:.3e}",
            report.freq_full, report.freq_eff, report.rel_error
        );
        files.push((
            "deviation_report.json".to_string(),
            render_json(&to_json_value(&report)?).into_bytes(),
        ));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    let _ = write!(summary, "wrote {}", names.join(", "));
    Ok(RunOutput { files, summary })
}

// ---------------------------------------------------------------------------
// gate
// ---------------------------------------------------------------------------

fn endpoint_label(e: Endpoint) -> String {
    match e {
        Endpoint::Transmon => "transmon".to_string(),
        Endpoint::Ensemble(j) => format!("ensemble {j}"),
    }
}

/// Synthesizes or loads a schedule, then scores it against a target.
pub fn cmd_gate(config: &RunConfig, config_dir: Option<&Path>) -> Result<RunOutput> {
    let sec = config.gate.as_ref().ok_or_else(|| section_missing("gate"))?;
    let params = &config.params;
    params.validate()?;
    let trunc = config
        .truncation
        .unwrap_or(SpaceTruncation { n_max: 2, k_max: 2, total_excitation_max: Some(2) });

    let (schedule, default_target, desc) = match &sec.kind {
        GateKind::Transfer { source, target } => {
            let schedule = transfer_schedule(params, *source, *target, &sec.options)?;
            (schedule, None, format!("transfer {} -> {}", endpoint_label(*source), endpoint_label(*target)))
        }
        GateKind::SqrtSwap { i, j } => {
            let schedule = sqrt_swap_schedule(params, *i, *j, &sec.options)?;
            (schedule, Some(GateTarget::SqrtSwap), format!("sqrt_swap({i},{j})"))
        }
        GateKind::Swap { i, j } => {
            let half = sqrt_swap_schedule(params, *i, *j, &sec.options)?;
            let mut schedule = half.clone();
            schedule.extend(half);
            (schedule, Some(GateTarget::Swap), format!("swap({i},{j})"))
        }
        GateKind::Schedule { file } => {
            let path = if file.is_absolute() {
                file.clone()
            } else {
                config_dir.unwrap_or(Path::new(".")).join(file)
            };
            let text = fs::read_to_string(&path).map_err(|e| {
                Error::validation(format!("cannot read schedule {}: {e}", path.display()))
            })?;
            let schedule: Vec<PulseSegment> = serde_json::from_str(&text)?;
            validate_schedule(params, &schedule)?;
            (schedule, None, format!("schedule {}", file.display()))
        }
    };
    let target = sec.target.or(default_target);

    let total: f64 = schedule.iter().map(|s| s.duration).sum();
    let mut summary = format!(
        "gate {desc}: {} segments, total duration {:.6e}\n",
        schedule.len(),
        total
    );
    let mut files = vec![(
        "schedule.json".to_string(),
        render_json(&to_json_value(&schedule)?).into_bytes(),
    )];
    match target {
        Some(target) => {
            let report = evaluate_gate(params, &trunc, &schedule, target)?;
            let _ = writeln!(
                summary,
                "  vs {}: average fidelity = {:.6}, worst case = {:.6}, leakage = {:.3e}{}",
                report.target,
                report.average_fidelity,
                report.worst_case_state_fidelity,
                report.leakage,
                if report.dissipative { " (dissipative)" } else { "" }
            );
            files.push((
                "gate_report.json".to_string(),
                render_json(&to_json_value(&report)?).into_bytes(),
            ));
        }
        None => {
            let _ = writeln!(summary, "  no evaluation target given; wrote the schedule only");
        }
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    let _ = write!(summary, "wrote {}", names.join(", "));
    Ok(RunOutput { files, summary })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct SweepRow {
    index: usize,
    values: Vec<Value>,
    outputs: Vec<f64>,
    error: Option<String>,
}

impl SweepRow {
    fn to_value(&self) -> Value {
        let outputs: Vec<Value> = self
            .outputs
            .iter()
            .map(|&x| serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null))
            .collect();
        serde_json::json!({
            "index": self.index,
            "values": self.values,
            "outputs": outputs,
            "error": self.error,
        })
    }

    fn from_value(v: &Value, points: usize, n_axes: usize, n_outputs: usize) -> Option<SweepRow> {
        let index = v.get("index")?.as_u64()? as usize;
        if index >= points {
            return None;
        }
        let values = v.get("values")?.as_array()?.clone();
        if values.len() != n_axes {
            return None;
        }
        let error = match v.get("error")? {
            Value::Null => None,
            Value::String(s) => Some(s.clone()),
            _ => return None,
        };
        let raw = v.get("outputs")?.as_array()?;
        let outputs: Vec<f64> = raw.iter().filter_map(|x| x.as_f64()).collect();
        if error.is_none() && (outputs.len() != raw.len() || outputs.len() != n_outputs) {
            return None;
        }
        Some(SweepRow { index, values, outputs, error })
    }
}

fn expand_axis(axis: &SweepAxis) -> Result<Vec<Value>> {
    let values = match &axis.values {
        AxisValues::List(values) => {
            if values.is_empty() {
                return Err(Error::validation(format!("axis '{}' has no values", axis.path)));
            }
            values.clone()
        }
        AxisValues::Range { start, stop, count, log } => {
            if *count == 0 {
                return Err(Error::validation(format!("axis '{}' has count = 0", axis.path)));
            }
            if !start.is_finite() || !stop.is_finite() {
                return Err(Error::validation(format!("axis '{}' has non-finite bounds", axis.path)));
            }
            if *log && (*start <= 0.0 || *stop <= 0.0) {
                return Err(Error::validation(format!(
                    "axis '{}' is logarithmic and needs positive bounds",
                    axis.path
                )));
            }
            (0..*count)
                .map(|i| {
                    let f = if *count == 1 { 0.0 } else { i as f64 / (*count - 1) as f64 };
                    let x = if *log {
                        (start.ln() + (stop.ln() - start.ln()) * f).exp()
                    } else {
                        start + (stop - start) * f
                    };
                    number_value(x)
                })
                .collect()
        }
    };
    Ok(values)
}

/// Integral grid values become JSON integers so integer fields (like N_s)
/// accept them.
fn number_value(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9.007_199_254_740_992e15 {
        if x >= 0.0 {
            return Value::Number(serde_json::Number::from(x as u64));
        }
        return Value::Number(serde_json::Number::from(x as i64));
    }
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn value_to_csv(v: &Value) -> String {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                format_float(n.as_f64().unwrap_or(f64::NAN))
            }
        }
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => render_json_compact(other),
    }
}

const SWEEP_METRICS: &[&str] = &[
    "splitting",
    "ladder_step",
    "manifold_gap",
    "collective_coupling",
    "anharmonicity_scale",
    "g_eff",
    "two_level_valid",
    "resonant_strong_coupling",
    "dispersive_strong_coupling",
    "hybrid_lifetime_rate",
];

fn eval_metric(name: &str, params: &SystemParams, trunc: &SpaceTruncation) -> Result<f64> {
    match name {
        "splitting" => Ok(embedded_jc_analysis(params, trunc)?.splitting),
        "ladder_step" | "manifold_gap" => {
            let basis = enumerate_basis(trunc, &params.ensembles)?;
            let h = build_hamiltonian(params, &basis)?;
            let metrics = anharmonicity(&eigensystem(&h, &basis, false)?)?;
            Ok(if name == "ladder_step" { metrics.ladder_step } else { metrics.manifold_gap })
        }
        "collective_coupling" => Ok(params.collective_coupling_first()),
        "anharmonicity_scale" => Ok(classify_regime(params)?.anharmonicity_scale),
        "g_eff" => Ok(build_effective(params, trunc, DEFAULT_INCLUDE_STARK)?.0.g_eff[0]),
        "two_level_valid" => Ok(f64::from(classify_regime(params)?.two_level_valid)),
        "resonant_strong_coupling" => Ok(f64::from(classify_regime(params)?.resonant_strong_coupling)),
        "dispersive_strong_coupling" => {
            Ok(f64::from(classify_regime(params)?.dispersive_strong_coupling))
        }
        "hybrid_lifetime_rate" => {
            Ok(0.5 * params.gamma_spin + 0.25 * params.gamma_jj + 0.25 * params.kappa_c)
        }
        _ => Err(Error::validation(format!(
            "unknown sweep output '{name}'; available: {}",
            SWEEP_METRICS.join(", ")
        ))),
    }
}

fn multi_index(index: usize, dims: &[usize]) -> Vec<usize> {
    // Row-major: the last axis spins fastest.
    let mut rem = index;
    let mut rev = Vec::with_capacity(dims.len());
    for d in dims.iter().rev() {
        rev.push(rem % d);
        rem /= d;
    }
    rev.reverse();
    rev
}

fn compute_point(
    base: &Value,
    sec: &SweepSection,
    axis_values: &[Vec<Value>],
    dims: &[usize],
    index: usize,
) -> SweepRow {
    let mi = multi_index(index, dims);
    let values: Vec<Value> =
        mi.iter().zip(axis_values).map(|(&i, vals)| vals[i].clone()).collect();
    let result = (|| -> Result<Vec<f64>> {
        let mut point = base.clone();
        for (axis, value) in sec.axes.iter().zip(&values) {
            set_path(&mut point, &axis.path, value.clone())?;
        }
        let config: RunConfig = serde_json::from_value(point)?;
        config.params.validate()?;
        let trunc = config.truncation.unwrap_or_default();
        sec.outputs.iter().map(|m| eval_metric(m, &config.params, &trunc)).collect()
    })();
    match result {
        Ok(outputs) => SweepRow { index, values, outputs, error: None },
        Err(e) => SweepRow { index, values, outputs: Vec::new(), error: Some(e.to_string()) },
    }
}

fn manifest_header(sec: &SweepSection, points: usize) -> Value {
    let axes: Vec<&str> = sec.axes.iter().map(|a| a.path.as_str()).collect();
    serde_json::json!({ "axes": axes, "outputs": sec.outputs, "points": points })
}

/// Completed rows from a previous run, if the manifest matches this sweep.
fn read_manifest(
    path: &Path,
    header: &Value,
    points: usize,
    n_axes: usize,
    n_outputs: usize,
) -> BTreeMap<usize, SweepRow> {
    let mut done = BTreeMap::new();
    let Ok(text) = fs::read_to_string(path) else { return done };
    let mut lines = text.lines();
    match lines.next().and_then(|l| serde_json::from_str::<Value>(l).ok()) {
        Some(first) if first == *header => {}
        _ => return done,
    }
    for line in lines {
        // A torn final line from an interrupted run parses as garbage; skip it.
        let Ok(v) = serde_json::from_str::<Value>(line) else { continue };
        if let Some(row) = SweepRow::from_value(&v, points, n_axes, n_outputs) {
            done.insert(row.index, row);
        }
    }
    done
}

/// Cartesian sweep: every point applies its axis values to the base config,
/// re-validates it, and evaluates the requested metrics. Point failures are
/// recorded in the error column; the run continues.
pub fn cmd_sweep(base: &Value, config: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    let sec = config.sweep.as_ref().ok_or_else(|| section_missing("sweep"))?;
    if sec.axes.is_empty() {
        return Err(Error::validation("sweep needs at least one axis"));
    }
    if sec.outputs.is_empty() {
        return Err(Error::validation("sweep needs at least one output metric"));
    }
    for name in &sec.outputs {
        if !SWEEP_METRICS.contains(&name.as_str()) {
            return Err(Error::validation(format!(
                "unknown sweep output '{name}'; available: {}",
                SWEEP_METRICS.join(", ")
            )));
        }
    }
    let axis_values: Vec<Vec<Value>> = sec.axes.iter().map(expand_axis).collect::<Result<_>>()?;
    let dims: Vec<usize> = axis_values.iter().map(|v| v.len()).collect();
    let points = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
    if points > SWEEP_POINT_CAP {
        return Err(Error::size_cap(format!(
            "sweep grid of {points} points exceeds the {SWEEP_POINT_CAP}-point cap; \
             shrink an axis or split the sweep"
        )));
    }
    // Surface structural path errors before any point runs.
    {
        let mut probe = base.clone();
        for (axis, values) in sec.axes.iter().zip(&axis_values) {
            set_path(&mut probe, &axis.path, values[0].clone())?;
        }
        let _: RunConfig = serde_json::from_value(probe)?;
    }

    let header = manifest_header(sec, points);
    let header_line = render_json_compact(&header);
    let manifest_name = "sweep_manifest.jsonl";
    let manifest_path = out_dir.join(manifest_name);
    let done = read_manifest(&manifest_path, &header, points, sec.axes.len(), sec.outputs.len());
    let reused = done.len();
    let todo: Vec<usize> = (0..points).filter(|i| !done.contains_key(i)).collect();

    // Append-only progress log; rewritten in index order at the end.
    fs::create_dir_all(out_dir)?;
    let mut log = String::with_capacity(header_line.len() + 1);
    if done.is_empty() {
        log.push_str(&header_line);
        log.push('\n');
        fs::write(&manifest_path, &log)?;
    }
    let appender = Mutex::new(
        fs::OpenOptions::new().create(true).append(true).open(&manifest_path)?,
    );
    let computed: Vec<SweepRow> = todo
        .par_iter()
        .map(|&index| {
            let row = compute_point(base, sec, &axis_values, &dims, index);
            let line = render_json_compact(&row.to_value());
            {
                use std::io::Write as _;
                let mut file = appender.lock().expect("manifest lock");
                let _ = writeln!(file, "{line}");
            }
            row
        })
        .collect();
    drop(appender);

    let mut rows: BTreeMap<usize, SweepRow> = done;
    for row in computed {
        rows.insert(row.index, row);
    }
    let failed = rows.values().filter(|r| r.error.is_some()).count();

    let mut header_fields = vec!["index".to_string()];
    header_fields.extend(sec.axes.iter().map(|a| a.path.clone()));
    header_fields.extend(sec.outputs.iter().cloned());
    header_fields.push("error".to_string());
    let mut csv = csv_row(&header_fields);
    let mut manifest = String::new();
    manifest.push_str(&header_line);
    manifest.push('\n');
    for row in rows.values() {
        let mut fields = vec![row.index.to_string()];
        fields.extend(row.values.iter().map(value_to_csv));
        if row.error.is_none() {
            fields.extend(row.outputs.iter().map(|&x| format_float(x)));
        } else {
            fields.extend(std::iter::repeat(String::new()).take(sec.outputs.len()));
        }
        fields.push(row.error.clone().unwrap_or_default());
        csv.push_str(&csv_row(&fields));
        manifest.push_str(&render_json_compact(&row.to_value()));
        manifest.push('\n');
    }

    let summary = format!(
        "sweep: {points} points ({reused} reused, {} computed, {failed} failed)\nwrote sweep.csv, {manifest_name}",
        todo.len()
    );
    Ok(RunOutput {
        files: vec![
            ("sweep.csv".to_string(), csv.into_bytes()),
            (manifest_name.to_string(), manifest.into_bytes()),
        ],
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::EnsembleParams;

    fn base_config_value() -> Value {
        serde_json::json!({
            "mode": "dimensionless",
            "params": {
                "g_c": 1.0,
                "g_m": 2e-5,
                "delta": 0.0,
                "ensembles": [{ "n_s": 1_000_000u64, "delta": 1.0 }]
            },
            "truncation": { "n_max": 2, "k_max": 2, "total_excitation_max": 2 }
        })
    }

    fn config_from(value: Value) -> RunConfig {
        serde_json::from_value(value).expect("config parses")
    }

    #[test]
    fn format_float_round_trips_exactly() {
        for &x in &[0.0, 0.1, -3.5, 1e-300, 2.0f64.sqrt(), 6.02e23, f64::MIN_POSITIVE] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_float(f64::NAN), "nan");
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn json_writer_sorts_keys_and_keeps_integer_types() {
        let v = serde_json::json!({"b": 2u64, "a": [1.5, 1u64], "c": {"y": true, "x": null}});
        assert_eq!(
            render_json_compact(&v),
            r#"{"a":[1.5000000000000000e0,1],"b":2,"c":{"x":null,"y":true}}"#
        );
        let pretty = render_json(&v);
        assert!(pretty.starts_with("{\n  \"a\": [\n"));
        assert!(pretty.ends_with("}\n"));
    }

    #[test]
    fn csv_fields_follow_quoting_rules() {
        assert_eq!(csv_row(&["a".into(), "b,c".into(), "d\"e".into()]), "a,\"b,c\",\"d\"\"e\"\n");
    }

    #[test]
    fn set_path_overrides_nested_and_indexed_values() {
        let mut v = base_config_value();
        set_path(&mut v, "params.g_m", serde_json::json!(1e-4)).unwrap();
        set_path(&mut v, "params.ensembles.0.n_s", serde_json::json!(4u64)).unwrap();
        set_path(&mut v, "spectrum.embedded", serde_json::json!(true)).unwrap();
        assert_eq!(v["params"]["g_m"], serde_json::json!(1e-4));
        assert_eq!(v["params"]["ensembles"][0]["n_s"], serde_json::json!(4));
        assert_eq!(v["spectrum"]["embedded"], serde_json::json!(true));

        let err = set_path(&mut v, "params.ensembles.3.n_s", serde_json::json!(1)).unwrap_err();
        assert!(err.to_string().contains("out of range"));
        let err = set_path(&mut v, "params.g_m.deep", serde_json::json!(1)).unwrap_err();
        assert!(err.to_string().contains("non-object"));
    }

    #[test]
    fn apply_set_parses_numbers_and_falls_back_to_strings() {
        let mut v = base_config_value();
        apply_set(&mut v, "params.delta=12.5").unwrap();
        assert_eq!(v["params"]["delta"], serde_json::json!(12.5));
        apply_set(&mut v, "mode=si").unwrap();
        assert_eq!(v["mode"], serde_json::json!("si"));
        assert!(apply_set(&mut v, "no_equals_sign").is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys_and_accepts_si_alias() {
        let mut v = base_config_value();
        v["unexpected"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());

        for mode in ["si", "SI", "dimensionless"] {
            let mut v = base_config_value();
            v["mode"] = serde_json::json!(mode);
            assert!(serde_json::from_value::<RunConfig>(v).is_ok(), "mode {mode}");
        }
        let mut v = base_config_value();
        v["mode"] = serde_json::json!("natural");
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn estimate_requires_si_mode_and_omega_c() {
        let mut v = base_config_value();
        v["estimate"] = serde_json::json!({
            "mode_volume_m3": 1e-12,
            "dopant_density_per_cm3": 1e12,
            "sample_thickness_m": 1e-4,
            "sample_width_m": 1e-3,
            "sample_length_m": 1e-3
        });
        let config = config_from(v.clone());
        let err = cmd_estimate(&config).unwrap_err();
        assert!(err.to_string().contains("si"), "{err}");

        v["mode"] = serde_json::json!("si");
        let config = config_from(v.clone());
        let err = cmd_estimate(&config).unwrap_err();
        assert!(err.to_string().contains("omega_c"), "{err}");

        v["params"]["omega_c"] = serde_json::json!(6.2832e10);
        v["params"]["g_c"] = serde_json::json!(5.0e9);
        v["params"]["g_m"] = serde_json::json!(1.0e3);
        v["params"]["delta"] = serde_json::json!(1.0e9);
        v["params"]["ensembles"][0]["delta"] = serde_json::json!(1.0e9);
        v["estimate"]["temperature_k"] = serde_json::json!(0.05);
        let config = config_from(v);
        let out = cmd_estimate(&config).unwrap();
        assert_eq!(out.files.len(), 1);
        let report: Value =
            serde_json::from_slice(&out.files[0].1).expect("estimate JSON parses");
        assert_eq!(report["spin_count"], serde_json::json!(100_000_000u64));
        assert!(report["g_m_same_order_as_reference"].as_bool().unwrap());
        let n_th = report["thermal_occupation"].as_f64().unwrap();
        assert!(n_th > 0.0 && n_th < 0.05, "n_th = {n_th}");
        assert!(out.summary.contains("spin count N_s = 100000000"));
    }

    #[test]
    fn spectrum_outputs_expected_files() {
        let mut v = base_config_value();
        v["spectrum"] = serde_json::json!({
            "embedded": true, "dump_basis": true, "dump_hamiltonian": true, "eigenvectors": true
        });
        let out = cmd_spectrum(&config_from(v)).unwrap();
        let names: Vec<&str> = out.files.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [
                "spectrum.csv",
                "anharmonicity.json",
                "embedded_report.json",
                "basis.json",
                "hamiltonian.coo",
                "eigenvectors.json"
            ]
        );
        let csv = std::str::from_utf8(&out.files[0].1).unwrap();
        assert!(csv.starts_with("block,index,eigenvalue\n"));
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,"));
        let coo = std::str::from_utf8(&out.files[4].1).unwrap();
        let header: Vec<&str> = coo.lines().next().unwrap().split(' ').collect();
        assert_eq!(header[2], "1", "hermitian flag");
    }

    #[test]
    fn dynamics_rejects_degenerate_grids_and_unknown_observables() {
        let mut v = base_config_value();
        v["dynamics"] = serde_json::json!({
            "initial_state": { "transmon": 1, "photons": 0, "k": [0] },
            "t_end": 1.0,
            "samples": 1
        });
        let err = cmd_dynamics(&config_from(v.clone())).unwrap_err();
        assert!(err.to_string().contains("samples"), "{err}");

        v["dynamics"]["samples"] = serde_json::json!(11);
        v["dynamics"]["observables"] = serde_json::json!(["bogus"]);
        let err = cmd_dynamics(&config_from(v)).unwrap_err();
        assert!(err.to_string().contains("unknown observable"), "{err}");
    }

    #[test]
    fn dynamics_records_requested_columns() {
        let mut v = base_config_value();
        v["params"]["g_m"] = serde_json::json!(0.0);
        v["dynamics"] = serde_json::json!({
            "initial_state": { "transmon": 1, "photons": 0, "k": [0] },
            "t_end": 3.0,
            "samples": 31,
            "observables": ["photon_number", "transmon_excited"]
        });
        let out = cmd_dynamics(&config_from(v)).unwrap();
        let csv = std::str::from_utf8(&out.files[0].1).unwrap();
        assert!(csv.starts_with("t,photon_number,transmon_excited\n"));
        // Vacuum Rabi at delta = 0: photon population sin^2(g_c t).
        let row: Vec<&str> = csv.lines().nth(10).unwrap().split(',').collect();
        let t: f64 = row[0].parse().unwrap();
        let n: f64 = row[1].parse().unwrap();
        assert!((n - t.sin().powi(2)).abs() < 1e-8, "t = {t}, n = {n}");
        let meta = std::str::from_utf8(&out.files[1].1).unwrap();
        assert!(meta.contains("\"method\": \"unitary\""));
        assert!(meta.contains(&format!("\"version\": \"{}\"", version_string())));
    }

    #[test]
    fn sweep_axes_expand_and_cap() {
        let lin = expand_axis(&SweepAxis {
            path: "params.delta".into(),
            values: AxisValues::Range { start: 0.0, stop: 1.0, count: 5, log: false },
        })
        .unwrap();
        assert_eq!(lin.len(), 5);
        assert_eq!(lin[0], serde_json::json!(0u64));
        assert_eq!(lin[2], serde_json::json!(0.5));

        let log = expand_axis(&SweepAxis {
            path: "params.g_m".into(),
            values: AxisValues::Range { start: 1e-6, stop: 1e-2, count: 5, log: true },
        })
        .unwrap();
        assert!((log[1].as_f64().unwrap() - 1e-5).abs() < 1e-18);

        let err = expand_axis(&SweepAxis {
            path: "params.g_m".into(),
            values: AxisValues::Range { start: 0.0, stop: 1.0, count: 3, log: true },
        })
        .unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
    }

    #[test]
    fn sweep_metrics_cover_the_menu_and_reject_strays() {
        let params = SystemParams::default_dimensionless();
        let trunc = SpaceTruncation { n_max: 2, k_max: 2, total_excitation_max: Some(2) };
        for name in SWEEP_METRICS {
            if *name == "g_eff" {
                // Needs delta != 0; covered below.
                continue;
            }
            eval_metric(name, &params, &trunc).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        let mut detuned = params.clone();
        detuned.delta = 10.0;
        detuned.ensembles = vec![EnsembleParams { n_s: 1_000_000, delta: 10.1 }];
        let g_eff = eval_metric("g_eff", &detuned, &trunc).unwrap();
        assert!((g_eff - detuned.g_c * 0.02 / 10.1).abs() < 1e-12);
        assert!(eval_metric("nope", &params, &trunc).is_err());
    }

    #[test]
    fn sweep_runs_resume_and_stay_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = base_config_value();
        v["sweep"] = serde_json::json!({
            "axes": [{ "path": "params.g_m", "values": [1e-5, 2e-5, -1.0, 4e-5] }],
            "outputs": ["collective_coupling", "splitting"]
        });
        let config = config_from(v.clone());
        let out = cmd_sweep(&v, &config, dir.path()).unwrap();
        let csv = std::str::from_utf8(&out.files[0].1).unwrap();
        assert!(csv.starts_with("index,params.g_m,collective_coupling,splitting,error\n"));
        assert_eq!(csv.lines().count(), 5);
        // The negative coupling fails validation but the sweep continues.
        let bad: Vec<&str> = csv.lines().nth(3).unwrap().splitn(5, ',').collect();
        assert_eq!(bad[2], "");
        assert!(!bad[4].is_empty());
        let good: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        let g: f64 = good[2].parse().unwrap();
        assert!((g - 0.02).abs() < 1e-15);

        // A completed manifest is fully reused and the rewrite is identical.
        let manifest_bytes = fs::read(dir.path().join("sweep_manifest.jsonl")).unwrap();
        let again = cmd_sweep(&v, &config, dir.path()).unwrap();
        assert!(again.summary.contains("4 reused, 0 computed"));
        assert_eq!(again.files[0].1, out.files[0].1);
        assert_eq!(again.files[1].1, manifest_bytes);

        // A truncated manifest (interrupted run) resumes to the same bytes.
        let text = String::from_utf8(manifest_bytes.clone()).unwrap();
        let partial: String =
            text.lines().take(3).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join("sweep_manifest.jsonl"), partial).unwrap();
        let resumed = cmd_sweep(&v, &config, dir.path()).unwrap();
        assert!(resumed.summary.contains("2 reused, 2 computed"));
        assert_eq!(resumed.files[0].1, out.files[0].1);
        assert_eq!(resumed.files[1].1, manifest_bytes);

        // A foreign manifest header is ignored, not trusted.
        fs::write(dir.path().join("sweep_manifest.jsonl"), "{\"axes\":[\"other\"]}\n").unwrap();
        let fresh = cmd_sweep(&v, &config, dir.path()).unwrap();
        assert!(fresh.summary.contains("0 reused, 4 computed"));
        assert_eq!(fresh.files[1].1, manifest_bytes);
    }

    #[test]
    fn sweep_rejects_oversized_grids_and_unknown_outputs() {
        let mut v = base_config_value();
        v["sweep"] = serde_json::json!({
            "axes": [
                { "path": "params.delta", "values": { "start": 0.0, "stop": 1.0, "count": 400 } },
                { "path": "params.g_m", "values": { "start": 1e-6, "stop": 1e-5, "count": 400 } }
            ],
            "outputs": ["collective_coupling"]
        });
        let config = config_from(v.clone());
        let err = cmd_sweep(&v, &config, Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(err, Error::SizeCap(_)), "{err}");

        let mut v = base_config_value();
        v["sweep"] = serde_json::json!({
            "axes": [{ "path": "params.delta", "values": [0.0] }],
            "outputs": ["made_up"]
        });
        let config = config_from(v.clone());
        let err = cmd_sweep(&v, &config, Path::new("/nonexistent")).unwrap_err();
        assert!(err.to_string().contains("unknown sweep output"), "{err}");
    }

    #[test]
    fn multi_index_is_row_major_with_last_axis_fastest() {
        let dims = [2, 3];
        let seq: Vec<Vec<usize>> = (0..6).map(|i| multi_index(i, &dims)).collect();
        assert_eq!(seq[0], vec![0, 0]);
        assert_eq!(seq[1], vec![0, 1]);
        assert_eq!(seq[3], vec![1, 0]);
        assert_eq!(seq[5], vec![1, 2]);
    }
}
