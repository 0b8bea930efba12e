use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::*;
use crate::apparatus::{combine_on_pbs, measure, stokes_rotation, DetectionSetup};
use crate::error::{domain, Error, Result};
use crate::gaussian::{
    add_correlated_classical_noise, apply_element, make_coherent, make_squeezed, BeamMode,
    FrequencyGrid, SpectrumTable, SymplecticElement, TwoModeState,
};
use crate::oracle::{sample_measurement, SampleConfig, SamplingMode, RNG_ALGORITHM};
use crate::spectra::write_stokes_csv;
use crate::stokes::{classify_ellipsoid, stokes_stats, stokes_stats_at, StokesStats};

/// Grid used when a netlist has no `grid` statement: 3-10 MHz, 71 points.
pub const DEFAULT_GRID: (f64, f64, usize) = (3e6, 10e6, 71);
pub const DEFAULT_ORACLE_SAMPLES: u64 = 100_000;
/// Oracle gate: analytic and sampled variances must agree within this many
/// standard errors.
pub const ORACLE_GATE_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleOptions {
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Directory that relative `table` paths are resolved against.
    pub base_dir: PathBuf,
    pub seed: u64,
    pub format: OutputFormat,
    pub oracle: Option<OracleOptions>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Beam(BeamMode),
    State(TwoModeState),
}

/// A validated document bound to its external inputs, buildable on any grid.
pub struct Circuit<'a> {
    doc: &'a NetlistDocument,
    tables: HashMap<String, BeamMode>,
}

impl<'a> Circuit<'a> {
    pub fn new(doc: &'a NetlistDocument, base_dir: &Path) -> Result<Self> {
        let mut tables = HashMap::new();
        for s in doc.statements() {
            if let Element::Table { file, power } = &s.element {
                let path = base_dir.join(file);
                let mode = SpectrumTable::from_path(&path)
                    .and_then(|t| t.into_mode(power.sqrt()))
                    .map_err(|e| e.at_line(s.line))?;
                tables.insert(s.name.clone(), mode);
            }
        }
        Ok(Circuit { doc, tables })
    }

    pub fn document(&self) -> &'a NetlistDocument {
        self.doc
    }

    pub fn grid(&self) -> FrequencyGrid {
        let (start, stop, points) = self
            .doc
            .statements()
            .find_map(|s| match s.element {
                Element::Grid {
                    start_hz,
                    stop_hz,
                    points,
                } => Some((start_hz, stop_hz, points)),
                _ => None,
            })
            .unwrap_or(DEFAULT_GRID);
        FrequencyGrid::linspace(start, stop, points).expect("grid validated by the parser")
    }

    /// Name of the last statement producing a two-mode state.
    pub fn primary_state(&self) -> Option<&'a str> {
        let mut kinds: HashMap<&str, bool> = HashMap::new();
        let mut last = None;
        for s in self.doc.statements() {
            let is_state = match &s.element {
                Element::PbsCombine { .. }
                | Element::Waveplate { .. }
                | Element::Phase { .. }
                | Element::CorrelatedNoise { .. } => true,
                Element::Loss { input, .. } => kinds.get(input.as_str()).copied().unwrap_or(false),
                _ => false,
            };
            kinds.insert(&s.name, is_state);
            if is_state {
                last = Some(s.name.as_str());
            }
        }
        last
    }

    /// Evaluates every source and element on `grid`. `theta` overrides the
    /// relative phase of the `pbs_combine`.
    pub fn build(&self, grid: &FrequencyGrid, theta: Option<f64>) -> Result<HashMap<String, Node>> {
        let mut nodes: HashMap<String, Node> = HashMap::new();
        for s in self.doc.statements() {
            let node = self
                .evaluate(s, grid, theta, &nodes)
                .map_err(|e| e.at_line(s.line))?;
            if let Some(node) = node {
                nodes.insert(s.name.clone(), node);
            }
        }
        Ok(nodes)
    }

    fn evaluate(
        &self,
        s: &Statement,
        grid: &FrequencyGrid,
        theta_override: Option<f64>,
        nodes: &HashMap<String, Node>,
    ) -> Result<Option<Node>> {
        let beam = |name: &str| match nodes.get(name) {
            Some(Node::Beam(b)) => Ok(b),
            _ => Err(domain(format!("'{name}' is not a beam"))),
        };
        let state = |name: &str| match nodes.get(name) {
            Some(Node::State(st)) => Ok(st),
            _ => Err(domain(format!("'{name}' is not a two-mode state"))),
        };
        let node = match &s.element {
            Element::Coherent { power } => Node::Beam(make_coherent(power.sqrt(), grid)?),
            Element::Squeezer { quad, model, power } => {
                Node::Beam(make_squeezed(power.sqrt(), *quad, model, grid)?)
            }
            Element::Table { .. } => Node::Beam(self.tables[&s.name].resampled(grid)),
            Element::Loss { input, eta } => match nodes.get(input.as_str()) {
                Some(Node::Beam(b)) => Node::Beam(b.attenuate(*eta)?),
                Some(Node::State(st)) => {
                    Node::State(apply_element(st, &SymplecticElement::loss(*eta)?)?)
                }
                None => return Err(domain(format!("'{input}' is not defined"))),
            },
            Element::PbsCombine { h, v, theta } => Node::State(combine_on_pbs(
                beam(h)?,
                beam(v)?,
                theta_override.unwrap_or(*theta),
            )?),
            Element::Waveplate { input, plate } => {
                Node::State(stokes_rotation(state(input)?, plate)?)
            }
            Element::Phase { input, shift } => Node::State(apply_element(
                state(input)?,
                &SymplecticElement::phase_shift(0.0, *shift),
            )?),
            Element::CorrelatedNoise {
                input,
                quad,
                excess,
                correlation,
            } => Node::State(add_correlated_classical_noise(
                state(input)?,
                *quad,
                *excess,
                *correlation,
            )?),
            Element::Grid { .. }
            | Element::Measure { .. }
            | Element::Ellipsoid { .. }
            | Element::Sweep { .. } => return Ok(None),
        };
        Ok(Some(node))
    }

    pub fn state(
        &self,
        name: &str,
        grid: &FrequencyGrid,
        theta: Option<f64>,
    ) -> Result<TwoModeState> {
        match self.build(grid, theta)?.remove(name) {
            Some(Node::State(s)) => Ok(s),
            _ => Err(domain(format!("'{name}' is not a two-mode state"))),
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    /// Relative phase in radians, or frequency in Hz.
    pub parameter: f64,
    pub stats: StokesStats,
}

/// Stokes statistics of `state_name` at one frequency as the relative phase of
/// the `pbs_combine` runs over `thetas`.
pub fn sweep_theta(
    circuit: &Circuit,
    state_name: &str,
    thetas: &[f64],
    frequency_hz: f64,
) -> Result<Vec<SweepRow>> {
    let grid = FrequencyGrid::single(frequency_hz)?;
    thetas
        .par_iter()
        .map(|&theta| {
            let state = circuit.state(state_name, &grid, Some(theta))?;
            Ok(SweepRow {
                parameter: theta,
                stats: stokes_stats_at(&state, 0),
            })
        })
        .collect()
}

pub fn sweep_frequency(
    circuit: &Circuit,
    state_name: &str,
    grid: &FrequencyGrid,
) -> Result<Vec<SweepRow>> {
    let state = circuit.state(state_name, grid, None)?;
    Ok(stokes_stats(&state)
        .into_iter()
        .map(|stats| SweepRow {
            parameter: stats.frequency_hz,
            stats,
        })
        .collect())
}

/// Writes a sweep table. CSV columns: parameter, `s0..s3`, `v0..v3`, `shot_noise`.
pub fn write_sweep<W: Write>(
    writer: W,
    parameter: &str,
    rows: &[SweepRow],
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record([
                parameter,
                "s0",
                "s1",
                "s2",
                "s3",
                "v0",
                "v1",
                "v2",
                "v3",
                "shot_noise",
            ])?;
            for row in rows {
                let mut record = vec![row.parameter.to_string()];
                record.extend(row.stats.means.iter().map(f64::to_string));
                record.extend(row.stats.variances.iter().map(f64::to_string));
                record.push(row.stats.shot_noise.to_string());
                w.write_record(&record)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let records: Vec<_> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        parameter: r.parameter,
                        "means": r.stats.means,
                        "variances": r.stats.variances,
                        "shot_noise": r.stats.shot_noise,
                    })
                })
                .collect();
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, &records)?;
            writeln!(writer)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OracleColumn {
    variance: Vec<f64>,
    std_error: Vec<f64>,
    z: Vec<f64>,
    pass: Vec<bool>,
    samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MeasurementRecord {
    name: String,
    setup: String,
    eta: f64,
    shot_noise: f64,
    frequencies: Vec<f64>,
    variance: Vec<f64>,
    v_db: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleColumn>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    /// Files written, relative to the output directory, in write order.
    pub outputs: Vec<PathBuf>,
    /// Measurements with at least one frequency outside the oracle gate.
    pub oracle_failures: Vec<String>,
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Seed for oracle point `index` of measurement number `measurement`.
fn point_seed(seed: u64, measurement: usize, index: usize) -> u64 {
    seed.wrapping_add((measurement as u64) << 32)
        .wrapping_add(index as u64)
}

fn oracle_column(
    state: &TwoModeState,
    setup: &DetectionSetup,
    analytic: &[f64],
    seed: u64,
    measurement: usize,
    samples: u64,
) -> Result<OracleColumn> {
    let estimates: Vec<_> = (0..analytic.len())
        .into_par_iter()
        .map(|i| {
            let cfg = SampleConfig::new(
                samples,
                point_seed(seed, measurement, i),
                SamplingMode::Linearized,
            )?;
            sample_measurement(state, setup, i, &cfg)
        })
        .collect::<Result<_>>()?;
    let z: Vec<f64> = estimates
        .iter()
        .zip(analytic)
        .map(|(e, a)| (e.variance - a).abs() / e.variance_std_error)
        .collect();
    Ok(OracleColumn {
        variance: estimates.iter().map(|e| e.variance).collect(),
        std_error: estimates.iter().map(|e| e.variance_std_error).collect(),
        pass: z.iter().map(|z| *z <= ORACLE_GATE_SIGMA).collect(),
        z,
        samples,
    })
}

fn write_measurement(path: &Path, record: &MeasurementRecord, format: OutputFormat) -> Result<()> {
    let mut out = create(path)?;
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            let mut header = vec!["freq_hz", "v_db"];
            if record.oracle.is_some() {
                header.extend(["mc_v_db", "mc_stderr_db", "z", "pass"]);
            }
            w.write_record(&header)?;
            for (i, f) in record.frequencies.iter().enumerate() {
                let mut row = vec![f.to_string(), format!("{:.3}", record.v_db[i])];
                if let Some(o) = &record.oracle {
                    let stderr_db = 10.0 / std::f64::consts::LN_10 * o.std_error[i] / o.variance[i];
                    row.extend([
                        format!("{:.3}", db(o.variance[i] / record.shot_noise)),
                        format!("{stderr_db:.3}"),
                        format!("{:.2}", o.z[i]),
                        o.pass[i].to_string(),
                    ]);
                }
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, record)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Evaluates every output statement and writes the artifacts plus
/// `manifest.json` into `options.out_dir`.
pub fn run(doc: &NetlistDocument, options: &RunOptions) -> Result<RunReport> {
    let circuit = Circuit::new(doc, &options.base_dir)?;
    let grid = circuit.grid();
    let nodes = circuit.build(&grid, None)?;
    let ext = options.format.extension();
    let mut report = RunReport::default();
    let mut measurements = 0usize;
    fs::create_dir_all(&options.out_dir)?;

    let state_of = |name: &str| match nodes.get(name) {
        Some(Node::State(s)) => Ok(s),
        _ => Err(domain(format!("'{name}' is not a two-mode state"))),
    };

    for s in doc.statements() {
        let at = |e: Error| e.at_line(s.line);
        match &s.element {
            Element::Measure {
                input,
                setup,
                out,
                eta,
            } => {
                let state = state_of(input).map_err(at)?;
                let detection = DetectionSetup::canonical(*setup)
                    .with_efficiency(*eta)
                    .map_err(at)?;
                let stats = measure(&detection, state).map_err(at)?;
                let shot = eta * state.photon_number();
                let oracle = match options.oracle {
                    Some(o) => Some(
                        oracle_column(
                            state,
                            &detection,
                            &stats.fluctuation_variance,
                            options.seed,
                            measurements,
                            o.samples,
                        )
                        .map_err(at)?,
                    ),
                    None => None,
                };
                measurements += 1;
                let record = MeasurementRecord {
                    name: s.name.clone(),
                    setup: setup.to_string(),
                    eta: *eta,
                    shot_noise: shot,
                    frequencies: stats.frequencies.clone(),
                    v_db: stats
                        .fluctuation_variance
                        .iter()
                        .map(|v| db(v / shot))
                        .collect(),
                    variance: stats.fluctuation_variance,
                    oracle,
                };
                if record
                    .oracle
                    .as_ref()
                    .is_some_and(|o| o.pass.iter().any(|p| !p))
                {
                    report.oracle_failures.push(s.name.clone());
                }
                let rel = PathBuf::from(out.clone().unwrap_or_else(|| format!("{}.{ext}", s.name)));
                write_measurement(&options.out_dir.join(&rel), &record, options.format)
                    .map_err(at)?;
                report.outputs.push(rel);
            }
            Element::Ellipsoid {
                input,
                frequency_hz,
            } => {
                let single = FrequencyGrid::single(*frequency_hz).map_err(at)?;
                let state = circuit.state(input, &single, None)?;
                let ellipsoid = classify_ellipsoid(&stokes_stats_at(&state, 0)).map_err(at)?;
                let rel = PathBuf::from(format!("{}.json", s.name));
                let mut out = create(&options.out_dir.join(&rel))?;
                serde_json::to_writer_pretty(&mut out, &ellipsoid)?;
                writeln!(out)?;
                out.flush()?;
                report.outputs.push(rel);
            }
            Element::Sweep { input, axis } => {
                let (label, rows) = match axis {
                    SweepAxis::Theta { at_hz, .. } => {
                        let f = at_hz.unwrap_or(grid.as_slice()[0]);
                        (
                            "theta_rad",
                            sweep_theta(&circuit, input, &axis.thetas(), f)?,
                        )
                    }
                    SweepAxis::Frequency {
                        start_hz,
                        stop_hz,
                        points,
                    } => {
                        let g =
                            FrequencyGrid::linspace(*start_hz, *stop_hz, *points).map_err(at)?;
                        ("freq_hz", sweep_frequency(&circuit, input, &g)?)
                    }
                };
                let rel = PathBuf::from(format!("{}.{ext}", s.name));
                let mut out = create(&options.out_dir.join(&rel))?;
                write_sweep(&mut out, label, &rows, options.format)?;
                out.flush()?;
                report.outputs.push(rel);
            }
            _ => {}
        }
    }

    if let Some(name) = circuit.primary_state() {
        let state = state_of(name)?;
        let stats = stokes_stats(state);
        let rel = PathBuf::from(format!("stokes.{ext}"));
        let mut out = create(&options.out_dir.join(&rel))?;
        match options.format {
            OutputFormat::Csv => {
                let dbs: Vec<[f64; 4]> = stats.iter().map(|s| s.variances_db()).collect();
                write_stokes_csv(&mut out, grid.as_slice(), &dbs)?;
            }
            OutputFormat::Json => {
                serde_json::to_writer_pretty(
                    &mut out,
                    &serde_json::json!({ "state": name, "stats": stats }),
                )?;
                writeln!(out)?;
            }
        }
        out.flush()?;
        report.outputs.push(rel);
    }

    let canonical = format(doc);
    let manifest = serde_json::json!({
        "tool": "sqz",
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hex(&Sha256::digest(canonical.as_bytes())),
        "seed": options.seed,
        "rng": RNG_ALGORITHM,
        "format": options.format,
        "oracle_samples": options.oracle.map(|o| o.samples),
        "grid": { "start_hz": grid.as_slice()[0], "stop_hz": grid.as_slice()[grid.len() - 1], "points": grid.len() },
        "outputs": report.outputs,
        "oracle_failures": report.oracle_failures,
    });
    let mut out = create(&options.out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    writeln!(out)?;
    out.flush()?;
    Ok(report)
}
