use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sqz_core::gaussian::FrequencyGrid;
use sqz_core::netlist::{
    self, Circuit, NetlistDocument, OracleOptions, OutputFormat, RunOptions, SweepAxis,
    DEFAULT_ORACLE_SAMPLES, ORACLE_GATE_SIGMA,
};
use sqz_core::oracle::{sample_stokes, SampleConfig, SamplingMode};
use sqz_core::stokes::{classify_ellipsoid, stokes_stats_at, stokes_variances_at};

const EXIT_DIAGNOSTICS: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "sqz", version, about = "Polarization squeezing simulator")]
struct Cli {
    /// Seed for every Monte-Carlo stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory. `run` defaults to `out`; other commands print to
    /// stdout unless this is given.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Linearized,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Check a netlist and report diagnostics.
    Parse {
        file: PathBuf,
        /// Print the canonical formatting of the netlist.
        #[arg(long)]
        fmt: bool,
    },
    /// Evaluate every output statement and write the artifacts.
    Run {
        file: PathBuf,
        /// Add Monte-Carlo verification columns and a 5-sigma gate.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = DEFAULT_ORACLE_SAMPLES)]
        oracle_samples: u64,
    },
    /// Stokes statistics against the relative phase of the pbs_combine.
    Sweep {
        file: PathBuf,
        #[arg(long, default_value_t = 256)]
        points: usize,
        /// Sideband frequency, e.g. `5MHz`. Defaults to the first grid point.
        #[arg(long)]
        frequency: Option<String>,
        /// State to analyse. Defaults to the last two-mode state.
        #[arg(long)]
        state: Option<String>,
    },
    /// Monte-Carlo estimate of the Stokes statistics at one frequency.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, value_enum, default_value_t = Mode::Linearized)]
        mode: Mode,
        #[arg(long)]
        frequency: Option<String>,
        #[arg(long)]
        state: Option<String>,
    },
    /// Noise ellipsoid on the Poincare sphere (always JSON).
    Ellipsoid {
        file: PathBuf,
        #[arg(long)]
        frequency: Option<String>,
        #[arg(long)]
        state: Option<String>,
    },
}

enum Failure {
    Diagnostics,
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(file: &Path) -> Result<NetlistDocument, Failure> {
    let text = fs::read_to_string(file)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
    match netlist::parse(&text) {
        Ok((doc, warnings)) => {
            for w in warnings {
                eprintln!("{}:{w}", file.display());
            }
            Ok(doc)
        }
        Err(diagnostics) => {
            for d in diagnostics {
                eprintln!("{}:{d}", file.display());
            }
            Err(Failure::Diagnostics)
        }
    }
}

fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn frequency(raw: Option<&str>, circuit: &Circuit) -> Result<f64, Failure> {
    match raw {
        Some(r) => netlist::parse_frequency(r)
            .ok_or_else(|| Failure::Runtime(format!("invalid frequency '{r}'"))),
        None => Ok(circuit.grid().as_slice()[0]),
    }
}

fn state_name<'a>(requested: Option<&'a str>, circuit: &Circuit<'a>) -> Result<&'a str, Failure> {
    requested
        .or_else(|| circuit.primary_state())
        .ok_or_else(|| {
            Failure::Runtime("the netlist has no two-mode state (add a pbs_combine)".into())
        })
}

/// Writes to `<out_dir>/<stem>.<ext>` when an output directory is set, else stdout.
fn emit(out_dir: Option<&Path>, stem: &str, ext: &str, body: &[u8]) -> Result<(), Failure> {
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{stem}.{ext}"));
            fs::write(&path, body)?;
            eprintln!("wrote {}", path.display());
        }
        None => io::stdout().write_all(body)?,
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let format: OutputFormat = cli.format.into();
    let out_dir = cli.out_dir.as_deref();
    match &cli.command {
        Command::Parse { file, fmt } => {
            let doc = load(file)?;
            if *fmt {
                print!("{}", netlist::format(&doc));
            }
        }
        Command::Run {
            file,
            oracle,
            oracle_samples,
        } => {
            let doc = load(file)?;
            let options = RunOptions {
                out_dir: out_dir.map_or_else(|| PathBuf::from("out"), Path::to_path_buf),
                base_dir: base_dir(file),
                seed: cli.seed,
                format,
                oracle: oracle.then_some(OracleOptions {
                    samples: *oracle_samples,
                }),
            };
            let report = netlist::run(&doc, &options)?;
            for path in &report.outputs {
                eprintln!("wrote {}", options.out_dir.join(path).display());
            }
            if !report.oracle_failures.is_empty() {
                return Err(Failure::Runtime(format!(
                    "oracle gate ({ORACLE_GATE_SIGMA} sigma) failed for: {}",
                    report.oracle_failures.join(", ")
                )));
            }
        }
        Command::Sweep {
            file,
            points,
            frequency: f,
            state,
        } => {
            let doc = load(file)?;
            let circuit = Circuit::new(&doc, &base_dir(file))?;
            let name = state_name(state.as_deref(), &circuit)?;
            let f = frequency(f.as_deref(), &circuit)?;
            if *points == 0 {
                return Err(Failure::Runtime("--points must be >= 1".into()));
            }
            let axis = SweepAxis::Theta {
                start: 0.0,
                stop: std::f64::consts::TAU,
                points: *points,
                at_hz: Some(f),
            };
            let rows = netlist::sweep_theta(&circuit, name, &axis.thetas(), f)?;
            let mut body = Vec::new();
            netlist::write_sweep(&mut body, "theta_rad", &rows, format)?;
            emit(out_dir, "sweep", format.extension(), &body)?;
        }
        Command::Oracle {
            file,
            samples,
            mode,
            frequency: f,
            state,
        } => {
            let doc = load(file)?;
            let circuit = Circuit::new(&doc, &base_dir(file))?;
            let name = state_name(state.as_deref(), &circuit)?;
            let grid = FrequencyGrid::single(frequency(f.as_deref(), &circuit)?)?;
            let st = circuit.state(name, &grid, None)?;
            let mode = match mode {
                Mode::Linearized => SamplingMode::Linearized,
                Mode::Full => SamplingMode::FullQuadratic,
            };
            let report = sample_stokes(&st, 0, &SampleConfig::new(*samples, cli.seed, mode)?)?;
            let analytic = stokes_variances_at(&st, 0);
            let z = report.variance_z_scores(&analytic);
            let body = match format {
                OutputFormat::Json => {
                    let mut s = serde_json::to_string_pretty(&report)?;
                    s.push('\n');
                    s.into_bytes()
                }
                OutputFormat::Csv => {
                    let mut s = String::from(
                        "stokes,mean,variance,mean_stderr,variance_stderr,analytic_variance,z\n",
                    );
                    for j in 0..4 {
                        s.push_str(&format!(
                            "S{j},{},{},{},{},{},{:.2}\n",
                            report.means[j],
                            report.variances[j],
                            report.std_errors.means[j],
                            report.std_errors.variances[j],
                            analytic[j],
                            z[j]
                        ));
                    }
                    s.into_bytes()
                }
            };
            emit(out_dir, "oracle", format.extension(), &body)?;
            if mode == SamplingMode::Linearized && z.iter().any(|z| *z > ORACLE_GATE_SIGMA) {
                return Err(Failure::Runtime(format!(
                    "oracle disagrees with the analytic variances beyond {ORACLE_GATE_SIGMA} sigma: z = {z:.2?}"
                )));
            }
        }
        Command::Ellipsoid {
            file,
            frequency: f,
            state,
        } => {
            let doc = load(file)?;
            let circuit = Circuit::new(&doc, &base_dir(file))?;
            let name = state_name(state.as_deref(), &circuit)?;
            let grid = FrequencyGrid::single(frequency(f.as_deref(), &circuit)?)?;
            let st = circuit.state(name, &grid, None)?;
            let ellipsoid = classify_ellipsoid(&stokes_stats_at(&st, 0))?;
            let mut body = serde_json::to_string_pretty(&ellipsoid)?;
            body.push('\n');
            emit(out_dir, "ellipsoid", "json", body.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Diagnostics) => ExitCode::from(EXIT_DIAGNOSTICS),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
