//! Optical-circuit netlists: a line-oriented scenario language.
//!
//! ```text
//! grid band start=3MHz stop=10MHz points=71
//! squeezer a quad=amplitude v0=0.5 power=1e6
//! squeezer b quad=amplitude v0=0.5 power=1e6
//! pbs_combine beam h=a v=b theta=90deg
//! measure v2 in=beam setup=S2
//! ```
//!
//! Each statement is `keyword name key=value...`. `#` starts a comment.
//! `sweep` is the only block statement. The grammar is documented in
//! `docs/netlist.md`.

mod format;
mod parse;
mod run;

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::apparatus::{StokesSetup, WavePlate};
use crate::gaussian::{Correlation, Quadrature, SqueezeSpectrum};

pub use format::format;
pub use parse::{parse, parse_frequency};
pub use run::{
    run, sweep_frequency, sweep_theta, write_sweep, Circuit, Node, OracleOptions, OutputFormat,
    RunOptions, RunReport, SweepRow, DEFAULT_GRID, DEFAULT_ORACLE_SAMPLES, ORACLE_GATE_SIGMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Diagnostic codes. Every code is exercised by the parser corpus.
pub mod codes {
    pub const UNKNOWN_KEYWORD: &str = "E001";
    pub const UNKNOWN_ARGUMENT: &str = "E002";
    pub const DUPLICATE_NAME: &str = "E003";
    pub const FORWARD_REFERENCE: &str = "E004";
    pub const MALFORMED_NUMBER: &str = "E005";
    pub const MISSING_ARGUMENT: &str = "E006";
    pub const INVALID_VALUE: &str = "E007";
    pub const REPEATED_SINGLETON: &str = "E008";
    pub const BLOCK_STRUCTURE: &str = "E009";
    pub const DUPLICATE_ARGUMENT: &str = "E010";
    pub const SYNTAX: &str = "E011";
    pub const UNDEFINED_NAME: &str = "E012";
    pub const CONFLICTING_ARGUMENTS: &str = "E013";
    pub const NOTHING_TO_SIMULATE: &str = "W001";

    pub const ALL: [&str; 14] = [
        UNKNOWN_KEYWORD,
        UNKNOWN_ARGUMENT,
        DUPLICATE_NAME,
        FORWARD_REFERENCE,
        MALFORMED_NUMBER,
        MISSING_ARGUMENT,
        INVALID_VALUE,
        REPEATED_SINGLETON,
        BLOCK_STRUCTURE,
        DUPLICATE_ARGUMENT,
        SYNTAX,
        UNDEFINED_NAME,
        CONFLICTING_ARGUMENTS,
        NOTHING_TO_SIMULATE,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub severity: Severity,
    /// 1-based line.
    pub line: usize,
    /// 1-based column, counted in characters.
    pub column: usize,
    pub message: String,
    pub hint: Option<String>,
}

impl Diagnostic {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {sev}[{}]: {}",
            self.line, self.column, self.code, self.message
        )?;
        if let Some(hint) = &self.hint {
            write!(f, "\n  hint: {hint}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    Grid,
    Coherent,
    Squeezer,
    Table,
    Loss,
    PbsCombine,
    Waveplate,
    Phase,
    CorrelatedNoise,
    Measure,
    Ellipsoid,
    Sweep,
}

impl Keyword {
    pub const ALL: [Keyword; 12] = [
        Keyword::Grid,
        Keyword::Coherent,
        Keyword::Squeezer,
        Keyword::Table,
        Keyword::Loss,
        Keyword::PbsCombine,
        Keyword::Waveplate,
        Keyword::Phase,
        Keyword::CorrelatedNoise,
        Keyword::Measure,
        Keyword::Ellipsoid,
        Keyword::Sweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Grid => "grid",
            Keyword::Coherent => "coherent",
            Keyword::Squeezer => "squeezer",
            Keyword::Table => "table",
            Keyword::Loss => "loss",
            Keyword::PbsCombine => "pbs_combine",
            Keyword::Waveplate => "waveplate",
            Keyword::Phase => "phase",
            Keyword::CorrelatedNoise => "correlated_noise",
            Keyword::Measure => "measure",
            Keyword::Ellipsoid => "ellipsoid",
            Keyword::Sweep => "sweep",
        }
    }

    pub fn parse(word: &str) -> Option<Keyword> {
        Keyword::ALL.into_iter().find(|k| k.as_str() == word)
    }
}

/// An argument exactly as written; formatting reproduces `raw` verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub key: String,
    pub raw: String,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Relative phase `start + k (stop - start) / points` for `k < points`,
    /// evaluated at `at_hz` (first grid frequency when absent).
    Theta {
        start: f64,
        stop: f64,
        points: usize,
        at_hz: Option<f64>,
    },
    /// Inclusive frequency grid at the circuit's own phase.
    Frequency {
        start_hz: f64,
        stop_hz: f64,
        points: usize,
    },
}

impl SweepAxis {
    pub fn thetas(&self) -> Vec<f64> {
        match *self {
            SweepAxis::Theta {
                start,
                stop,
                points,
                ..
            } => (0..points)
                .map(|k| start + (stop - start) * k as f64 / points as f64)
                .collect(),
            SweepAxis::Frequency { .. } => Vec::new(),
        }
    }
}

/// Typed content of a statement.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Grid {
        start_hz: f64,
        stop_hz: f64,
        points: usize,
    },
    Coherent {
        power: f64,
    },
    Squeezer {
        quad: Quadrature,
        model: SqueezeSpectrum,
        power: f64,
    },
    Table {
        file: PathBuf,
        power: f64,
    },
    Loss {
        input: String,
        eta: f64,
    },
    PbsCombine {
        h: String,
        v: String,
        theta: f64,
    },
    Waveplate {
        input: String,
        plate: WavePlate,
    },
    Phase {
        input: String,
        shift: f64,
    },
    CorrelatedNoise {
        input: String,
        quad: Quadrature,
        excess: f64,
        correlation: Correlation,
    },
    Measure {
        input: String,
        setup: StokesSetup,
        out: Option<String>,
        eta: f64,
    },
    Ellipsoid {
        input: String,
        frequency_hz: f64,
    },
    Sweep {
        input: String,
        axis: SweepAxis,
    },
}

impl Element {
    /// Names of the nodes this element reads.
    pub fn inputs(&self) -> Vec<&str> {
        match self {
            Element::Grid { .. }
            | Element::Coherent { .. }
            | Element::Squeezer { .. }
            | Element::Table { .. } => {
                vec![]
            }
            Element::PbsCombine { h, v, .. } => vec![h, v],
            Element::Loss { input, .. }
            | Element::Waveplate { input, .. }
            | Element::Phase { input, .. }
            | Element::CorrelatedNoise { input, .. }
            | Element::Measure { input, .. }
            | Element::Ellipsoid { input, .. }
            | Element::Sweep { input, .. } => vec![input],
        }
    }
}

/// The axis line inside a sweep block.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisLine {
    pub keyword: String,
    pub args: Vec<Arg>,
    pub line: usize,
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub keyword: Keyword,
    pub name: String,
    pub args: Vec<Arg>,
    pub element: Element,
    pub line: usize,
    /// Trailing comment including the leading `#`.
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockItem {
    Blank,
    Comment(String),
    Axis(AxisLine),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepBlock {
    pub header: Statement,
    pub body: Vec<BlockItem>,
    pub close_comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Blank,
    Comment(String),
    Statement(Statement),
    Sweep(SweepBlock),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetlistDocument {
    pub items: Vec<Item>,
}

impl NetlistDocument {
    /// All statements in file order, sweep headers included.
    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.items.iter().filter_map(|item| match item {
            Item::Statement(s) => Some(s),
            Item::Sweep(b) => Some(&b.header),
            _ => None,
        })
    }

    pub fn statement(&self, name: &str) -> Option<&Statement> {
        self.statements().find(|s| s.name == name)
    }

    pub fn has_outputs(&self) -> bool {
        self.statements().any(|s| {
            matches!(
                s.keyword,
                Keyword::Measure | Keyword::Ellipsoid | Keyword::Sweep
            )
        })
    }
}
