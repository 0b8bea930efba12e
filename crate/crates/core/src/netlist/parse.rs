use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::PathBuf;

use super::codes::*;
use super::*;
use crate::apparatus::{StokesSetup, WavePlate};
use crate::gaussian::{Correlation, FrequencyGrid, Quadrature, SqueezeShape, SqueezeSpectrum};

#[derive(Debug, Clone, Copy, PartialEq)]
enum ArgKind {
    Frequency,
    Angle,
    Real,
    Count,
    Name,
    Path,
    RealList,
    Choice(&'static [&'static str]),
}

struct ArgSpec {
    key: &'static str,
    kind: ArgKind,
    required: bool,
}

const fn req(key: &'static str, kind: ArgKind) -> ArgSpec {
    ArgSpec {
        key,
        kind,
        required: true,
    }
}

const fn opt(key: &'static str, kind: ArgKind) -> ArgSpec {
    ArgSpec {
        key,
        kind,
        required: false,
    }
}

const QUADS: &[&str] = &["amplitude", "phase"];
const PLATES: &[&str] = &["half", "quarter"];
const SIGNS: &[&str] = &["+1", "-1"];
const SETUPS: &[&str] = &["S0", "S1", "S2", "S3"];

const GRID_ARGS: &[ArgSpec] = &[
    req("start", ArgKind::Frequency),
    req("stop", ArgKind::Frequency),
    req("points", ArgKind::Count),
];
const COHERENT_ARGS: &[ArgSpec] = &[req("power", ArgKind::Real)];
const SQUEEZER_ARGS: &[ArgSpec] = &[
    req("quad", ArgKind::Choice(QUADS)),
    opt("v0", ArgKind::Real),
    opt("db", ArgKind::Real),
    opt("corner", ArgKind::Frequency),
    opt("excess", ArgKind::Real),
    req("power", ArgKind::Real),
];
const TABLE_ARGS: &[ArgSpec] = &[req("file", ArgKind::Path), req("power", ArgKind::Real)];
const LOSS_ARGS: &[ArgSpec] = &[
    req("in", ArgKind::Name),
    opt("eta", ArgKind::Real),
    opt("chain", ArgKind::RealList),
];
const PBS_COMBINE_ARGS: &[ArgSpec] = &[
    req("h", ArgKind::Name),
    req("v", ArgKind::Name),
    req("theta", ArgKind::Angle),
];
const WAVEPLATE_ARGS: &[ArgSpec] = &[
    req("in", ArgKind::Name),
    req("kind", ArgKind::Choice(PLATES)),
    req("angle", ArgKind::Angle),
];
const PHASE_ARGS: &[ArgSpec] = &[req("in", ArgKind::Name), req("shift", ArgKind::Angle)];
const CORRELATED_NOISE_ARGS: &[ArgSpec] = &[
    req("in", ArgKind::Name),
    req("quad", ArgKind::Choice(QUADS)),
    req("excess", ArgKind::Real),
    req("correlation", ArgKind::Choice(SIGNS)),
];
const MEASURE_ARGS: &[ArgSpec] = &[
    req("in", ArgKind::Name),
    req("setup", ArgKind::Choice(SETUPS)),
    opt("out", ArgKind::Path),
    opt("eta", ArgKind::Real),
];
const ELLIPSOID_ARGS: &[ArgSpec] = &[req("in", ArgKind::Name), req("freq", ArgKind::Frequency)];
const SWEEP_ARGS: &[ArgSpec] = &[req("in", ArgKind::Name)];

fn schema(keyword: Keyword) -> &'static [ArgSpec] {
    match keyword {
        Keyword::Grid => GRID_ARGS,
        Keyword::Coherent => COHERENT_ARGS,
        Keyword::Squeezer => SQUEEZER_ARGS,
        Keyword::Table => TABLE_ARGS,
        Keyword::Loss => LOSS_ARGS,
        Keyword::PbsCombine => PBS_COMBINE_ARGS,
        Keyword::Waveplate => WAVEPLATE_ARGS,
        Keyword::Phase => PHASE_ARGS,
        Keyword::CorrelatedNoise => CORRELATED_NOISE_ARGS,
        Keyword::Measure => MEASURE_ARGS,
        Keyword::Ellipsoid => ELLIPSOID_ARGS,
        Keyword::Sweep => SWEEP_ARGS,
    }
}

const THETA_AXIS: &[ArgSpec] = &[
    opt("start", ArgKind::Angle),
    opt("stop", ArgKind::Angle),
    req("points", ArgKind::Count),
    opt("at", ArgKind::Frequency),
];
const FREQUENCY_AXIS: &[ArgSpec] = &[
    req("start", ArgKind::Frequency),
    req("stop", ArgKind::Frequency),
    req("points", ArgKind::Count),
];

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(f64),
    Count(usize),
    Text(String),
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Equals,
    Open,
    Close,
}

fn tokenize(code: &str) -> Vec<(Token, usize)> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut start = 0;
    let flush = |word: &mut String, start: usize, tokens: &mut Vec<(Token, usize)>| {
        if !word.is_empty() {
            tokens.push((Token::Word(std::mem::take(word)), start));
        }
    };
    for (i, ch) in code.chars().enumerate() {
        let col = i + 1;
        match ch {
            c if c.is_whitespace() => flush(&mut word, start, &mut tokens),
            '=' | '{' | '}' => {
                flush(&mut word, start, &mut tokens);
                let t = match ch {
                    '=' => Token::Equals,
                    '{' => Token::Open,
                    _ => Token::Close,
                };
                tokens.push((t, col));
            }
            c => {
                if word.is_empty() {
                    start = col;
                }
                word.push(c);
            }
        }
    }
    flush(&mut word, start, &mut tokens);
    tokens
}

/// Splits a line into code and an optional trailing comment (with `#`).
fn split_comment(line: &str) -> (&str, Option<&str>) {
    match line.find('#') {
        Some(i) => (&line[..i], Some(line[i..].trim_end())),
        None => (line, None),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Longest numeric prefix of `raw` and the remaining suffix.
fn split_number(raw: &str) -> (&str, &str) {
    let b = raw.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let digits = |i: &mut usize| {
        let s = *i;
        while *i < b.len() && b[*i].is_ascii_digit() {
            *i += 1;
        }
        *i - s
    };
    let mut mantissa = digits(&mut i);
    if i < b.len() && b[i] == b'.' {
        i += 1;
        mantissa += digits(&mut i);
    }
    if mantissa == 0 {
        return ("", raw);
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        if digits(&mut j) > 0 {
            i = j;
        }
    }
    (&raw[..i], &raw[i..])
}

/// Parses a frequency literal such as `5MHz`, `300kHz` or `2e6` (Hz).
pub fn parse_frequency(raw: &str) -> Option<f64> {
    let (num, unit) = split_number(raw.trim());
    let scale = match unit {
        "" | "Hz" => 1.0,
        "kHz" => 1e3,
        "MHz" => 1e6,
        "GHz" => 1e9,
        _ => return None,
    };
    num.parse::<f64>()
        .ok()
        .map(|v| v * scale)
        .filter(|f| f.is_finite())
}

fn suggest(word: &str, candidates: impl IntoIterator<Item = &'static str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, _)| *d <= 2)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| format!("did you mean '{c}'?"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Beam,
    State,
    Terminal,
}

/// A reference awaiting resolution once every declaration is known.
struct Reference {
    name: String,
    line: usize,
    column: usize,
    statement: usize,
}

struct Pending {
    statement: Statement,
    refs: Vec<Reference>,
}

struct Parser {
    diagnostics: Vec<Diagnostic>,
}

impl Parser {
    fn error(
        &mut self,
        code: &'static str,
        line: usize,
        column: usize,
        message: String,
        hint: Option<String>,
    ) {
        self.diagnostics.push(Diagnostic {
            code,
            severity: Severity::Error,
            line,
            column,
            message,
            hint,
        });
    }

    fn number(&mut self, arg: &Arg, units: &[(&str, f64)], unit_required: bool) -> Option<f64> {
        let (num, unit) = split_number(&arg.raw);
        if num.is_empty()
            || !(unit.is_empty() || unit.starts_with(|c: char| c.is_ascii_alphabetic()))
        {
            self.error(
                MALFORMED_NUMBER,
                arg.line,
                arg.column,
                format!("malformed number '{}' for '{}'", arg.raw, arg.key),
                None,
            );
            return None;
        }
        let value: f64 = num.parse().ok()?;
        let names: Vec<&str> = units.iter().map(|u| u.0).collect();
        if unit.is_empty() {
            if unit_required {
                self.error(
                    INVALID_VALUE,
                    arg.line,
                    arg.column,
                    format!("'{}' needs a unit", arg.key),
                    Some(format!("write e.g. '{}{}'", arg.raw, names[0])),
                );
                return None;
            }
            return Some(value);
        }
        match units.iter().find(|u| u.0 == unit) {
            Some(&(_, scale)) => Some(value * scale),
            None => {
                let hint = if names.is_empty() {
                    Some("this argument is dimensionless".to_string())
                } else {
                    Some(format!("expected one of: {}", names.join(", ")))
                };
                self.error(
                    INVALID_VALUE,
                    arg.line,
                    arg.column,
                    format!("unknown unit '{unit}' for '{}'", arg.key),
                    hint,
                );
                None
            }
        }
    }

    fn value(&mut self, arg: &Arg, kind: ArgKind) -> Option<Value> {
        const FREQ: &[(&str, f64)] = &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)];
        const ANGLE: &[(&str, f64)] = &[("deg", std::f64::consts::PI / 180.0), ("rad", 1.0)];
        match kind {
            ArgKind::Frequency => self.number(arg, FREQ, false).map(Value::Number),
            ArgKind::Angle => self.number(arg, ANGLE, true).map(Value::Number),
            ArgKind::Real => self.number(arg, &[], false).map(Value::Number),
            ArgKind::Count => match arg.raw.parse::<usize>() {
                Ok(n) if arg.raw.bytes().all(|b| b.is_ascii_digit()) => Some(Value::Count(n)),
                _ => {
                    self.error(
                        MALFORMED_NUMBER,
                        arg.line,
                        arg.column,
                        format!("'{}' expects a whole number, got '{}'", arg.key, arg.raw),
                        None,
                    );
                    None
                }
            },
            ArgKind::RealList => {
                let mut out = Vec::new();
                for part in arg.raw.split(',') {
                    let item = Arg {
                        raw: part.to_string(),
                        ..arg.clone()
                    };
                    out.push(self.number(&item, &[], false)?);
                }
                Some(Value::List(out))
            }
            ArgKind::Name => {
                if is_identifier(&arg.raw) {
                    Some(Value::Text(arg.raw.clone()))
                } else {
                    self.error(
                        SYNTAX,
                        arg.line,
                        arg.column,
                        format!("'{}' is not a valid name", arg.raw),
                        None,
                    );
                    None
                }
            }
            ArgKind::Path => Some(Value::Text(arg.raw.clone())),
            ArgKind::Choice(options) => {
                if options.contains(&arg.raw.as_str()) {
                    Some(Value::Text(arg.raw.clone()))
                } else {
                    let hint = suggest(&arg.raw, options.iter().copied())
                        .or_else(|| Some(format!("expected one of: {}", options.join(", "))));
                    self.error(
                        INVALID_VALUE,
                        arg.line,
                        arg.column,
                        format!("invalid value '{}' for '{}'", arg.raw, arg.key),
                        hint,
                    );
                    None
                }
            }
        }
    }

    /// Checks keys against `specs` and converts values. Returns `None` if any
    /// argument was rejected.
    fn arguments(
        &mut self,
        what: &str,
        args: &[Arg],
        specs: &[ArgSpec],
        line: usize,
        column: usize,
    ) -> Option<HashMap<&'static str, (Value, usize)>> {
        let mut ok = true;
        let mut values = HashMap::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut stand_ins: Vec<&str> = Vec::new();
        for arg in args {
            let Some(spec) = specs.iter().find(|s| s.key == arg.key) else {
                let close = specs
                    .iter()
                    .map(|s| (strsim::levenshtein(&arg.key, s.key), s.key))
                    .filter(|(d, _)| *d <= 2)
                    .min_by_key(|(d, _)| *d)
                    .map(|(_, k)| k);
                if let Some(k) = close {
                    // A misspelt key stands in for the real one.
                    stand_ins.push(k);
                }
                self.error(
                    UNKNOWN_ARGUMENT,
                    arg.line,
                    arg.column,
                    format!("unknown argument '{}' for {what}", arg.key),
                    close.map(|k| format!("did you mean '{k}'?")),
                );
                ok = false;
                continue;
            };
            if let Some(first) = seen.insert(spec.key, arg.column) {
                self.error(
                    DUPLICATE_ARGUMENT,
                    arg.line,
                    arg.column,
                    format!("argument '{}' given twice", arg.key),
                    Some(format!("first given at column {first}")),
                );
                ok = false;
                continue;
            }
            match self.value(arg, spec.kind) {
                Some(v) => {
                    values.insert(spec.key, (v, arg.column));
                }
                None => ok = false,
            }
        }
        for spec in specs
            .iter()
            .filter(|s| s.required && !seen.contains_key(s.key) && !stand_ins.contains(&s.key))
        {
            self.error(
                MISSING_ARGUMENT,
                line,
                column,
                format!("{what} is missing required argument '{}'", spec.key),
                None,
            );
            ok = false;
        }
        ok.then_some(values)
    }

    fn invalid(&mut self, line: usize, column: usize, message: String) -> Option<Element> {
        self.error(INVALID_VALUE, line, column, message, None);
        None
    }

    /// Builds the typed element and records name references.
    fn element(
        &mut self,
        keyword: Keyword,
        values: &HashMap<&'static str, (Value, usize)>,
        line: usize,
        column: usize,
        refs: &mut Vec<(String, usize)>,
    ) -> Option<Element> {
        let num = |k: &str| match values.get(k) {
            Some((Value::Number(x), _)) => Some(*x),
            _ => None,
        };
        let count = |k: &str| match values.get(k) {
            Some((Value::Count(n), _)) => Some(*n),
            _ => None,
        };
        let text = |k: &str| match values.get(k) {
            Some((Value::Text(s), _)) => Some(s.clone()),
            _ => None,
        };
        let col = |k: &str| values.get(k).map_or(column, |v| v.1);
        let name = |k: &str, refs: &mut Vec<(String, usize)>| {
            let n = text(k).unwrap_or_default();
            refs.push((n.clone(), col(k)));
            n
        };
        let quad = |k: &str| match text(k).as_deref() {
            Some("phase") => Quadrature::Phase,
            _ => Quadrature::Amplitude,
        };

        if let Some(power) = num("power") {
            if !(power > 0.0) {
                return self.invalid(
                    line,
                    col("power"),
                    format!("power must be > 0, got {power}"),
                );
            }
        }
        if let Some(eta) = num("eta") {
            if !(eta > 0.0 && eta <= 1.0) {
                return self.invalid(
                    line,
                    col("eta"),
                    format!("efficiency must lie in (0, 1], got {eta}"),
                );
            }
        }

        let element = match keyword {
            Keyword::Grid => {
                let (start_hz, stop_hz, points) = (num("start")?, num("stop")?, count("points")?);
                if let Err(e) = FrequencyGrid::linspace(start_hz, stop_hz, points) {
                    return self.invalid(line, column, format!("invalid grid: {e}"));
                }
                Element::Grid {
                    start_hz,
                    stop_hz,
                    points,
                }
            }
            Keyword::Coherent => Element::Coherent {
                power: num("power")?,
            },
            Keyword::Squeezer => {
                let v = match (num("v0"), num("db")) {
                    (Some(_), Some(_)) => {
                        self.error(
                            CONFLICTING_ARGUMENTS,
                            line,
                            col("db"),
                            "give either 'v0' or 'db', not both".into(),
                            None,
                        );
                        return None;
                    }
                    (Some(v), None) => v,
                    (None, Some(db)) => {
                        if !(db >= 0.0) {
                            return self.invalid(
                                line,
                                col("db"),
                                format!("squeezing in dB must be >= 0, got {db}"),
                            );
                        }
                        10f64.powf(-db / 10.0)
                    }
                    (None, None) => {
                        self.error(
                            MISSING_ARGUMENT,
                            line,
                            column,
                            "squeezer needs 'v0' or 'db'".into(),
                            Some("v0 is the squeezed variance relative to shot noise".into()),
                        );
                        return None;
                    }
                };
                let shape = match num("corner") {
                    Some(corner_hz) => SqueezeShape::Lorentzian { v0: v, corner_hz },
                    None => SqueezeShape::Flat { v_sq: v },
                };
                let model = SqueezeSpectrum {
                    shape,
                    excess: num("excess").unwrap_or(1.0),
                };
                if let Err(e) = model.validate() {
                    return self.invalid(line, column, e.to_string());
                }
                Element::Squeezer {
                    quad: quad("quad"),
                    model,
                    power: num("power")?,
                }
            }
            Keyword::Table => Element::Table {
                file: PathBuf::from(text("file")?),
                power: num("power")?,
            },
            Keyword::Loss => {
                let eta = match (num("eta"), values.get("chain")) {
                    (Some(_), Some(_)) => {
                        self.error(
                            CONFLICTING_ARGUMENTS,
                            line,
                            col("chain"),
                            "give either 'eta' or 'chain', not both".into(),
                            None,
                        );
                        return None;
                    }
                    (Some(eta), None) => eta,
                    (None, Some((Value::List(losses), c))) => {
                        match crate::gaussian::lossy_efficiency_chain(losses) {
                            Ok(eta) if eta > 0.0 => eta,
                            _ => {
                                return self.invalid(
                                    line,
                                    *c,
                                    "every loss in 'chain' must lie in [0, 1)".into(),
                                )
                            }
                        }
                    }
                    _ => {
                        self.error(
                            MISSING_ARGUMENT,
                            line,
                            column,
                            "loss needs 'eta' or 'chain'".into(),
                            Some("eta is a transmission; chain lists fractional losses".into()),
                        );
                        return None;
                    }
                };
                Element::Loss {
                    input: name("in", refs),
                    eta,
                }
            }
            Keyword::PbsCombine => {
                let h = name("h", refs);
                let v = name("v", refs);
                Element::PbsCombine {
                    h,
                    v,
                    theta: num("theta")?,
                }
            }
            Keyword::Waveplate => {
                let angle = num("angle")?;
                let plate = match text("kind").as_deref() {
                    Some("half") => WavePlate::half(angle),
                    _ => WavePlate::quarter(angle),
                };
                Element::Waveplate {
                    input: name("in", refs),
                    plate,
                }
            }
            Keyword::Phase => Element::Phase {
                input: name("in", refs),
                shift: num("shift")?,
            },
            Keyword::CorrelatedNoise => {
                let excess = num("excess")?;
                if !(excess >= 0.0) {
                    return self.invalid(
                        line,
                        col("excess"),
                        format!("excess noise must be >= 0, got {excess}"),
                    );
                }
                let correlation = match text("correlation").as_deref() {
                    Some("-1") => Correlation::Negative,
                    _ => Correlation::Positive,
                };
                Element::CorrelatedNoise {
                    input: name("in", refs),
                    quad: quad("quad"),
                    excess,
                    correlation,
                }
            }
            Keyword::Measure => {
                let setup: StokesSetup = text("setup")?.parse().ok()?;
                Element::Measure {
                    input: name("in", refs),
                    setup,
                    out: text("out"),
                    eta: num("eta").unwrap_or(1.0),
                }
            }
            Keyword::Ellipsoid => Element::Ellipsoid {
                input: name("in", refs),
                frequency_hz: num("freq")?,
            },
            Keyword::Sweep => Element::Sweep {
                input: name("in", refs),
                axis: SweepAxis::Frequency {
                    start_hz: 0.0,
                    stop_hz: 0.0,
                    points: 0,
                },
            },
        };
        Some(element)
    }

    fn axis(&mut self, axis: &AxisLine, column: usize) -> Option<SweepAxis> {
        match axis.keyword.as_str() {
            "theta" => {
                let v = self.arguments("theta axis", &axis.args, THETA_AXIS, axis.line, column)?;
                let angle = |k: &str, default: f64| match v.get(k) {
                    Some((Value::Number(x), _)) => *x,
                    _ => default,
                };
                let (start, stop) = (angle("start", 0.0), angle("stop", TAU));
                let points = match v.get("points") {
                    Some((Value::Count(n), _)) => *n,
                    _ => 0,
                };
                if !(0.0 <= start && start < stop && stop <= TAU + 1e-12) || points == 0 {
                    self.error(
                        INVALID_VALUE,
                        axis.line,
                        column,
                        "theta sweep needs 0 <= start < stop <= 360deg and points >= 1".into(),
                        None,
                    );
                    return None;
                }
                let at_hz = match v.get("at") {
                    Some((Value::Number(f), _)) => Some(*f),
                    _ => None,
                };
                Some(SweepAxis::Theta {
                    start,
                    stop,
                    points,
                    at_hz,
                })
            }
            "frequency" => {
                let v = self.arguments(
                    "frequency axis",
                    &axis.args,
                    FREQUENCY_AXIS,
                    axis.line,
                    column,
                )?;
                let f = |k: &str| match v.get(k) {
                    Some((Value::Number(x), _)) => *x,
                    _ => 0.0,
                };
                let points = match v.get("points") {
                    Some((Value::Count(n), _)) => *n,
                    _ => 0,
                };
                if let Err(e) = FrequencyGrid::linspace(f("start"), f("stop"), points) {
                    self.error(
                        INVALID_VALUE,
                        axis.line,
                        column,
                        format!("invalid frequency sweep: {e}"),
                        None,
                    );
                    return None;
                }
                Some(SweepAxis::Frequency {
                    start_hz: f("start"),
                    stop_hz: f("stop"),
                    points,
                })
            }
            other => {
                let message = match Keyword::parse(other) {
                    Some(_) => format!("'{other}' is not allowed inside a sweep block"),
                    None => format!("unknown sweep axis '{other}'"),
                };
                let code = if Keyword::parse(other).is_some() {
                    BLOCK_STRUCTURE
                } else {
                    UNKNOWN_KEYWORD
                };
                let hint = suggest(other, ["theta", "frequency"])
                    .or(Some("expected 'theta' or 'frequency'".into()));
                self.error(code, axis.line, column, message, hint);
                None
            }
        }
    }

    /// Parses `key=value` pairs from `tokens`. Reports syntax errors and
    /// returns the args that were well formed.
    fn key_values(&mut self, tokens: &[(Token, usize)], line: usize) -> (Vec<Arg>, bool) {
        let mut args = Vec::new();
        let mut ok = true;
        let mut i = 0;
        while i < tokens.len() {
            match (&tokens[i], tokens.get(i + 1), tokens.get(i + 2)) {
                (
                    (Token::Word(key), col),
                    Some((Token::Equals, _)),
                    Some((Token::Word(raw), _)),
                ) => {
                    args.push(Arg {
                        key: key.clone(),
                        raw: raw.clone(),
                        line,
                        column: *col,
                    });
                    i += 3;
                }
                ((Token::Word(key), col), Some((Token::Equals, _)), _) => {
                    self.error(
                        SYNTAX,
                        line,
                        *col,
                        format!("argument '{key}' has no value"),
                        None,
                    );
                    ok = false;
                    i += 2;
                }
                ((Token::Word(word), col), _, _) => {
                    self.error(
                        SYNTAX,
                        line,
                        *col,
                        format!("expected 'key=value', found '{word}'"),
                        Some("arguments are written key=value".into()),
                    );
                    ok = false;
                    i += 1;
                }
                ((tok, col), _, _) => {
                    let what = match tok {
                        Token::Equals => "'='",
                        Token::Open => "'{'",
                        _ => "'}'",
                    };
                    let code = if matches!(tok, Token::Equals) {
                        SYNTAX
                    } else {
                        BLOCK_STRUCTURE
                    };
                    self.error(code, line, *col, format!("unexpected {what}"), None);
                    ok = false;
                    i += 1;
                }
            }
        }
        (args, ok)
    }
}

/// Parses a netlist. On success returns the document and any warnings; on
/// failure returns every diagnostic found, sorted by position.
pub fn parse(
    text: &str,
) -> std::result::Result<(NetlistDocument, Vec<Diagnostic>), Vec<Diagnostic>> {
    let mut p = Parser {
        diagnostics: Vec::new(),
    };
    let mut items: Vec<Item> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    // Index into `items` of the open sweep block, with its header line.
    let mut open_block: Option<(usize, usize)> = None;
    let mut block_axes = 0usize;

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let (code, comment) = split_comment(raw_line);
        let tokens = tokenize(code);
        let comment = comment.map(str::to_string);

        let push_plain = |items: &mut Vec<Item>, open: Option<(usize, usize)>, item: BlockItem| {
            if let Some((b, _)) = open {
                if let Item::Sweep(block) = &mut items[b] {
                    block.body.push(item);
                    return;
                }
            }
            items.push(match item {
                BlockItem::Blank => Item::Blank,
                BlockItem::Comment(c) => Item::Comment(c),
                BlockItem::Axis(_) => unreachable!(),
            });
        };

        if tokens.is_empty() {
            let item = match comment {
                Some(c) => BlockItem::Comment(c),
                None => BlockItem::Blank,
            };
            push_plain(&mut items, open_block, item);
            continue;
        }

        if tokens[0].0 == Token::Close {
            match open_block.take() {
                Some((b, header_line)) => {
                    if let Item::Sweep(block) = &mut items[b] {
                        block.close_comment = comment;
                    }
                    if block_axes == 0 {
                        p.error(
                            BLOCK_STRUCTURE,
                            header_line,
                            1,
                            "sweep block has no axis".into(),
                            Some("add 'theta points=...' or 'frequency start=... stop=... points=...'".into()),
                        );
                    }
                }
                None => p.error(
                    BLOCK_STRUCTURE,
                    line,
                    tokens[0].1,
                    "'}' without an open sweep block".into(),
                    None,
                ),
            }
            if let Some((_, col)) = tokens.get(1) {
                p.error(SYNTAX, line, *col, "unexpected text after '}'".into(), None);
            }
            continue;
        }

        let (first, first_col) = match &tokens[0] {
            (Token::Word(w), c) => (w.clone(), *c),
            (_, c) => {
                p.error(
                    SYNTAX,
                    line,
                    *c,
                    "a statement must start with a keyword".into(),
                    None,
                );
                continue;
            }
        };

        if let Some((b, _)) = open_block {
            let (args, _) = p.key_values(&tokens[1..], line);
            let axis = AxisLine {
                keyword: first,
                args,
                line,
                comment,
            };
            block_axes += 1;
            if block_axes > 1 {
                p.error(
                    BLOCK_STRUCTURE,
                    line,
                    first_col,
                    "a sweep block takes exactly one axis".into(),
                    None,
                );
            } else if let Some(a) = p.axis(&axis, first_col) {
                if let Item::Sweep(block) = &mut items[b] {
                    if let Element::Sweep { axis: slot, .. } = &mut block.header.element {
                        *slot = a;
                    }
                }
            }
            if let Item::Sweep(block) = &mut items[b] {
                block.body.push(BlockItem::Axis(axis));
            }
            continue;
        }

        let Some(keyword) = Keyword::parse(&first) else {
            let hint = suggest(&first, Keyword::ALL.map(Keyword::as_str));
            let message = if first == "theta" || first == "frequency" {
                format!("'{first}' is only allowed inside a sweep block")
            } else {
                format!("unknown keyword '{first}'")
            };
            let code = if first == "theta" || first == "frequency" {
                BLOCK_STRUCTURE
            } else {
                UNKNOWN_KEYWORD
            };
            p.error(code, line, first_col, message, hint);
            continue;
        };

        let name = match tokens.get(1) {
            Some((Token::Word(n), col)) => {
                if !is_identifier(n) {
                    p.error(
                        SYNTAX,
                        line,
                        *col,
                        format!("'{n}' is not a valid name"),
                        None,
                    );
                    continue;
                }
                n.clone()
            }
            other => {
                let col = other.map_or(first_col + first.chars().count(), |t| t.1);
                p.error(SYNTAX, line, col, format!("'{first}' needs a name"), None);
                continue;
            }
        };

        let mut rest = &tokens[2..];
        let opens_block = matches!(rest.last(), Some((Token::Open, _)));
        if opens_block {
            rest = &rest[..rest.len() - 1];
        }
        let (args, syntax_ok) = p.key_values(rest, line);
        if keyword == Keyword::Sweep && !opens_block {
            p.error(
                BLOCK_STRUCTURE,
                line,
                first_col,
                "sweep must open a block with '{'".into(),
                None,
            );
        } else if keyword != Keyword::Sweep && opens_block {
            let col = tokens.last().map_or(first_col, |t| t.1);
            p.error(
                BLOCK_STRUCTURE,
                line,
                col,
                format!("'{first}' cannot open a block"),
                None,
            );
        }

        let what = format!("'{first}'");
        let values = p.arguments(&what, &args, schema(keyword), line, first_col);
        let mut refs = Vec::new();
        let element = values.and_then(|v| p.element(keyword, &v, line, first_col, &mut refs));
        let element_ok = element.is_some() && syntax_ok;
        let statement = Statement {
            keyword,
            name,
            args,
            element: element.unwrap_or(Element::Coherent { power: 0.0 }),
            line,
            comment,
        };
        let statement_index = pending.len();
        let refs = refs
            .into_iter()
            .map(|(name, column)| Reference {
                name,
                line,
                column,
                statement: statement_index,
            })
            .collect();
        pending.push(Pending {
            statement: statement.clone(),
            refs,
        });
        if !element_ok {
            // Keep the name for reference resolution but mark it unusable.
            pending.last_mut().unwrap().statement.element = Element::Coherent { power: f64::NAN };
        }

        if keyword == Keyword::Sweep && opens_block {
            open_block = Some((items.len(), line));
            block_axes = 0;
            items.push(Item::Sweep(SweepBlock {
                header: statement,
                body: Vec::new(),
                close_comment: None,
            }));
        } else {
            items.push(Item::Statement(statement));
        }
    }

    if let Some((_, header_line)) = open_block {
        p.error(
            BLOCK_STRUCTURE,
            header_line,
            1,
            "sweep block is never closed".into(),
            Some("add '}'".into()),
        );
    }

    resolve(&mut p, &pending);

    let mut diagnostics = p.diagnostics;
    let doc = NetlistDocument { items };
    if !doc.has_outputs() && diagnostics.is_empty() {
        diagnostics.push(Diagnostic {
            code: NOTHING_TO_SIMULATE,
            severity: Severity::Warning,
            line: 1,
            column: 1,
            message: "nothing to simulate".into(),
            hint: Some("add a measure, ellipsoid or sweep statement".into()),
        });
    }
    diagnostics.sort_by_key(|d| (d.line, d.column));
    if diagnostics.iter().any(Diagnostic::is_error) {
        Err(diagnostics)
    } else {
        Ok((doc, diagnostics))
    }
}

/// Name resolution: duplicates, forward and undefined references, node kinds
/// and singleton statements.
fn resolve(p: &mut Parser, pending: &[Pending]) {
    let mut first_decl: HashMap<&str, usize> = HashMap::new();
    for (i, item) in pending.iter().enumerate() {
        first_decl.entry(item.statement.name.as_str()).or_insert(i);
    }
    let mut kinds: HashMap<&str, Option<NodeKind>> = HashMap::new();
    let mut singletons: HashMap<Keyword, usize> = HashMap::new();

    for (i, item) in pending.iter().enumerate() {
        let s = &item.statement;
        if matches!(s.keyword, Keyword::Grid | Keyword::PbsCombine) {
            if let Some(first) = singletons.insert(s.keyword, s.line) {
                p.error(
                    REPEATED_SINGLETON,
                    s.line,
                    1,
                    format!("only one '{}' statement is allowed", s.keyword.as_str()),
                    Some(format!("first declared on line {first}")),
                );
                singletons.insert(s.keyword, first);
            }
        }

        let mut input_kinds = Vec::new();
        let mut inputs_ok = true;
        for r in &item.refs {
            debug_assert_eq!(r.statement, i);
            match kinds.get(r.name.as_str()) {
                Some(kind) => match kind {
                    Some(k) => input_kinds.push((*k, r)),
                    None => inputs_ok = false,
                },
                None => {
                    if first_decl.contains_key(r.name.as_str()) {
                        let at = pending[first_decl[r.name.as_str()]].statement.line;
                        p.error(
                            FORWARD_REFERENCE,
                            r.line,
                            r.column,
                            format!("'{}' is used before it is declared", r.name),
                            Some(format!(
                                "'{}' is declared on line {at}; move it above this line",
                                r.name
                            )),
                        );
                    } else {
                        let hint = kinds
                            .keys()
                            .map(|k| (strsim::levenshtein(&r.name, k), *k))
                            .filter(|(d, _)| *d <= 2)
                            .min()
                            .map(|(_, k)| format!("did you mean '{k}'?"));
                        p.error(
                            UNDEFINED_NAME,
                            r.line,
                            r.column,
                            format!("'{}' is not declared", r.name),
                            hint,
                        );
                    }
                    inputs_ok = false;
                }
            }
        }

        let valid = !s.element_is_placeholder();
        let mut kind = None;
        if valid && inputs_ok {
            kind = match s.keyword {
                Keyword::Grid => Some(NodeKind::Terminal),
                Keyword::Coherent | Keyword::Squeezer | Keyword::Table => Some(NodeKind::Beam),
                Keyword::Loss => Some(input_kinds[0].0),
                Keyword::PbsCombine => {
                    let bad: Vec<_> = input_kinds
                        .iter()
                        .filter(|(k, _)| *k != NodeKind::Beam)
                        .collect();
                    for (_, r) in &bad {
                        p.error(
                            INVALID_VALUE,
                            r.line,
                            r.column,
                            format!("'{}' is not a single-polarization beam", r.name),
                            Some("pbs_combine takes sources or losses applied to sources".into()),
                        );
                    }
                    bad.is_empty().then_some(NodeKind::State)
                }
                _ => {
                    let (k, r) = input_kinds[0];
                    if k == NodeKind::State {
                        Some(
                            if matches!(
                                s.keyword,
                                Keyword::Measure | Keyword::Ellipsoid | Keyword::Sweep
                            ) {
                                NodeKind::Terminal
                            } else {
                                NodeKind::State
                            },
                        )
                    } else {
                        p.error(
                            INVALID_VALUE,
                            r.line,
                            r.column,
                            format!("'{}' is not a two-mode state", r.name),
                            Some("combine beams with pbs_combine first".into()),
                        );
                        None
                    }
                }
            };
        }

        match kinds.get(s.name.as_str()) {
            Some(_) => {
                let first = pending[first_decl[s.name.as_str()]].statement.line;
                p.error(
                    DUPLICATE_NAME,
                    s.line,
                    name_column(s),
                    format!("'{}' is already declared", s.name),
                    Some(format!("first declared on line {first}")),
                );
            }
            None => {
                kinds.insert(s.name.as_str(), kind);
            }
        }
    }
}

fn name_column(s: &Statement) -> usize {
    s.keyword.as_str().chars().count() + 2
}

impl Statement {
    fn element_is_placeholder(&self) -> bool {
        matches!(self.element, Element::Coherent { power } if power.is_nan())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(text: &str) -> Vec<&'static str> {
        match parse(text) {
            Ok((_, d)) => d.iter().map(|d| d.code).collect(),
            Err(d) => d.iter().map(|d| d.code).collect(),
        }
    }

    #[test]
    fn number_splitting() {
        assert_eq!(split_number("5MHz"), ("5", "MHz"));
        assert_eq!(split_number("1e6"), ("1e6", ""));
        assert_eq!(split_number("2.5e-3rad"), ("2.5e-3", "rad"));
        assert_eq!(split_number("3e"), ("3", "e"));
        assert_eq!(split_number(".5"), (".5", ""));
        assert_eq!(split_number("abc"), ("", "abc"));
        assert_eq!(split_number("1.2.3"), ("1.2", ".3"));
    }

    #[test]
    fn empty_file_warns() {
        let (doc, diags) = parse("").unwrap();
        assert!(doc.items.is_empty());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, NOTHING_TO_SIMULATE);
        assert_eq!(diags[0].message, "nothing to simulate");
    }

    #[test]
    fn misspelled_argument() {
        let err = parse("squeezer s1 qad=amplitude v0=0.25 power=1\n").unwrap_err();
        let d = err.iter().find(|d| d.code == UNKNOWN_ARGUMENT).unwrap();
        assert_eq!(d.message, "unknown argument 'qad' for 'squeezer'");
        assert_eq!((d.line, d.column), (1, 13));
        assert_eq!(d.hint.as_deref(), Some("did you mean 'quad'?"));
    }

    #[test]
    fn collects_all_errors() {
        let text = "bogus x\ncoherent a power=abc\ncoherent a power=1\n";
        assert_eq!(
            codes(text),
            vec![UNKNOWN_KEYWORD, MALFORMED_NUMBER, DUPLICATE_NAME]
        );
    }

    #[test]
    fn forward_and_undefined_references() {
        let text = "loss l in=a eta=0.5\ncoherent a power=1\nloss m in=zz eta=0.5\n";
        assert_eq!(codes(text), vec![FORWARD_REFERENCE, UNDEFINED_NAME]);
    }

    #[test]
    fn angles_need_units() {
        let text = "coherent a power=1\npbs_combine s h=a v=a theta=1.57\n";
        assert_eq!(codes(text), vec![INVALID_VALUE]);
        let (doc, _) = parse(
            "coherent a power=1\npbs_combine s h=a v=a theta=90deg\nmeasure m in=s setup=S1\n",
        )
        .unwrap();
        let Some(Element::PbsCombine { theta, .. }) = doc.statement("s").map(|s| s.element.clone())
        else {
            panic!()
        };
        assert!((theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn sweep_block() {
        let text = "coherent a power=1\npbs_combine s h=a v=a theta=0rad\nsweep t in=s {\n  theta points=4\n}\n";
        let (doc, diags) = parse(text).unwrap();
        assert!(diags.is_empty());
        let Some(Element::Sweep { axis, .. }) = doc.statement("t").map(|s| s.element.clone())
        else {
            panic!()
        };
        assert_eq!(
            axis.thetas(),
            vec![0.0, TAU / 4.0, TAU / 2.0, 3.0 * TAU / 4.0]
        );
        assert_eq!(
            codes("coherent a power=1\npbs_combine s h=a v=a theta=0rad\nsweep t in=s {\n"),
            vec![BLOCK_STRUCTURE]
        );
    }

    #[test]
    fn measuring_a_beam_is_a_kind_error() {
        assert_eq!(
            codes("coherent a power=1\nmeasure m in=a setup=S0\n"),
            vec![INVALID_VALUE]
        );
    }
}
