//! Text file formats: model definitions, lookup tables, forcing series and
//! simulation outputs.
//!
//! # Model files
//!
//! Section-based, one declaration per line, `#` starts a comment:
//!
//! ```text
//! [elements]
//! P levels=9 initial=0
//! Y levels=3 initial=1
//!
//! [influences]
//! P -> Y sign=positive weight=1
//!
//! [rules]
//! Y incremental pos="P" mode=proportional
//! Z lookup table="yield.lut" policy=hold inputs="T,P,C"
//!
//! [series]
//! P file="precip_levels.csv"
//! T inline="0:1,1:2,5:0"
//!
//! [scenario]
//! steps = 226
//! runs = 1000
//! seed = 42
//! initial.Y = 2
//! ```
//!
//! Relative paths are resolved against the model file's directory. Series
//! step 0 is the initial state; step `t >= 1` is the state after update `t`.
//!
//! # Lookup-table files
//!
//! ```text
//! input T1 levels=3 min=21.3 max=30.6 thresholds=24.4,27.5
//! input P1 levels=3
//! output maize levels=9
//! policy hold
//! entries
//! 0,2,1
//! ```
//!
//! Each entry row lists the input levels in declaration order followed by
//! the output level.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{Trace, TraceSet};
use crate::ingest::{read_table, IngestError, Schema};
use crate::lut::{LookupTable, LutError, MissingPolicy, Variable};
use crate::model::{
    build_model, is_identifier, Element, Influence, LookupRule, Model, ModelError, Scenario, Sign, TimeSeries,
    UpdateRule, DEFAULT_SEED,
};
use crate::quantizer::{make_uniform_thresholds, Quantizer, QuantizerError};
use crate::rule::{IncrementMode, IncrementalRule, RuleError};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: Box<FormatError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid variable spec `{0}`; expected name:min:max:levels or name:levels")]
    VariableSpec(String),
}

fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax { line, message: message.into() }
}

fn read_file(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

fn in_file<T>(path: &Path, r: Result<T, FormatError>) -> Result<T, FormatError> {
    r.map_err(|e| match e {
        FormatError::Io { .. } | FormatError::File { .. } => e,
        other => FormatError::File { path: path.to_path_buf(), source: Box::new(other) },
    })
}

/// Splits a declaration into whitespace-separated words; `key="a b"` keeps
/// its quoted value as one word with the quotes removed.
fn tokenize(line: &str, lineno: usize) -> Result<Vec<String>, FormatError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut has = false;
    for c in line.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                has = true;
            }
            c if c.is_whitespace() && !quoted => {
                if has {
                    out.push(std::mem::take(&mut cur));
                    has = false;
                }
            }
            c => {
                cur.push(c);
                has = true;
            }
        }
    }
    if quoted {
        return Err(syntax(lineno, "unterminated quote"));
    }
    if has {
        out.push(cur);
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// `key=value` options with unknown keys rejected.
struct Options {
    line: usize,
    map: BTreeMap<String, String>,
}

impl Options {
    fn parse(words: &[String], line: usize, allowed: &[&str]) -> Result<Self, FormatError> {
        let mut map = BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| syntax(line, format!("expected key=value, got `{w}`")))?;
            if !allowed.contains(&k) {
                return Err(syntax(line, format!("unknown key `{k}`")));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(syntax(line, format!("duplicate key `{k}`")));
            }
        }
        Ok(Options { line, map })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, FormatError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| syntax(self.line, format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let v = self.get(key).ok_or_else(|| syntax(self.line, format!("missing `{key}`")))?;
        v.parse().map_err(|_| syntax(self.line, format!("invalid value `{v}` for `{key}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleSpec {
    Incremental(IncrementalRule),
    Lookup { table: String, policy: Option<MissingPolicy>, inputs: Option<Vec<String>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesSpec {
    File(String),
    Inline(TimeSeries),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioSpec {
    pub steps: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub initial: BTreeMap<String, u32>,
}

/// A parsed model file, before referenced files are loaded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelDoc {
    pub elements: Vec<Element>,
    pub influences: Vec<Influence>,
    pub rules: Vec<(String, RuleSpec)>,
    pub series: Vec<(String, SeriesSpec)>,
    pub scenario: ScenarioSpec,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Elements,
    Influences,
    Rules,
    Series,
    Scenario,
}

fn check_name(name: &str, line: usize) -> Result<String, FormatError> {
    if is_identifier(name) {
        Ok(name.to_string())
    } else {
        Err(syntax(line, format!("invalid element name `{name}`")))
    }
}

fn rule_err(line: usize) -> impl Fn(RuleError) -> FormatError {
    move |e| syntax(line, e.to_string())
}

fn parse_inline_series(text: &str, line: usize) -> Result<TimeSeries, FormatError> {
    let points = text
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (s, l) = p.split_once(':').ok_or_else(|| syntax(line, format!("bad series point `{p}`")))?;
            let s = s.trim().parse().map_err(|_| syntax(line, format!("bad step `{s}`")))?;
            let l = l.trim().parse().map_err(|_| syntax(line, format!("bad level `{l}`")))?;
            Ok((s, l))
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    TimeSeries::new(points).map_err(|e| syntax(line, e.to_string()))
}

pub fn parse_model_doc(text: &str) -> Result<ModelDoc, FormatError> {
    let mut doc = ModelDoc::default();
    let mut section = Section::None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "elements" => Section::Elements,
                "influences" => Section::Influences,
                "rules" => Section::Rules,
                "series" => Section::Series,
                "scenario" => Section::Scenario,
                other => return Err(syntax(line, format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(syntax(line, "declaration outside of a section")),
            Section::Elements => {
                let words = tokenize(content, line)?;
                let name = check_name(&words[0], line)?;
                let opts = Options::parse(&words[1..], line, &["levels", "initial"])?;
                doc.elements.push(Element::new(name, opts.require("levels")?, opts.parse_or("initial", 0)?));
            }
            Section::Influences => {
                let words = tokenize(content, line)?;
                if words.len() < 3 || words[1] != "->" {
                    return Err(syntax(line, "expected `SOURCE -> TARGET [sign=..] [weight=..]`"));
                }
                let opts = Options::parse(&words[3..], line, &["sign", "weight"])?;
                let sign = match opts.get("sign").unwrap_or("positive") {
                    "positive" | "+" => Sign::Positive,
                    "negative" | "-" => Sign::Negative,
                    other => return Err(syntax(line, format!("unknown sign `{other}`"))),
                };
                doc.influences.push(Influence {
                    source: check_name(&words[0], line)?,
                    target: check_name(&words[2], line)?,
                    sign,
                    weight: opts.parse_or("weight", 1)?,
                });
            }
            Section::Rules => {
                let words = tokenize(content, line)?;
                if words.len() < 2 {
                    return Err(syntax(line, "expected `ELEMENT incremental|lookup ...`"));
                }
                let name = check_name(&words[0], line)?;
                let spec = match words[1].as_str() {
                    "incremental" => {
                        let opts = Options::parse(&words[2..], line, &["pos", "neg", "mode"])?;
                        let mode: IncrementMode = match opts.get("mode") {
                            None => IncrementMode::default(),
                            Some(m) => m.parse().map_err(rule_err(line))?,
                        };
                        RuleSpec::Incremental(
                            IncrementalRule::parse(opts.get("pos"), opts.get("neg"), mode).map_err(rule_err(line))?,
                        )
                    }
                    "lookup" => {
                        let opts = Options::parse(&words[2..], line, &["table", "policy", "inputs"])?;
                        let policy = opts
                            .get("policy")
                            .map(|p| p.parse::<MissingPolicy>().map_err(|e| syntax(line, e.to_string())))
                            .transpose()?;
                        let inputs = opts
                            .get("inputs")
                            .map(|s| s.split(',').map(|n| check_name(n.trim(), line)).collect::<Result<Vec<_>, _>>())
                            .transpose()?;
                        RuleSpec::Lookup { table: opts.require("table")?, policy, inputs }
                    }
                    other => return Err(syntax(line, format!("unknown rule kind `{other}`"))),
                };
                doc.rules.push((name, spec));
            }
            Section::Series => {
                let words = tokenize(content, line)?;
                let name = check_name(&words[0], line)?;
                let opts = Options::parse(&words[1..], line, &["file", "inline"])?;
                let spec = match (opts.get("file"), opts.get("inline")) {
                    (Some(f), None) => SeriesSpec::File(f.to_string()),
                    (None, Some(s)) => SeriesSpec::Inline(parse_inline_series(s, line)?),
                    _ => return Err(syntax(line, "series needs exactly one of `file` or `inline`")),
                };
                doc.series.push((name, spec));
            }
            Section::Scenario => {
                let (key, value) = content.split_once('=').ok_or_else(|| syntax(line, "expected `key = value`"))?;
                let (key, value) = (key.trim(), value.trim());
                let bad = || syntax(line, format!("invalid value `{value}` for `{key}`"));
                match key {
                    "steps" => doc.scenario.steps = Some(value.parse().map_err(|_| bad())?),
                    "runs" => doc.scenario.runs = Some(value.parse().map_err(|_| bad())?),
                    "seed" => doc.scenario.seed = Some(value.parse().map_err(|_| bad())?),
                    k => {
                        let name =
                            k.strip_prefix("initial.").ok_or_else(|| syntax(line, format!("unknown key `{k}`")))?;
                        let name = check_name(name, line)?;
                        doc.scenario.initial.insert(name, value.parse().map_err(|_| bad())?);
                    }
                }
            }
        }
    }
    Ok(doc)
}

impl fmt::Display for ModelDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[elements]")?;
        for e in &self.elements {
            writeln!(f, "{} levels={} initial={}", e.name, e.levels, e.initial_level)?;
        }
        writeln!(f, "\n[influences]")?;
        for i in &self.influences {
            let sign = match i.sign {
                Sign::Positive => "positive",
                Sign::Negative => "negative",
            };
            writeln!(f, "{} -> {} sign={} weight={}", i.source, i.target, sign, i.weight)?;
        }
        writeln!(f, "\n[rules]")?;
        for (name, spec) in &self.rules {
            match spec {
                RuleSpec::Incremental(r) => {
                    write!(f, "{name} incremental")?;
                    if let Some(p) = r.positive() {
                        write!(f, " pos=\"{p}\"")?;
                    }
                    if let Some(n) = r.negative() {
                        write!(f, " neg=\"{n}\"")?;
                    }
                    writeln!(f, " mode={}", r.mode())?;
                }
                RuleSpec::Lookup { table, policy, inputs } => {
                    write!(f, "{name} lookup table=\"{table}\"")?;
                    if let Some(p) = policy {
                        write!(f, " policy={p}")?;
                    }
                    if let Some(i) = inputs {
                        write!(f, " inputs=\"{}\"", i.join(","))?;
                    }
                    writeln!(f)?;
                }
            }
        }
        if !self.series.is_empty() {
            writeln!(f, "\n[series]")?;
            for (name, spec) in &self.series {
                match spec {
                    SeriesSpec::File(p) => writeln!(f, "{name} file=\"{p}\"")?,
                    SeriesSpec::Inline(ts) => {
                        let pts: Vec<String> = ts.points().iter().map(|(s, l)| format!("{s}:{l}")).collect();
                        writeln!(f, "{name} inline=\"{}\"", pts.join(","))?;
                    }
                }
            }
        }
        let s = &self.scenario;
        if s.steps.is_some() || s.runs.is_some() || s.seed.is_some() || !s.initial.is_empty() {
            writeln!(f, "\n[scenario]")?;
            if let Some(v) = s.steps {
                writeln!(f, "steps = {v}")?;
            }
            if let Some(v) = s.runs {
                writeln!(f, "runs = {v}")?;
            }
            if let Some(v) = s.seed {
                writeln!(f, "seed = {v}")?;
            }
            for (name, level) in &s.initial {
                writeln!(f, "initial.{name} = {level}")?;
            }
        }
        Ok(())
    }
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl ModelDoc {
    /// Loads referenced tables and series and validates the model. Scenario
    /// fields missing from the file default to 0 steps, 1 run and
    /// [`DEFAULT_SEED`].
    pub fn resolve(&self, base_dir: &Path) -> Result<(Model, Scenario), FormatError> {
        let mut rules = Vec::with_capacity(self.rules.len());
        for (name, spec) in &self.rules {
            let rule = match spec {
                RuleSpec::Incremental(r) => UpdateRule::Incremental(r.clone()),
                RuleSpec::Lookup { table, policy, inputs } => {
                    let path = resolve_path(base_dir, table);
                    let mut t = read_lut_path(&path)?;
                    if let Some(p) = policy {
                        t = t.with_policy(*p);
                    }
                    let t = Arc::new(t);
                    match inputs {
                        Some(i) => UpdateRule::Lookup(LookupRule::with_inputs(t, i.clone())),
                        None => UpdateRule::Lookup(LookupRule::new(t)),
                    }
                }
            };
            rules.push((name.clone(), rule));
        }
        let model = build_model(self.elements.clone(), self.influences.clone(), rules)?;

        let mut scenario = Scenario::new(
            self.scenario.steps.unwrap_or(0),
            self.scenario.runs.unwrap_or(1),
            self.scenario.seed.unwrap_or(DEFAULT_SEED),
        );
        scenario.initial = self.scenario.initial.clone();
        for (name, spec) in &self.series {
            let ts = match spec {
                SeriesSpec::Inline(ts) => ts.clone(),
                SeriesSpec::File(p) => read_series_path(&resolve_path(base_dir, p))?,
            };
            scenario.series.insert(name.clone(), ts);
        }
        scenario.validate(&model)?;
        Ok((model, scenario))
    }
}

pub fn read_model_file(path: &Path) -> Result<(ModelDoc, Model, Scenario), FormatError> {
    let text = read_file(path)?;
    let doc = in_file(path, parse_model_doc(&text))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let (model, scenario) = in_file(path, doc.resolve(base))?;
    Ok((doc, model, scenario))
}

fn write_variable(out: &mut String, kind: &str, v: &Variable) {
    write!(out, "{kind} {} levels={}", v.name, v.levels).unwrap();
    if let Some(q) = &v.quantizer {
        let ts: Vec<String> = q.thresholds().iter().map(f64::to_string).collect();
        write!(out, " min={} max={} thresholds={}", q.min(), q.max(), ts.join(",")).unwrap();
    }
    out.push('\n');
}

pub fn write_lut(table: &LookupTable) -> String {
    let mut out = String::new();
    for v in table.inputs() {
        write_variable(&mut out, "input", v);
    }
    write_variable(&mut out, "output", table.output());
    writeln!(out, "policy {}", table.policy()).unwrap();
    out.push_str("entries\n");
    for (key, value) in table.entries() {
        for l in key {
            write!(out, "{l},").unwrap();
        }
        writeln!(out, "{value}").unwrap();
    }
    out
}

fn parse_variable(words: &[String], line: usize) -> Result<Variable, FormatError> {
    if words.is_empty() {
        return Err(syntax(line, "missing variable name"));
    }
    let name = check_name(&words[0], line)?;
    let opts = Options::parse(&words[1..], line, &["levels", "min", "max", "thresholds"])?;
    let levels: u32 = opts.require("levels")?;
    let quantizer = match (opts.get("min"), opts.get("max"), opts.get("thresholds")) {
        (None, None, None) => None,
        (Some(_), Some(_), Some(ts)) => {
            let thresholds = ts
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| syntax(line, format!("bad threshold `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            let q = Quantizer::new(opts.require("min")?, opts.require("max")?, thresholds)?;
            if q.levels() != levels {
                return Err(syntax(line, "threshold count does not match levels"));
            }
            Some(q)
        }
        _ => return Err(syntax(line, "quantizer needs min, max and thresholds together")),
    };
    Ok(Variable { name, levels, quantizer })
}

pub fn parse_lut(text: &str) -> Result<LookupTable, FormatError> {
    let mut inputs = Vec::new();
    let mut output = None;
    let mut policy = MissingPolicy::default();
    let mut entries = BTreeMap::new();
    let mut in_entries = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if in_entries {
            let nums = content
                .split(',')
                .map(|t| t.trim().parse::<u32>().map_err(|_| syntax(line, format!("bad level `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if nums.len() != inputs.len() + 1 {
                return Err(syntax(line, format!("expected {} values", inputs.len() + 1)));
            }
            let (key, value) = nums.split_at(inputs.len());
            if entries.insert(key.to_vec(), value[0]).is_some() {
                return Err(syntax(line, "duplicate entry"));
            }
            continue;
        }
        let words = tokenize(content, line)?;
        match words[0].as_str() {
            "input" => inputs.push(parse_variable(&words[1..], line)?),
            "output" => {
                if output.is_some() {
                    return Err(syntax(line, "duplicate output"));
                }
                output = Some(parse_variable(&words[1..], line)?);
            }
            "policy" if words.len() == 2 => {
                policy = words[1].parse().map_err(|e: LutError| syntax(line, e.to_string()))?;
            }
            "entries" if words.len() == 1 => in_entries = true,
            other => return Err(syntax(line, format!("unexpected `{other}`"))),
        }
    }
    let output = output.ok_or_else(|| syntax(0, "table has no output declaration"))?;
    Ok(LookupTable::new(inputs, output, entries, policy)?)
}

pub fn read_lut_path(path: &Path) -> Result<LookupTable, FormatError> {
    let text = read_file(path)?;
    in_file(path, parse_lut(&text))
}

/// Series file: CSV with `step` and `level` columns.
pub fn read_series_path(path: &Path) -> Result<TimeSeries, FormatError> {
    let file = std::fs::File::open(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    let ds = in_file(path, read_table(file, &Schema::new().numeric("step").numeric("level")).map_err(Into::into))?;
    let steps = ds.numeric_column("step")?;
    let levels = ds.numeric_column("level")?;
    let mut points = Vec::with_capacity(steps.len());
    for (i, (s, l)) in steps.iter().zip(&levels).enumerate() {
        match (s, l) {
            (Some(s), Some(l)) if s.fract() == 0.0 && l.fract() == 0.0 && *s >= 0.0 && *l >= 0.0 => {
                points.push((*s as usize, *l as u32))
            }
            _ => {
                return Err(FormatError::File {
                    path: path.to_path_buf(),
                    source: Box::new(syntax(i + 2, "step and level must be non-negative integers")),
                })
            }
        }
    }
    in_file(path, TimeSeries::new(points).map_err(Into::into))
}

pub fn write_series<W: Write>(series: &TimeSeries, mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,level")?;
    for (s, l) in series.points() {
        writeln!(w, "{s},{l}")?;
    }
    Ok(())
}

/// Aggregate output: one row per step and element, normalized units.
pub fn write_aggregate<W: Write>(set: &TraceSet, mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,element,levels,mean,std")?;
    for t in 0..=set.steps() {
        for (e, name) in set.names.iter().enumerate() {
            writeln!(w, "{t},{name},{},{},{}", set.levels[e], set.mean[e][t], set.std[e][t])?;
        }
    }
    Ok(())
}

/// One simulated element trajectory read back from an aggregate file.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub levels: u32,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn read_aggregate_element(path: &Path, element: &str) -> Result<AggregateSeries, FormatError> {
    let file = std::fs::File::open(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    let schema = Schema::new().numeric("step").text("element").numeric("levels").numeric("mean").numeric("std");
    let ds = in_file(path, read_table(file, &schema).map_err(Into::into))?;
    let names = ds.text_column("element")?;
    let steps = ds.numeric_column("step")?;
    let levels = ds.numeric_column("levels")?;
    let mean = ds.numeric_column("mean")?;
    let std = ds.numeric_column("std")?;
    let mut out = AggregateSeries { levels: 0, steps: Vec::new(), mean: Vec::new(), std: Vec::new() };
    for i in (0..names.len()).filter(|&i| names[i] == element) {
        let (Some(s), Some(l), Some(m), Some(sd)) = (steps[i], levels[i], mean[i], std[i]) else {
            return Err(FormatError::File {
                path: path.to_path_buf(),
                source: Box::new(syntax(i + 2, "missing value")),
            });
        };
        out.levels = l as u32;
        out.steps.push(s as usize);
        out.mean.push(m);
        out.std.push(sd);
    }
    if out.steps.is_empty() {
        return Err(FormatError::File {
            path: path.to_path_buf(),
            source: Box::new(syntax(0, format!("no rows for element `{element}`"))),
        });
    }
    Ok(out)
}

/// Per-run trace: `step,selected,<element levels...>`.
pub fn write_trace<W: Write>(trace: &Trace, names: &[String], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,selected,{}", names.join(","))?;
    for (t, sel) in trace.selected.iter().enumerate() {
        write!(w, "{t},{}", sel.map_or("", |i| names[i].as_str()))?;
        for series in &trace.levels {
            write!(w, ",{}", series[t])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// A variable declaration from the command line: `name:min:max:levels`, or
/// `name:levels` when the range comes from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub range: Option<(f64, f64)>,
    pub levels: u32,
}

impl std::str::FromStr for VariableSpec {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || FormatError::VariableSpec(s.to_string());
        let (name, range, levels) = match parts.as_slice() {
            [name, levels] => (*name, None, *levels),
            [name, min, max, levels] => {
                (*name, Some((min.parse().map_err(|_| bad())?, max.parse().map_err(|_| bad())?)), *levels)
            }
            _ => return Err(bad()),
        };
        if !is_identifier(name)
            || range.is_some_and(|(lo, hi): (f64, f64)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
        {
            return Err(bad());
        }
        let levels: u32 = levels.parse().map_err(|_| bad())?;
        if levels < 2 {
            return Err(bad());
        }
        Ok(VariableSpec { name: name.to_string(), range, levels })
    }
}

impl VariableSpec {
    /// Uniform quantizer over the declared range, or over the observed range
    /// of `data` when none was declared.
    pub fn quantizer(&self, data: &[f64]) -> Result<Quantizer, QuantizerError> {
        let (min, max) = match self.range {
            Some(r) => r,
            None => data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        };
        make_uniform_thresholds(min, max, self.levels)
    }
}

/// `min:max:levels` quantizer spec.
pub fn parse_quantizer_spec(s: &str) -> Result<Quantizer, FormatError> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let bad = || FormatError::VariableSpec(s.to_string());
    match parts.as_slice() {
        [min, max, levels] => Ok(make_uniform_thresholds(
            min.parse().map_err(|_| bad())?,
            max.parse().map_err(|_| bad())?,
            levels.parse().map_err(|_| bad())?,
        )?),
        _ => Err(bad()),
    }
}
