//! Lookup-table update rules built from quantized component-model data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{build_model, Element, Influence, LookupRule, Model, ModelError, UpdateRule};
use crate::quantizer::{quantize_value, Quantizer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LutError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("row {row} has {got} values; expected {expected}")]
    Arity { row: usize, expected: usize, got: usize },
    #[error("{names} names for {quantizers} quantizers")]
    NameMismatch { names: usize, quantizers: usize },
    #[error("table variable `{0}` needs at least 2 levels")]
    TooFewLevels(String),
    #[error("combination space overflows 64 bits")]
    TooLarge,
    #[error("entry key {key:?} does not match the table inputs")]
    BadKey { key: Vec<u32> },
    #[error("entry value {value} out of range for output `{output}` ({levels} levels)")]
    BadValue { value: u32, output: String, levels: u32 },
    #[error("malformed input tuple {0:?}")]
    MalformedTuple(Vec<u32>),
    #[error("no table entry for input levels {0:?}")]
    MissingEntry(Vec<u32>),
    #[error("unknown missing-entry policy `{0}`")]
    UnknownPolicy(String),
    #[error("table variable `{0}` has no mapping")]
    Unmapped(String),
    #[error("mapping names `{0}`, which is not a table variable")]
    UnknownVariable(String),
    #[error("element `{0}` is the target of more than one table variable")]
    MappedTwice(String),
    #[error("output element `{0}` is also mapped as a table input")]
    OutputIsInput(String),
    #[error("table variable `{variable}` has {table_levels} levels but element `{element}` has {element_levels}")]
    LevelMismatch { variable: String, element: String, table_levels: u32, element_levels: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a lookup does when the input tuple has no entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    Error,
    /// Keep the current output level.
    #[default]
    Hold,
    /// Use the entry at minimum Manhattan distance; ties go to the
    /// lexicographically smallest key.
    Nearest,
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPolicy::Error => "error",
            MissingPolicy::Hold => "hold",
            MissingPolicy::Nearest => "nearest",
        })
    }
}

impl std::str::FromStr for MissingPolicy {
    type Err = LutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(MissingPolicy::Error),
            "hold" => Ok(MissingPolicy::Hold),
            "nearest" => Ok(MissingPolicy::Nearest),
            other => Err(LutError::UnknownPolicy(other.to_string())),
        }
    }
}

/// A table variable: name, level count, and optionally the quantizer that
/// produced its levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub levels: u32,
    pub quantizer: Option<Quantizer>,
}

impl Variable {
    pub fn new(name: impl Into<String>, levels: u32) -> Self {
        Variable { name: name.into(), levels, quantizer: None }
    }

    pub fn quantized(name: impl Into<String>, quantizer: Quantizer) -> Self {
        Variable { name: name.into(), levels: quantizer.levels(), quantizer: Some(quantizer) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverageReport {
    pub total: u64,
    pub filled: u64,
    pub duplicate_groups: u64,
    pub max_spread: u32,
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "filled {}/{} combinations, duplicates merged {}, max spread {}",
            self.filled, self.total, self.duplicate_groups, self.max_spread
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    inputs: Vec<Variable>,
    output: Variable,
    entries: BTreeMap<Vec<u32>, u32>,
    policy: MissingPolicy,
    total: u64,
}

impl LookupTable {
    pub fn new(
        inputs: Vec<Variable>,
        output: Variable,
        entries: BTreeMap<Vec<u32>, u32>,
        policy: MissingPolicy,
    ) -> Result<Self, LutError> {
        let mut total: u64 = 1;
        for v in inputs.iter().chain(std::iter::once(&output)) {
            if v.levels < 2 {
                return Err(LutError::TooFewLevels(v.name.clone()));
            }
        }
        for v in &inputs {
            total = total.checked_mul(u64::from(v.levels)).ok_or(LutError::TooLarge)?;
        }
        for (key, &value) in &entries {
            if key.len() != inputs.len() || key.iter().zip(&inputs).any(|(&l, v)| l >= v.levels) {
                return Err(LutError::BadKey { key: key.clone() });
            }
            if value >= output.levels {
                return Err(LutError::BadValue { value, output: output.name.clone(), levels: output.levels });
            }
        }
        Ok(LookupTable { inputs, output, entries, policy, total })
    }

    pub fn inputs(&self) -> &[Variable] {
        &self.inputs
    }

    pub fn output(&self) -> &Variable {
        &self.output
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u32>, u32> {
        &self.entries
    }

    pub fn policy(&self) -> MissingPolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: MissingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn total_combinations(&self) -> u64 {
        self.total
    }

    pub fn get(&self, key: &[u32]) -> Option<u32> {
        self.entries.get(key).copied()
    }
}

fn median_level(sorted: &[u32]) -> u32 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        let mid = (f64::from(sorted[n / 2 - 1]) + f64::from(sorted[n / 2])) / 2.0;
        mid.round() as u32
    }
}

/// Quantizes each row, groups rows by input tuple and merges each group's
/// output levels by their median.
pub fn build_lookup_table(
    rows: &[Vec<f64>],
    input_quantizers: &[Quantizer],
    output_quantizer: &Quantizer,
    input_names: &[&str],
    output_name: &str,
) -> Result<(LookupTable, CoverageReport), LutError> {
    if input_names.len() != input_quantizers.len() {
        return Err(LutError::NameMismatch { names: input_names.len(), quantizers: input_quantizers.len() });
    }
    if rows.is_empty() {
        return Err(LutError::EmptyDataset);
    }
    let arity = input_quantizers.len() + 1;
    let mut groups: BTreeMap<Vec<u32>, Vec<u32>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != arity {
            return Err(LutError::Arity { row: i, expected: arity, got: row.len() });
        }
        let key = input_quantizers.iter().zip(row).map(|(q, &v)| quantize_value(q, v)).collect();
        groups.entry(key).or_default().push(quantize_value(output_quantizer, row[arity - 1]));
    }

    let mut duplicate_groups = 0;
    let mut max_spread = 0;
    let entries = groups
        .into_iter()
        .map(|(key, mut outs)| {
            outs.sort_unstable();
            if outs.len() > 1 {
                duplicate_groups += 1;
                max_spread = max_spread.max(outs[outs.len() - 1] - outs[0]);
            }
            (key, median_level(&outs))
        })
        .collect();

    let inputs = input_names.iter().zip(input_quantizers).map(|(n, q)| Variable::quantized(*n, q.clone())).collect();
    let output = Variable::quantized(output_name, output_quantizer.clone());
    let table = LookupTable::new(inputs, output, entries, MissingPolicy::default())?;
    let mut report = lut_completeness(&table);
    report.duplicate_groups = duplicate_groups;
    report.max_spread = max_spread;
    Ok((table, report))
}

/// Output level for `tuple`, applying the table's missing-entry policy.
pub fn lut_lookup(table: &LookupTable, tuple: &[u32], current: u32) -> Result<u32, LutError> {
    if tuple.len() != table.inputs.len() || tuple.iter().zip(&table.inputs).any(|(&l, v)| l >= v.levels) {
        return Err(LutError::MalformedTuple(tuple.to_vec()));
    }
    if let Some(v) = table.get(tuple) {
        return Ok(v);
    }
    match table.policy {
        MissingPolicy::Error => Err(LutError::MissingEntry(tuple.to_vec())),
        MissingPolicy::Hold => Ok(current),
        MissingPolicy::Nearest => {
            let mut best: Option<(u64, u32)> = None;
            // BTreeMap iterates keys in lexicographic order, so the first
            // minimum wins ties.
            for (key, &value) in &table.entries {
                let d: u64 = key.iter().zip(tuple).map(|(&a, &b)| u64::from(a.abs_diff(b))).sum();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, value));
                }
            }
            best.map(|(_, v)| v).ok_or_else(|| LutError::MissingEntry(tuple.to_vec()))
        }
    }
}

pub fn lut_completeness(table: &LookupTable) -> CoverageReport {
    CoverageReport { total: table.total, filled: table.entries.len() as u64, duplicate_groups: 0, max_spread: 0 }
}

/// Where a table variable lands in the host model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapTarget {
    Existing(String),
    /// A fresh element named after the table variable.
    New,
}

/// Inserts a component-model table into `model`.
///
/// New inputs become input elements at level 0, every table input gains a
/// positive weight-1 influence on the output element (unless some influence
/// between the pair already exists), and the output element's rule becomes
/// the lookup rule.
pub fn integrate_component_model(
    model: &Model,
    table: Arc<LookupTable>,
    mapping: &BTreeMap<String, MapTarget>,
) -> Result<Model, LutError> {
    let vars: Vec<&Variable> = table.inputs().iter().chain(std::iter::once(table.output())).collect();
    if let Some(unknown) = mapping.keys().find(|k| !vars.iter().any(|v| &v.name == *k)) {
        return Err(LutError::UnknownVariable(unknown.clone()));
    }

    let (mut elements, mut influences, mut rules) = model.to_parts();
    let mut bound = Vec::with_capacity(vars.len());
    let mut seen = BTreeSet::new();
    for var in &vars {
        let target = mapping.get(&var.name).ok_or_else(|| LutError::Unmapped(var.name.clone()))?;
        let name = match target {
            MapTarget::Existing(name) => {
                let e = model.element(name).ok_or_else(|| ModelError::UnknownInfluenceElement(name.clone()))?;
                if e.levels != var.levels {
                    return Err(LutError::LevelMismatch {
                        variable: var.name.clone(),
                        element: name.clone(),
                        table_levels: var.levels,
                        element_levels: e.levels,
                    });
                }
                name.clone()
            }
            MapTarget::New => {
                if model.element(&var.name).is_some() {
                    return Err(ModelError::DuplicateElement(var.name.clone()).into());
                }
                elements.push(Element::new(var.name.clone(), var.levels, 0));
                var.name.clone()
            }
        };
        if !seen.insert(name.clone()) {
            return Err(if std::ptr::eq(*var, table.output()) {
                LutError::OutputIsInput(name)
            } else {
                LutError::MappedTwice(name)
            });
        }
        bound.push(name);
    }

    let output = bound.pop().expect("output is always mapped");
    for input in &bound {
        if !influences.iter().any(|i| &i.source == input && i.target == output) {
            influences.push(Influence::positive(input.clone(), output.clone()));
        }
    }
    rules.insert(output.clone(), UpdateRule::Lookup(LookupRule::with_inputs(table, bound)));
    Ok(build_model(elements, influences, rules)?)
}
