//! Element-based model representation, states and scenarios.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::lut::LookupTable;
use crate::rule::{BoundExpr, IncrementMode, IncrementalRule, RuleError};

/// Seed used when a scenario does not name one.
pub const DEFAULT_SEED: u64 = 0x00C0_FFEE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate element `{0}`")]
    DuplicateElement(String),
    #[error("invalid element name `{0}`")]
    InvalidName(String),
    #[error("element `{element}` has {levels} levels; at least 2 are required")]
    TooFewLevels { element: String, levels: u32 },
    #[error("level {level} out of range for `{element}` ({levels} levels)")]
    LevelOutOfRange { element: String, level: u32, levels: u32 },
    #[error("influence references unknown element `{0}`")]
    UnknownInfluenceElement(String),
    #[error("influence {source_name} -> {target} has weight 0")]
    ZeroWeight { source_name: String, target: String },
    #[error("rule on input `{0}`: element has no incoming influences")]
    RuleOnInput(String),
    #[error("rule for unknown element `{0}`")]
    RuleForUnknownElement(String),
    #[error("duplicate rule for `{0}`")]
    DuplicateRule(String),
    #[error("rule for `{element}` references unknown element `{reference}`")]
    UnknownRuleReference { element: String, reference: String },
    #[error("element `{0}` has incoming influences but no rule")]
    MissingRule(String),
    #[error("invalid rule for `{element}`: {source}")]
    Rule { element: String, source: RuleError },
    #[error("lookup rule for `{element}` binds {got} inputs but the table has {expected}")]
    LookupArity { element: String, expected: usize, got: usize },
    #[error("lookup rule for `{element}`: table variable `{variable}` has {table_levels} levels but element `{bound}` has {element_levels}")]
    LookupLevels { element: String, variable: String, bound: String, table_levels: u32, element_levels: u32 },
    #[error("level {level} out of range for {levels} levels")]
    NormalizeOutOfRange { level: u32, levels: u32 },
    #[error("scenario references unknown element `{0}`")]
    UnknownScenarioElement(String),
    #[error("series for `{element}` sets level {level} at step {step} but the element has {levels} levels")]
    SeriesLevelOutOfRange { element: String, step: usize, level: u32, levels: u32 },
    #[error("time series steps must be strictly increasing (step {0})")]
    SeriesOrder(usize),
    #[error("state has {got} levels for {expected} elements")]
    StateArity { expected: usize, got: usize },
    #[error("scenario needs at least one run")]
    ZeroRuns,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub levels: u32,
    pub initial_level: u32,
}

impl Element {
    pub fn new(name: impl Into<String>, levels: u32, initial_level: u32) -> Self {
        Element { name: name.into(), levels, initial_level }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Influence {
    pub source: String,
    pub target: String,
    pub sign: Sign,
    pub weight: u32,
}

impl Influence {
    pub fn positive(source: impl Into<String>, target: impl Into<String>) -> Self {
        Influence { source: source.into(), target: target.into(), sign: Sign::Positive, weight: 1 }
    }

    pub fn negative(source: impl Into<String>, target: impl Into<String>) -> Self {
        Influence { source: source.into(), target: target.into(), sign: Sign::Negative, weight: 1 }
    }

    pub fn with_weight(mut self, weight: u32) -> Self {
        self.weight = weight;
        self
    }
}

/// Lookup-table rule. `inputs[i]` is the element feeding table input `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupRule {
    pub table: Arc<LookupTable>,
    pub inputs: Vec<String>,
}

impl LookupRule {
    /// Binds each table input to the element of the same name.
    pub fn new(table: Arc<LookupTable>) -> Self {
        let inputs = table.inputs().iter().map(|v| v.name.clone()).collect();
        LookupRule { table, inputs }
    }

    pub fn with_inputs(table: Arc<LookupTable>, inputs: Vec<String>) -> Self {
        LookupRule { table, inputs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateRule {
    Incremental(IncrementalRule),
    Lookup(LookupRule),
}

impl UpdateRule {
    fn references(&self) -> Vec<&str> {
        match self {
            UpdateRule::Incremental(r) => r.references(),
            UpdateRule::Lookup(r) => r.inputs.iter().map(String::as_str).collect(),
        }
    }
}

/// Rule with element names resolved to indices, as used by the engine.
#[derive(Debug, Clone)]
pub enum CompiledRule {
    Incremental { positive: Option<BoundExpr>, negative: Option<BoundExpr>, mode: IncrementMode },
    Lookup { table: Arc<LookupTable>, inputs: Vec<usize> },
}

/// A validated element-based model. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Model {
    elements: Vec<Element>,
    influences: Vec<Influence>,
    rules: BTreeMap<String, UpdateRule>,
    index: HashMap<String, usize>,
    is_input: Vec<bool>,
    compiled: Vec<Option<CompiledRule>>,
    counts: Vec<u32>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.elements == other.elements && self.influences == other.influences && self.rules == other.rules
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn build_model<R>(elements: Vec<Element>, influences: Vec<Influence>, rules: R) -> Result<Model, ModelError>
where
    R: IntoIterator<Item = (String, UpdateRule)>,
{
    let mut index = HashMap::with_capacity(elements.len());
    for (i, e) in elements.iter().enumerate() {
        if !is_identifier(&e.name) {
            return Err(ModelError::InvalidName(e.name.clone()));
        }
        if e.levels < 2 {
            return Err(ModelError::TooFewLevels { element: e.name.clone(), levels: e.levels });
        }
        if e.initial_level >= e.levels {
            return Err(ModelError::LevelOutOfRange {
                element: e.name.clone(),
                level: e.initial_level,
                levels: e.levels,
            });
        }
        if index.insert(e.name.clone(), i).is_some() {
            return Err(ModelError::DuplicateElement(e.name.clone()));
        }
    }

    let mut has_incoming = vec![false; elements.len()];
    for inf in &influences {
        let src = index.get(&inf.source);
        let dst = index.get(&inf.target);
        match (src, dst) {
            (None, _) => return Err(ModelError::UnknownInfluenceElement(inf.source.clone())),
            (_, None) => return Err(ModelError::UnknownInfluenceElement(inf.target.clone())),
            (Some(_), Some(&t)) => has_incoming[t] = true,
        }
        if inf.weight == 0 {
            return Err(ModelError::ZeroWeight { source_name: inf.source.clone(), target: inf.target.clone() });
        }
    }

    let mut rule_map = BTreeMap::new();
    for (name, rule) in rules {
        let Some(&idx) = index.get(&name) else {
            return Err(ModelError::RuleForUnknownElement(name));
        };
        if !has_incoming[idx] {
            return Err(ModelError::RuleOnInput(name));
        }
        if rule_map.contains_key(&name) {
            return Err(ModelError::DuplicateRule(name));
        }
        if let Some(missing) = rule.references().into_iter().find(|r| !index.contains_key(*r)) {
            return Err(ModelError::UnknownRuleReference { element: name.clone(), reference: missing.to_string() });
        }
        rule_map.insert(name, rule);
    }

    let is_input: Vec<bool> = has_incoming.iter().map(|h| !h).collect();
    let mut compiled = vec![None; elements.len()];
    let lookup = |n: &str| index.get(n).copied();
    for (i, e) in elements.iter().enumerate() {
        if is_input[i] {
            continue;
        }
        let rule = rule_map.get(&e.name).ok_or_else(|| ModelError::MissingRule(e.name.clone()))?;
        compiled[i] = Some(compile_rule(&e.name, e, rule, &elements, &lookup)?);
    }

    let counts = elements.iter().map(|e| e.levels).collect();
    Ok(Model { elements, influences, rules: rule_map, index, is_input, compiled, counts })
}

fn compile_rule<F>(
    name: &str,
    target: &Element,
    rule: &UpdateRule,
    elements: &[Element],
    lookup: &F,
) -> Result<CompiledRule, ModelError>
where
    F: Fn(&str) -> Option<usize>,
{
    let wrap = |source: RuleError| ModelError::Rule { element: name.to_string(), source };
    match rule {
        UpdateRule::Incremental(r) => {
            let bind = |e: Option<&crate::rule::Expression>| -> Result<Option<BoundExpr>, ModelError> {
                e.map(|e| {
                    e.validate().map_err(wrap)?;
                    e.bind(lookup).map_err(wrap)
                })
                .transpose()
            };
            Ok(CompiledRule::Incremental {
                positive: bind(r.positive())?,
                negative: bind(r.negative())?,
                mode: r.mode(),
            })
        }
        UpdateRule::Lookup(r) => {
            let table = &r.table;
            if r.inputs.len() != table.inputs().len() {
                return Err(ModelError::LookupArity {
                    element: name.to_string(),
                    expected: table.inputs().len(),
                    got: r.inputs.len(),
                });
            }
            let mut inputs = Vec::with_capacity(r.inputs.len());
            for (var, bound) in table.inputs().iter().zip(&r.inputs) {
                let idx = lookup(bound).expect("references checked above");
                if elements[idx].levels != var.levels {
                    return Err(ModelError::LookupLevels {
                        element: name.to_string(),
                        variable: var.name.clone(),
                        bound: bound.clone(),
                        table_levels: var.levels,
                        element_levels: elements[idx].levels,
                    });
                }
                inputs.push(idx);
            }
            if table.output().levels != target.levels {
                return Err(ModelError::LookupLevels {
                    element: name.to_string(),
                    variable: table.output().name.clone(),
                    bound: name.to_string(),
                    table_levels: table.output().levels,
                    element_levels: target.levels,
                });
            }
            Ok(CompiledRule::Lookup { table: Arc::clone(table), inputs })
        }
    }
}

impl Model {
    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn influences(&self) -> &[Influence] {
        &self.influences
    }

    pub fn rules(&self) -> &BTreeMap<String, UpdateRule> {
        &self.rules
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.index_of(name).map(|i| &self.elements[i])
    }

    pub fn rule(&self, name: &str) -> Option<&UpdateRule> {
        self.rules.get(name)
    }

    pub fn is_input(&self, idx: usize) -> bool {
        self.is_input[idx]
    }

    /// Names of elements with no incoming influences.
    pub fn inputs(&self) -> BTreeSet<&str> {
        self.elements.iter().zip(&self.is_input).filter(|(_, i)| **i).map(|(e, _)| e.name.as_str()).collect()
    }

    pub fn level_counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn compiled_rule(&self, idx: usize) -> Option<&CompiledRule> {
        self.compiled[idx].as_ref()
    }

    /// Decomposes into parts suitable for rebuilding a modified model.
    pub fn to_parts(&self) -> (Vec<Element>, Vec<Influence>, BTreeMap<String, UpdateRule>) {
        (self.elements.clone(), self.influences.clone(), self.rules.clone())
    }
}

/// Maps a level to the unit interval: `level / (levels - 1)`.
pub fn normalize(level: u32, levels: u32) -> Result<f64, ModelError> {
    if levels < 2 || level >= levels {
        return Err(ModelError::NormalizeOutOfRange { level, levels });
    }
    Ok(f64::from(level) / f64::from(levels - 1))
}

/// Current level of every element, in model element order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State(Vec<u32>);

impl State {
    pub fn from_levels(model: &Model, levels: Vec<u32>) -> Result<Self, ModelError> {
        if levels.len() != model.elements.len() {
            return Err(ModelError::StateArity { expected: model.elements.len(), got: levels.len() });
        }
        for (e, &l) in model.elements.iter().zip(&levels) {
            if l >= e.levels {
                return Err(ModelError::LevelOutOfRange { element: e.name.clone(), level: l, levels: e.levels });
            }
        }
        Ok(State(levels))
    }

    /// Builds a state from a name map; unnamed elements take their defaults.
    pub fn from_map(model: &Model, map: &BTreeMap<String, u32>) -> Result<Self, ModelError> {
        let mut levels: Vec<u32> = model.elements.iter().map(|e| e.initial_level).collect();
        for (name, &l) in map {
            let i = model.index_of(name).ok_or_else(|| ModelError::UnknownScenarioElement(name.clone()))?;
            levels[i] = l;
        }
        Self::from_levels(model, levels)
    }

    pub fn levels(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, model: &Model, name: &str) -> Option<u32> {
        model.index_of(name).map(|i| self.0[i])
    }

    pub fn to_map(&self, model: &Model) -> BTreeMap<String, u32> {
        model.elements.iter().zip(&self.0).map(|(e, &l)| (e.name.clone(), l)).collect()
    }
}

/// Levels forced at designated steps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TimeSeries {
    points: Vec<(usize, u32)>,
}

impl TimeSeries {
    pub fn new(points: Vec<(usize, u32)>) -> Result<Self, ModelError> {
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(ModelError::SeriesOrder(w[1].0));
        }
        Ok(TimeSeries { points })
    }

    pub fn points(&self) -> &[(usize, u32)] {
        &self.points
    }

    pub fn get(&self, step: usize) -> Option<u32> {
        self.points.binary_search_by_key(&step, |&(s, _)| s).ok().map(|i| self.points[i].1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub initial: BTreeMap<String, u32>,
    pub series: BTreeMap<String, TimeSeries>,
    pub steps: usize,
    pub runs: usize,
    pub master_seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario { initial: BTreeMap::new(), series: BTreeMap::new(), steps: 0, runs: 1, master_seed: DEFAULT_SEED }
    }
}

impl Scenario {
    pub fn new(steps: usize, runs: usize, master_seed: u64) -> Self {
        Scenario { steps, runs, master_seed, ..Default::default() }
    }

    pub fn with_initial(mut self, name: impl Into<String>, level: u32) -> Self {
        self.initial.insert(name.into(), level);
        self
    }

    pub fn with_series(mut self, name: impl Into<String>, series: TimeSeries) -> Self {
        self.series.insert(name.into(), series);
        self
    }

    pub fn validate(&self, model: &Model) -> Result<(), ModelError> {
        if self.runs == 0 {
            return Err(ModelError::ZeroRuns);
        }
        for (name, &level) in &self.initial {
            let e = model.element(name).ok_or_else(|| ModelError::UnknownScenarioElement(name.clone()))?;
            if level >= e.levels {
                return Err(ModelError::LevelOutOfRange { element: name.clone(), level, levels: e.levels });
            }
        }
        for (name, series) in &self.series {
            let e = model.element(name).ok_or_else(|| ModelError::UnknownScenarioElement(name.clone()))?;
            if let Some(&(step, level)) = series.points().iter().find(|(_, l)| *l >= e.levels) {
                return Err(ModelError::SeriesLevelOutOfRange { element: name.clone(), step, level, levels: e.levels });
            }
        }
        Ok(())
    }
}

/// State at step 0: series value at step 0, else scenario override, else the
/// element default.
pub fn initial_state(model: &Model, scenario: &Scenario) -> Result<State, ModelError> {
    scenario.validate(model)?;
    let levels = model
        .elements
        .iter()
        .map(|e| {
            scenario
                .series
                .get(&e.name)
                .and_then(|s| s.get(0))
                .or_else(|| scenario.initial.get(&e.name).copied())
                .unwrap_or(e.initial_level)
        })
        .collect();
    Ok(State(levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn incr(pos: &str) -> UpdateRule {
        UpdateRule::Incremental(IncrementalRule::parse(Some(pos), None, IncrementMode::Proportional).unwrap())
    }

    fn py_model() -> Model {
        build_model(
            vec![Element::new("P", 3, 0), Element::new("Y", 3, 1)],
            vec![Influence::positive("P", "Y")],
            [("Y".to_string(), incr("P"))],
        )
        .unwrap()
    }

    #[test]
    fn minimal_model_has_one_input() {
        let m = build_model(vec![Element::new("P", 3, 0)], vec![], []).unwrap();
        assert_eq!(m.inputs().into_iter().collect::<Vec<_>>(), vec!["P"]);
    }

    #[test]
    fn precipitation_drives_yield() {
        let m = py_model();
        assert_eq!(m.inputs().into_iter().collect::<Vec<_>>(), vec!["P"]);
        assert!(!m.is_input(1));
        assert!(m.compiled_rule(1).is_some());
    }

    #[test]
    fn construction_errors() {
        let err = build_model(vec![Element::new("P", 3, 0)], vec![], [("P".to_string(), incr("P"))]).unwrap_err();
        assert_eq!(err, ModelError::RuleOnInput("P".into()));
        assert!(err.to_string().contains("rule on input"));

        let err = build_model(vec![Element::new("P", 3, 0), Element::new("P", 2, 0)], vec![], []).unwrap_err();
        assert_eq!(err, ModelError::DuplicateElement("P".into()));

        let err = build_model(vec![Element::new("P", 1, 0)], vec![], []).unwrap_err();
        assert!(matches!(err, ModelError::TooFewLevels { .. }));

        let err = build_model(vec![Element::new("P", 3, 0)], vec![Influence::positive("Q", "P")], []).unwrap_err();
        assert_eq!(err, ModelError::UnknownInfluenceElement("Q".into()));

        let err = build_model(
            vec![Element::new("P", 3, 0), Element::new("Y", 3, 0)],
            vec![Influence::positive("P", "Y")],
            [("Y".to_string(), incr("P + Z"))],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::UnknownRuleReference { reference, .. } if reference == "Z"));

        let err = build_model(
            vec![Element::new("P", 3, 0), Element::new("Y", 3, 0)],
            vec![Influence::positive("P", "Y")],
            [],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::MissingRule("Y".into()));

        let err = build_model(vec![Element::new("9x", 3, 0)], vec![], []).unwrap_err();
        assert_eq!(err, ModelError::InvalidName("9x".into()));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(1, 3).unwrap(), 0.5);
        assert_eq!(normalize(4, 9).unwrap(), 0.5);
        assert_eq!(normalize(0, 7).unwrap(), 0.0);
        assert_eq!(normalize(6, 7).unwrap(), 1.0);
        assert!(normalize(3, 3).is_err());
    }

    #[test]
    fn initial_state_precedence() {
        let m = py_model();
        let base = Scenario::new(1, 1, 0);
        assert_eq!(initial_state(&m, &base).unwrap().levels(), &[0, 1]);
        let over = base.clone().with_initial("Y", 2);
        assert_eq!(initial_state(&m, &over).unwrap().levels(), &[0, 2]);
        let forced = base.with_series("P", TimeSeries::new(vec![(0, 2)]).unwrap());
        assert_eq!(initial_state(&m, &forced).unwrap().to_map(&m), BTreeMap::from([("P".into(), 2), ("Y".into(), 1)]));
    }

    #[test]
    fn scenario_validation() {
        let m = py_model();
        assert!(matches!(
            Scenario::new(1, 1, 0).with_initial("Y", 3).validate(&m),
            Err(ModelError::LevelOutOfRange { .. })
        ));
        assert!(matches!(
            Scenario::new(1, 1, 0).with_series("P", TimeSeries::new(vec![(0, 0), (4, 5)]).unwrap()).validate(&m),
            Err(ModelError::SeriesLevelOutOfRange { step: 4, .. })
        ));
        assert_eq!(Scenario::new(1, 0, 0).validate(&m), Err(ModelError::ZeroRuns));
        assert!(TimeSeries::new(vec![(1, 0), (1, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_strictly_increasing_and_invertible(levels in 2u32..200) {
            let mut prev = -1.0;
            for l in 0..levels {
                let v = normalize(l, levels).unwrap();
                prop_assert!(v > prev);
                prop_assert_eq!((v * f64::from(levels - 1)).round() as u32, l);
                prev = v;
            }
        }

        #[test]
        fn inputs_are_elements_without_incoming_edges(
            n in 2usize..8,
            edges in prop::collection::vec((0usize..8, 0usize..8), 0..12),
        ) {
            let elements: Vec<Element> = (0..n).map(|i| Element::new(format!("E{i}"), 3, 0)).collect();
            let influences: Vec<Influence> = edges
                .iter()
                .filter(|(s, t)| *s < n && *t < n)
                .map(|(s, t)| Influence::positive(format!("E{s}"), format!("E{t}")))
                .collect();
            let targets: BTreeSet<String> = influences.iter().map(|i| i.target.clone()).collect();
            let rules: Vec<(String, UpdateRule)> = targets.iter().map(|t| (t.clone(), incr("E0"))).collect();
            let m = build_model(elements, influences, rules).unwrap();
            let expected: BTreeSet<String> = (0..n).map(|i| format!("E{i}")).filter(|e| !targets.contains(e)).collect();
            let got: BTreeSet<String> = m.inputs().into_iter().map(String::from).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn malformed_models_are_rejected(kind in 0usize..6, levels in 0u32..2) {
            let good = || vec![Element::new("A", 3, 0), Element::new("B", 3, 0)];
            let edge = || vec![Influence::positive("A", "B")];
            let rule = || vec![("B".to_string(), incr("A"))];
            let result = match kind {
                0 => build_model(vec![Element::new("A", 3, 0), Element::new("A", 3, 0)], vec![], vec![]),
                1 => build_model(good(), vec![Influence::positive("A", "C")], vec![]),
                2 => build_model(good(), vec![], rule()),
                3 => build_model(good(), edge(), vec![("B".to_string(), incr("Z"))]),
                4 => build_model(vec![Element::new("A", levels, 0)], vec![], vec![]),
                _ => build_model(good(), edge(), vec![]),
            };
            prop_assert!(result.is_err());
        }
    }
}
