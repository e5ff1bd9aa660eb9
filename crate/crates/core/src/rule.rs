//! Incremental update-rule expressions.
//!
//! Scores are built from normalized element values with three combinators:
//! discrete AND (`min`), discrete OR (`max`) and integer-weighted sums. The
//! concrete grammar is
//!
//! ```text
//! expr   := term ('+' term)*
//! term   := [integer '*'] factor
//! factor := NAME | 'min(' expr (',' expr)+ ')' | 'max(' expr (',' expr)+ ')' | '(' expr ')'
//! ```
//!
//! A lone term without an explicit weight is its factor; anything else is a
//! [`Expression::WeightedSum`]. The [`fmt::Display`] impl is the printer and
//! always produces text that parses back to the same tree.

use std::fmt;

use thiserror::Error;

use crate::model::{normalize, Model, State};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("weight at offset {pos} must be a positive integer")]
    NonPositiveWeight { pos: usize },
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("{0} needs at least two operands")]
    Arity(&'static str),
    #[error("weighted sum needs at least one term")]
    EmptySum,
    #[error("incremental rule needs a positive or a negative expression")]
    EmptyRule,
    #[error("unknown increment mode `{0}`")]
    UnknownMode(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expression {
    Element(String),
    WeightedSum(Vec<(u32, Expression)>),
    Min(Vec<Expression>),
    Max(Vec<Expression>),
}

impl Expression {
    pub fn element(name: impl Into<String>) -> Self {
        Expression::Element(name.into())
    }

    /// Checks the structural invariants that the parser enforces, for trees
    /// built by hand.
    pub fn validate(&self) -> Result<(), RuleError> {
        match self {
            Expression::Element(_) => Ok(()),
            Expression::WeightedSum(terms) => {
                if terms.is_empty() {
                    return Err(RuleError::EmptySum);
                }
                for (w, e) in terms {
                    if *w == 0 {
                        return Err(RuleError::NonPositiveWeight { pos: 0 });
                    }
                    e.validate()?;
                }
                Ok(())
            }
            Expression::Min(ops) | Expression::Max(ops) => {
                if ops.len() < 2 {
                    return Err(RuleError::Arity(self.op_name()));
                }
                ops.iter().try_for_each(Expression::validate)
            }
        }
    }

    fn op_name(&self) -> &'static str {
        match self {
            Expression::Min(_) => "min",
            Expression::Max(_) => "max",
            Expression::WeightedSum(_) => "sum",
            Expression::Element(_) => "element",
        }
    }

    /// Every element name referenced by the expression, in order of appearance.
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expression::Element(n) => out.push(n),
            Expression::WeightedSum(terms) => terms.iter().for_each(|(_, e)| e.collect_refs(out)),
            Expression::Min(ops) | Expression::Max(ops) => ops.iter().for_each(|e| e.collect_refs(out)),
        }
    }

    /// Resolves element names to indices using `lookup`.
    pub fn bind<F>(&self, lookup: &F) -> Result<BoundExpr, RuleError>
    where
        F: Fn(&str) -> Option<usize>,
    {
        Ok(match self {
            Expression::Element(n) => {
                BoundExpr::Element(lookup(n).ok_or_else(|| RuleError::UnknownElement(n.clone()))?)
            }
            Expression::WeightedSum(terms) => {
                let total: u64 = terms.iter().map(|(w, _)| u64::from(*w)).sum();
                let terms = terms
                    .iter()
                    .map(|(w, e)| Ok((f64::from(*w), e.bind(lookup)?)))
                    .collect::<Result<Vec<_>, RuleError>>()?;
                BoundExpr::WeightedSum { terms, total: total as f64 }
            }
            Expression::Min(ops) => BoundExpr::Min(ops.iter().map(|e| e.bind(lookup)).collect::<Result<_, _>>()?),
            Expression::Max(ops) => BoundExpr::Max(ops.iter().map(|e| e.bind(lookup)).collect::<Result<_, _>>()?),
        })
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Element(n) => f.write_str(n),
            Expression::WeightedSum(terms) => {
                let single = terms.len() == 1;
                for (i, (w, e)) in terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    if single || *w != 1 {
                        write!(f, "{w}*")?;
                    }
                    // A sum nested as a term must be parenthesized.
                    if matches!(e, Expression::WeightedSum(_)) {
                        write!(f, "({e})")?;
                    } else {
                        write!(f, "{e}")?;
                    }
                }
                Ok(())
            }
            Expression::Min(ops) | Expression::Max(ops) => {
                write!(f, "{}(", self.op_name())?;
                for (i, e) in ops.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl std::str::FromStr for Expression {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rule_expression(s)
    }
}

/// Expression with element names resolved to model indices.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    Element(usize),
    WeightedSum { terms: Vec<(f64, BoundExpr)>, total: f64 },
    Min(Vec<BoundExpr>),
    Max(Vec<BoundExpr>),
}

impl BoundExpr {
    /// Score in `[0, 1]` given current levels and per-element level counts.
    pub fn eval(&self, levels: &[u32], counts: &[u32]) -> f64 {
        match self {
            BoundExpr::Element(i) => f64::from(levels[*i]) / f64::from(counts[*i] - 1),
            BoundExpr::WeightedSum { terms, total } => {
                terms.iter().map(|(w, e)| w * e.eval(levels, counts)).sum::<f64>() / total
            }
            BoundExpr::Min(ops) => ops.iter().map(|e| e.eval(levels, counts)).fold(f64::INFINITY, f64::min),
            BoundExpr::Max(ops) => ops.iter().map(|e| e.eval(levels, counts)).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub fn parse_rule_expression(text: &str) -> Result<Expression, RuleError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(p.error("empty expression"));
    }
    let expr = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn error(&self, message: &str) -> RuleError {
        RuleError::Syntax { pos: self.pos, message: message.to_string() }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), RuleError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expression, RuleError> {
        let mut terms = vec![self.term()?];
        while self.eat(b'+') {
            terms.push(self.term()?);
        }
        if terms.len() == 1 && terms[0].0.is_none() {
            return Ok(terms.pop().unwrap().1);
        }
        Ok(Expression::WeightedSum(terms.into_iter().map(|(w, e)| (w.unwrap_or(1), e)).collect()))
    }

    fn term(&mut self) -> Result<(Option<u32>, Expression), RuleError> {
        self.skip_ws();
        let weight = if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let w: u32 =
                digits.parse().map_err(|_| RuleError::Syntax { pos: start, message: "weight too large".into() })?;
            if w == 0 {
                return Err(RuleError::NonPositiveWeight { pos: start });
            }
            self.expect(b'*')?;
            Some(w)
        } else if self.peek() == Some(b'-') {
            return Err(RuleError::NonPositiveWeight { pos: self.pos });
        } else {
            None
        };
        Ok((weight, self.factor()?))
    }

    fn factor(&mut self) -> Result<Expression, RuleError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
                let save = self.pos;
                if (name == "min" || name == "max") && self.eat(b'(') {
                    let mut ops = vec![self.expr()?];
                    while self.eat(b',') {
                        ops.push(self.expr()?);
                    }
                    self.expect(b')')?;
                    if ops.len() < 2 {
                        return Err(if name == "min" { RuleError::Arity("min") } else { RuleError::Arity("max") });
                    }
                    return Ok(if name == "min" { Expression::Min(ops) } else { Expression::Max(ops) });
                }
                self.pos = save;
                Ok(Expression::Element(name))
            }
            Some(_) => Err(self.error("expected element name, `min(`, `max(` or `(`")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

/// Element score for an expression against a named state.
pub fn evaluate_expression(expr: &Expression, state: &State, model: &Model) -> Result<f64, RuleError> {
    match expr {
        Expression::Element(n) => {
            let idx = model.index_of(n).ok_or_else(|| RuleError::UnknownElement(n.clone()))?;
            Ok(normalize(state.levels()[idx], model.elements()[idx].levels).expect("state levels are in range"))
        }
        Expression::WeightedSum(terms) => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (w, e) in terms {
                num += f64::from(*w) * evaluate_expression(e, state, model)?;
                den += f64::from(*w);
            }
            Ok(num / den)
        }
        Expression::Min(ops) => {
            ops.iter().try_fold(f64::INFINITY, |acc, e| Ok(acc.min(evaluate_expression(e, state, model)?)))
        }
        Expression::Max(ops) => {
            ops.iter().try_fold(f64::NEG_INFINITY, |acc, e| Ok(acc.max(evaluate_expression(e, state, model)?)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IncrementMode {
    /// One level up when the positive score wins, one level down otherwise.
    Step,
    /// Change scaled by the score difference and the target's level count.
    #[default]
    Proportional,
}

impl fmt::Display for IncrementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IncrementMode::Step => "step",
            IncrementMode::Proportional => "proportional",
        })
    }
}

impl std::str::FromStr for IncrementMode {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(IncrementMode::Step),
            "proportional" => Ok(IncrementMode::Proportional),
            other => Err(RuleError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncrementalRule {
    positive: Option<Expression>,
    negative: Option<Expression>,
    mode: IncrementMode,
}

impl IncrementalRule {
    pub fn new(
        positive: Option<Expression>,
        negative: Option<Expression>,
        mode: IncrementMode,
    ) -> Result<Self, RuleError> {
        if positive.is_none() && negative.is_none() {
            return Err(RuleError::EmptyRule);
        }
        for e in positive.iter().chain(negative.iter()) {
            e.validate()?;
        }
        Ok(IncrementalRule { positive, negative, mode })
    }

    /// Parses optional positive/negative expression texts.
    pub fn parse(positive: Option<&str>, negative: Option<&str>, mode: IncrementMode) -> Result<Self, RuleError> {
        let positive = positive.map(parse_rule_expression).transpose()?;
        let negative = negative.map(parse_rule_expression).transpose()?;
        Self::new(positive, negative, mode)
    }

    pub fn positive(&self) -> Option<&Expression> {
        self.positive.as_ref()
    }

    pub fn negative(&self) -> Option<&Expression> {
        self.negative.as_ref()
    }

    pub fn mode(&self) -> IncrementMode {
        self.mode
    }

    pub fn references(&self) -> Vec<&str> {
        self.positive.iter().chain(self.negative.iter()).flat_map(|e| e.references()).collect()
    }
}

/// Signed level change for a target with `levels` levels, given the scores of
/// whichever sides of the rule are present.
pub fn incremental_delta(pos: Option<f64>, neg: Option<f64>, levels: u32, mode: IncrementMode) -> i64 {
    match (pos, neg) {
        (Some(0.0), None) => return -1,
        (None, Some(0.0)) => return 1,
        _ => {}
    }
    let p = pos.unwrap_or(0.0);
    let n = neg.unwrap_or(0.0);
    match mode {
        IncrementMode::Step => {
            if p > n {
                1
            } else {
                -1
            }
        }
        IncrementMode::Proportional => {
            let delta = ((p - n) * f64::from(levels - 1)).round() as i64;
            if delta == 0 && pos.is_some() && neg.is_some() && p <= n {
                -1
            } else {
                delta
            }
        }
    }
}

pub(crate) fn apply_delta(current: u32, delta: i64, levels: u32) -> u32 {
    (i64::from(current) + delta).clamp(0, i64::from(levels) - 1) as u32
}

/// Next level of `target` under an incremental rule.
pub fn next_value_incremental(
    rule: &IncrementalRule,
    target: &str,
    state: &State,
    model: &Model,
) -> Result<u32, RuleError> {
    let idx = model.index_of(target).ok_or_else(|| RuleError::UnknownElement(target.to_string()))?;
    let pos = rule.positive.as_ref().map(|e| evaluate_expression(e, state, model)).transpose()?;
    let neg = rule.negative.as_ref().map(|e| evaluate_expression(e, state, model)).transpose()?;
    let levels = model.elements()[idx].levels;
    Ok(apply_delta(state.levels()[idx], incremental_delta(pos, neg, levels, rule.mode), levels))
}
