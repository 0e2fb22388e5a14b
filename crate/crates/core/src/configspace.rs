//! Categorical configuration spaces encoded as concatenated one-hot blocks.
//!
//! A [`ConfigurationSpace`] is an ordered list of categorical [`Parameter`]s plus
//! linear constraints over the `(parameter, value)` indicator variables. The
//! binary encoding of a configuration lays the one-hot block of every parameter
//! out in declaration order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when checking linear constraints with real coefficients.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A map from parameter name to chosen value label.
pub type Assignment = BTreeMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown value `{value}` for parameter `{param}`")]
    UnknownValue { param: String, value: String },
    #[error("assignment is missing parameter `{0}`")]
    MissingParameter(String),
    #[error("encoding has length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("block of parameter `{0}` is not one-hot")]
    NotOneHot(String),
    #[error("invalid space definition: {0}")]
    Invalid(String),
    #[error("cannot read space file: {0}")]
    Io(String),
}

/// A categorical parameter with at least two distinct value labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub values: Vec<String>,
}

impl Parameter {
    pub fn new<S: Into<String>>(name: S, values: &[&str]) -> Self {
        Parameter {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=", alias = "le")]
    Le,
    #[serde(rename = "=", alias = "==", alias = "eq")]
    Eq,
    #[serde(rename = ">=", alias = "ge")]
    Ge,
}

impl Relation {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Le => lhs <= rhs + FEASIBILITY_TOL,
            Relation::Eq => (lhs - rhs).abs() <= FEASIBILITY_TOL,
            Relation::Ge => lhs >= rhs - FEASIBILITY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub param: String,
    pub value: String,
    pub coef: f64,
}

/// `Σ coef · x(param, value)  relation  rhs` over indicator variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<Term>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A constraint resolved to `(parameter index, value index, coefficient)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledConstraint {
    pub terms: Vec<(usize, usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl CompiledConstraint {
    pub fn lhs(&self, choices: &[usize]) -> f64 {
        self.terms
            .iter()
            .filter(|(p, v, _)| choices[*p] == *v)
            .map(|(_, _, c)| c)
            .sum()
    }

    pub fn is_satisfied(&self, choices: &[usize]) -> bool {
        self.relation.holds(self.lhs(choices), self.rhs)
    }

    /// Contribution of parameter `param` when it takes `value`.
    pub fn contribution(&self, param: usize, value: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(p, v, _)| *p == param && *v == value)
            .map(|(_, _, c)| c)
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpaceFile {
    parameters: Vec<Parameter>,
    #[serde(default)]
    constraints: Vec<LinearConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<Assignment>,
}

/// The feasible configuration set: parameters, their one-hot layout and the
/// explicit linear constraints. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationSpace {
    parameters: Vec<Parameter>,
    constraints: Vec<LinearConstraint>,
    compiled: Vec<CompiledConstraint>,
    offsets: Vec<usize>,
    default: Option<Assignment>,
}

impl ConfigurationSpace {
    pub fn new(
        parameters: Vec<Parameter>,
        constraints: Vec<LinearConstraint>,
    ) -> Result<Self, SpaceError> {
        let mut names = HashSet::new();
        for p in &parameters {
            if !names.insert(p.name.as_str()) {
                return Err(SpaceError::Invalid(format!("duplicate parameter `{}`", p.name)));
            }
            if p.values.len() < 2 {
                return Err(SpaceError::Invalid(format!(
                    "parameter `{}` needs at least two values",
                    p.name
                )));
            }
            let mut seen = HashSet::new();
            for v in &p.values {
                if !seen.insert(v.as_str()) {
                    return Err(SpaceError::Invalid(format!(
                        "duplicate value `{v}` in parameter `{}`",
                        p.name
                    )));
                }
            }
        }
        let mut offsets = Vec::with_capacity(parameters.len());
        let mut off = 0;
        for p in &parameters {
            offsets.push(off);
            off += p.values.len();
        }
        let mut space = ConfigurationSpace {
            parameters,
            constraints: Vec::new(),
            compiled: Vec::new(),
            offsets,
            default: None,
        };
        for c in constraints {
            space.add_constraint(c)?;
        }
        Ok(space)
    }

    /// Returns a copy with one more constraint.
    pub fn with_constraint(&self, constraint: LinearConstraint) -> Result<Self, SpaceError> {
        let mut space = self.clone();
        space.add_constraint(constraint)?;
        Ok(space)
    }

    fn add_constraint(&mut self, constraint: LinearConstraint) -> Result<(), SpaceError> {
        let mut terms = Vec::with_capacity(constraint.terms.len());
        for t in &constraint.terms {
            let (p, v) = self.locate(&t.param, &t.value)?;
            terms.push((p, v, t.coef));
        }
        self.compiled.push(CompiledConstraint {
            terms,
            relation: constraint.relation,
            rhs: constraint.rhs,
        });
        self.constraints.push(constraint);
        Ok(())
    }

    pub fn with_default(mut self, default: Assignment) -> Result<Self, SpaceError> {
        self.encode(&default)?;
        self.default = Some(default);
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let file: SpaceFile =
            serde_json::from_str(text).map_err(|e| SpaceError::Invalid(e.to_string()))?;
        let space = ConfigurationSpace::new(file.parameters, file.constraints)?;
        match file.default {
            Some(d) => space.with_default(d),
            None => Ok(space),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SpaceError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SpaceError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = SpaceFile {
            parameters: self.parameters.clone(),
            constraints: self.constraints.clone(),
            default: self.default.clone(),
        };
        serde_json::to_string_pretty(&file).expect("space serializes")
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn constraints(&self) -> &[CompiledConstraint] {
        &self.compiled
    }

    pub fn default_assignment(&self) -> Option<&Assignment> {
        self.default.as_ref()
    }

    /// Bit offset of each parameter's block.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn encoding_len(&self) -> usize {
        self.parameters.iter().map(|p| p.values.len()).sum()
    }

    /// Size of the unconstrained Cartesian product.
    pub fn cardinality(&self) -> u128 {
        self.parameters.iter().map(|p| p.values.len() as u128).product()
    }

    /// Column names of the encoding bits, `c:<param>=<value>`.
    pub fn bit_names(&self) -> Vec<String> {
        self.parameters
            .iter()
            .flat_map(|p| p.values.iter().map(move |v| format!("c:{}={}", p.name, v)))
            .collect()
    }

    fn locate(&self, param: &str, value: &str) -> Result<(usize, usize), SpaceError> {
        let p = self
            .parameters
            .iter()
            .position(|p| p.name == param)
            .ok_or_else(|| SpaceError::UnknownParameter(param.to_string()))?;
        let v = self.parameters[p]
            .value_index(value)
            .ok_or_else(|| SpaceError::UnknownValue {
                param: param.to_string(),
                value: value.to_string(),
            })?;
        Ok((p, v))
    }

    pub fn encode(&self, assignment: &Assignment) -> Result<Configuration, SpaceError> {
        for name in assignment.keys() {
            if !self.parameters.iter().any(|p| &p.name == name) {
                return Err(SpaceError::UnknownParameter(name.clone()));
            }
        }
        let mut choices = Vec::with_capacity(self.parameters.len());
        for p in &self.parameters {
            let value = assignment
                .get(&p.name)
                .ok_or_else(|| SpaceError::MissingParameter(p.name.clone()))?;
            let (_, v) = self.locate(&p.name, value)?;
            choices.push(v);
        }
        Ok(self.from_choices(choices))
    }

    /// Builds a configuration from per-parameter value indices.
    ///
    /// Panics if an index is out of range.
    pub fn from_choices(&self, choices: Vec<usize>) -> Configuration {
        assert_eq!(choices.len(), self.parameters.len());
        let mut encoding = vec![0u8; self.encoding_len()];
        for (p, &v) in choices.iter().enumerate() {
            assert!(v < self.parameters[p].values.len(), "value index out of range");
            encoding[self.offsets[p] + v] = 1;
        }
        Configuration { choices, encoding }
    }

    pub fn configuration_from_encoding(&self, encoding: &[u8]) -> Result<Configuration, SpaceError> {
        if encoding.len() != self.encoding_len() {
            return Err(SpaceError::BadLength {
                expected: self.encoding_len(),
                got: encoding.len(),
            });
        }
        let mut choices = Vec::with_capacity(self.parameters.len());
        for (p, param) in self.parameters.iter().enumerate() {
            let block = &encoding[self.offsets[p]..self.offsets[p] + param.values.len()];
            let ones: Vec<usize> = block
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(|(i, _)| i)
                .collect();
            if ones.len() != 1 || block.iter().any(|&b| b > 1) {
                return Err(SpaceError::NotOneHot(param.name.clone()));
            }
            choices.push(ones[0]);
        }
        Ok(self.from_choices(choices))
    }

    pub fn decode(&self, encoding: &[u8]) -> Result<Assignment, SpaceError> {
        Ok(self.assignment(&self.configuration_from_encoding(encoding)?))
    }

    pub fn assignment(&self, config: &Configuration) -> Assignment {
        self.parameters
            .iter()
            .zip(&config.choices)
            .map(|(p, &v)| (p.name.clone(), p.values[v].clone()))
            .collect()
    }

    pub fn is_feasible(&self, config: &Configuration) -> bool {
        self.choices_feasible(&config.choices)
    }

    pub fn choices_feasible(&self, choices: &[usize]) -> bool {
        self.compiled.iter().all(|c| c.is_satisfied(choices))
    }

    /// Feasible configurations in lexicographic order of value indices.
    pub fn enumerate(&self) -> Enumerate<'_> {
        Enumerate {
            space: self,
            next: if self.parameters.is_empty() {
                None
            } else {
                Some(vec![0; self.parameters.len()])
            },
        }
    }

    /// Looks up the index in `enumerate()` order of every feasible encoding.
    pub fn index_by_encoding(&self) -> HashMap<Vec<u8>, usize> {
        self.enumerate()
            .enumerate()
            .map(|(i, c)| (c.encoding, i))
            .collect()
    }
}

/// One point of a [`ConfigurationSpace`]: the chosen value index per
/// parameter and the derived one-hot encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    choices: Vec<usize>,
    encoding: Vec<u8>,
}

impl Configuration {
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn encoding(&self) -> &[u8] {
        &self.encoding
    }

    pub fn encoding_string(&self) -> String {
        self.encoding
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Generate-and-test iterator over the Cartesian product.
pub struct Enumerate<'a> {
    space: &'a ConfigurationSpace,
    next: Option<Vec<usize>>,
}

impl Enumerate<'_> {
    fn advance(&mut self) {
        let Some(cur) = self.next.as_mut() else { return };
        for p in (0..cur.len()).rev() {
            cur[p] += 1;
            if cur[p] < self.space.parameters[p].values.len() {
                return;
            }
            cur[p] = 0;
        }
        self.next = None;
    }
}

impl Iterator for Enumerate<'_> {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        loop {
            let choices = self.next.clone()?;
            self.advance();
            if self.space.choices_feasible(&choices) {
                return Some(self.space.from_choices(choices));
            }
        }
    }
}

/// Nine categorical parameters with 2–4 levels each and 23 encoding bits.
/// The 3072 raw combinations are cut to 2304 by one compatibility
/// constraint: barrier is not used both as start and as sub-algorithm.
pub fn example_solver_space() -> ConfigurationSpace {
    let params = vec![
        Parameter::new("fpheur", &["-1", "0", "1", "2"]),
        Parameter::new("dive", &["0", "1", "2", "3"]),
        Parameter::new("probe", &["-1", "0", "1"]),
        Parameter::new("heuristicfreq", &["0", "10"]),
        Parameter::new("startalgorithm", &["1", "4"]),
        Parameter::new("subalgorithm", &["1", "4"]),
        Parameter::new("crossover", &["0", "1"]),
        Parameter::new("mircuts", &["0", "1"]),
        Parameter::new("flowcovers", &["0", "1"]),
    ];
    let barrier_once = LinearConstraint {
        terms: vec![
            Term { param: "startalgorithm".into(), value: "4".into(), coef: 1.0 },
            Term { param: "subalgorithm".into(), value: "4".into(), coef: 1.0 },
        ],
        relation: Relation::Le,
        rhs: 1.0,
    };
    let default: Assignment = params
        .iter()
        .map(|p| (p.name.clone(), p.values[if p.values.len() > 2 { 1 } else { 0 }].clone()))
        .collect();
    ConfigurationSpace::new(params, vec![barrier_once])
        .and_then(|s| s.with_default(default))
        .expect("example space is valid")
}
