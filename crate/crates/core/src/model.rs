//! Hidden-model MDP families and classification problems.
//!
//! A [`ModelFamily`] is a finite set of MDPs that share one state space, one
//! action set, one cost function and one initial state. The models are
//! indexed by points of a product of attribute domains (an
//! [`AttributeSpace`]), and stored in mixed-radix order with the first
//! attribute most significant. A [`ClassificationSpec`] says which attribute
//! is being classified, how confident the belief must be before a decision is
//! claimed, which beliefs are off limits, and the time and cost budgets.
//!
//! Problems are loaded from a single JSON document (see [`ProblemFile`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for every stochasticity and normalization check.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

/// Product space of attribute domains. Each point is one candidate model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpace {
    pub attributes: Vec<Attribute>,
    pub target_attribute: usize,
}

impl AttributeSpace {
    pub fn new(attributes: Vec<Attribute>, target_attribute: usize) -> Self {
        Self {
            attributes,
            target_attribute,
        }
    }

    /// Single-attribute space, the common case of classifying one label.
    pub fn single(name: &str, values: &[&str]) -> Self {
        Self::new(
            vec![Attribute {
                name: name.to_string(),
                values: values.iter().map(|v| v.to_string()).collect(),
            }],
            0,
        )
    }

    pub fn model_count(&self) -> usize {
        self.attributes.iter().map(|a| a.values.len()).product()
    }

    pub fn target(&self) -> &Attribute {
        &self.attributes[self.target_attribute]
    }

    fn stride(&self, attribute: usize) -> usize {
        self.attributes[attribute + 1..]
            .iter()
            .map(|a| a.values.len())
            .product()
    }

    /// Value index that model `flat` takes for `attribute`.
    pub fn value_of(&self, flat: usize, attribute: usize) -> usize {
        (flat / self.stride(attribute)) % self.attributes[attribute].values.len()
    }

    /// Flat position of an attribute assignment, or `None` if out of range.
    pub fn flat_index(&self, index: &ModelIndex) -> Option<usize> {
        if index.0.len() != self.attributes.len() {
            return None;
        }
        let mut flat = 0;
        for (attr, &v) in self.attributes.iter().zip(&index.0) {
            if v >= attr.values.len() {
                return None;
            }
            flat = flat * attr.values.len() + v;
        }
        Some(flat)
    }

    pub fn model_index(&self, flat: usize) -> ModelIndex {
        ModelIndex(
            (0..self.attributes.len())
                .map(|j| self.value_of(flat, j))
                .collect(),
        )
    }
}

/// One value index per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelIndex(pub Vec<usize>);

/// Transition probabilities of a single model, indexed `[action][from][to]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl Mdp {
    pub fn new(transitions: Vec<Vec<Vec<f64>>>) -> Self {
        Self { transitions }
    }

    #[inline]
    pub fn prob(&self, action: usize, from: usize, to: usize) -> f64 {
        self.transitions[action][from][to]
    }

    #[inline]
    pub fn row(&self, action: usize, from: usize) -> &[f64] {
        &self.transitions[action][from]
    }
}

/// The finite family of candidate MDPs plus everything they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub initial_state: usize,
    /// `cost[state][action]`, nonnegative.
    pub cost: Vec<Vec<f64>>,
    pub attribute_space: AttributeSpace,
    /// One MDP per attribute assignment, in flat (mixed-radix) order.
    pub models: Vec<Mdp>,
    pub initial_belief: Vec<f64>,
}

impl ModelFamily {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    #[inline]
    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.cost[state][action]
    }

    pub fn model(&self, index: &ModelIndex) -> Option<&Mdp> {
        self.attribute_space
            .flat_index(index)
            .and_then(|flat| self.models.get(flat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCap {
    pub attribute: usize,
    pub value: usize,
    pub cap: f64,
}

/// What counts as a decision, what is forbidden, and the time/cost budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSpec {
    /// Target-attribute value index to minimum confidence. Values without an
    /// entry can never be decided.
    pub thresholds: BTreeMap<usize, f64>,
    pub safe_forbidden_states: BTreeSet<usize>,
    pub safe_attribute_caps: Vec<AttributeCap>,
    pub horizon: usize,
    pub budget: f64,
}

impl ClassificationSpec {
    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        Self {
            budget,
            ..self.clone()
        }
    }

    /// Same spec with every safety constraint dropped.
    pub fn without_safety(&self) -> Self {
        Self {
            safe_forbidden_states: BTreeSet::new(),
            safe_attribute_caps: Vec::new(),
            ..self.clone()
        }
    }
}

/// Inclusive cost-bound test shared by every solver and the simulator.
#[inline]
pub fn within_budget(cost: f64, budget: f64) -> bool {
    cost <= budget + TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_unique(report: &mut ValidationReport, path: &str, names: &[String]) {
    let mut seen = BTreeSet::new();
    for (i, name) in names.iter().enumerate() {
        if !seen.insert(name.as_str()) {
            report.push(format!("{path}[{i}]"), format!("duplicate name {name:?}"));
        }
    }
}

fn check_distribution(report: &mut ValidationReport, path: &str, row: &[f64], what: &str) {
    let mut in_range = true;
    for (k, &p) in row.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            report.push(format!("{path}[{k}]"), format!("probability {p} outside [0, 1]"));
            in_range = false;
        }
    }
    let sum: f64 = row.iter().sum();
    if in_range && (sum - 1.0).abs() > TOLERANCE {
        report.push(path, format!("{what} not stochastic (sums to {sum})"));
    }
}

/// Lists every structural problem with a family. An empty report means valid.
pub fn validate_family(family: &ModelFamily) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n_states = family.states.len();
    let n_actions = family.actions.len();

    if n_states == 0 {
        report.push("states", "at least one state is required");
    }
    if n_actions == 0 {
        report.push("actions", "at least one action is required");
    }
    check_unique(&mut report, "states", &family.states);
    check_unique(&mut report, "actions", &family.actions);
    if family.initial_state >= n_states {
        report.push(
            "initial_state",
            format!("index {} out of range for {n_states} states", family.initial_state),
        );
    }

    if family.cost.len() != n_states {
        report.push(
            "cost",
            format!("expected {n_states} rows, found {}", family.cost.len()),
        );
    }
    for (s, row) in family.cost.iter().enumerate() {
        if row.len() != n_actions {
            report.push(
                format!("cost[{s}]"),
                format!("expected {n_actions} columns, found {}", row.len()),
            );
        }
        for (a, &c) in row.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                report.push(format!("cost[{s}][{a}]"), format!("cost {c} must be finite and nonnegative"));
            }
        }
    }

    let space = &family.attribute_space;
    if space.attributes.is_empty() {
        report.push("attributes", "at least one attribute is required");
    }
    for attr in &space.attributes {
        if attr.values.is_empty() {
            report.push(format!("attributes.{}", attr.name), "attribute has no values");
        }
        check_unique(&mut report, &format!("attributes.{}", attr.name), &attr.values);
    }
    let names: Vec<String> = space.attributes.iter().map(|a| a.name.clone()).collect();
    check_unique(&mut report, "attributes", &names);
    if space.target_attribute >= space.attributes.len() {
        report.push(
            "target_attribute",
            format!("index {} out of range", space.target_attribute),
        );
    }

    let expected_models = space.model_count();
    if family.models.len() != expected_models {
        report.push(
            "models",
            format!(
                "expected one model per attribute assignment ({expected_models}), found {}",
                family.models.len()
            ),
        );
    }
    for (m, mdp) in family.models.iter().enumerate() {
        let base = format!("models[{m}].transitions");
        if mdp.transitions.len() != n_actions {
            report.push(
                base.clone(),
                format!("expected {n_actions} action matrices, found {}", mdp.transitions.len()),
            );
        }
        for (a, matrix) in mdp.transitions.iter().enumerate() {
            let action = family.actions.get(a).cloned().unwrap_or_else(|| a.to_string());
            let mpath = format!("{base}.{action}");
            if matrix.len() != n_states {
                report.push(
                    mpath.clone(),
                    format!("expected {n_states} rows, found {}", matrix.len()),
                );
            }
            for (s, row) in matrix.iter().enumerate() {
                let rpath = format!("{mpath}[{s}]");
                if row.len() != n_states {
                    report.push(
                        rpath.clone(),
                        format!("expected {n_states} columns, found {}", row.len()),
                    );
                    continue;
                }
                check_distribution(&mut report, &rpath, row, "row");
            }
        }
    }

    if family.initial_belief.len() != expected_models {
        report.push(
            "initial_belief",
            format!(
                "expected {expected_models} entries, found {}",
                family.initial_belief.len()
            ),
        );
    } else {
        check_distribution(&mut report, "initial_belief", &family.initial_belief, "belief");
    }
    report
}

/// Checks a classification spec against the family it will be used with.
pub fn validate_spec(family: &ModelFamily, spec: &ClassificationSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let space = &family.attribute_space;
    let target_values = space
        .attributes
        .get(space.target_attribute)
        .map_or(0, |a| a.values.len());

    for (&v, &lambda) in &spec.thresholds {
        if v >= target_values {
            report.push(format!("thresholds[{v}]"), "unknown target attribute value");
        }
        if !(lambda > 0.5 && lambda <= 1.0) {
            report.push(format!("thresholds[{v}]"), format!("threshold {lambda} outside (0.5, 1]"));
        }
    }
    for &s in &spec.safe_forbidden_states {
        if s >= family.states.len() {
            report.push("safe.forbidden_states", format!("state index {s} out of range"));
        }
        if s == family.initial_state {
            report.push(
                "safe.forbidden_states",
                "initial state is forbidden, so no decision is ever reachable",
            );
        }
    }
    for (i, cap) in spec.safe_attribute_caps.iter().enumerate() {
        let path = format!("safe.attribute_caps[{i}]");
        match space.attributes.get(cap.attribute) {
            None => report.push(path.clone(), format!("attribute index {} out of range", cap.attribute)),
            Some(attr) if cap.value >= attr.values.len() => {
                report.push(path.clone(), format!("value index {} out of range", cap.value))
            }
            Some(_) => {}
        }
        if !(cap.cap > 0.0 && cap.cap <= 1.0) {
            report.push(path, format!("cap {} outside (0, 1]", cap.cap));
        }
    }
    if !spec.budget.is_finite() || spec.budget < 0.0 {
        report.push("budget", format!("budget {} must be finite and nonnegative", spec.budget));
    }
    report
}

// ---------------------------------------------------------------------------
// Problem file
// ---------------------------------------------------------------------------

/// On-disk JSON layout of a problem.
///
/// `initial_belief` is listed in flat model order: the first attribute is the
/// most significant digit. Model assignments may name values or give their
/// indices; the canonical form written by [`to_canonical_json`] uses names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub initial_state: String,
    pub cost: Vec<Vec<f64>>,
    pub attributes: IndexMap<String, Vec<String>>,
    pub target_attribute: String,
    pub models: Vec<ModelEntry>,
    pub initial_belief: Vec<f64>,
    pub thresholds: IndexMap<String, f64>,
    #[serde(default)]
    pub safe: SafeSection,
    pub horizon: usize,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub assignment: Vec<ValueRef>,
    pub transitions: IndexMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSection {
    #[serde(default)]
    pub forbidden_states: Vec<String>,
    #[serde(default)]
    pub attribute_caps: Vec<CapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapEntry {
    pub attribute: String,
    pub value: String,
    pub cap: f64,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed problem file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid problem:\n{0}")]
    Invalid(ValidationReport),
}

/// A loaded, validated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub family: ModelFamily,
    pub spec: ClassificationSpec,
}

fn position(names: &[String], name: &str) -> Option<usize> {
    names.iter().position(|n| n == name)
}

impl ProblemFile {
    /// Resolves names to indices and validates the result.
    pub fn into_problem(self) -> Result<Problem, ProblemError> {
        let mut report = ValidationReport::default();

        let attributes: Vec<Attribute> = self
            .attributes
            .iter()
            .map(|(name, values)| Attribute {
                name: name.clone(),
                values: values.clone(),
            })
            .collect();
        let attr_names: Vec<String> = attributes.iter().map(|a| a.name.clone()).collect();
        let target_attribute = position(&attr_names, &self.target_attribute).unwrap_or_else(|| {
            report.push(
                "target_attribute",
                format!("unknown attribute {:?}", self.target_attribute),
            );
            usize::MAX
        });
        let space = AttributeSpace::new(attributes, target_attribute);

        let initial_state = position(&self.states, &self.initial_state).unwrap_or_else(|| {
            report.push("initial_state", format!("unknown state {:?}", self.initial_state));
            usize::MAX
        });

        let mut slots: Vec<Option<Mdp>> = vec![None; space.model_count()];
        for (m, entry) in self.models.into_iter().enumerate() {
            let path = format!("models[{m}]");
            if entry.assignment.len() != space.attributes.len() {
                report.push(
                    format!("{path}.assignment"),
                    format!(
                        "expected {} values, found {}",
                        space.attributes.len(),
                        entry.assignment.len()
                    ),
                );
                continue;
            }
            let mut index = Vec::with_capacity(entry.assignment.len());
            for (j, (attr, value)) in space.attributes.iter().zip(&entry.assignment).enumerate() {
                let resolved = match value {
                    ValueRef::Index(i) if *i < attr.values.len() => Some(*i),
                    ValueRef::Name(name) => position(&attr.values, name),
                    ValueRef::Index(_) => None,
                };
                match resolved {
                    Some(v) => index.push(v),
                    None => report.push(
                        format!("{path}.assignment[{j}]"),
                        format!("unknown value {value:?} for attribute {:?}", attr.name),
                    ),
                }
            }
            if index.len() != space.attributes.len() {
                continue;
            }
            let mut transitions = Vec::with_capacity(self.actions.len());
            for action in &self.actions {
                match entry.transitions.get(action) {
                    Some(matrix) => transitions.push(matrix.clone()),
                    None => {
                        report.push(
                            format!("{path}.transitions"),
                            format!("missing matrix for action {action:?}"),
                        );
                        transitions.push(Vec::new());
                    }
                }
            }
            for name in entry.transitions.keys() {
                if position(&self.actions, name).is_none() {
                    report.push(
                        format!("{path}.transitions.{name}"),
                        "matrix for an undeclared action",
                    );
                }
            }
            let flat = space
                .flat_index(&ModelIndex(index))
                .expect("assignment resolved within range");
            if slots[flat].is_some() {
                report.push(format!("{path}.assignment"), "duplicate assignment");
            } else {
                slots[flat] = Some(Mdp::new(transitions));
            }
        }
        let mut models = Vec::with_capacity(slots.len());
        for (flat, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(mdp) => models.push(mdp),
                None => {
                    let idx = space.model_index(flat);
                    report.push("models", format!("no model for assignment {:?}", idx.0));
                }
            }
        }

        let mut thresholds = BTreeMap::new();
        if let Some(target) = space.attributes.get(target_attribute) {
            for (value, &lambda) in &self.thresholds {
                match position(&target.values, value) {
                    Some(v) => {
                        thresholds.insert(v, lambda);
                    }
                    None => report.push(
                        format!("thresholds.{value}"),
                        format!("unknown value of target attribute {:?}", target.name),
                    ),
                }
            }
        }

        let mut forbidden = BTreeSet::new();
        for (i, name) in self.safe.forbidden_states.iter().enumerate() {
            match position(&self.states, name) {
                Some(s) => {
                    forbidden.insert(s);
                }
                None => report.push(
                    format!("safe.forbidden_states[{i}]"),
                    format!("unknown state {name:?}"),
                ),
            }
        }
        let mut caps = Vec::new();
        for (i, cap) in self.safe.attribute_caps.iter().enumerate() {
            let path = format!("safe.attribute_caps[{i}]");
            let Some(j) = position(&attr_names, &cap.attribute) else {
                report.push(path, format!("unknown attribute {:?}", cap.attribute));
                continue;
            };
            let Some(v) = position(&space.attributes[j].values, &cap.value) else {
                report.push(path, format!("unknown value {:?}", cap.value));
                continue;
            };
            caps.push(AttributeCap {
                attribute: j,
                value: v,
                cap: cap.cap,
            });
        }

        if !report.is_valid() {
            return Err(ProblemError::Invalid(report));
        }

        let family = ModelFamily {
            states: self.states,
            actions: self.actions,
            initial_state,
            cost: self.cost,
            attribute_space: space,
            models,
            initial_belief: self.initial_belief,
        };
        let spec = ClassificationSpec {
            thresholds,
            safe_forbidden_states: forbidden,
            safe_attribute_caps: caps,
            horizon: self.horizon,
            budget: self.budget,
        };
        report.extend(validate_family(&family));
        report.extend(validate_spec(&family, &spec));
        if report.is_valid() {
            Ok(Problem { family, spec })
        } else {
            Err(ProblemError::Invalid(report))
        }
    }

    /// Canonical file form of a family and spec.
    pub fn from_problem(family: &ModelFamily, spec: &ClassificationSpec) -> Self {
        let space = &family.attribute_space;
        let target = space.target();
        let models = family
            .models
            .iter()
            .enumerate()
            .map(|(flat, mdp)| {
                let idx = space.model_index(flat);
                ModelEntry {
                    assignment: idx
                        .0
                        .iter()
                        .zip(&space.attributes)
                        .map(|(&v, attr)| ValueRef::Name(attr.values[v].clone()))
                        .collect(),
                    transitions: family
                        .actions
                        .iter()
                        .cloned()
                        .zip(mdp.transitions.iter().cloned())
                        .collect(),
                }
            })
            .collect();
        ProblemFile {
            states: family.states.clone(),
            actions: family.actions.clone(),
            initial_state: family.states[family.initial_state].clone(),
            cost: family.cost.clone(),
            attributes: space
                .attributes
                .iter()
                .map(|a| (a.name.clone(), a.values.clone()))
                .collect(),
            target_attribute: target.name.clone(),
            models,
            initial_belief: family.initial_belief.clone(),
            thresholds: spec
                .thresholds
                .iter()
                .map(|(&v, &l)| (target.values[v].clone(), l))
                .collect(),
            safe: SafeSection {
                forbidden_states: spec
                    .safe_forbidden_states
                    .iter()
                    .map(|&s| family.states[s].clone())
                    .collect(),
                attribute_caps: spec
                    .safe_attribute_caps
                    .iter()
                    .map(|c| CapEntry {
                        attribute: space.attributes[c.attribute].name.clone(),
                        value: space.attributes[c.attribute].values[c.value].clone(),
                        cap: c.cap,
                    })
                    .collect(),
            },
            horizon: spec.horizon,
            budget: spec.budget,
        }
    }
}

pub fn parse_problem(text: &str) -> Result<Problem, ProblemError> {
    let file: ProblemFile = serde_json::from_str(text)?;
    file.into_problem()
}

/// Reads, parses and validates a problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<(ModelFamily, ClassificationSpec), ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let problem = parse_problem(&text)?;
    Ok((problem.family, problem.spec))
}

/// Pretty-printed canonical JSON with a trailing newline.
pub fn to_canonical_json(family: &ModelFamily, spec: &ClassificationSpec) -> String {
    let file = ProblemFile::from_problem(family, spec);
    let mut text = serde_json::to_string_pretty(&file).expect("problem file serializes");
    text.push('\n');
    text
}

pub fn save_problem(
    path: impl AsRef<Path>,
    family: &ModelFamily,
    spec: &ClassificationSpec,
) -> Result<(), ProblemError> {
    let path = path.as_ref();
    std::fs::write(path, to_canonical_json(family, spec)).map_err(|source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    })
}
