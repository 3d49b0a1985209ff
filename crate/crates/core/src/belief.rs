//! Belief-state arithmetic.
//!
//! A belief pairs the observed physical state with a distribution over the
//! candidate models. Acting with `a` in state `s` and observing `s'` moves
//! the belief by Bayes' rule:
//!
//! ```text
//! P(s' | b, a)  = Σ_i b(i) · T_i(s, a, s')
//! b'(i)         = T_i(s, a, s') · b(i) / P(s' | b, a)
//! e'            = e + C(s, a)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AttributeSpace, ClassificationSpec, ModelFamily, TOLERANCE};

/// Slack applied when comparing attribute masses against thresholds and caps,
/// so a mass that is mathematically equal to its threshold is not lost to
/// rounding.
pub const DECISION_TOLERANCE: f64 = TOLERANCE;

/// Fixed-point scale used for belief keys (nine decimal places).
const KEY_SCALE: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("observation of state {next_state} after action {action} from state {state} has zero probability")]
    ZeroProbabilityObservation {
        state: usize,
        action: usize,
        next_state: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub observed_state: usize,
    pub dist: Vec<f64>,
}

impl BeliefState {
    pub fn new(observed_state: usize, dist: Vec<f64>) -> Self {
        Self {
            observed_state,
            dist,
        }
    }

    /// The family's initial state with its prior over models.
    pub fn initial(family: &ModelFamily) -> Self {
        Self::new(family.initial_state, family.initial_belief.clone())
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.dist
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionStatus {
    /// The target attribute is decided to take this value index.
    Goal(usize),
    Unsafe,
    Undecided,
}

impl DecisionStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, DecisionStatus::Undecided)
    }
}

/// Quantized identity of a (belief, accumulated cost) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeliefKey {
    pub state: usize,
    /// Belief entries in units of 1e-9.
    pub dist: Vec<i64>,
    /// Accumulated cost in units of 1e-9.
    pub cost: i64,
}

#[inline]
fn quantize(x: f64) -> i64 {
    (x * KEY_SCALE).round() as i64
}

pub fn belief_key(b: &BeliefState, cost: f64) -> BeliefKey {
    BeliefKey {
        state: b.observed_state,
        dist: b.dist.iter().map(|&p| quantize(p)).collect(),
        cost: quantize(cost),
    }
}

/// Mixture probability of observing `next_state` after `action`.
pub fn transition_probability(
    family: &ModelFamily,
    b: &BeliefState,
    action: usize,
    next_state: usize,
) -> f64 {
    let s = b.observed_state;
    b.dist
        .iter()
        .zip(&family.models)
        .map(|(&w, m)| w * m.prob(action, s, next_state))
        .sum()
}

/// Mixture distribution over every successor state, in declared state order.
pub fn successor_distribution(family: &ModelFamily, b: &BeliefState, action: usize) -> Vec<f64> {
    let s = b.observed_state;
    let mut out = vec![0.0; family.num_states()];
    for (&w, m) in b.dist.iter().zip(&family.models) {
        if w == 0.0 {
            continue;
        }
        for (acc, &p) in out.iter_mut().zip(m.row(action, s)) {
            *acc += w * p;
        }
    }
    out
}

/// Bayes update after taking `action` and observing `next_state`.
pub fn belief_update(
    family: &ModelFamily,
    b: &BeliefState,
    action: usize,
    next_state: usize,
    cost_so_far: f64,
) -> Result<(BeliefState, f64), BeliefError> {
    let s = b.observed_state;
    let mut dist: Vec<f64> = b
        .dist
        .iter()
        .zip(&family.models)
        .map(|(&w, m)| w * m.prob(action, s, next_state))
        .collect();
    let denom: f64 = dist.iter().sum();
    if denom <= 0.0 {
        return Err(BeliefError::ZeroProbabilityObservation {
            state: s,
            action,
            next_state,
        });
    }
    for p in &mut dist {
        *p /= denom;
    }
    Ok((
        BeliefState::new(next_state, dist),
        cost_so_far + family.cost(s, action),
    ))
}

/// Total belief on models whose `attribute` takes `value`.
pub fn attribute_mass(space: &AttributeSpace, b: &BeliefState, attribute: usize, value: usize) -> f64 {
    b.dist
        .iter()
        .enumerate()
        .filter(|&(flat, _)| space.value_of(flat, attribute) == value)
        .map(|(_, &p)| p)
        .sum()
}

/// Safety is checked first; then the smallest value index whose threshold is
/// met wins.
pub fn classify_status(space: &AttributeSpace, spec: &ClassificationSpec, b: &BeliefState) -> DecisionStatus {
    if spec.safe_forbidden_states.contains(&b.observed_state) {
        return DecisionStatus::Unsafe;
    }
    for cap in &spec.safe_attribute_caps {
        if attribute_mass(space, b, cap.attribute, cap.value) > cap.cap + DECISION_TOLERANCE {
            return DecisionStatus::Unsafe;
        }
    }
    for (&value, &lambda) in &spec.thresholds {
        if attribute_mass(space, b, space.target_attribute, value) >= lambda - DECISION_TOLERANCE {
            return DecisionStatus::Goal(value);
        }
    }
    DecisionStatus::Undecided
}
