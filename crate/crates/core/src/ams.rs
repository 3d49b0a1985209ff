//! Cost-bounded adaptive multi-stage sampling.
//!
//! Estimates the maximal decision probability from a `(belief, cost)` node at
//! stage `i` without building the belief MDP. Each non-terminal node samples
//! every action once, then spends the rest of its `N_i` samples on the action
//! with the highest upper confidence bound
//!
//! ```text
//! Q(a) / N(a) + sqrt(2 ln n / N(a))
//! ```
//!
//! recursing one stage deeper on a successor drawn from the mixture
//! transition. The node's estimate is the total return divided by `N_i`.
//! Estimates are memoized by `(belief key, stage)`; the first write wins.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::belief::{belief_key, belief_update, classify_status, successor_distribution, BeliefKey, BeliefState, DecisionStatus};
use crate::model::{within_budget, ClassificationSpec, ModelFamily};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AmsError {
    #[error("sample schedule has {found} stages, horizon {horizon} needs {}", horizon + 1)]
    ScheduleLength { found: usize, horizon: usize },
    #[error("stage {stage} has {samples} samples, fewer than the {actions} actions")]
    TooFewSamples {
        stage: usize,
        samples: usize,
        actions: usize,
    },
}

/// Per-stage sample counts `N_0..=N_H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSchedule {
    counts: Vec<usize>,
}

impl SampleSchedule {
    pub fn new(counts: Vec<usize>) -> Self {
        Self { counts }
    }

    pub fn uniform(samples: usize, horizon: usize) -> Self {
        Self::new(vec![samples; horizon + 1])
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn at(&self, stage: usize) -> usize {
        self.counts[stage]
    }

    pub fn validate(&self, num_actions: usize, horizon: usize) -> Result<(), AmsError> {
        if self.counts.len() != horizon + 1 {
            return Err(AmsError::ScheduleLength {
                found: self.counts.len(),
                horizon,
            });
        }
        for (stage, &samples) in self.counts.iter().enumerate() {
            if samples < num_actions {
                return Err(AmsError::TooFewSamples {
                    stage,
                    samples,
                    actions: num_actions,
                });
            }
        }
        Ok(())
    }
}

/// Sampling statistics at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    /// Cumulative return per action.
    pub returns: Vec<f64>,
    /// Visit count per action.
    pub visits: Vec<u64>,
    pub total: u64,
}

impl NodeStats {
    /// Total return over total samples.
    pub fn estimate(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.total as f64
    }
}

/// Upper-confidence action choice; ties go to the smallest index.
pub fn ucb_select(stats: &NodeStats) -> usize {
    let ln_n = (stats.total as f64).ln();
    let mut best = f64::NEG_INFINITY;
    let mut best_action = 0;
    for (a, (&q, &n)) in stats.returns.iter().zip(&stats.visits).enumerate() {
        let n = n as f64;
        let score = q / n + (2.0 * ln_n / n).sqrt();
        if score > best {
            best = score;
            best_action = a;
        }
    }
    best_action
}

/// Memo of stage estimates keyed by `(belief key, stage)`.
#[derive(Debug, Clone, Default)]
pub struct EstimateCache {
    map: HashMap<(BeliefKey, usize), f64>,
    disabled: bool,
}

impl EstimateCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache that stores nothing.
    pub fn disabled() -> Self {
        Self {
            map: HashMap::new(),
            disabled: true,
        }
    }

    pub fn is_enabled(&self) -> bool {
        !self.disabled
    }

    pub fn get(&self, key: &BeliefKey, stage: usize) -> Option<f64> {
        self.map.get(&(key.clone(), stage)).copied()
    }

    /// Stores `value` unless the slot is already taken.
    pub fn insert(&mut self, key: BeliefKey, stage: usize, value: f64) {
        if !self.disabled {
            self.map.entry((key, stage)).or_insert(value);
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Draws the observed successor state of `action` from the mixture transition.
pub fn sample_successor<R: Rng + ?Sized>(
    family: &ModelFamily,
    belief: &BeliefState,
    action: usize,
    rng: &mut R,
) -> usize {
    rng::sample_index(&successor_distribution(family, belief, action), rng)
}

struct Sampler<'a, R: Rng + ?Sized> {
    family: &'a ModelFamily,
    spec: &'a ClassificationSpec,
    schedule: &'a SampleSchedule,
    rng: &'a mut R,
    cache: &'a mut EstimateCache,
}

impl<R: Rng + ?Sized> Sampler<'_, R> {
    /// 0 past the budget, past the horizon or outside the safe set; 1 in the
    /// goal set; `None` otherwise.
    fn terminal_value(&self, belief: &BeliefState, cost: f64, stage: usize) -> Option<f64> {
        if !within_budget(cost, self.spec.budget) || stage > self.spec.horizon {
            return Some(0.0);
        }
        match classify_status(&self.family.attribute_space, self.spec, belief) {
            DecisionStatus::Unsafe => Some(0.0),
            DecisionStatus::Goal(_) => Some(1.0),
            DecisionStatus::Undecided => None,
        }
    }

    fn estimate(&mut self, belief: &BeliefState, cost: f64, stage: usize) -> f64 {
        if let Some(v) = self.terminal_value(belief, cost, stage) {
            return v;
        }
        // every child of a last-stage node is past the horizon
        if stage == self.spec.horizon {
            return 0.0;
        }
        let key = belief_key(belief, cost);
        if let Some(v) = self.cache.get(&key, stage) {
            return v;
        }
        let value = self.sample_node(belief, cost, stage).estimate();
        self.cache.insert(key, stage, value);
        value
    }

    fn sample_child(&mut self, belief: &BeliefState, cost: f64, stage: usize, action: usize) -> f64 {
        let next_cost = cost + self.family.cost(belief.observed_state, action);
        if !within_budget(next_cost, self.spec.budget) {
            return 0.0;
        }
        let next_state = sample_successor(self.family, belief, action, self.rng);
        let (next, next_cost) = belief_update(self.family, belief, action, next_state, cost)
            .expect("sampled successor has positive probability");
        self.estimate(&next, next_cost, stage + 1)
    }

    fn sample_node(&mut self, belief: &BeliefState, cost: f64, stage: usize) -> NodeStats {
        let num_actions = self.family.num_actions();
        let budget = self.schedule.at(stage);
        let mut stats = NodeStats {
            returns: vec![0.0; num_actions],
            visits: vec![1; num_actions],
            total: num_actions as u64,
        };
        for a in 0..num_actions {
            stats.returns[a] = self.sample_child(belief, cost, stage, a);
        }
        while stats.total < budget as u64 {
            let a = ucb_select(&stats);
            stats.returns[a] += self.sample_child(belief, cost, stage, a);
            stats.visits[a] += 1;
            stats.total += 1;
        }
        stats
    }

    fn lookahead(&mut self, belief: &BeliefState, cost: f64, stage: usize) -> Vec<f64> {
        (0..self.family.num_actions())
            .map(|a| {
                let next_cost = cost + self.family.cost(belief.observed_state, a);
                if !within_budget(next_cost, self.spec.budget) {
                    return 0.0;
                }
                let mixture = successor_distribution(self.family, belief, a);
                let mut total = 0.0;
                for (s2, &p) in mixture.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let (next, e2) = belief_update(self.family, belief, a, s2, cost)
                        .expect("positive mixture probability");
                    total += p * self.estimate(&next, e2, stage + 1);
                }
                total
            })
            .collect()
    }
}

/// Estimated maximal decision probability from `(belief, cost)` at `stage`.
#[allow(clippy::too_many_arguments)]
pub fn cb_ams<R: Rng + ?Sized>(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    belief: &BeliefState,
    cost: f64,
    stage: usize,
    schedule: &SampleSchedule,
    rng: &mut R,
    cache: &mut EstimateCache,
) -> f64 {
    Sampler {
        family,
        spec,
        schedule,
        rng,
        cache,
    }
    .estimate(belief, cost, stage)
}

/// Runs the sampling loop at a non-terminal node and returns its statistics.
/// The node's own estimate is not cached.
#[allow(clippy::too_many_arguments)]
pub fn sample_node_stats<R: Rng + ?Sized>(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    belief: &BeliefState,
    cost: f64,
    stage: usize,
    schedule: &SampleSchedule,
    rng: &mut R,
    cache: &mut EstimateCache,
) -> NodeStats {
    Sampler {
        family,
        spec,
        schedule,
        rng,
        cache,
    }
    .sample_node(belief, cost, stage)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub action: usize,
    /// Set when the node was already terminal and the action is meaningless.
    pub terminal: bool,
    /// One-step lookahead value of each action.
    pub values: Vec<f64>,
}

/// One-step lookahead policy over cached stage estimates.
///
/// Every successor of every action is enumerated; successors missing from the
/// cache are estimated on demand at `stage + 1`.
#[allow(clippy::too_many_arguments)]
pub fn extract_action<R: Rng + ?Sized>(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    belief: &BeliefState,
    cost: f64,
    stage: usize,
    cache: &mut EstimateCache,
    schedule: &SampleSchedule,
    rng: &mut R,
) -> ActionChoice {
    let mut sampler = Sampler {
        family,
        spec,
        schedule,
        rng,
        cache,
    };
    if sampler.terminal_value(belief, cost, stage).is_some() {
        return ActionChoice {
            action: 0,
            terminal: true,
            values: vec![0.0; family.num_actions()],
        };
    }
    let values = sampler.lookahead(belief, cost, stage);
    let mut action = 0;
    for (a, &v) in values.iter().enumerate() {
        if v > values[action] {
            action = a;
        }
    }
    ActionChoice {
        action,
        terminal: false,
        values,
    }
}

/// Owns the random stream and memo for repeated estimates on one problem.
#[derive(Debug, Clone)]
pub struct AmsPlanner {
    pub schedule: SampleSchedule,
    pub seed: u64,
    pub cache: EstimateCache,
    rng: StreamRng,
}

impl AmsPlanner {
    pub fn new(schedule: SampleSchedule, seed: u64, use_cache: bool) -> Self {
        Self {
            schedule,
            seed,
            cache: if use_cache {
                EstimateCache::new()
            } else {
                EstimateCache::disabled()
            },
            rng: rng::stream(seed),
        }
    }

    pub fn estimate(&mut self, family: &ModelFamily, spec: &ClassificationSpec, belief: &BeliefState, cost: f64, stage: usize) -> f64 {
        cb_ams(family, spec, belief, cost, stage, &self.schedule, &mut self.rng, &mut self.cache)
    }

    pub fn estimate_root(&mut self, family: &ModelFamily, spec: &ClassificationSpec) -> f64 {
        self.estimate(family, spec, &BeliefState::initial(family), 0.0, 0)
    }

    pub fn extract_action(
        &mut self,
        family: &ModelFamily,
        spec: &ClassificationSpec,
        belief: &BeliefState,
        cost: f64,
        stage: usize,
    ) -> ActionChoice {
        extract_action(family, spec, belief, cost, stage, &mut self.cache, &self.schedule, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{action_values, max_probability, solve_exact};
    use crate::fixtures;
    use crate::model::{AttributeSpace, Mdp};
    use crate::unfold::unfold;

    fn stats(returns: &[f64], visits: &[u64]) -> NodeStats {
        NodeStats {
            returns: returns.to_vec(),
            visits: visits.to_vec(),
            total: visits.iter().sum(),
        }
    }

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb_select(&stats(&[1.0, 0.0], &[1, 1])), 0);
        assert_eq!(ucb_select(&stats(&[2.0, 2.0, 2.0], &[4, 4, 4])), 0);
        // 0.3 + sqrt(2 ln 12 / 10) = 1.00497, 0.5 + sqrt(2 ln 12 / 2) = 2.07636
        let s = stats(&[3.0, 1.0], &[10, 2]);
        let score = |a: usize| s.returns[a] / s.visits[a] as f64 + (2.0 * 12f64.ln() / s.visits[a] as f64).sqrt();
        assert!((score(0) - 1.00497).abs() < 1e-5);
        assert!((score(1) - 2.07636).abs() < 1e-5);
        assert_eq!(ucb_select(&s), 1);
    }

    #[test]
    fn terminal_cases() {
        let p = fixtures::medical();
        let sched = SampleSchedule::uniform(10, p.spec.horizon);
        let mut rng = rng::stream(0);
        let mut cache = EstimateCache::new();
        let goal = BeliefState::new(1, vec![0.8, 0.2]);
        assert_eq!(cb_ams(&p.family, &p.spec, &goal, 5.0, 0, &sched, &mut rng, &mut cache), 1.0);
        let root = BeliefState::initial(&p.family);
        assert_eq!(cb_ams(&p.family, &p.spec, &root, 10.5, 0, &sched, &mut rng, &mut cache), 0.0);
        let unsafe_b = BeliefState::new(2, vec![0.9, 0.1]);
        assert_eq!(cb_ams(&p.family, &p.spec, &unsafe_b, 0.0, 0, &sched, &mut rng, &mut cache), 0.0);
        assert_eq!(
            cb_ams(&p.family, &p.spec, &root, 0.0, p.spec.horizon + 1, &sched, &mut rng, &mut cache),
            0.0
        );
        assert!(cache.is_empty());
    }

    #[test]
    fn estimator_identity_and_visit_bookkeeping() {
        let p = fixtures::medical();
        let spec = p.spec.with_horizon(3);
        let sched = SampleSchedule::uniform(60, 3);
        let mut rng = rng::stream(3);
        let mut cache = EstimateCache::new();
        let root = BeliefState::initial(&p.family);
        let s = sample_node_stats(&p.family, &spec, &root, 0.0, 0, &sched, &mut rng, &mut cache);
        assert_eq!(s.total, 60);
        assert_eq!(s.visits.iter().sum::<u64>(), 60);
        let weighted: f64 = (0..3)
            .map(|a| (s.visits[a] as f64 / 60.0) * (s.returns[a] / s.visits[a] as f64))
            .sum();
        assert!((weighted - s.estimate()).abs() <= 1e-12);
        for a in 0..3 {
            assert!(s.returns[a] >= 0.0 && s.returns[a] <= s.visits[a] as f64);
        }
    }

    #[test]
    fn same_seed_same_estimate() {
        let p = fixtures::medical();
        let spec = p.spec.with_horizon(3);
        let run = |seed| AmsPlanner::new(SampleSchedule::uniform(50, 3), seed, true).estimate_root(&p.family, &spec);
        assert_eq!(run(11).to_bits(), run(11).to_bits());
    }

    #[test]
    fn cache_stores_first_write() {
        let mut cache = EstimateCache::new();
        let key = belief_key(&BeliefState::new(0, vec![1.0]), 0.0);
        cache.insert(key.clone(), 1, 0.25);
        cache.insert(key.clone(), 1, 0.75);
        assert_eq!(cache.get(&key, 1), Some(0.25));
        assert_eq!(cache.get(&key, 2), None);
        let mut off = EstimateCache::disabled();
        off.insert(key.clone(), 1, 0.5);
        assert_eq!(off.get(&key, 1), None);
    }

    #[test]
    fn schedule_validation() {
        assert!(SampleSchedule::uniform(3, 2).validate(3, 2).is_ok());
        assert_eq!(
            SampleSchedule::new(vec![5, 2]).validate(3, 1),
            Err(AmsError::TooFewSamples { stage: 1, samples: 2, actions: 3 })
        );
        assert!(matches!(
            SampleSchedule::uniform(5, 2).validate(3, 3),
            Err(AmsError::ScheduleLength { .. })
        ));
    }

    #[test]
    fn extract_on_terminal_node_is_flagged() {
        let p = fixtures::medical();
        let mut planner = AmsPlanner::new(SampleSchedule::uniform(10, p.spec.horizon), 0, true);
        let goal = BeliefState::new(1, vec![0.8, 0.2]);
        let choice = planner.extract_action(&p.family, &p.spec, &goal, 5.0, 1);
        assert!(choice.terminal);
        assert_eq!(choice.action, 0);
    }

    #[test]
    fn single_action_family_extracts_that_action() {
        let family = ModelFamily {
            states: vec!["x".into(), "y".into()],
            actions: vec!["go".into()],
            initial_state: 0,
            cost: vec![vec![1.0], vec![1.0]],
            attribute_space: AttributeSpace::single("k", &["a", "b"]),
            models: vec![
                Mdp::new(vec![vec![vec![0.9, 0.1], vec![0.5, 0.5]]]),
                Mdp::new(vec![vec![vec![0.2, 0.8], vec![0.5, 0.5]]]),
            ],
            initial_belief: vec![0.5, 0.5],
        };
        let spec = fixtures::medical().spec;
        let spec = ClassificationSpec {
            safe_forbidden_states: Default::default(),
            ..spec
        };
        let mut planner = AmsPlanner::new(SampleSchedule::uniform(5, spec.horizon), 1, true);
        let choice = planner.extract_action(&family, &spec, &BeliefState::initial(&family), 0.0, 0);
        assert_eq!(choice.action, 0);
        assert!(!choice.terminal);
    }

    #[test]
    fn one_step_estimate_is_close_to_exact() {
        // With H = 1 the only randomness is the successor draw of each action.
        let p = fixtures::medical();
        let spec = p.spec.with_horizon(1);
        let mdp = unfold(&p.family, &spec).unwrap();
        let (table, _) = solve_exact(&mdp, &spec).unwrap();
        let exact = max_probability(&table, &mdp);
        let q = action_values(&table, &mdp, 0, 1);
        assert!((q[1] - exact).abs() < 1e-12);
        let mut planner = AmsPlanner::new(SampleSchedule::uniform(2000, 1), 5, true);
        let est = planner.estimate_root(&p.family, &spec);
        assert!(est <= exact + 0.05 && est > 0.1, "estimate {est} vs exact {exact}");
    }
}
