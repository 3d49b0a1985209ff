//! Monte-Carlo validation of policies.
//!
//! Each episode draws a true model from the prior, then alternates between
//! the controller (which only sees the belief) and the environment (which
//! steps with the true model's transition row). The belief is updated with
//! the mixture, exactly as a real classifier would.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;

use crate::ams::AmsPlanner;
use crate::belief::{belief_key, belief_update, classify_status, BeliefState, DecisionStatus};
use crate::exact::PolicyMap;
use crate::model::{within_budget, ClassificationSpec, ModelFamily, ModelIndex};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("policy has no action for the belief reached at step {step} ({remaining} steps remaining)")]
    PolicyGap { step: usize, remaining: usize },
    #[error("model {0:?} is not part of the family")]
    UnknownModel(ModelIndex),
    #[error("episode count must be at least 1")]
    NoEpisodes,
}

/// Chooses actions from what an agent can observe.
pub trait Controller {
    fn choose(
        &mut self,
        family: &ModelFamily,
        spec: &ClassificationSpec,
        belief: &BeliefState,
        cost: f64,
        step: usize,
    ) -> Result<usize, SimError>;
}

/// Plays a policy solved for `spec.horizon`, queried with `horizon - step`
/// steps remaining.
pub struct ExactController<'a> {
    pub policy: &'a PolicyMap,
}

impl Controller for ExactController<'_> {
    fn choose(
        &mut self,
        _family: &ModelFamily,
        spec: &ClassificationSpec,
        belief: &BeliefState,
        cost: f64,
        step: usize,
    ) -> Result<usize, SimError> {
        let remaining = spec.horizon - step;
        self.policy
            .get(&belief_key(belief, cost), remaining)
            .ok_or(SimError::PolicyGap { step, remaining })
    }
}

/// Plays the sampled one-step-lookahead policy, stage = step.
pub struct AmsController<'a> {
    pub planner: &'a mut AmsPlanner,
}

impl Controller for AmsController<'_> {
    fn choose(
        &mut self,
        family: &ModelFamily,
        spec: &ClassificationSpec,
        belief: &BeliefState,
        cost: f64,
        step: usize,
    ) -> Result<usize, SimError> {
        Ok(self.planner.extract_action(family, spec, belief, cost, step).action)
    }
}

/// Always plays the same action.
pub struct FixedAction(pub usize);

impl Controller for FixedAction {
    fn choose(&mut self, _: &ModelFamily, _: &ClassificationSpec, _: &BeliefState, _: f64, _: usize) -> Result<usize, SimError> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub belief: Vec<f64>,
    pub state: usize,
    pub action: usize,
    /// Accumulated cost before the action.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Success { value: usize, step: usize, cost: f64 },
    SafetyViolation { step: usize },
    BudgetViolation { step: usize },
    HorizonExhausted,
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub true_model: usize,
    pub steps: Vec<Step>,
    pub final_belief: BeliefState,
    pub final_cost: f64,
    pub outcome: Outcome,
}

/// Runs one episode against `true_model`.
pub fn simulate_episode<C: Controller + ?Sized, R: Rng + ?Sized>(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    controller: &mut C,
    true_model: &ModelIndex,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    let truth = family
        .attribute_space
        .flat_index(true_model)
        .filter(|&m| m < family.num_models())
        .ok_or_else(|| SimError::UnknownModel(true_model.clone()))?;
    let mdp = &family.models[truth];
    let mut belief = BeliefState::initial(family);
    let mut cost = 0.0;
    let mut steps = Vec::new();
    let mut t = 0;
    let outcome = loop {
        match classify_status(&family.attribute_space, spec, &belief) {
            DecisionStatus::Unsafe => break Outcome::SafetyViolation { step: t },
            DecisionStatus::Goal(value) => break Outcome::Success { value, step: t, cost },
            DecisionStatus::Undecided => {}
        }
        if t >= spec.horizon {
            break Outcome::HorizonExhausted;
        }
        let action = controller.choose(family, spec, &belief, cost, t)?;
        steps.push(Step {
            belief: belief.dist.clone(),
            state: belief.observed_state,
            action,
            cost,
        });
        if !within_budget(cost + family.cost(belief.observed_state, action), spec.budget) {
            break Outcome::BudgetViolation { step: t };
        }
        let next_state = rng::sample_index(mdp.row(action, belief.observed_state), rng);
        let (next, next_cost) = belief_update(family, &belief, action, next_state, cost)
            .expect("true model keeps positive belief mass");
        belief = next;
        cost = next_cost;
        t += 1;
    };
    Ok(Trajectory {
        true_model: truth,
        steps,
        final_belief: belief,
        final_cost: cost,
        outcome,
    })
}

/// Runs `episodes` episodes; episode `i` uses substream `i` of `seed` for
/// both the true-model draw and the environment.
pub fn run_episodes<C: Controller + ?Sized>(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    controller: &mut C,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    (0..episodes)
        .map(|i| {
            let mut rng = rng::substream(seed, i as u64);
            let truth = rng::sample_index(&family.initial_belief, &mut rng);
            let index = family.attribute_space.model_index(truth);
            simulate_episode(family, spec, controller, &index, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub episodes: usize,
    pub successes: usize,
    pub probability: f64,
    /// Normal-approximation 95% interval `p ± 1.96 sqrt(p(1-p)/n)`, clipped to [0, 1].
    pub ci95: (f64, f64),
    pub mean_decision_step: Option<f64>,
    pub mean_final_cost: Option<f64>,
}

impl SuccessReport {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Self {
        let n = trajectories.len();
        let mut successes = 0usize;
        let mut step_sum = 0usize;
        let mut cost_sum = 0.0;
        for t in trajectories {
            if let Outcome::Success { step, cost, .. } = t.outcome {
                successes += 1;
                step_sum += step;
                cost_sum += cost;
            }
        }
        let p = successes as f64 / n as f64;
        let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
        let mean = |sum: f64| (successes > 0).then(|| sum / successes as f64);
        SuccessReport {
            episodes: n,
            successes,
            probability: p,
            ci95: ((p - half).max(0.0), (p + half).min(1.0)),
            mean_decision_step: mean(step_sum as f64),
            mean_final_cost: mean(cost_sum),
        }
    }

    /// Binomial standard deviation of the empirical rate if the truth were `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.episodes as f64).sqrt()
    }
}

pub fn estimate_success<C: Controller + ?Sized>(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    controller: &mut C,
    episodes: usize,
    seed: u64,
) -> Result<SuccessReport, SimError> {
    let trajectories = run_episodes(family, spec, controller, episodes, seed)?;
    Ok(SuccessReport::from_trajectories(&trajectories))
}
