//! Independent reference implementations used as test oracles.
//!
//! Nothing here shares code with the library's belief arithmetic: beliefs are
//! recomputed from the raw matrices and histories are walked as a plain tree
//! without merging.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use belief_probe::model::{Attribute, AttributeCap, AttributeSpace, ClassificationSpec, Mdp, ModelFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Goal,
    Unsafe,
    Open,
}

fn mass(family: &ModelFamily, dist: &[f64], attribute: usize, value: usize) -> f64 {
    let sizes: Vec<usize> = family.attribute_space.attributes.iter().map(|a| a.values.len()).collect();
    let mut total = 0.0;
    for (flat, &p) in dist.iter().enumerate() {
        // mixed radix, first attribute most significant
        let mut rest = flat;
        let mut digits = vec![0; sizes.len()];
        for j in (0..sizes.len()).rev() {
            digits[j] = rest % sizes[j];
            rest /= sizes[j];
        }
        if digits[attribute] == value {
            total += p;
        }
    }
    total
}

pub fn status(family: &ModelFamily, spec: &ClassificationSpec, state: usize, dist: &[f64]) -> Status {
    if spec.safe_forbidden_states.contains(&state) {
        return Status::Unsafe;
    }
    for cap in &spec.safe_attribute_caps {
        if mass(family, dist, cap.attribute, cap.value) > cap.cap + TOL {
            return Status::Unsafe;
        }
    }
    let target = family.attribute_space.target_attribute;
    for (&v, &lambda) in &spec.thresholds {
        if mass(family, dist, target, v) >= lambda - TOL {
            return Status::Goal;
        }
    }
    Status::Open
}

/// `(probability, next belief)` for every reachable next state.
pub fn branches(family: &ModelFamily, state: usize, dist: &[f64], action: usize) -> Vec<(usize, f64, Vec<f64>)> {
    let mut out = Vec::new();
    for next in 0..family.states.len() {
        let joint: Vec<f64> = dist
            .iter()
            .zip(&family.models)
            .map(|(&p, m)| p * m.transitions[action][state][next])
            .collect();
        let total: f64 = joint.iter().sum();
        if total > 0.0 {
            out.push((next, total, joint.iter().map(|x| x / total).collect()));
        }
    }
    out
}

/// Best decision probability over all history-dependent policies, by
/// recursion over the full history tree.
pub fn brute_value(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    state: usize,
    dist: &[f64],
    cost: f64,
    steps_left: usize,
) -> f64 {
    match status(family, spec, state, dist) {
        Status::Goal => return 1.0,
        Status::Unsafe => return 0.0,
        Status::Open => {}
    }
    if steps_left == 0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for a in 0..family.actions.len() {
        let next_cost = cost + family.cost[state][a];
        if next_cost > spec.budget + TOL {
            continue;
        }
        let v: f64 = branches(family, state, dist, a)
            .iter()
            .map(|(s2, p, d2)| p * brute_value(family, spec, *s2, d2, next_cost, steps_left - 1))
            .sum();
        best = best.max(v);
    }
    best
}

pub fn brute_root(family: &ModelFamily, spec: &ClassificationSpec) -> f64 {
    brute_value(family, spec, family.initial_state, &family.initial_belief, 0.0, spec.horizon)
}

/// A decision point of the history tree: an open node with steps left.
struct Point {
    children: Vec<Vec<(f64, Child)>>,
}

enum Child {
    Value(f64),
    Point(usize),
}

fn build(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    state: usize,
    dist: &[f64],
    cost: f64,
    steps_left: usize,
    points: &mut Vec<Point>,
) -> Child {
    match status(family, spec, state, dist) {
        Status::Goal => return Child::Value(1.0),
        Status::Unsafe => return Child::Value(0.0),
        Status::Open if steps_left == 0 => return Child::Value(0.0),
        Status::Open => {}
    }
    let id = points.len();
    points.push(Point { children: Vec::new() });
    let mut children = Vec::new();
    for a in 0..family.actions.len() {
        let next_cost = cost + family.cost[state][a];
        if next_cost > spec.budget + TOL {
            children.push(Vec::new());
            continue;
        }
        let mut row = Vec::new();
        for (s2, p, d2) in branches(family, state, dist, a) {
            row.push((p, build(family, spec, s2, &d2, next_cost, steps_left - 1, points)));
        }
        children.push(row);
    }
    points[id].children = children;
    Child::Point(id)
}

fn evaluate(points: &[Point], child: &Child, policy: &[usize]) -> f64 {
    match child {
        Child::Value(v) => *v,
        Child::Point(id) => points[*id].children[policy[*id]]
            .iter()
            .map(|(p, c)| p * evaluate(points, c, policy))
            .sum(),
    }
}

/// Maximum over every deterministic history-dependent policy, each evaluated
/// separately. `None` when there are more than `limit` policies.
pub fn enumerate_policies(family: &ModelFamily, spec: &ClassificationSpec, limit: u64) -> Option<f64> {
    let mut points = Vec::new();
    let root = build(
        family,
        spec,
        family.initial_state,
        &family.initial_belief,
        0.0,
        spec.horizon,
        &mut points,
    );
    let a = family.actions.len() as u64;
    let count = a.checked_pow(points.len() as u32)?;
    if count > limit {
        return None;
    }
    let mut policy = vec![0usize; points.len()];
    let mut best = 0.0f64;
    for mut code in 0..count {
        for slot in policy.iter_mut() {
            *slot = (code % a) as usize;
            code /= a;
        }
        best = best.max(evaluate(&points, &root, &policy));
    }
    Some(best)
}

/// Distinct `(state, belief, cost)` triples in the history tree, rounded to
/// 1e-9, with the shallowest depth each is seen at.
pub fn reachable_nodes(family: &ModelFamily, spec: &ClassificationSpec) -> BTreeMap<(usize, Vec<i64>, i64), usize> {
    fn walk(
        family: &ModelFamily,
        spec: &ClassificationSpec,
        state: usize,
        dist: &[f64],
        cost: f64,
        depth: usize,
        seen: &mut BTreeMap<(usize, Vec<i64>, i64), usize>,
    ) {
        let key = (state, dist.iter().map(|x| (x * 1e9).round() as i64).collect(), (cost * 1e9).round() as i64);
        let d = seen.entry(key).or_insert(depth);
        *d = (*d).min(depth);
        if status(family, spec, state, dist) != Status::Open || depth == spec.horizon {
            return;
        }
        for a in 0..family.actions.len() {
            let next_cost = cost + family.cost[state][a];
            if next_cost > spec.budget + TOL {
                continue;
            }
            for (s2, _, d2) in branches(family, state, dist, a) {
                walk(family, spec, s2, &d2, next_cost, depth + 1, seen);
            }
        }
    }
    let mut seen = BTreeMap::new();
    walk(
        family,
        spec,
        family.initial_state,
        &family.initial_belief,
        0.0,
        0,
        &mut seen,
    );
    seen
}

fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // sparse rows make beliefs move quickly toward decisions
    let mut row: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(1..=9) as f64 }).collect();
    if row.iter().all(|&x| x == 0.0) {
        row[rng.gen_range(0..n)] = 1.0;
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}

/// A small random classification problem determined by `seed`.
///
/// Up to two binary attributes (at most four models), two or three states
/// and actions, and horizon at most three.
pub fn random_instance(seed: u64) -> (ModelFamily, ClassificationSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_states = rng.gen_range(2..=3);
    let num_actions = rng.gen_range(2..=3);
    let two_attributes = rng.gen_bool(0.5);
    let mut attributes = vec![Attribute {
        name: "kind".into(),
        values: vec!["x".into(), "y".into()],
    }];
    if two_attributes {
        attributes.push(Attribute {
            name: "group".into(),
            values: vec!["p".into(), "q".into()],
        });
    }
    let attribute_space = AttributeSpace::new(attributes, 0);
    let num_models = attribute_space.model_count();
    let models = (0..num_models)
        .map(|_| {
            Mdp::new(
                (0..num_actions)
                    .map(|_| (0..num_states).map(|_| random_row(&mut rng, num_states)).collect())
                    .collect(),
            )
        })
        .collect();
    let mut initial_belief: Vec<f64> = (0..num_models).map(|_| rng.gen_range(1..=4) as f64).collect();
    let total: f64 = initial_belief.iter().sum();
    initial_belief.iter_mut().for_each(|x| *x /= total);
    let cost = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.gen_range(0..=3) as f64).collect())
        .collect();
    let family = ModelFamily {
        states: (0..num_states).map(|i| format!("s{i}")).collect(),
        actions: (0..num_actions).map(|i| format!("a{i}")).collect(),
        initial_state: 0,
        cost,
        attribute_space,
        models,
        initial_belief,
    };

    let mut thresholds = BTreeMap::new();
    thresholds.insert(0, rng.gen_range(0.6..0.95));
    thresholds.insert(1, rng.gen_range(0.6..0.95));
    let mut forbidden = BTreeSet::new();
    if rng.gen_bool(0.5) {
        forbidden.insert(num_states - 1);
    }
    let mut caps = Vec::new();
    if two_attributes && rng.gen_bool(0.5) {
        caps.push(AttributeCap {
            attribute: 1,
            value: rng.gen_range(0..2),
            cap: rng.gen_range(0.75..0.99),
        });
    }
    let spec = ClassificationSpec {
        thresholds,
        safe_forbidden_states: forbidden,
        safe_attribute_caps: caps,
        horizon: rng.gen_range(1..=3),
        budget: rng.gen_range(2..=8) as f64,
    };
    (family, spec)
}

/// Two models, two states, two actions; the smallest instance on which a
/// horizon-2 decision is genuinely uncertain.
pub fn two_by_two() -> (ModelFamily, ClassificationSpec) {
    let family = ModelFamily {
        states: vec!["s0".into(), "s1".into()],
        actions: vec!["a0".into(), "a1".into()],
        initial_state: 0,
        cost: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        attribute_space: AttributeSpace::single("kind", &["x", "y"]),
        models: vec![
            Mdp::new(vec![
                vec![vec![0.7, 0.3], vec![0.4, 0.6]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ]),
            Mdp::new(vec![
                vec![vec![0.3, 0.7], vec![0.6, 0.4]],
                vec![vec![0.45, 0.55], vec![0.55, 0.45]],
            ]),
        ],
        initial_belief: vec![0.5, 0.5],
    };
    let spec = ClassificationSpec {
        thresholds: BTreeMap::from([(0, 0.8), (1, 0.8)]),
        safe_forbidden_states: BTreeSet::new(),
        safe_attribute_caps: Vec::new(),
        horizon: 2,
        budget: 10.0,
    };
    (family, spec)
}
