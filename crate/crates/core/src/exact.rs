//! Backward induction on an unfolded belief MDP.
//!
//! `values[q][k]` is the maximal probability of reaching a decision from node
//! `q` within `k` more steps without leaving the safe region:
//!
//! ```text
//! values[q][k] = 1                                   q is a goal node
//! values[q][k] = 0                                   q is unsafe
//! values[q][0] = 0                                   q is interior
//! values[q][k] = max_a Σ_q' T(q, a, q') values[q'][k-1]
//! ```
//!
//! Budget-pruned actions have no successors and therefore value 0.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::BeliefKey;
use crate::model::ClassificationSpec;
use crate::unfold::{BeliefMdp, NodeLabel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExactError {
    #[error("belief MDP was unfolded for horizon {mdp} but horizon {spec} was requested")]
    DimensionMismatch { mdp: usize, spec: usize },
}

/// Success probabilities per node and remaining steps `k = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub horizon: usize,
    values: Vec<f64>,
}

impl ValueTable {
    #[inline]
    pub fn get(&self, node: usize, k: usize) -> f64 {
        self.values[node * (self.horizon + 1) + k]
    }

    pub fn row(&self, node: usize) -> &[f64] {
        let w = self.horizon + 1;
        &self.values[node * w..(node + 1) * w]
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len() / (self.horizon + 1)
    }

    /// CSV export with header `node_id,k,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "node_id,k,value")?;
        for node in 0..self.num_nodes() {
            for (k, v) in self.row(node).iter().enumerate() {
                writeln!(w, "{node},{k},{v}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub solver: String,
    pub seed: Option<u64>,
}

/// Time-dependent action choice per node of a particular belief MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub horizon: usize,
    pub metadata: PolicyMetadata,
    /// `choice[node * horizon + (k - 1)]`; `None` on goal and unsafe nodes.
    choice: Vec<Option<usize>>,
}

impl Policy {
    /// Action for `node` with `k >= 1` steps remaining.
    pub fn action(&self, node: usize, k: usize) -> Option<usize> {
        if k == 0 || k > self.horizon {
            return None;
        }
        self.choice[node * self.horizon + (k - 1)]
    }

    /// Re-keys the policy by belief key so it can be used without the graph.
    ///
    /// Only expanded nodes are kept, and only for the step counts that can
    /// occur there: a node first found at depth `d` is never reached with
    /// more than `horizon - d` steps left.
    pub fn to_map(&self, mdp: &BeliefMdp) -> PolicyMap {
        let mut entries = BTreeMap::new();
        for (id, node) in mdp.nodes.iter().enumerate() {
            if !node.expanded {
                continue;
            }
            for k in 1..=self.horizon.saturating_sub(node.depth) {
                if let Some(a) = self.action(id, k) {
                    entries.insert((node.key.clone(), k), a);
                }
            }
        }
        PolicyMap {
            horizon: self.horizon,
            entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub node_key: BeliefKey,
    pub remaining_steps: usize,
    pub action: usize,
}

/// Policy keyed by `(belief key, remaining steps)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PolicyMap {
    pub horizon: usize,
    entries: BTreeMap<(BeliefKey, usize), usize>,
}

impl PolicyMap {
    pub fn from_entries(entries: impl IntoIterator<Item = PolicyEntry>) -> Self {
        let mut map = BTreeMap::new();
        let mut horizon = 0;
        for e in entries {
            horizon = horizon.max(e.remaining_steps);
            map.insert((e.node_key, e.remaining_steps), e.action);
        }
        Self {
            horizon,
            entries: map,
        }
    }

    pub fn get(&self, key: &BeliefKey, remaining: usize) -> Option<usize> {
        self.entries.get(&(key.clone(), remaining)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = PolicyEntry> + '_ {
        self.entries.iter().map(|((key, k), &a)| PolicyEntry {
            node_key: key.clone(),
            remaining_steps: *k,
            action: a,
        })
    }

    /// JSON array of `{node_key, remaining_steps, action}`, sorted by key.
    pub fn to_json(&self) -> String {
        let entries: Vec<PolicyEntry> = self.entries().collect();
        let mut text = serde_json::to_string_pretty(&entries).expect("policy serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let entries: Vec<PolicyEntry> = serde_json::from_str(text)?;
        Ok(Self::from_entries(entries))
    }
}

/// Solves the belief MDP by backward induction over `k = 1..=horizon`.
///
/// Ties between actions go to the smallest action index.
pub fn solve_exact(mdp: &BeliefMdp, spec: &ClassificationSpec) -> Result<(ValueTable, Policy), ExactError> {
    if mdp.horizon != spec.horizon {
        return Err(ExactError::DimensionMismatch {
            mdp: mdp.horizon,
            spec: spec.horizon,
        });
    }
    let h = spec.horizon;
    let w = h + 1;
    let n = mdp.len();
    let mut values = vec![0.0; n * w];
    let mut choice = vec![None; n * h];

    for (id, node) in mdp.nodes.iter().enumerate() {
        if let NodeLabel::Goal(_) = node.label {
            values[id * w..(id + 1) * w].fill(1.0);
        }
    }

    for k in 1..=h {
        for (id, node) in mdp.nodes.iter().enumerate() {
            if node.label != NodeLabel::Interior {
                continue;
            }
            let mut best = 0.0;
            let mut best_action = 0;
            for a in 0..mdp.num_actions {
                let v: f64 = mdp
                    .successors(id, a)
                    .iter()
                    .map(|e| e.probability * values[e.successor * w + k - 1])
                    .sum();
                if v > best {
                    best = v;
                    best_action = a;
                }
            }
            values[id * w + k] = best;
            choice[id * h + k - 1] = Some(best_action);
        }
    }

    Ok((
        ValueTable { horizon: h, values },
        Policy {
            horizon: h,
            metadata: PolicyMetadata {
                solver: "exact".to_string(),
                seed: None,
            },
            choice,
        },
    ))
}

/// Maximal decision probability from the root with the full horizon.
pub fn max_probability(table: &ValueTable, mdp: &BeliefMdp) -> f64 {
    table.get(mdp.root(), table.horizon)
}

/// Expected success of each action at `node` with `k` steps remaining.
pub fn action_values(table: &ValueTable, mdp: &BeliefMdp, node: usize, k: usize) -> Vec<f64> {
    (0..mdp.num_actions)
        .map(|a| {
            if k == 0 {
                return 0.0;
            }
            mdp.successors(node, a)
                .iter()
                .map(|e| e.probability * table.get(e.successor, k - 1))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::unfold::unfold;

    fn solve(h: usize) -> (BeliefMdp, ValueTable, Policy) {
        let p = fixtures::medical();
        let spec = p.spec.with_horizon(h);
        let mdp = unfold(&p.family, &spec).unwrap();
        let (t, pol) = solve_exact(&mdp, &spec).unwrap();
        (mdp, t, pol)
    }

    #[test]
    fn one_step_value_is_a_quarter_via_a2() {
        let (mdp, t, pol) = solve(1);
        assert!((max_probability(&t, &mdp) - 0.25).abs() <= 1e-12);
        assert_eq!(pol.action(0, 1), Some(1));
    }

    #[test]
    fn terminal_and_base_rows() {
        let (mdp, t, _) = solve(3);
        for (id, node) in mdp.nodes.iter().enumerate() {
            match node.label {
                NodeLabel::Goal(_) => assert!(t.row(id).iter().all(|&v| v == 1.0)),
                NodeLabel::Unsafe => assert!(t.row(id).iter().all(|&v| v == 0.0)),
                NodeLabel::Interior => assert_eq!(t.get(id, 0), 0.0),
            }
            for k in 0..3 {
                assert!(t.get(id, k) <= t.get(id, k + 1));
            }
        }
    }

    #[test]
    fn zero_horizon_and_goal_root() {
        let (mdp, t, _) = solve(0);
        assert_eq!(max_probability(&t, &mdp), 0.0);

        let mut p = fixtures::medical();
        p.family.initial_belief = vec![0.1, 0.9];
        let mdp = unfold(&p.family, &p.spec).unwrap();
        let (t, _) = solve_exact(&mdp, &p.spec).unwrap();
        assert_eq!(max_probability(&t, &mdp), 1.0);
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let p = fixtures::medical();
        let mdp = unfold(&p.family, &p.spec.with_horizon(2)).unwrap();
        assert_eq!(
            solve_exact(&mdp, &p.spec.with_horizon(3)).unwrap_err(),
            ExactError::DimensionMismatch { mdp: 2, spec: 3 }
        );
    }

    #[test]
    fn policy_achieves_the_max() {
        let (mdp, t, pol) = solve(3);
        for (id, node) in mdp.nodes.iter().enumerate() {
            if node.label != NodeLabel::Interior {
                assert_eq!(pol.action(id, 1), None);
                continue;
            }
            for k in 1..=3 {
                let q = action_values(&t, &mdp, id, k);
                let a = pol.action(id, k).unwrap();
                assert_eq!(q[a], t.get(id, k));
            }
        }
    }

    #[test]
    fn policy_json_round_trip() {
        let (mdp, _, pol) = solve(2);
        let map = pol.to_map(&mdp);
        assert!(!map.is_empty());
        let back = PolicyMap::from_json(&map.to_json()).unwrap();
        assert_eq!(back, map);
        let root = &mdp.node(0).key;
        assert_eq!(map.get(root, 2), pol.action(0, 2));
    }

    #[test]
    fn value_csv_shape() {
        let (_, t, _) = solve(1);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some("node_id,k,value"));
        assert_eq!(text.lines().count(), 1 + 7 * 2);
        assert!(text.contains("0,1,0.25"));
    }
}
