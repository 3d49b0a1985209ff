//! Breadth-first, cost-bounded unfolding of a hidden-model MDP into a finite
//! belief MDP.
//!
//! Nodes are `(belief, accumulated cost)` pairs, deduplicated by
//! [`BeliefKey`]. Expansion runs for at most `horizon` rounds. An action whose
//! cost would push the node past the budget is kept with an empty successor
//! list. Goal and unsafe successors are stored but never expanded.

use std::collections::HashMap;
use std::io::{self, Write};
use std::ops::Range;

use thiserror::Error;

use crate::belief::{belief_key, belief_update, classify_status, successor_distribution, BeliefKey, BeliefState, DecisionStatus};
use crate::model::{within_budget, ClassificationSpec, ModelFamily};

pub const DEFAULT_MAX_NODES: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnfoldError {
    #[error("belief MDP exceeded the node limit of {limit} ({nodes} nodes)")]
    CapacityExceeded { nodes: usize, limit: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct UnfoldOptions {
    pub max_nodes: usize,
}

impl Default for UnfoldOptions {
    fn default() -> Self {
        Self {
            max_nodes: DEFAULT_MAX_NODES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeLabel {
    Interior,
    Goal(usize),
    Unsafe,
}

impl From<DecisionStatus> for NodeLabel {
    fn from(status: DecisionStatus) -> Self {
        match status {
            DecisionStatus::Goal(v) => NodeLabel::Goal(v),
            DecisionStatus::Unsafe => NodeLabel::Unsafe,
            DecisionStatus::Undecided => NodeLabel::Interior,
        }
    }
}

impl NodeLabel {
    pub fn is_terminal(self) -> bool {
        !matches!(self, NodeLabel::Interior)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefNode {
    pub key: BeliefKey,
    pub belief: BeliefState,
    pub accumulated_cost: f64,
    /// Expansion round in which the node was first discovered.
    pub depth: usize,
    pub label: NodeLabel,
    /// Whether the node's actions were examined.
    pub expanded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub successor: usize,
    pub probability: f64,
}

/// The unfolded belief MDP. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct BeliefMdp {
    pub nodes: Vec<BeliefNode>,
    pub num_actions: usize,
    pub horizon: usize,
    pub budget: f64,
    edges: Vec<Edge>,
    /// Indexed by `node * num_actions + action`.
    spans: Vec<Range<usize>>,
    index: HashMap<BeliefKey, usize>,
}

impl BeliefMdp {
    pub const ROOT: usize = 0;

    pub fn root(&self) -> usize {
        Self::ROOT
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &BeliefNode {
        &self.nodes[id]
    }

    /// Successors of `node` under `action`. Empty when the action exceeds the
    /// budget or the node was never expanded.
    pub fn successors(&self, node: usize, action: usize) -> &[Edge] {
        &self.edges[self.spans[node * self.num_actions + action].clone()]
    }

    pub fn lookup(&self, key: &BeliefKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn transition_count(&self) -> usize {
        self.edges.len()
    }

    fn insert(&mut self, node: BeliefNode) -> usize {
        let id = self.nodes.len();
        self.index.insert(node.key.clone(), id);
        self.nodes.push(node);
        self.spans
            .extend(std::iter::repeat_n(0..0, self.num_actions));
        id
    }
}

pub fn unfold(family: &ModelFamily, spec: &ClassificationSpec) -> Result<BeliefMdp, UnfoldError> {
    unfold_with(family, spec, &UnfoldOptions::default())
}

pub fn unfold_with(
    family: &ModelFamily,
    spec: &ClassificationSpec,
    options: &UnfoldOptions,
) -> Result<BeliefMdp, UnfoldError> {
    let space = &family.attribute_space;
    let num_actions = family.num_actions();
    let mut mdp = BeliefMdp {
        nodes: Vec::new(),
        num_actions,
        horizon: spec.horizon,
        budget: spec.budget,
        edges: Vec::new(),
        spans: Vec::new(),
        index: HashMap::new(),
    };

    let root = BeliefState::initial(family);
    let label = NodeLabel::from(classify_status(space, spec, &root));
    mdp.insert(BeliefNode {
        key: belief_key(&root, 0.0),
        belief: root,
        accumulated_cost: 0.0,
        depth: 0,
        label,
        expanded: false,
    });
    if label.is_terminal() {
        return Ok(mdp);
    }

    let mut current = vec![BeliefMdp::ROOT];
    let mut round = 0;
    while round < spec.horizon && !current.is_empty() {
        let mut next = Vec::new();
        for &q in &current {
            mdp.nodes[q].expanded = true;
            let belief = mdp.nodes[q].belief.clone();
            let cost = mdp.nodes[q].accumulated_cost;
            for a in 0..num_actions {
                let next_cost = cost + family.cost(belief.observed_state, a);
                if !within_budget(next_cost, spec.budget) {
                    continue;
                }
                let start = mdp.edges.len();
                let mixture = successor_distribution(family, &belief, a);
                for (s2, &p) in mixture.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let (b2, e2) = belief_update(family, &belief, a, s2, cost)
                        .expect("positive mixture probability");
                    let key = belief_key(&b2, e2);
                    let id = match mdp.lookup(&key) {
                        Some(id) => id,
                        None => {
                            if mdp.nodes.len() >= options.max_nodes {
                                return Err(UnfoldError::CapacityExceeded {
                                    nodes: mdp.nodes.len() + 1,
                                    limit: options.max_nodes,
                                });
                            }
                            let label = NodeLabel::from(classify_status(space, spec, &b2));
                            let id = mdp.insert(BeliefNode {
                                key,
                                belief: b2,
                                accumulated_cost: e2,
                                depth: round + 1,
                                label,
                                expanded: false,
                            });
                            if !label.is_terminal() {
                                next.push(id);
                            }
                            id
                        }
                    };
                    mdp.edges.push(Edge {
                        successor: id,
                        probability: p,
                    });
                }
                mdp.spans[q * num_actions + a] = start..mdp.edges.len();
            }
        }
        current = next;
        round += 1;
    }
    Ok(mdp)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnfoldStats {
    pub nodes: usize,
    pub transitions: usize,
    /// Node count per discovery depth.
    pub depth_histogram: Vec<usize>,
    /// Goal node count per target value index.
    pub goal_by_value: Vec<usize>,
    pub unsafe_nodes: usize,
    pub interior_nodes: usize,
}

impl UnfoldStats {
    pub fn goal_nodes(&self) -> usize {
        self.goal_by_value.iter().sum()
    }
}

pub fn stats(mdp: &BeliefMdp) -> UnfoldStats {
    let max_depth = mdp.nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let max_goal = mdp
        .nodes
        .iter()
        .filter_map(|n| match n.label {
            NodeLabel::Goal(v) => Some(v + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let mut s = UnfoldStats {
        nodes: mdp.len(),
        transitions: mdp.transition_count(),
        depth_histogram: vec![0; max_depth + 1],
        goal_by_value: vec![0; max_goal],
        unsafe_nodes: 0,
        interior_nodes: 0,
    };
    for node in &mdp.nodes {
        s.depth_histogram[node.depth] += 1;
        match node.label {
            NodeLabel::Goal(v) => s.goal_by_value[v] += 1,
            NodeLabel::Unsafe => s.unsafe_nodes += 1,
            NodeLabel::Interior => s.interior_nodes += 1,
        }
    }
    s
}

fn label_str(label: NodeLabel) -> String {
    match label {
        NodeLabel::Interior => "interior".to_string(),
        NodeLabel::Goal(v) => format!("goal:{v}"),
        NodeLabel::Unsafe => "unsafe".to_string(),
    }
}

/// Plain-text adjacency dump.
///
/// ```text
/// # nodes <count>
/// id state_idx cost label dist...
/// # transitions <count>
/// node_id action_id succ_id probability
/// ```
pub fn write_dump<W: Write>(mdp: &BeliefMdp, mut w: W) -> io::Result<()> {
    writeln!(w, "# nodes {}", mdp.len())?;
    for (id, node) in mdp.nodes.iter().enumerate() {
        write!(
            w,
            "{id} {} {} {}",
            node.belief.observed_state,
            node.accumulated_cost,
            label_str(node.label)
        )?;
        for p in &node.belief.dist {
            write!(w, " {p}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "# transitions {}", mdp.transition_count())?;
    for id in 0..mdp.len() {
        for a in 0..mdp.num_actions {
            for e in mdp.successors(id, a) {
                writeln!(w, "{id} {a} {} {}", e.successor, e.probability)?;
            }
        }
    }
    Ok(())
}
