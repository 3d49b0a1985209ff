mod common;

use std::collections::HashMap;

use belief_probe::fixtures;
use belief_probe::unfold::{unfold, write_dump};

struct Parsed {
    labels: Vec<String>,
    states: Vec<usize>,
    costs: Vec<f64>,
    edges: HashMap<(usize, usize), Vec<(usize, f64)>>,
}

fn parse(text: &str) -> Parsed {
    let mut lines = text.lines();
    let n: usize = lines.next().unwrap().strip_prefix("# nodes ").unwrap().parse().unwrap();
    let mut parsed = Parsed {
        labels: Vec::new(),
        states: Vec::new(),
        costs: Vec::new(),
        edges: HashMap::new(),
    };
    for id in 0..n {
        let fields: Vec<&str> = lines.next().unwrap().split(' ').collect();
        assert_eq!(fields[0].parse::<usize>().unwrap(), id);
        parsed.states.push(fields[1].parse().unwrap());
        parsed.costs.push(fields[2].parse().unwrap());
        parsed.labels.push(fields[3].to_string());
        let mass: f64 = fields[4..].iter().map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((mass - 1.0).abs() <= 1e-9);
    }
    let m: usize = lines.next().unwrap().strip_prefix("# transitions ").unwrap().parse().unwrap();
    for _ in 0..m {
        let f: Vec<&str> = lines.next().unwrap().split(' ').collect();
        let (q, a, q2, p) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        parsed.edges.entry((q, a)).or_default().push((q2, p));
    }
    assert!(lines.next().is_none());
    parsed
}

fn dp(g: &Parsed, num_actions: usize, node: usize, k: usize) -> f64 {
    let label = g.labels[node].as_str();
    if label.starts_with("goal:") {
        return 1.0;
    }
    if label == "unsafe" || k == 0 {
        return 0.0;
    }
    (0..num_actions)
        .map(|a| {
            g.edges
                .get(&(node, a))
                .map_or(0.0, |row| row.iter().map(|&(q2, p)| p * dp(g, num_actions, q2, k - 1)).sum())
        })
        .fold(0.0, f64::max)
}

#[test]
fn dump_encodes_a_graph_with_the_optimal_value() {
    let p = fixtures::medical();
    for h in 1..=4 {
        let spec = p.spec.with_horizon(h);
        let mdp = unfold(&p.family, &spec).unwrap();
        let mut out = Vec::new();
        write_dump(&mdp, &mut out).unwrap();
        let g = parse(&String::from_utf8(out).unwrap());

        assert_eq!(g.labels.len(), mdp.len());
        assert_eq!(g.states[0], p.family.initial_state);
        assert_eq!(g.costs[0], 0.0);
        for (&(q, a), row) in &g.edges {
            let total: f64 = row.iter().map(|e| e.1).sum();
            assert!((total - 1.0).abs() <= 1e-9, "node {q} action {a}");
            assert_eq!(g.labels[q], "interior");
            for &(q2, _) in row {
                let step = p.family.cost[g.states[q]][a];
                assert!((g.costs[q2] - g.costs[q] - step).abs() <= 1e-9);
                assert!(g.costs[q2] <= spec.budget + 1e-9);
            }
        }
        let from_dump = dp(&g, p.family.actions.len(), 0, h);
        let brute = common::brute_root(&p.family, &spec);
        assert!((from_dump - brute).abs() <= 1e-9, "H={h}: {from_dump} vs {brute}");
    }
}
