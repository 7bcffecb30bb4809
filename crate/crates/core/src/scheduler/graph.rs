//! Dependence graphs, edge sampling, cycle breaking and layering.
//!
//! Weight `g[i][j]` is the degree to which agent `i` depends on agent `j`.
//! A sampled dependence becomes the directed edge `j -> i`: `j` is updated
//! in an earlier batch than `i`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::batch::BatchSequence;
use crate::error::{Error, Result};

/// Weighted directed edge `(from, to, weight)`.
pub type WeightedEdge = (usize, usize, f64);

/// Thresholded `n x n` dependence weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceGraph {
    n: usize,
    weights: Vec<f64>,
    threshold: f64,
}

/// Default threshold, half the uniform row mass.
pub fn default_threshold(n_agents: usize) -> f64 {
    if n_agents < 2 {
        0.0
    } else {
        1.0 / (2.0 * (n_agents - 1) as f64)
    }
}

impl DependenceGraph {
    /// Applies `threshold` to row-major `raw` weights.
    pub fn from_raw(n: usize, raw: &[f64], threshold: f64) -> Result<Self> {
        if raw.len() != n * n {
            return Err(Error::input("dependence weights must be n x n"));
        }
        let mut weights = raw.to_vec();
        for i in 0..n {
            for j in 0..n {
                let w = &mut weights[i * n + j];
                if !(0.0..=1.0).contains(w) {
                    return Err(Error::input(format!("dependence weight {w} outside [0, 1]")));
                }
                if i == j || *w < threshold {
                    *w = 0.0;
                }
            }
        }
        Ok(Self { n, weights, threshold })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Positive entries as candidate edges `j -> i` weighted by `g[i][j]`,
    /// sorted lexicographically.
    pub fn candidate_edges(&self) -> Vec<WeightedEdge> {
        let mut out = Vec::new();
        for j in 0..self.n {
            for i in 0..self.n {
                let w = self.weight(i, j);
                if w > 0.0 {
                    out.push((j, i, w));
                }
            }
        }
        out
    }
}

/// Inclusion probabilities stay this far from 0 and 1 so that every edge
/// set keeps finite log-probability once the scores saturate.
pub const EDGE_PROB_MARGIN: f64 = 1e-9;

/// Bernoulli inclusion probability of an edge with score `w`.
pub fn inclusion_prob(w: f64) -> f64 {
    w.clamp(EDGE_PROB_MARGIN, 1.0 - EDGE_PROB_MARGIN)
}

/// Log-probability of an inclusion pattern under independent Bernoulli
/// draws. `included[k]` refers to `candidates[k]`.
pub fn edge_set_logp(probs: &[f64], included: &[bool]) -> f64 {
    probs
        .iter()
        .zip(included)
        .map(|(&p, &inc)| {
            let q = if inc { p } else { 1.0 - p };
            if q >= 1.0 {
                0.0
            } else {
                q.ln()
            }
        })
        .sum()
}

/// Includes each candidate edge independently with probability
/// [`inclusion_prob`] of its weight. Returns the inclusion mask over
/// `graph.candidate_edges()` and its log-probability.
pub fn sample_edge_set<R: Rng + ?Sized>(graph: &DependenceGraph, rng: &mut R) -> (Vec<bool>, f64) {
    let probs: Vec<f64> = graph.candidate_edges().iter().map(|e| inclusion_prob(e.2)).collect();
    let included: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    let logp = edge_set_logp(&probs, &included);
    (included, logp)
}

fn find_cycle(n: usize, edges: &[WeightedEdge]) -> Option<Vec<usize>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(a, b, _)) in edges.iter().enumerate() {
        adj[a].push((b, k));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut color = vec![0u8; n];
    let mut stack_edges: Vec<usize> = Vec::new();
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some(top) = stack.len().checked_sub(1) {
            let (v, next) = stack[top];
            if next < adj[v].len() {
                let (w, k) = adj[v][next];
                stack[top].1 += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        stack_edges.push(k);
                        stack.push((w, 0));
                    }
                    1 => {
                        // back edge closes a cycle through w
                        let mut cycle = vec![k];
                        for &e in stack_edges.iter().rev() {
                            cycle.push(e);
                            if edges[e].0 == w {
                                break;
                            }
                        }
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
                stack_edges.pop();
            }
        }
    }
    None
}

pub fn is_acyclic(n: usize, edges: &[WeightedEdge]) -> bool {
    find_cycle(n, edges).is_none()
}

/// Breaks cycles: while a directed cycle exists (first found by an
/// index-ordered DFS), removes its minimum-weight edge, ties going to the
/// lexicographically smallest `(from, to)`.
pub fn to_dag(n: usize, edges: &[WeightedEdge]) -> Vec<WeightedEdge> {
    let mut current = edges.to_vec();
    while let Some(cycle) = find_cycle(n, &current) {
        let victim = *cycle
            .iter()
            .min_by(|&&a, &&b| {
                let (ea, eb) = (current[a], current[b]);
                ea.2.total_cmp(&eb.2).then((ea.0, ea.1).cmp(&(eb.0, eb.1)))
            })
            .expect("cycle has edges");
        current.remove(victim);
    }
    current
}

/// Kahn layering: batch `k` holds the agents whose longest incoming path
/// has `k` edges.
pub fn layer_topological(n: usize, dag: &[(usize, usize)]) -> Result<BatchSequence> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in dag {
        if a >= n || b >= n || a == b {
            return Err(Error::input(format!("edge ({a}, {b}) is not valid for {n} agents")));
        }
        out[a].push(b);
        indeg[b] += 1;
    }
    let mut depth = vec![0usize; n];
    let mut frontier: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = frontier.pop() {
        seen += 1;
        for &w in &out[v] {
            depth[w] = depth[w].max(depth[v] + 1);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                frontier.push(w);
            }
        }
    }
    if seen < n {
        return Err(Error::Internal("layering input contains a cycle".into()));
    }
    let layers = depth.iter().copied().max().map_or(0, |d| d + 1);
    let mut batches = vec![Vec::new(); layers];
    for (v, &d) in depth.iter().enumerate() {
        batches[d].push(v);
    }
    BatchSequence::new(batches, n)
}

/// Weighted digraph read from a whitespace-separated file: an `n <count>`
/// line followed by `from to weight` lines. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    pub n: usize,
    pub edges: Vec<WeightedEdge>,
}

impl WeightedDigraph {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::input(format!("graph line {}: cannot parse `{line}`", lineno + 1));
            match (n, parts.as_slice()) {
                (None, ["n", count]) => n = Some(count.parse::<usize>().map_err(|_| bad())?),
                (None, _) => return Err(Error::input("graph file must start with `n <count>`")),
                (Some(count), [a, b, w]) => {
                    let a: usize = a.parse().map_err(|_| bad())?;
                    let b: usize = b.parse().map_err(|_| bad())?;
                    let w: f64 = w.parse().map_err(|_| bad())?;
                    if a >= count || b >= count || a == b || !w.is_finite() {
                        return Err(bad());
                    }
                    edges.push((a, b, w));
                }
                (Some(count), [a, b]) => {
                    let a: usize = a.parse().map_err(|_| bad())?;
                    let b: usize = b.parse().map_err(|_| bad())?;
                    if a >= count || b >= count || a == b {
                        return Err(bad());
                    }
                    edges.push((a, b, 1.0));
                }
                _ => return Err(bad()),
            }
        }
        let n = n.ok_or_else(|| Error::input("graph file has no `n <count>` line"))?;
        Ok(Self { n, edges })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for &(a, b, w) in &self.edges {
            let _ = writeln!(out, "{a} {b} {w}");
        }
        out
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(a, b, _)| (a, b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn unweighted(edges: &[(usize, usize)]) -> Vec<WeightedEdge> {
        edges.iter().map(|&(a, b)| (a, b, 1.0)).collect()
    }

    #[test]
    fn threshold_and_diagonal() {
        let raw = [0.7, 0.1, 0.2, 0.4, 0.3, 0.3, 0.05, 0.5, 0.45];
        let g = DependenceGraph::from_raw(3, &raw, 0.25).unwrap();
        assert_eq!(g.weights(), &[0.0, 0.0, 0.0, 0.4, 0.0, 0.3, 0.0, 0.5, 0.0]);
        assert_eq!(g.candidate_edges(), vec![(0, 1, 0.4), (1, 2, 0.5), (2, 1, 0.3)]);
        let all = DependenceGraph::from_raw(3, &raw, 0.9).unwrap();
        assert!(all.weights().iter().all(|&w| w == 0.0));
        assert_eq!(default_threshold(3), 0.25);
    }

    #[test]
    fn sampling_extremes_and_frequencies() {
        let mut rng = seeded(1);
        let ones = DependenceGraph::from_raw(3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], 0.0).unwrap();
        let (inc, lp) = sample_edge_set(&ones, &mut rng);
        // weight-1 edges are drawn with probability 1 - margin
        assert!(inc.iter().all(|&x| x));
        assert_eq!(lp, 6.0 * (1.0 - EDGE_PROB_MARGIN).ln());
        assert_eq!(inclusion_prob(0.0), EDGE_PROB_MARGIN);
        assert_eq!(inclusion_prob(0.4), 0.4);
        let zeros = DependenceGraph::from_raw(3, &[0.0; 9], 0.0).unwrap();
        let (inc, lp) = sample_edge_set(&zeros, &mut rng);
        assert!(inc.is_empty() && lp == 0.0);
        let g = DependenceGraph::from_raw(2, &[0.0, 0.3, 0.8, 0.0], 0.0).unwrap();
        let trials = 100_000;
        let mut hits = [0usize; 2];
        for _ in 0..trials {
            let (inc, _) = sample_edge_set(&g, &mut rng);
            for (h, i) in hits.iter_mut().zip(inc) {
                *h += usize::from(i);
            }
        }
        // candidates: (0 -> 1) weight g[1][0] = 0.8, (1 -> 0) weight g[0][1] = 0.3
        assert!((hits[0] as f64 / trials as f64 - 0.8).abs() < 0.01);
        assert!((hits[1] as f64 / trials as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn to_dag_examples() {
        assert_eq!(to_dag(3, &[]), vec![]);
        let acyclic = unweighted(&[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(to_dag(3, &acyclic), acyclic);
        let two = vec![(0, 1, 0.9), (1, 0, 0.2)];
        assert_eq!(to_dag(2, &two), vec![(0, 1, 0.9)]);
        // tie on a 3-cycle: smallest lexicographic edge goes
        let tri = vec![(1, 2, 0.5), (0, 1, 0.5), (2, 0, 0.5)];
        assert_eq!(to_dag(3, &tri), vec![(1, 2, 0.5), (2, 0, 0.5)]);
    }

    fn best_acyclic_weight(n: usize, edges: &[WeightedEdge]) -> f64 {
        let mut best = 0.0f64;
        for mask in 0u32..(1 << edges.len()) {
            let sub: Vec<WeightedEdge> =
                edges.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, e)| *e).collect();
            if is_acyclic(n, &sub) {
                best = best.max(sub.iter().map(|e| e.2).sum());
            }
        }
        best
    }

    #[test]
    fn two_cycle_rule_matches_exhaustive_search() {
        let mut rng = seeded(3);
        for _ in 0..200 {
            let n = rng.random_range(2..=4);
            // disjoint 2-cycles only: removing the lighter edge is optimal
            let mut edges = Vec::new();
            let mut v = 0;
            while v + 1 < n {
                edges.push((v, v + 1, rng.random_range(0.01..1.0)));
                edges.push((v + 1, v, rng.random_range(0.01..1.0)));
                v += 2;
            }
            let dag = to_dag(n, &edges);
            let got: f64 = dag.iter().map(|e| e.2).sum();
            assert!((got - best_acyclic_weight(n, &edges)).abs() < 1e-12);
        }
    }

    #[test]
    fn to_dag_output_is_acyclic_subgraph() {
        let mut rng = seeded(4);
        for _ in 0..500 {
            let n = rng.random_range(1..=6);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random::<f64>() < 0.4 {
                        edges.push((a, b, (rng.random_range(0..4) as f64) / 4.0));
                    }
                }
            }
            let dag = to_dag(n, &edges);
            assert!(is_acyclic(n, &dag));
            assert!(dag.iter().all(|e| edges.contains(e)));
            let pairs: Vec<(usize, usize)> = dag.iter().map(|e| (e.0, e.1)).collect();
            let seq = layer_topological(n, &pairs).unwrap();
            assert!(seq.respects(&pairs) && seq.is_independent(&pairs));
        }
    }

    #[test]
    fn layering_examples() {
        assert_eq!(layer_topological(3, &[(0, 1), (1, 2)]).unwrap().to_string(), "[{0},{1},{2}]");
        assert_eq!(layer_topological(4, &[]).unwrap().to_string(), "[{0,1,2,3}]");
        let diamond = [(0, 1), (0, 2), (1, 3), (2, 3)];
        assert_eq!(layer_topological(4, &diamond).unwrap().to_string(), "[{0},{1,2},{3}]");
        assert!(matches!(layer_topological(2, &[(0, 1), (1, 0)]), Err(Error::Internal(_))));
    }

    #[test]
    fn graph_file_round_trip() {
        let text = "# demo\nn 3\n0 1 0.5\n1 2 1 # trailing\n";
        let g = WeightedDigraph::from_text(text).unwrap();
        assert_eq!(g.edges, vec![(0, 1, 0.5), (1, 2, 1.0)]);
        assert_eq!(WeightedDigraph::from_text(&g.to_text()).unwrap(), g);
        assert!(WeightedDigraph::from_text("0 1 0.5\n").is_err());
        assert!(WeightedDigraph::from_text("n 2\n0 2 1\n").is_err());
    }
}
