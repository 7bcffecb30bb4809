//! Minimum-batch partitioning of the undirected independence view.

use crate::batch::BatchSequence;
use crate::error::{Error, Result};

pub const BRUTEFORCE_MAX_AGENTS: usize = 10;
const EXACT_MIS_MAX: usize = 24;
const MAX_AGENTS: usize = 64;

/// Undirected conflict graph over agents plus the directed edges it came
/// from, which decide the batch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndependenceGraph {
    n: usize,
    adj: Vec<u64>,
    directed: Vec<(usize, usize)>,
}

impl IndependenceGraph {
    /// Edges in either direction forbid co-batching.
    pub fn from_directed(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n > MAX_AGENTS {
            return Err(Error::Size(format!("at most {MAX_AGENTS} agents supported, got {n}")));
        }
        let mut adj = vec![0u64; n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::input(format!("edge ({a}, {b}) is not valid for {n} agents")));
            }
            adj[a] |= 1 << b;
            adj[b] |= 1 << a;
        }
        let mut directed = edges.to_vec();
        directed.sort_unstable();
        directed.dedup();
        Ok(Self { n, adj, directed })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adj[a] >> b & 1 == 1
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.directed
    }

    fn is_valid(&self, blocks: &[Vec<usize>]) -> bool {
        blocks
            .iter()
            .all(|b| b.iter().all(|&x| b.iter().all(|&y| !self.adjacent(x, y))))
    }
}

/// Orders blocks along the directed edges when the block quotient is
/// acyclic (Kahn, lowest block index first), else keeps the given order.
fn order_blocks(graph: &IndependenceGraph, blocks: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    match quotient_order(graph, &blocks) {
        Some(order) => order.into_iter().map(|k| blocks[k].clone()).collect(),
        None => blocks,
    }
}

fn quotient_order(graph: &IndependenceGraph, blocks: &[Vec<usize>]) -> Option<Vec<usize>> {
    let m = blocks.len();
    let mut block_of = vec![0; graph.n];
    for (k, b) in blocks.iter().enumerate() {
        for &i in b {
            block_of[i] = k;
        }
    }
    let mut succ = vec![Vec::new(); m];
    let mut indeg = vec![0usize; m];
    for &(a, b) in &graph.directed {
        let (ka, kb) = (block_of[a], block_of[b]);
        if ka != kb && !succ[ka].contains(&kb) {
            succ[ka].push(kb);
            indeg[kb] += 1;
        }
    }
    let mut done = vec![false; m];
    let mut order = Vec::with_capacity(m);
    for _ in 0..m {
        let next = (0..m).find(|&k| !done[k] && indeg[k] == 0)?;
        done[next] = true;
        order.push(next);
        for &s in &succ[next] {
            indeg[s] -= 1;
        }
    }
    Some(order)
}

fn emit(graph: &IndependenceGraph, blocks: Vec<Vec<usize>>) -> Result<BatchSequence> {
    if !graph.is_valid(&blocks) {
        return Err(Error::Internal("partition places adjacent agents in one batch".into()));
    }
    let ordered = order_blocks(graph, blocks);
    BatchSequence::new(ordered, graph.n)
}

/// Exhaustive search over set partitions (restricted growth strings with
/// conflict pruning). Among minimum partitions the first one whose block
/// quotient is acyclic wins.
pub fn min_batches_bruteforce(graph: &IndependenceGraph) -> Result<BatchSequence> {
    let n = graph.n;
    if n > BRUTEFORCE_MAX_AGENTS {
        return Err(Error::Size(format!(
            "brute-force partitioning supports at most {BRUTEFORCE_MAX_AGENTS} agents, got {n}"
        )));
    }
    if n == 0 {
        return BatchSequence::new(Vec::new(), 0);
    }
    let mut best = n;
    let mut blocks: Vec<u64> = Vec::new();
    minimum_count(graph, 0, &mut blocks, &mut best);
    let mut found: Option<Vec<Vec<usize>>> = None;
    let mut first: Option<Vec<Vec<usize>>> = None;
    enumerate_exact(graph, 0, &mut Vec::new(), best, &mut |parts| {
        let list = masks_to_blocks(parts);
        if first.is_none() {
            first = Some(list.clone());
        }
        if quotient_order(graph, &list).is_some() {
            found = Some(list);
            return true;
        }
        false
    });
    let chosen = found.or(first).ok_or_else(|| Error::Internal("no partition found".into()))?;
    emit(graph, chosen)
}

fn masks_to_blocks(masks: &[u64]) -> Vec<Vec<usize>> {
    masks
        .iter()
        .map(|&m| (0..64).filter(|&i| m >> i & 1 == 1).collect())
        .collect()
}

fn minimum_count(graph: &IndependenceGraph, v: usize, blocks: &mut Vec<u64>, best: &mut usize) {
    if blocks.len() >= *best {
        return;
    }
    if v == graph.n {
        *best = blocks.len();
        return;
    }
    for k in 0..blocks.len() {
        if blocks[k] & graph.adj[v] == 0 {
            blocks[k] |= 1 << v;
            minimum_count(graph, v + 1, blocks, best);
            blocks[k] &= !(1 << v);
        }
    }
    blocks.push(1 << v);
    minimum_count(graph, v + 1, blocks, best);
    blocks.pop();
}

/// Calls `visit` on every valid partition with exactly `target` blocks until
/// it returns true.
fn enumerate_exact(
    graph: &IndependenceGraph,
    v: usize,
    blocks: &mut Vec<u64>,
    target: usize,
    visit: &mut dyn FnMut(&[u64]) -> bool,
) -> bool {
    if blocks.len() > target || blocks.len() + (graph.n - v) < target {
        return false;
    }
    if v == graph.n {
        return blocks.len() == target && visit(blocks);
    }
    for k in 0..blocks.len() {
        if blocks[k] & graph.adj[v] == 0 {
            blocks[k] |= 1 << v;
            let stop = enumerate_exact(graph, v + 1, blocks, target, visit);
            blocks[k] &= !(1 << v);
            if stop {
                return true;
            }
        }
    }
    if blocks.len() < target {
        blocks.push(1 << v);
        let stop = enumerate_exact(graph, v + 1, blocks, target, visit);
        blocks.pop();
        if stop {
            return true;
        }
    }
    false
}

/// Repeatedly removes a largest independent set (exact up to 24 remaining
/// agents, minimum-degree heuristic beyond).
pub fn min_batches_greedy(graph: &IndependenceGraph) -> Result<BatchSequence> {
    let n = graph.n;
    let mut remaining: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut blocks = Vec::new();
    while remaining != 0 {
        let set = if remaining.count_ones() as usize <= EXACT_MIS_MAX {
            let mut best = 0u64;
            exact_mis(graph, remaining, 0, &mut best);
            best
        } else {
            min_degree_mis(graph, remaining)
        };
        blocks.push(set);
        remaining &= !set;
    }
    emit(graph, masks_to_blocks(&blocks))
}

fn exact_mis(graph: &IndependenceGraph, candidates: u64, chosen: u64, best: &mut u64) {
    if candidates == 0 {
        if chosen.count_ones() > best.count_ones() {
            *best = chosen;
        }
        return;
    }
    if chosen.count_ones() + candidates.count_ones() <= best.count_ones() {
        return;
    }
    let v = candidates.trailing_zeros() as usize;
    exact_mis(graph, candidates & !(1 << v) & !graph.adj[v], chosen | 1 << v, best);
    exact_mis(graph, candidates & !(1 << v), chosen, best);
}

fn min_degree_mis(graph: &IndependenceGraph, mut candidates: u64) -> u64 {
    let mut chosen = 0u64;
    while candidates != 0 {
        let v = (0..graph.n)
            .filter(|&v| candidates >> v & 1 == 1)
            .min_by_key(|&v| ((graph.adj[v] & candidates).count_ones(), v))
            .expect("nonempty");
        chosen |= 1 << v;
        candidates &= !(1 << v) & !graph.adj[v];
    }
    chosen
}
