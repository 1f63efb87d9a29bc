//! Random time-varying communication graphs and Metropolis consensus weights.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{domain, Result};

/// Undirected simple graph stored as sorted neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommGraph {
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            neighbors: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }

    pub fn path(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 1..n {
            g.add_edge(i - 1, i);
        }
        g
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(domain(format!("invalid edge ({a}, {b})")));
            }
            if !g.is_adjacent(a, b) {
                g.add_edge(a, b);
            }
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        for (x, y) in [(a, b), (b, a)] {
            let list = &mut self.neighbors[x];
            if let Err(pos) = list.binary_search(&y) {
                list.insert(pos, y);
            }
        }
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &self.neighbors[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == n
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// One `"i j"` line per edge, 0-indexed, sorted.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Uniform spanning tree of the complete graph (Wilson's algorithm).
fn wilson_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CommGraph {
    let mut in_tree = vec![false; n];
    let mut next = vec![usize::MAX; n];
    let root = rng.gen_range(0..n);
    in_tree[root] = true;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &start in &order {
        let mut u = start;
        while !in_tree[u] {
            let mut w = rng.gen_range(0..n - 1);
            if w >= u {
                w += 1;
            }
            next[u] = w;
            u = w;
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            u = next[u];
        }
    }
    let mut g = CommGraph::empty(n);
    for v in 0..n {
        if v != root {
            g.add_edge(v, next[v]);
        }
    }
    g
}

/// Random recursive tree where each new node attaches to an earlier node
/// with spare degree.
fn capped_tree<R: Rng + ?Sized>(n: usize, d_max: usize, rng: &mut R) -> CommGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut g = CommGraph::empty(n);
    for i in 1..n {
        let open: Vec<usize> = order[..i].iter().copied().filter(|&v| g.degree(v) < d_max).collect();
        let parent = open[rng.gen_range(0..open.len())];
        g.add_edge(order[i], parent);
    }
    g
}

const TREE_ATTEMPTS: usize = 64;

/// Connected graph with every degree at most `d_max`: a spanning tree plus
/// random extra edges for nodes below `d_min` (best effort).
pub fn random_connected_graph<R: Rng + ?Sized>(n: usize, d_min: usize, d_max: usize, rng: &mut R) -> Result<CommGraph> {
    if n < 2 {
        return Err(domain("communication graph needs at least two nodes"));
    }
    if d_min < 1 || d_min > d_max || d_max > n - 1 {
        return Err(domain(format!("infeasible degree bounds [{d_min}, {d_max}] for n = {n}")));
    }
    if n > 2 && d_max < 2 {
        return Err(domain("a connected graph on more than two nodes needs d_max >= 2"));
    }
    let mut g = None;
    for _ in 0..TREE_ATTEMPTS {
        let t = wilson_tree(n, rng);
        if t.max_degree() <= d_max {
            g = Some(t);
            break;
        }
    }
    let mut g = g.unwrap_or_else(|| capped_tree(n, d_max, rng));

    loop {
        let mut deficient: Vec<usize> = (0..n).filter(|&v| g.degree(v) < d_min).collect();
        if deficient.is_empty() {
            break;
        }
        deficient.shuffle(rng);
        let mut progressed = false;
        for v in deficient {
            if g.degree(v) >= d_min || g.degree(v) >= d_max {
                continue;
            }
            let candidates: Vec<usize> = (0..n)
                .filter(|&w| w != v && !g.is_adjacent(v, w) && g.degree(w) < d_max)
                .collect();
            if let Some(&w) = candidates.choose(rng) {
                g.add_edge(v, w);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(g)
}

/// Doubly-stochastic symmetric consensus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub c: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn identity(n: usize) -> Self {
        Self { c: DMatrix::identity(n, n) }
    }

    pub fn len(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.nrows() == 0
    }

    /// Largest deviation of any row or column sum from one.
    pub fn stochasticity_error(&self) -> f64 {
        let rows = self.c.row_iter().map(|r| (r.sum() - 1.0).abs());
        let cols = self.c.column_iter().map(|c| (c.sum() - 1.0).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// Metropolis weights `1 / (1 + max(d_i, d_j))` on edges, remainder on the
/// diagonal.
pub fn consensus_weights(g: &CommGraph) -> WeightMatrix {
    let n = g.len();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let di = g.degree(i);
        let mut off = 0.0;
        for &j in g.neighbors(i) {
            let w = 1.0 / (1.0 + di.max(g.degree(j)) as f64);
            c[(i, j)] = w;
            off += w;
        }
        c[(i, i)] = 1.0 - off;
    }
    WeightMatrix { c }
}
