//! Exact minimum feedback arc set by lazy cycle constraints.
//!
//! The covering problem "remove at least one edge from every cycle" is
//! grown one cycle at a time: solve the minimum hitting set over the cycles
//! known so far, and if the graph minus that set still has a cycle, add it
//! and solve again. Each hitting set is a lower bound on the optimum, so the
//! first one that leaves the graph acyclic is optimal.

use super::GraphError;

/// Guard on the number of candidate edges.
pub const MAX_EDGES: usize = 10_000;

/// Returns a cycle (as edge indices) of the graph with `removed` edges
/// deleted. Nodes are visited in index order, out-edges in slice order.
pub(crate) fn find_cycle(n: usize, edges: &[(usize, usize)], removed: &[bool]) -> Option<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &(p, _)) in edges.iter().enumerate() {
        if !removed[i] {
            out[p].push(i);
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    // (node, next out-edge cursor, edge used to enter)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        state[start] = 1;
        stack.push((start, 0, usize::MAX));
        while let Some(top) = stack.last_mut() {
            let (node, cursor) = (top.0, top.1);
            if cursor < out[node].len() {
                top.1 += 1;
                let e = out[node][cursor];
                let next = edges[e].1;
                match state[next] {
                    0 => {
                        state[next] = 1;
                        stack.push((next, 0, e));
                    }
                    1 => {
                        // back edge: the cycle is the stack suffix from `next`
                        let from = stack.iter().position(|f| f.0 == next).unwrap();
                        let mut cycle: Vec<usize> = stack[from + 1..].iter().map(|f| f.2).collect();
                        cycle.push(e);
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Minimum set of edge indices whose removal makes the graph acyclic.
///
/// `edges` must be listed in tie-break order: among optimal sets the solver
/// prefers edges on more unresolved cycles, then lower indices.
pub fn min_feedback_arc_set_indexed(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, GraphError> {
    if edges.len() > MAX_EDGES {
        return Err(GraphError::TooManyEdges {
            count: edges.len(),
            limit: MAX_EDGES,
        });
    }
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    let mut removed = vec![false; edges.len()];
    loop {
        let hitting = HittingSet::new(edges.len(), &cycles).solve();
        removed.iter_mut().for_each(|r| *r = false);
        for &e in &hitting {
            removed[e] = true;
        }
        match find_cycle(n, edges, &removed) {
            Some(c) => cycles.push(c),
            None => {
                let mut out = hitting;
                out.sort_unstable();
                return Ok(out);
            }
        }
    }
}

struct HittingSet<'a> {
    cycles: &'a [Vec<usize>],
    /// cycles containing each edge
    by_edge: Vec<Vec<usize>>,
    /// number of chosen edges in each cycle
    hits: Vec<u32>,
    forbidden: Vec<bool>,
    chosen: Vec<usize>,
    best: Vec<usize>,
}

impl<'a> HittingSet<'a> {
    fn new(m: usize, cycles: &'a [Vec<usize>]) -> Self {
        let mut by_edge = vec![Vec::new(); m];
        for (ci, c) in cycles.iter().enumerate() {
            for &e in c {
                by_edge[e].push(ci);
            }
        }
        Self {
            cycles,
            by_edge,
            hits: vec![0; cycles.len()],
            forbidden: vec![false; m],
            chosen: Vec::new(),
            best: Vec::new(),
        }
    }

    fn unhit_count(&self, e: usize) -> usize {
        self.by_edge[e].iter().filter(|&&c| self.hits[c] == 0).count()
    }

    /// Candidate edges of a cycle, most unresolved cycles first, then by index.
    fn ranked(&self, cycle: usize) -> Vec<usize> {
        let mut cand: Vec<(usize, usize)> = self.cycles[cycle]
            .iter()
            .filter(|&&e| !self.forbidden[e])
            .map(|&e| (self.unhit_count(e), e))
            .collect();
        cand.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        cand.dedup_by_key(|c| c.1);
        cand.into_iter().map(|c| c.1).collect()
    }

    fn choose(&mut self, e: usize) {
        self.chosen.push(e);
        for &c in &self.by_edge[e] {
            self.hits[c] += 1;
        }
    }

    fn unchoose(&mut self) {
        let e = self.chosen.pop().unwrap();
        for &c in &self.by_edge[e] {
            self.hits[c] -= 1;
        }
    }

    fn greedy(&mut self) -> Vec<usize> {
        while let Some(c) = (0..self.cycles.len()).find(|&c| self.hits[c] == 0) {
            let e = self.ranked(c)[0];
            self.choose(e);
        }
        let out = self.chosen.clone();
        while !self.chosen.is_empty() {
            self.unchoose();
        }
        out
    }

    /// Number of pairwise edge-disjoint unhit cycles found greedily; each
    /// needs its own edge.
    fn lower_bound(&self) -> usize {
        let mut used = vec![false; self.by_edge.len()];
        let mut count = 0;
        for (ci, c) in self.cycles.iter().enumerate() {
            if self.hits[ci] == 0 && c.iter().all(|&e| !used[e]) {
                c.iter().for_each(|&e| used[e] = true);
                count += 1;
            }
        }
        count
    }

    fn solve(mut self) -> Vec<usize> {
        if self.cycles.is_empty() {
            return Vec::new();
        }
        self.best = self.greedy();
        self.branch();
        self.best
    }

    fn branch(&mut self) {
        // branch on the unhit cycle with the fewest free edges
        let mut pick: Option<(usize, usize)> = None;
        for (ci, c) in self.cycles.iter().enumerate() {
            if self.hits[ci] != 0 {
                continue;
            }
            let free = c.iter().filter(|&&e| !self.forbidden[e]).count();
            if free == 0 {
                return;
            }
            if pick.is_none_or(|(_, f)| free < f) {
                pick = Some((ci, free));
            }
        }
        let Some((cycle, _)) = pick else {
            if self.chosen.len() < self.best.len() {
                self.best = self.chosen.clone();
            }
            return;
        };
        if self.chosen.len() + self.lower_bound().max(1) >= self.best.len() {
            return;
        }
        let candidates = self.ranked(cycle);
        let mut newly_forbidden = Vec::new();
        for e in candidates {
            self.choose(e);
            self.branch();
            self.unchoose();
            // later branches exclude e: sets containing it were covered above
            self.forbidden[e] = true;
            newly_forbidden.push(e);
        }
        for e in newly_forbidden {
            self.forbidden[e] = false;
        }
    }
}
