//! Shortest-path searches over the 4-connected traversable cells of a cost
//! map, with per-cell costs paid on entering a cell.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::grid_map::{CostMap, GridPose};
use crate::scalar::Scalar;

pub const NO_CELL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Entry<T> {
    key: T,
    tie: T,
    idx: usize,
}

impl<T: Scalar> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Entry<T> {}

impl<T: Scalar> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Entry<T> {
    // min-heap on (key, tie, idx)
    fn cmp(&self, other: &Self) -> Ordering {
        let key = other.key.partial_cmp(&self.key).unwrap_or(Ordering::Equal);
        let tie = other.tie.partial_cmp(&self.tie).unwrap_or(Ordering::Equal);
        key.then(tie).then(other.idx.cmp(&self.idx))
    }
}

fn neighbor_indices<T: Scalar>(cm: &CostMap<T>, idx: usize, out: &mut [usize; 4]) -> usize {
    let (w, h) = (cm.width, cm.height);
    let (r, c) = (idx / w, idx % w);
    let mut n = 0;
    let mut push = |j: usize| {
        if cm.weight[j] > T::zero() {
            out[n] = j;
            n += 1;
        }
    };
    if r + 1 < h {
        push(idx + w);
    }
    if r > 0 {
        push(idx - w);
    }
    if c > 0 {
        push(idx - 1);
    }
    if c + 1 < w {
        push(idx + 1);
    }
    n
}

#[derive(Debug, Clone)]
pub struct SearchResult<T> {
    pub cells: Vec<GridPose>,
    /// Start-cell cost plus the cost of every entered cell.
    pub cost: T,
    /// Cost of the entered cells only.
    pub entered_cost: T,
    pub expanded: usize,
}

/// A* from `start` to `goal` with `h(x) = heuristic_scale * euclid(x, goal)`.
/// `cost` is indexed by cell and must be positive on traversable cells.
/// Returns `Err(expanded)` if the goal is unreachable.
pub fn astar<T: Scalar>(
    cm: &CostMap<T>,
    cost: &[T],
    start: GridPose,
    goal: GridPose,
    heuristic_scale: T,
) -> Result<SearchResult<T>, usize> {
    let n = cm.len();
    let s = cm.index(start);
    let g_idx = cm.index(goal);
    if !cm.traversable(start) || !cm.traversable(goal) {
        return Err(0);
    }
    let h = |i: usize| {
        let p = cm.pose(i);
        let dr = p.row as f64 - goal.row as f64;
        let dc = p.col as f64 - goal.col as f64;
        heuristic_scale * T::lit((dr * dr + dc * dc).sqrt())
    };
    let mut g = vec![T::infinity(); n];
    let mut parent = vec![NO_CELL; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    g[s] = T::zero();
    heap.push(Entry { key: h(s), tie: T::zero(), idx: s });
    let mut expanded = 0;
    let mut nb = [0usize; 4];
    while let Some(Entry { idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        expanded += 1;
        if idx == g_idx {
            let mut cells = vec![cm.pose(idx)];
            let mut cur = idx;
            while parent[cur] != NO_CELL {
                cur = parent[cur] as usize;
                cells.push(cm.pose(cur));
            }
            cells.reverse();
            let entered = g[idx];
            return Ok(SearchResult { cells, cost: cost[s] + entered, entered_cost: entered, expanded });
        }
        let k = neighbor_indices(cm, idx, &mut nb);
        for &j in &nb[..k] {
            if closed[j] {
                continue;
            }
            let cand = g[idx] + cost[j];
            if cand < g[j] {
                g[j] = cand;
                parent[j] = idx as u32;
                // prefer deeper nodes on f-ties
                heap.push(Entry { key: cand + h(j), tie: -cand, idx: j });
            }
        }
    }
    Err(expanded)
}

/// Cheapest entered-cell cost from every cell to a fixed target, with the
/// successor toward the target.
#[derive(Debug, Clone)]
pub struct CostField<T> {
    pub target: GridPose,
    pub dist: Vec<T>,
    pub next: Vec<u32>,
}

impl<T: Scalar> CostField<T> {
    /// Reverse Dijkstra: `dist[x] = min over paths x -> target of the sum of
    /// `cost` over every cell after `x`.
    pub fn build(cm: &CostMap<T>, cost: &[T], target: GridPose) -> Self {
        let n = cm.len();
        let t = cm.index(target);
        let mut dist = vec![T::infinity(); n];
        let mut next = vec![NO_CELL; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        if cm.traversable(target) {
            dist[t] = T::zero();
            heap.push(Entry { key: T::zero(), tie: T::zero(), idx: t });
        }
        let mut nb = [0usize; 4];
        while let Some(Entry { idx, .. }) = heap.pop() {
            if done[idx] {
                continue;
            }
            done[idx] = true;
            let k = neighbor_indices(cm, idx, &mut nb);
            for &j in &nb[..k] {
                // moving j -> idx enters idx
                let cand = dist[idx] + cost[idx];
                if cand < dist[j] {
                    dist[j] = cand;
                    next[j] = idx as u32;
                    heap.push(Entry { key: cand, tie: T::zero(), idx: j });
                }
            }
        }
        Self { target, dist, next }
    }

    pub fn reachable(&self, cm: &CostMap<T>, from: GridPose) -> bool {
        self.dist[cm.index(from)].is_finite()
    }

    /// Cells from `from` to the target, inclusive.
    pub fn path(&self, cm: &CostMap<T>, from: GridPose) -> Option<Vec<GridPose>> {
        let mut cur = cm.index(from);
        if !self.dist[cur].is_finite() {
            return None;
        }
        let mut cells = vec![from];
        while self.next[cur] != NO_CELL {
            cur = self.next[cur] as usize;
            cells.push(cm.pose(cur));
        }
        Some(cells)
    }
}

/// Unit-step BFS distances from a set of sources over traversable cells.
pub fn bfs_distances<T: Scalar>(cm: &CostMap<T>, sources: &[GridPose]) -> Vec<Option<usize>> {
    let mut dist = vec![None; cm.len()];
    let mut q = VecDeque::new();
    for &s in sources {
        if cm.traversable(s) {
            let i = cm.index(s);
            if dist[i].is_none() {
                dist[i] = Some(0);
                q.push_back(i);
            }
        }
    }
    let mut nb = [0usize; 4];
    while let Some(i) = q.pop_front() {
        let d = dist[i].expect("queued cells have a distance");
        let k = neighbor_indices(cm, i, &mut nb);
        for &j in &nb[..k] {
            if dist[j].is_none() {
                dist[j] = Some(d + 1);
                q.push_back(j);
            }
        }
    }
    dist
}

/// Shortest unit-step 4-connected path, ties broken by neighbor order.
pub fn bfs_path<T: Scalar>(cm: &CostMap<T>, start: GridPose, goal: GridPose) -> Option<Vec<GridPose>> {
    let dist = bfs_distances(cm, &[goal]);
    let mut cur = cm.index(start);
    dist[cur]?;
    let mut cells = vec![start];
    let mut nb = [0usize; 4];
    while dist[cur] != Some(0) {
        let d = dist[cur].unwrap();
        let k = neighbor_indices(cm, cur, &mut nb);
        cur = *nb[..k].iter().find(|&&j| dist[j] == Some(d - 1)).expect("BFS predecessor");
        cells.push(cm.pose(cur));
    }
    Some(cells)
}
