//! Comparison planners: whole-grid Viterbi, A* to the best goal cells, and
//! heuristic shortest routes over the candidate graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::ConceptModel;
use crate::error::{Error, Result};
use crate::grid_map::{Action, CostMap, GridPose};
use crate::planner::{
    concat_segments, estimate_initial_node, node_observation_score, smooth_path, Instruction, PlanResult, Stopwatch,
};
use crate::scalar::{log_sum_exp, sample_log_categorical, Scalar};
use crate::search::astar;
use crate::topo_graph::{Edge, TopoGraph};

pub const DEFAULT_VITERBI_HORIZON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViterbiConfig {
    pub horizon: usize,
}

impl Default for ViterbiConfig {
    fn default() -> Self {
        Self { horizon: DEFAULT_VITERBI_HORIZON }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AStarApproxConfig {
    pub goal_candidates: usize,
}

impl Default for AStarApproxConfig {
    fn default() -> Self {
        Self { goal_candidates: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicVariant {
    Cost,
    Distance,
}

/// Per-cell emission `log sum_{C,i} phi_C(i) N(x | mu_i, Sigma_i) W(bag | C)
/// pi(C) + log p(x | m)`; `-inf` on untraversable cells.
pub fn emission_table<T: Scalar>(words: &[usize], model: &ConceptModel<T>, cm: &CostMap<T>) -> Result<Vec<T>> {
    let k = model.n_places();
    // place weights with the concept sum folded in
    let mut place_w = Vec::with_capacity(k);
    let mut terms = vec![T::zero(); model.n_concepts()];
    for i in 0..k {
        for (c, t) in terms.iter_mut().enumerate() {
            *t = model.phi[c][i].ln() + model.word_log_mult(words, c)? + model.pi[c].ln();
        }
        place_w.push(log_sum_exp(&terms));
    }
    let gauss = (0..k).map(|i| model.gaussian(i)).collect::<Result<Vec<_>>>()?;
    let mut buf = vec![T::zero(); k];
    Ok((0..cm.len())
        .map(|idx| {
            let w = cm.weight[idx];
            if w <= T::zero() {
                return T::neg_infinity();
            }
            let x = cm.pose(idx).coord();
            for i in 0..k {
                buf[i] = place_w[i] + gauss[i].log_pdf(x);
            }
            log_sum_exp(&buf) + w.ln()
        })
        .collect())
}

fn check_start<T: Scalar>(start: GridPose, cm: &CostMap<T>) -> Result<()> {
    if cm.traversable(start) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("start ({}, {}) is not a traversable cell", start.row, start.col)))
    }
}

fn finish<T: Scalar>(
    method: &str,
    start: GridPose,
    segments: &[Vec<GridPose>],
    smoothing: bool,
    cm: &CostMap<T>,
    log_score: T,
    mut sw: Stopwatch,
) -> PlanResult<T> {
    let raw_path = concat_segments(segments);
    let path = if smoothing {
        let smoothed: Vec<Vec<GridPose>> = segments.iter().map(|s| smooth_path(s, cm)).collect();
        concat_segments(&smoothed)
    } else {
        raw_path.clone()
    };
    sw.lap("assemble");
    PlanResult {
        method: method.into(),
        start,
        node_seq: Vec::new(),
        i_seq: Vec::new(),
        path,
        raw_path,
        log_score,
        runtime_s: sw.total(),
        timings: sw.timings,
    }
}

/// Exact Viterbi over all traversable cells for `T` moves from `start`,
/// scoring `sum_{t=1..T} emission(x_t)`. Predecessor ties go to the first
/// action in [`Action::ALL`] order, final-cell ties to the smaller index.
pub fn spconavi_viterbi<T: Scalar>(
    start: GridPose,
    words: &[usize],
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
    config: ViterbiConfig,
    smoothing: bool,
) -> Result<PlanResult<T>> {
    if config.horizon == 0 {
        return Err(Error::InvalidInput("Viterbi horizon T must be at least 1".into()));
    }
    check_start(start, cm)?;
    let mut sw = Stopwatch::start();
    let em = emission_table(words, model, cm)?;
    sw.lap("emission");
    let n = cm.len();
    let (w, h) = (cm.width, cm.height);
    let mut delta = vec![T::neg_infinity(); n];
    delta[cm.index(start)] = T::zero();
    let mut back = vec![0u8; n * config.horizon];
    let mut active = vec![cm.index(start)];
    let mut in_next = vec![false; n];
    for t in 0..config.horizon {
        let mut next_active = Vec::new();
        for &y in &active {
            for a in Action::ALL {
                if let Some(q) = a.apply(cm.pose(y), w, h) {
                    let x = cm.index(q);
                    if em[x] > T::neg_infinity() && !in_next[x] {
                        in_next[x] = true;
                        next_active.push(x);
                    }
                }
            }
        }
        next_active.sort_unstable();
        let mut nd = vec![T::neg_infinity(); n];
        for &x in &next_active {
            in_next[x] = false;
            let p = cm.pose(x);
            let mut best = T::neg_infinity();
            let mut arg = 0u8;
            for (ai, a) in Action::ALL.iter().enumerate() {
                // predecessor y with a.apply(y) == x
                let Some(y) = a.inverse().apply(p, w, h) else { continue };
                let v = delta[cm.index(y)];
                if v > best {
                    best = v;
                    arg = ai as u8;
                }
            }
            nd[x] = best + em[x];
            back[t * n + x] = arg;
        }
        delta = nd;
        active = next_active;
    }
    let (mut cur, score) = active
        .iter()
        .map(|&x| (x, delta[x]))
        .fold(None, |b: Option<(usize, T)>, (x, v)| match b {
            Some((_, bv)) if v <= bv => b,
            _ => Some((x, v)),
        })
        .ok_or_else(|| Error::Invariant("Viterbi lattice is empty".into()))?;
    let mut cells = vec![cm.pose(cur)];
    for t in (0..config.horizon).rev() {
        let a = Action::ALL[back[t * n + cur] as usize];
        cur = cm.index(a.inverse().apply(cm.pose(cur), w, h).expect("stored predecessor in bounds"));
        cells.push(cm.pose(cur));
    }
    cells.reverse();
    sw.lap("search");
    Ok(finish("spconavi-viterbi", start, &[cells], smoothing, cm, score, sw))
}

/// A* (step cost `1 - log p(x | m)`) to each of the `J` cells with the best
/// emission; keeps the candidate maximizing emission plus path score.
pub fn spconavi_astar_approx<T: Scalar>(
    start: GridPose,
    words: &[usize],
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
    config: AStarApproxConfig,
    smoothing: bool,
) -> Result<PlanResult<T>> {
    if config.goal_candidates == 0 {
        return Err(Error::InvalidInput("J must be at least 1".into()));
    }
    check_start(start, cm)?;
    let mut sw = Stopwatch::start();
    let em = emission_table(words, model, cm)?;
    let mut order: Vec<usize> = (0..cm.len()).filter(|&i| em[i] > T::neg_infinity()).collect();
    order.sort_by(|&a, &b| em[b].partial_cmp(&em[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order.truncate(config.goal_candidates);
    let step_cost: Vec<T> = cm.weight.iter().map(|&p| if p > T::zero() { T::one() - p.ln() } else { T::infinity() }).collect();
    sw.lap("emission");
    let mut best: Option<(T, Vec<GridPose>)> = None;
    let mut searched = 0;
    for &g in &order {
        match astar(cm, &step_cost, start, cm.pose(g), T::one()) {
            Ok(r) => {
                let v = em[g] - r.entered_cost;
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, r.cells));
                }
            }
            Err(n) => searched = searched.max(n),
        }
    }
    let (score, cells) = best.ok_or(Error::NoPath { searched })?;
    sw.lap("search");
    Ok(finish("spconavi-astar", start, &[cells], smoothing, cm, score, sw))
}

/// Goal-place draw `i ~ p(i | S)`.
pub fn sample_place<T: Scalar>(words: &[usize], model: &ConceptModel<T>, rng: &mut ChaCha8Rng) -> Result<usize> {
    let lw = (0..model.n_places()).map(|k| node_observation_score(k, words, model)).collect::<Result<Vec<T>>>()?;
    Ok(sample_log_categorical(&lw, rng))
}

#[derive(Clone, Copy)]
struct Item<T> {
    cost: T,
    state: usize,
}

impl<T: Scalar> PartialEq for Item<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Item<T> {}
impl<T: Scalar> PartialOrd for Item<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T: Scalar> Ord for Item<T> {
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.partial_cmp(&self.cost).unwrap_or(Ordering::Equal).then(o.state.cmp(&self.state))
    }
}

#[allow(clippy::too_many_arguments)]
/// Shortest route over the candidate graph from `start` to a node of the
/// sampled goal place, through a node of the sampled waypoint place when the
/// instruction has one. Ignores `psi` and intermediate word factors.
pub fn heuristic_baseline<T: Scalar>(
    start: GridPose,
    instr: &Instruction,
    model: &ConceptModel<T>,
    graph: &TopoGraph<T>,
    cm: &CostMap<T>,
    variant: HeuristicVariant,
    seed: u64,
    smoothing: bool,
) -> Result<PlanResult<T>> {
    instr.validate()?;
    check_start(start, cm)?;
    let mut sw = Stopwatch::start();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goal = sample_place(&instr.goal_words, model, &mut rng)?;
    let via = match &instr.waypoint_words {
        Some(w) => Some(sample_place(w, model, &mut rng)?),
        None => None,
    };
    let k0 = estimate_initial_node(start, model)?;
    let start_edges = graph.start_edges(cm, start, k0);
    sw.lap("start-edges");
    let cost = |e: &Edge<T>, first: bool| match variant {
        HeuristicVariant::Cost => -(if first { e.path.log_w } else { e.path.log_w_entered }),
        HeuristicVariant::Distance => T::lit(e.path.steps as f64),
    };
    // state = phase * m + node; phase 1 once the waypoint place is visited
    let m = graph.n_nodes();
    let phase_after = |phase: usize, node: usize| usize::from(phase == 1 || via.is_none_or(|v| graph.nodes[node].place == v));
    let mut dist = vec![T::infinity(); 2 * m];
    let mut prev: Vec<Option<usize>> = vec![None; 2 * m];
    let mut heap = BinaryHeap::new();
    for e in &start_edges {
        let s = phase_after(0, e.to) * m + e.to;
        let c = cost(e, true);
        if c < dist[s] {
            dist[s] = c;
            heap.push(Item { cost: c, state: s });
        }
    }
    let mut done = vec![false; 2 * m];
    let mut reached = None;
    while let Some(Item { cost: d, state }) = heap.pop() {
        if done[state] {
            continue;
        }
        done[state] = true;
        let (phase, node) = (state / m, state % m);
        if phase == 1 && graph.nodes[node].place == goal {
            reached = Some(state);
            break;
        }
        for e in &graph.edges[node] {
            let s = phase_after(phase, e.to) * m + e.to;
            let c = d + cost(e, false);
            if c < dist[s] {
                dist[s] = c;
                prev[s] = Some(state);
                heap.push(Item { cost: c, state: s });
            }
        }
    }
    let Some(end) = reached else {
        let mut unreachable = vec![goal];
        unreachable.extend(via.filter(|&v| v != goal));
        return Err(Error::NoPlan { unreachable });
    };
    let mut states = vec![end];
    while let Some(p) = prev[*states.last().unwrap()] {
        states.push(p);
    }
    states.reverse();
    let nodes: Vec<usize> = states.iter().map(|s| s % m).collect();
    let first = start_edges.iter().find(|e| e.to == nodes[0]).expect("start edge");
    let mut segs = vec![first.path.cells.clone()];
    for w in nodes.windows(2) {
        segs.push(graph.edge(w[0], w[1]).expect("graph edge").path.cells.clone());
    }
    sw.lap("search");
    let name = match variant {
        HeuristicVariant::Cost => "baseline-cost",
        HeuristicVariant::Distance => "baseline-distance",
    };
    let mut r = finish(name, start, &segs, smoothing, cm, -dist[end], sw);
    r.node_seq = nodes.iter().map(|&j| graph.nodes[j]).collect();
    r.i_seq = r.node_seq.iter().map(|n| n.place).collect();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::Vocabulary;
    use crate::grid_map::{build_costmap, Cell, OccupancyGrid};
    use crate::linalg::Mat2;
    use crate::planner::{topo_plan, EdgeScore, PlanRequest};
    use crate::topo_graph::{build_graph, sample_candidates, CandidateMode, CandidateSet, GraphParams};

    fn vocab(words: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::default();
        for w in words {
            v.intern(w);
        }
        v
    }

    fn open(w: usize, h: usize) -> CostMap<f64> {
        build_costmap(&OccupancyGrid::filled(w, h, 1.0, Cell::Free).unwrap(), 0.0, 1.0).unwrap()
    }

    fn enumerate(start: GridPose, em: &[f64], cm: &CostMap<f64>, t: usize) -> f64 {
        fn go(p: GridPose, left: usize, em: &[f64], cm: &CostMap<f64>) -> f64 {
            if left == 0 {
                return 0.0;
            }
            Action::ALL
                .iter()
                .filter_map(|a| a.apply(p, cm.width, cm.height))
                .filter(|q| cm.traversable(*q))
                .map(|q| em[cm.index(q)] + go(q, left - 1, em, cm))
                .fold(f64::NEG_INFINITY, f64::max)
        }
        go(start, t, em, cm)
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut grid = OccupancyGrid::filled(8, 8, 1.0, Cell::Free).unwrap();
        grid.set(GridPose::new(3, 3), Cell::Occupied);
        grid.set(GridPose::new(4, 3), Cell::Occupied);
        let cm: CostMap<f64> = build_costmap(&grid, 2.0, 0.25).unwrap();
        let mut m: ConceptModel<f64> = ConceptModel::uniform(1, 1, vocab(&["a"]), 2, [8, 8]);
        m.mu = vec![[6.0, 5.0]];
        m.sigma = vec![Mat2::new(2.0, 0.5, 0.5, 1.0)];
        let em = emission_table(&[0], &m, &cm).unwrap();
        for t in 1..=4 {
            let r = spconavi_viterbi(GridPose::new(2, 2), &[0], &m, &cm, ViterbiConfig { horizon: t }, false).unwrap();
            let best = enumerate(GridPose::new(2, 2), &em, &cm, t);
            assert!((r.log_score - best).abs() < 1e-9, "T={t}");
            assert!(r.raw_path.len() <= t + 1);
            assert!(r.raw_path.iter().all(|q| cm.traversable(*q)));
        }
    }

    #[test]
    fn astar_approx_reaches_peak() {
        let cm = open(12, 12);
        let mut m: ConceptModel<f64> = ConceptModel::uniform(1, 1, vocab(&["a"]), 2, [12, 12]);
        m.mu = vec![[9.0, 8.0]];
        m.sigma = vec![Mat2::diag(0.5, 0.5)];
        let a = spconavi_astar_approx(GridPose::new(1, 1), &[0], &m, &cm, AStarApproxConfig { goal_candidates: 1 }, false).unwrap();
        assert_eq!(*a.path.last().unwrap(), GridPose::new(9, 8));
        let b = spconavi_astar_approx(GridPose::new(1, 1), &[0], &m, &cm, AStarApproxConfig { goal_candidates: 10 }, false).unwrap();
        assert_eq!(a.path, b.path);
    }

    #[test]
    fn heuristic_single_place_equals_topo_plan() {
        let cm = open(8, 8);
        let m: ConceptModel<f64> = ConceptModel::uniform(1, 1, vocab(&["a"]), 2, [8, 8]);
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let instr = Instruction::new(vec![0], None).unwrap();
        let h = heuristic_baseline(GridPose::new(0, 7), &instr, &m, &g, &cm, HeuristicVariant::Cost, 1, false).unwrap();
        let t = topo_plan(&PlanRequest { smoothing: false, ..PlanRequest::new(GridPose::new(0, 7), instr, 1) }, &m, &g, &cm).unwrap();
        assert_eq!(h.path, t.path);
    }

    #[test]
    fn distance_variant_picks_shorter_route() {
        let cm = open(20, 20);
        let mut m: ConceptModel<f64> = ConceptModel::uniform(1, 1, vocab(&["a"]), 2, [20, 20]);
        m.mu = vec![[10.0, 10.0]];
        m.sigma = vec![Mat2::diag(1e4, 1e4)];
        let c = CandidateSet { per_place: vec![vec![GridPose::new(18, 18), GridPose::new(3, 4)]], unreachable: vec![] };
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let instr = Instruction::new(vec![0], None).unwrap();
        let h = heuristic_baseline(GridPose::new(1, 1), &instr, &m, &g, &cm, HeuristicVariant::Distance, 0, false).unwrap();
        assert_eq!(*h.path.last().unwrap(), GridPose::new(3, 4));
        assert_eq!(h.log_score, -5.0);
    }

    #[test]
    fn goal_sampling_can_pick_far_place() {
        // two places share the goal word; the left one is closer to the start
        let cm = open(30, 5);
        let mut m: ConceptModel<f64> = ConceptModel::uniform(2, 3, vocab(&["bed", "hall"]), 2, [5, 30]);
        m.mu = vec![[2.0, 3.0], [2.0, 26.0], [2.0, 10.0]];
        m.sigma = vec![Mat2::diag(3.0, 3.0); 3];
        m.phi = vec![vec![0.5, 0.5, 1e-6], vec![1e-6, 1e-6, 1.0]];
        m.w = vec![vec![0.99, 0.01], vec![0.01, 0.99]];
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams { max_steps: 1000, ..Default::default() }).unwrap();
        let instr = Instruction::new(vec![0], None).unwrap();
        let mut ends = std::collections::BTreeSet::new();
        for seed in 0..20 {
            let h = heuristic_baseline(GridPose::new(2, 10), &instr, &m, &g, &cm, HeuristicVariant::Distance, seed, false).unwrap();
            ends.insert(h.i_seq.last().copied().unwrap());
        }
        // goal sampling sends some runs to the far place
        assert_eq!(ends.into_iter().collect::<Vec<_>>(), vec![0, 1]);
        let req = PlanRequest { edge_score: EdgeScore::LengthNormalized, ..PlanRequest::new(GridPose::new(2, 10), instr, 4) };
        let t = topo_plan(&req, &m, &g, &cm).unwrap();
        assert_eq!(*t.i_seq.last().unwrap(), 0);
    }
}
