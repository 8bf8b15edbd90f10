//! Topological-level search over the candidate graph and whole-path
//! assembly.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::concept::{read_json, write_json, ConceptModel, Vocabulary};
use crate::error::{Error, Result};
use crate::grid_map::{CostMap, GridPose};
use crate::scalar::{argmax, log_sum_exp, Scalar};
use crate::topo_graph::{Edge, NodeId, TopoGraph};

pub const PLAN_SCHEMA: &str = "topo-nav.plan";
pub const PLAN_VERSION: u32 = 1;
pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub goal_words: Vec<usize>,
    #[serde(default)]
    pub waypoint_words: Option<Vec<usize>>,
}

impl Instruction {
    pub fn new(goal_words: Vec<usize>, waypoint_words: Option<Vec<usize>>) -> Result<Self> {
        let s = Self { goal_words, waypoint_words };
        s.validate()?;
        Ok(s)
    }

    /// Interns space-separated word strings against `vocab`.
    pub fn parse(vocab: &Vocabulary, goal: &str, via: Option<&str>) -> Result<Self> {
        let goal_words = vocab.lookup_all(goal)?;
        let waypoint_words = match via {
            Some(v) if !v.trim().is_empty() => Some(vocab.lookup_all(v)?),
            _ => None,
        };
        Self::new(goal_words, waypoint_words)
    }

    pub fn validate(&self) -> Result<()> {
        if self.goal_words.is_empty() {
            return Err(Error::InvalidInput("instruction needs at least one goal word".into()));
        }
        if self.waypoint_words.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidInput("waypoint word list is empty".into()));
        }
        Ok(())
    }

    /// Waypoint and goal words together, as one bag.
    pub fn bag(&self) -> Vec<usize> {
        let mut out = self.waypoint_words.clone().unwrap_or_default();
        out.extend_from_slice(&self.goal_words);
        out
    }
}

/// Words observed at topological step `e` (1-based) of `horizon`: the
/// waypoint for the first `ceil(E / 2)` steps, the goal afterwards.
pub fn step_words(instr: &Instruction, e: usize, horizon: usize) -> &[usize] {
    match &instr.waypoint_words {
        Some(w) if e <= horizon.div_ceil(2) => w,
        _ => &instr.goal_words,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeScore {
    /// Sum of per-cell log-likelihoods.
    #[default]
    Raw,
    /// Mean per-cell log-likelihood.
    LengthNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: GridPose,
    pub instruction: Instruction,
    pub horizon: usize,
    pub smoothing: bool,
    #[serde(default)]
    pub edge_score: EdgeScore,
}

impl PlanRequest {
    pub fn new(start: GridPose, instruction: Instruction, horizon: usize) -> Self {
        Self { start, instruction, horizon, smoothing: true, edge_score: EdgeScore::Raw }
    }

    pub fn validate<T: Scalar>(&self, cm: &CostMap<T>) -> Result<()> {
        self.instruction.validate()?;
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon E must be at least 1".into()));
        }
        if !cm.traversable(self.start) {
            return Err(Error::InvalidInput(format!(
                "start ({}, {}) is not a traversable cell",
                self.start.row, self.start.col
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PlanResult<T> {
    pub method: String,
    pub start: GridPose,
    pub node_seq: Vec<NodeId>,
    pub i_seq: Vec<usize>,
    pub path: Vec<GridPose>,
    /// Path before smoothing.
    pub raw_path: Vec<GridPose>,
    pub log_score: T,
    pub runtime_s: f64,
    pub timings: Vec<Timing>,
}

impl<T: Scalar> PlanResult<T> {
    pub fn path_length(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, PLAN_SCHEMA, PLAN_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, PLAN_SCHEMA, PLAN_VERSION)
    }
}

pub(crate) struct Stopwatch {
    origin: Instant,
    last: Instant,
    pub timings: Vec<Timing>,
}

impl Stopwatch {
    pub fn start() -> Self {
        let now = Instant::now();
        Self { origin: now, last: now, timings: Vec::new() }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(Timing { stage: stage.to_string(), seconds: (now - self.last).as_secs_f64() });
        self.last = now;
    }

    pub fn total(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Place whose Gaussian is densest at `x0`; ties go to the smaller index.
pub fn estimate_initial_node<T: Scalar>(x0: GridPose, model: &ConceptModel<T>) -> Result<usize> {
    let scores = (0..model.n_places()).map(|k| model.position_emission(x0, k)).collect::<Result<Vec<T>>>()?;
    argmax(&scores).ok_or_else(|| Error::Invariant("model has no places".into()))
}

/// `log sum_C phi_C(k) prod_b W_C(s_b) pi_C`.
pub fn node_observation_score<T: Scalar>(k: usize, words: &[usize], model: &ConceptModel<T>) -> Result<T> {
    let terms = (0..model.n_concepts())
        .map(|c| Ok(model.phi[c][k].ln() + model.word_log_mult(words, c)? + model.pi[c].ln()))
        .collect::<Result<Vec<T>>>()?;
    Ok(log_sum_exp(&terms))
}

fn edge_value<T: Scalar>(edge: &Edge<T>, first: bool, mode: EdgeScore) -> T {
    let p = &edge.path;
    match (mode, first) {
        (EdgeScore::Raw, true) => p.log_w,
        (EdgeScore::Raw, false) => p.log_w_entered,
        (EdgeScore::LengthNormalized, true) => p.log_w / T::lit((p.steps + 1) as f64),
        (EdgeScore::LengthNormalized, false) if p.steps == 0 => T::zero(),
        (EdgeScore::LengthNormalized, false) => p.log_w_entered / T::lit(p.steps as f64),
    }
}

/// Per-step node terms `node_observation_score(k, S_e) - log sum_c phi_c(k)`
/// indexed `[e - 1][k]`.
fn node_terms<T: Scalar>(req: &PlanRequest, model: &ConceptModel<T>) -> Result<Vec<Vec<T>>> {
    let mut cache: Vec<(Vec<usize>, Vec<T>)> = Vec::new();
    let mut out = Vec::with_capacity(req.horizon);
    for e in 1..=req.horizon {
        let s = step_words(&req.instruction, e, req.horizon);
        if let Some((_, v)) = cache.iter().find(|(w, _)| w == s) {
            out.push(v.clone());
            continue;
        }
        let v = (0..model.n_places())
            .map(|k| Ok(node_observation_score(k, s, model)? - model.phi_column_log_sum(k)))
            .collect::<Result<Vec<T>>>()?;
        cache.push((s.to_vec(), v.clone()));
        out.push(v);
    }
    Ok(out)
}

/// Layered problem shared by the max-product and sum-product passes.
struct Lattice<'a, T> {
    graph: &'a TopoGraph<T>,
    start_edges: Vec<Edge<T>>,
    terms: Vec<Vec<T>>,
    log_psi: Vec<Vec<T>>,
    k0: usize,
    mode: EdgeScore,
}

impl<'a, T: Scalar> Lattice<'a, T> {
    fn new<'m>(req: &PlanRequest, model: &'m ConceptModel<T>, graph: &'a TopoGraph<T>, cm: &CostMap<T>) -> Result<Self> {
        req.validate(cm)?;
        if graph.psi.len() != model.n_places() {
            return Err(Error::InvalidInput("graph was built for a different model".into()));
        }
        let k0 = estimate_initial_node(req.start, model)?;
        let start_edges = graph.start_edges(cm, req.start, k0);
        let terms = node_terms(req, model)?;
        let log_psi = graph.psi.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Ok(Self { graph, start_edges, terms, log_psi, k0, mode: req.edge_score })
    }

    /// Score of taking `edge` at step `e` (1-based) from place `k_prev`.
    fn step(&self, e: usize, k_prev: usize, edge: &Edge<T>) -> T {
        let k = self.graph.nodes[edge.to].place;
        self.log_psi[k_prev][k] + self.terms[e - 1][k] + edge_value(edge, e == 1, self.mode)
    }

    fn horizon(&self) -> usize {
        self.terms.len()
    }

    /// Places without any node reachable in `1..=E` steps from the start.
    fn unreachable_places(&self) -> Vec<usize> {
        let m = self.graph.n_nodes();
        let mut seen = vec![false; m];
        let mut frontier: Vec<usize> = self.start_edges.iter().map(|e| e.to).collect();
        for &j in &frontier {
            seen[j] = true;
        }
        for _ in 1..self.horizon() {
            let mut next = Vec::new();
            for &i in &frontier {
                for e in &self.graph.edges[i] {
                    if !seen[e.to] {
                        seen[e.to] = true;
                        next.push(e.to);
                    }
                }
            }
            frontier = next;
        }
        let mut reach = vec![false; self.graph.psi.len()];
        for (j, n) in self.graph.nodes.iter().enumerate() {
            if seen[j] {
                reach[n.place] = true;
            }
        }
        (0..reach.len()).filter(|&k| !reach[k]).collect()
    }
}

fn best_of<T: Scalar>(it: impl Iterator<Item = (usize, T)>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (j, v) in it {
        if v > T::neg_infinity() && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

/// Maximizes the topological objective over node sequences of length E.
/// Among optimal sequences the lexicographically smallest (by node index)
/// is returned.
pub fn topo_plan<T: Scalar>(
    req: &PlanRequest,
    model: &ConceptModel<T>,
    graph: &TopoGraph<T>,
    cm: &CostMap<T>,
) -> Result<PlanResult<T>> {
    let mut sw = Stopwatch::start();
    let lat = Lattice::new(req, model, graph, cm)?;
    sw.lap("start-edges");
    let horizon = lat.horizon();
    let m = graph.n_nodes();
    // value[j] = best score of steps e+1..=E starting from node j after step e
    let mut value = vec![T::zero(); m];
    let mut back: Vec<Vec<Option<usize>>> = vec![Vec::new(); horizon];
    for e in (1..horizon).rev() {
        let mut nv = vec![T::neg_infinity(); m];
        let mut bp = vec![None; m];
        for i in 0..m {
            let k_prev = graph.nodes[i].place;
            if let Some((j, v)) = best_of(graph.edges[i].iter().map(|ed| (ed.to, lat.step(e + 1, k_prev, ed) + value[ed.to]))) {
                nv[i] = v;
                bp[i] = Some(j);
            }
        }
        value = nv;
        back[e] = bp;
    }
    let Some((first, log_score)) =
        best_of(lat.start_edges.iter().map(|ed| (ed.to, lat.step(1, lat.k0, ed) + value[ed.to])))
    else {
        return Err(Error::NoPlan { unreachable: lat.unreachable_places() });
    };
    let mut seq = vec![first];
    for e in 1..horizon {
        let prev = *seq.last().unwrap();
        seq.push(back[e][prev].ok_or_else(|| Error::Invariant("broken back-pointer chain".into()))?);
    }
    sw.lap("search");

    let mut segments = Vec::with_capacity(horizon);
    let start_edge = lat.start_edges.iter().find(|e| e.to == first).expect("chosen start edge");
    segments.push(start_edge.path.cells.clone());
    for w in seq.windows(2) {
        let ed = graph.edge(w[0], w[1]).ok_or_else(|| Error::Invariant("chosen edge missing".into()))?;
        segments.push(ed.path.cells.clone());
    }
    let raw_path = concat_segments(&segments);
    let path = if req.smoothing {
        let smoothed: Vec<Vec<GridPose>> = segments.iter().map(|s| smooth_path(s, cm)).collect();
        concat_segments(&smoothed)
    } else {
        raw_path.clone()
    };
    sw.lap("assemble");
    Ok(PlanResult {
        method: "spcotmhp".into(),
        start: req.start,
        node_seq: seq.iter().map(|&j| graph.nodes[j]).collect(),
        i_seq: seq.iter().map(|&j| graph.nodes[j].place).collect(),
        path,
        raw_path,
        log_score,
        runtime_s: sw.total(),
        timings: sw.timings,
    })
}

/// Log of the objective summed over all node sequences; diagnostic only.
pub fn topo_log_marginal<T: Scalar>(
    req: &PlanRequest,
    model: &ConceptModel<T>,
    graph: &TopoGraph<T>,
    cm: &CostMap<T>,
) -> Result<T> {
    let lat = Lattice::new(req, model, graph, cm)?;
    let m = graph.n_nodes();
    let mut value = vec![T::zero(); m];
    for e in (1..lat.horizon()).rev() {
        value = (0..m)
            .map(|i| {
                let k_prev = graph.nodes[i].place;
                let v: Vec<T> = graph.edges[i].iter().map(|ed| lat.step(e + 1, k_prev, ed) + value[ed.to]).collect();
                log_sum_exp(&v)
            })
            .collect();
    }
    let v: Vec<T> = lat.start_edges.iter().map(|ed| lat.step(1, lat.k0, ed) + value[ed.to]).collect();
    Ok(log_sum_exp(&v))
}

/// Joins segments end to start, dropping each shared junction cell and any
/// repeated consecutive cells.
pub fn concat_segments(segments: &[Vec<GridPose>]) -> Vec<GridPose> {
    let mut out: Vec<GridPose> = Vec::new();
    for s in segments {
        for &c in s {
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
    }
    out
}

/// Cells of the 8-connected Bresenham line from `a` to `b`, inclusive.
pub fn bresenham(a: GridPose, b: GridPose) -> Vec<GridPose> {
    let (mut r, mut c) = (a.row as i64, a.col as i64);
    let (r1, c1) = (b.row as i64, b.col as i64);
    let (dr, dc) = ((r1 - r).abs(), -(c1 - c).abs());
    let (sr, sc) = (if r < r1 { 1 } else { -1 }, if c < c1 { 1 } else { -1 });
    let mut err = dr + dc;
    let mut out = vec![a];
    while (r, c) != (r1, c1) {
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
        out.push(GridPose::new(r as usize, c as usize));
    }
    out
}

fn line_ok<T: Scalar>(line: &[GridPose], cm: &CostMap<T>, min_w: T) -> bool {
    line.iter().all(|&q| cm.weight(q) >= min_w && cm.traversable(q))
        && line.windows(2).all(|w| {
            // a diagonal move may not cut an obstacle corner
            w[0].row == w[1].row
                || w[0].col == w[1].col
                || (cm.traversable(GridPose::new(w[0].row, w[1].col)) && cm.traversable(GridPose::new(w[1].row, w[0].col)))
        })
}

/// Greedy shortcutting: from each kept cell, jump to the farthest later cell
/// reachable by a straight line that is strictly shorter than the stretch it
/// replaces and whose cells are no worse than that stretch's minimum weight.
/// Shortcuts may move diagonally.
pub fn smooth_path<T: Scalar>(path: &[GridPose], cm: &CostMap<T>) -> Vec<GridPose> {
    let p = concat_segments(&[path.to_vec()]);
    if p.len() < 3 {
        return p;
    }
    let mut out = vec![p[0]];
    let mut i = 0;
    while i + 1 < p.len() {
        let mut jumped = false;
        for j in (i + 2..p.len()).rev() {
            let line = bresenham(p[i], p[j]);
            if line.len() - 1 >= j - i {
                continue;
            }
            let min_w = p[i..=j].iter().map(|&q| cm.weight(q)).fold(T::infinity(), T::min);
            if line_ok(&line, cm, min_w) {
                out.extend_from_slice(&line[1..]);
                i = j;
                jumped = true;
                break;
            }
        }
        if !jumped {
            out.push(p[i + 1]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::Vocabulary;
    use crate::grid_map::{build_costmap, Cell, OccupancyGrid};
    use crate::linalg::Mat2;
    use crate::topo_graph::{build_graph, sample_candidates, CandidateMode, GraphParams};

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

    #[test]
    fn step_word_split() {
        let i = Instruction::new(vec![1], Some(vec![2])).unwrap();
        let s: Vec<&[usize]> = (1..=10).map(|e| step_words(&i, e, 10)).collect();
        assert!(s[..5].iter().all(|w| *w == [2]));
        assert!(s[5..].iter().all(|w| *w == [1]));
        assert_eq!(step_words(&i, 1, 2), &[2]);
        assert_eq!(step_words(&i, 2, 2), &[1]);
        let g = Instruction::new(vec![1], None).unwrap();
        assert_eq!(step_words(&g, 1, 1), &[1]);
        assert!(Instruction::new(vec![], None).is_err());
    }

    #[test]
    fn initial_node_ties_and_mode() {
        let mut m: ConceptModel<f64> = ConceptModel::uniform(1, 4, vocab(&["a"]), 2, [20, 20]);
        m.mu = vec![[2.0, 2.0], [5.0, 5.0], [9.0, 9.0], [14.0, 3.0]];
        assert_eq!(estimate_initial_node(GridPose::new(14, 3), &m).unwrap(), 3);
        m.mu[1] = m.mu[0];
        assert_eq!(estimate_initial_node(GridPose::new(2, 2), &m).unwrap(), 0);
        assert_eq!(estimate_initial_node(GridPose::new(19, 19), &m).unwrap(), 2);
    }

    #[test]
    fn observation_score_cases() {
        let mut m: ConceptModel<f64> = ConceptModel::uniform(1, 2, vocab(&["a", "b"]), 2, [5, 5]);
        m.phi = vec![vec![0.3, 0.7]];
        m.w = vec![vec![0.25, 0.75]];
        let v = node_observation_score(1, &[0, 1], &m).unwrap();
        assert!((v - (0.7f64.ln() + 0.25f64.ln() + 0.75f64.ln())).abs() < 1e-12);

        let mut m: ConceptModel<f64> = ConceptModel::uniform(2, 2, vocab(&["a", "b"]), 2, [5, 5]);
        m.pi = vec![0.6, 0.4];
        m.phi = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        m.w = vec![vec![0.5, 0.5], vec![0.1, 0.9]];
        let v = node_observation_score(0, &[1], &m).unwrap();
        let expect = (0.9 * 0.5 * 0.6 + 0.2 * 0.9 * 0.4f64).ln();
        assert!((v - expect).abs() < 1e-12);
        let v = node_observation_score(1, &[], &m).unwrap();
        assert!((v - (0.1 * 0.6 + 0.8 * 0.4f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_place_stays() {
        let cm = open(6, 6);
        let m: ConceptModel<f64> = ConceptModel::uniform(1, 1, vocab(&["a"]), 2, [6, 6]);
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let req = PlanRequest { smoothing: false, ..PlanRequest::new(GridPose::new(0, 0), Instruction::new(vec![0], None).unwrap(), 1) };
        let r = topo_plan(&req, &m, &g, &cm).unwrap();
        assert_eq!(r.i_seq, vec![0]);
        assert_eq!(r.path.first(), Some(&GridPose::new(0, 0)));
        assert_eq!(r.path.last(), Some(&c.per_place[0][0]));
        assert_eq!(r.path_length(), GridPose::new(0, 0).manhattan(&c.per_place[0][0]));
    }

    /// Waypoint word owned by place 1, goal word by place 2, chain 0-1-2.
    fn chain_model() -> (ConceptModel<f64>, CostMap<f64>) {
        let cm = open(30, 6);
        let mut m: ConceptModel<f64> = ConceptModel::uniform(3, 3, vocab(&["start", "via", "goal"]), 2, [6, 30]);
        m.mu = vec![[3.0, 3.0], [3.0, 15.0], [3.0, 26.0]];
        m.sigma = vec![Mat2::diag(30.0, 30.0); 3];
        m.phi = vec![vec![0.98, 0.01, 0.01], vec![0.01, 0.98, 0.01], vec![0.01, 0.01, 0.98]];
        m.w = vec![vec![0.98, 0.01, 0.01], vec![0.01, 0.98, 0.01], vec![0.01, 0.01, 0.98]];
        m.psi = vec![vec![0.5, 0.5, 0.0], vec![1.0 / 3.0; 3], vec![0.0, 0.5, 0.5]];
        (m, cm)
    }

    #[test]
    fn waypoint_then_goal() {
        let (m, cm) = chain_model();
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let req = PlanRequest {
            edge_score: EdgeScore::LengthNormalized,
            ..PlanRequest::new(GridPose::new(3, 1), Instruction::new(vec![2], Some(vec![1])).unwrap(), 4)
        };
        let r = topo_plan(&req, &m, &g, &cm).unwrap();
        assert!(r.i_seq[..2].contains(&1), "{:?}", r.i_seq);
        assert_eq!(*r.i_seq.last().unwrap(), 2);
        assert_eq!(r.node_seq.len(), 4);
    }

    #[test]
    fn matches_enumeration_and_additivity() {
        let (m, cm) = chain_model();
        let c = sample_candidates(&m, &cm, 2, CandidateMode::Sample, 5).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams { edge_eps: 0.0, ..Default::default() }).unwrap();
        let instr = Instruction::new(vec![2], Some(vec![1])).unwrap();
        for mode in [EdgeScore::Raw, EdgeScore::LengthNormalized] {
            let req = PlanRequest { edge_score: mode, smoothing: false, ..PlanRequest::new(GridPose::new(2, 4), instr.clone(), 3) };
            let r = topo_plan(&req, &m, &g, &cm).unwrap();
            let lat = Lattice::new(&req, &m, &g, &cm).unwrap();
            // exhaustive: every start edge then every edge sequence
            let mut best = f64::NEG_INFINITY;
            let mut arg = Vec::new();
            for s in &lat.start_edges {
                let v1 = lat.step(1, lat.k0, s);
                for e2 in &g.edges[s.to] {
                    let v2 = v1 + lat.step(2, g.nodes[s.to].place, e2);
                    for e3 in &g.edges[e2.to] {
                        let v3 = v2 + lat.step(3, g.nodes[e2.to].place, e3);
                        if v3 > best {
                            best = v3;
                            arg = vec![s.to, e2.to, e3.to];
                        }
                    }
                }
            }
            assert!((r.log_score - best).abs() < 1e-9);
            let got: Vec<usize> = r.node_seq.iter().map(|n| g.nodes.iter().position(|x| x == n).unwrap()).collect();
            assert_eq!(got, arg);
            if mode == EdgeScore::Raw {
                // path log-likelihood recomputed cell by cell
                let mut total = 0.0;
                let mut prev_end: Option<GridPose> = None;
                let mut segs = vec![(lat.start_edges.iter().find(|e| e.to == got[0]).unwrap().path.cells.clone(), got[0])];
                for w in got.windows(2) {
                    segs.push((g.edge(w[0], w[1]).unwrap().path.cells.clone(), w[1]));
                }
                let mut edge_sum = 0.0;
                for (i, (cells, to)) in segs.iter().enumerate() {
                    let costs = g.place_costs(g.nodes[*to].place).unwrap();
                    let skip = usize::from(prev_end.is_some());
                    total -= cells[skip..].iter().map(|q| costs.cost[cm.index(*q)]).sum::<f64>();
                    let ed = if i == 0 {
                        lat.start_edges.iter().find(|e| e.to == *to).unwrap()
                    } else {
                        g.edge(got[i - 1], *to).unwrap()
                    };
                    edge_sum += edge_value(ed, i == 0, EdgeScore::Raw);
                    prev_end = cells.last().copied();
                }
                assert!((total - edge_sum).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn disconnected_graph_is_no_plan() {
        let mut grid = OccupancyGrid::filled(10, 5, 1.0, Cell::Free).unwrap();
        for r in 0..5 {
            grid.set(GridPose::new(r, 5), Cell::Occupied);
        }
        let cm: CostMap<f64> = build_costmap(&grid, 0.0, 1.0).unwrap();
        let mut m: ConceptModel<f64> = ConceptModel::uniform(1, 2, vocab(&["a"]), 2, [5, 10]);
        m.mu = vec![[2.0, 1.0], [2.0, 8.0]];
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        // start on the right, attached to place 1; every step must stay there
        let req = PlanRequest::new(GridPose::new(2, 9), Instruction::new(vec![0], None).unwrap(), 2);
        assert_eq!(topo_plan(&req, &m, &g, &cm).unwrap().i_seq, vec![1, 1]);
        // start on the left, but its place has no candidate reachable
        m.mu[0] = [2.0, 7.0];
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let req = PlanRequest::new(GridPose::new(2, 0), Instruction::new(vec![0], None).unwrap(), 2);
        match topo_plan(&req, &m, &g, &cm) {
            Err(Error::NoPlan { unreachable }) => assert_eq!(unreachable, vec![0, 1]),
            other => panic!("expected NoPlan, got {other:?}"),
        }
    }

    #[test]
    fn smoothing_cases() {
        let cm = open(6, 6);
        let straight: Vec<GridPose> = (0..6).map(|c| GridPose::new(2, c)).collect();
        assert_eq!(smooth_path(&straight, &cm), straight);
        let mut l: Vec<GridPose> = (0..6).map(|r| GridPose::new(r, 0)).collect();
        l.extend((1..6).map(|c| GridPose::new(5, c)));
        let s = smooth_path(&l, &cm);
        assert!(s.len() < l.len());
        assert_eq!(s.len(), 6);
        assert_eq!((s[0], *s.last().unwrap()), (l[0], *l.last().unwrap()));

        let mut grid = OccupancyGrid::filled(6, 6, 1.0, Cell::Free).unwrap();
        for r in 1..6 {
            for c in 1..6 {
                grid.set(GridPose::new(r, c), Cell::Occupied);
            }
        }
        let cm: CostMap<f64> = build_costmap(&grid, 0.0, 1.0).unwrap();
        let mut hug: Vec<GridPose> = (0..6).rev().map(|r| GridPose::new(r, 0)).collect();
        hug.extend((1..6).map(|c| GridPose::new(0, c)));
        assert_eq!(smooth_path(&hug, &cm), hug);
    }

    #[test]
    fn marginal_bounds_max() {
        let (m, cm) = chain_model();
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let req = PlanRequest::new(GridPose::new(3, 1), Instruction::new(vec![2], None).unwrap(), 3);
        let best = topo_plan(&req, &m, &g, &cm).unwrap().log_score;
        let z = topo_log_marginal(&req, &m, &g, &cm).unwrap();
        assert!(z >= best - 1e-12);
    }
}
