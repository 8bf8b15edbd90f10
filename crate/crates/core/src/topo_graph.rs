//! Topological level: waypoint candidates per place and the metric partial
//! paths connecting them.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concept::{read_json, write_json, ConceptModel};
use crate::error::{Error, Result};
use crate::grid_map::{CostMap, GridPose};
use crate::linalg::Vec2;
use crate::scalar::Scalar;
use crate::search::{astar, CostField};

pub const DEFAULT_EDGE_EPS: f64 = 1e-4;
pub const DEFAULT_MAX_STEPS: usize = 100;
/// Sampled candidates must snap to a traversable cell within this many cells.
pub const SNAP_RADIUS: f64 = 5.0;
pub const MAX_DRAWS: usize = 100;
/// Lower bound on per-cell costs; keeps A* costs positive where the
/// Gaussian density exceeds one.
pub const COST_FLOOR: f64 = 1e-9;

pub const GRAPH_SCHEMA: &str = "topo-nav.topo-graph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub per_place: Vec<Vec<GridPose>>,
    /// Places that received no candidate.
    pub unreachable: Vec<usize>,
}

impl CandidateSet {
    pub fn total(&self) -> usize {
        self.per_place.iter().map(Vec::len).sum()
    }
}

/// Traversable cell whose center is closest to `p` (in `[row, col]` cell
/// units), ties broken by `(row, col)`. With a radius, only cells within it
/// qualify.
pub fn nearest_traversable<T: Scalar>(cm: &CostMap<T>, p: Vec2<T>, radius: Option<f64>) -> Option<GridPose> {
    let (pr, pc) = (p[0].as_f64(), p[1].as_f64());
    let mut best: Option<(f64, GridPose)> = None;
    let mut consider = |q: GridPose| {
        let d = (q.row as f64 - pr).powi(2) + (q.col as f64 - pc).powi(2);
        if radius.is_some_and(|r| d > r * r) {
            return;
        }
        // strictly smaller wins; cells are visited in (row, col) order
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, q));
        }
    };
    match radius {
        Some(r) => {
            let span = |x: f64, n: usize| {
                let lo = (x - r).floor().max(0.0) as usize;
                let hi = ((x + r).ceil().max(0.0) as usize).min(n.saturating_sub(1));
                lo..=hi
            };
            for row in span(pr, cm.height) {
                for col in span(pc, cm.width) {
                    let q = GridPose::new(row, col);
                    if cm.traversable(q) {
                        consider(q);
                    }
                }
            }
        }
        None => cm.traversable_cells().for_each(consider),
    }
    best.map(|(_, q)| q)
}

pub fn sample_candidates<T: Scalar>(
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
    n_per_node: usize,
    mode: CandidateMode,
    seed: u64,
) -> Result<CandidateSet> {
    if n_per_node == 0 {
        return Err(Error::InvalidInput("candidates per place must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_place = Vec::with_capacity(model.n_places());
    let mut unreachable = Vec::new();
    for k in 0..model.n_places() {
        let mut cands = Vec::new();
        match mode {
            CandidateMode::Mean => cands.extend(nearest_traversable(cm, model.mu[k], None)),
            CandidateMode::Sample => {
                let l = model.sigma[k]
                    .cholesky()
                    .ok_or_else(|| Error::Invariant(format!("Sigma[{k}] is not positive-definite")))?;
                'draws: for _ in 0..n_per_node {
                    for _ in 0..MAX_DRAWS {
                        let z = [T::sample_std_normal(&mut rng), T::sample_std_normal(&mut rng)];
                        let d = l.mul_vec(z);
                        let x = [model.mu[k][0] + d[0], model.mu[k][1] + d[1]];
                        if let Some(q) = nearest_traversable(cm, x, Some(SNAP_RADIUS)) {
                            cands.push(q);
                            continue 'draws;
                        }
                    }
                }
            }
        }
        if cands.is_empty() {
            log::warn!("place {k}: no traversable cell near its mean; excluded from the graph");
            unreachable.push(k);
        }
        per_place.push(cands);
    }
    Ok(CandidateSet { per_place, unreachable })
}

/// Per-cell A* costs `-log(N(x | mu_k, Sigma_k) p(x | m))` for one place.
#[derive(Debug, Clone)]
pub struct PlaceCosts<T> {
    pub cost: Vec<T>,
    pub c_min: T,
}

impl<T: Scalar> PlaceCosts<T> {
    pub fn new(model: &ConceptModel<T>, cm: &CostMap<T>, k: usize) -> Result<Self> {
        let g = model.gaussian(k)?;
        let floor = T::lit(COST_FLOOR);
        let mut c_min = T::infinity();
        let cost: Vec<T> = (0..cm.len())
            .map(|i| {
                let w = cm.weight[i];
                if w > T::zero() {
                    let c = (-(g.log_pdf(cm.pose(i).coord()) + w.ln())).max(floor);
                    c_min = c_min.min(c);
                    c
                } else {
                    T::infinity()
                }
            })
            .collect();
        Ok(Self { cost, c_min })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PartialPath<T> {
    pub cells: Vec<GridPose>,
    /// Log-likelihood of the path, start cell included.
    pub log_w: T,
    /// Same, start cell excluded; additive along concatenated segments.
    pub log_w_entered: T,
    pub steps: usize,
}

impl<T: Scalar> PartialPath<T> {
    fn from_cells(cells: Vec<GridPose>, start_cost: T, entered_cost: T) -> Self {
        let steps = cells.len() - 1;
        Self { cells, log_w: -(start_cost + entered_cost), log_w_entered: -entered_cost, steps }
    }
}

pub fn astar_with_costs<T: Scalar>(
    costs: &PlaceCosts<T>,
    cm: &CostMap<T>,
    start: GridPose,
    goal: GridPose,
) -> Result<PartialPath<T>> {
    for p in [start, goal] {
        if !cm.traversable(p) {
            return Err(Error::InvalidInput(format!("cell ({}, {}) is not traversable", p.row, p.col)));
        }
    }
    let r = astar(cm, &costs.cost, start, goal, costs.c_min).map_err(|searched| Error::NoPath { searched })?;
    Ok(PartialPath::from_cells(r.cells, costs.cost[cm.index(start)], r.entered_cost))
}

/// Optimal metric path from `start` to `goal` under the cost field of place
/// `k_goal`.
pub fn astar_partial<T: Scalar>(
    start: GridPose,
    goal: GridPose,
    k_goal: usize,
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
) -> Result<PartialPath<T>> {
    let costs = PlaceCosts::new(model, cm, k_goal)?;
    astar_with_costs(&costs, cm, start, goal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub place: usize,
    pub cand: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Edge<T> {
    pub to: usize,
    pub path: PartialPath<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub edge_eps: f64,
    /// Edges longer than this many steps are discarded.
    pub max_steps: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { edge_eps: DEFAULT_EDGE_EPS, max_steps: DEFAULT_MAX_STEPS }
    }
}

#[derive(Debug, Clone)]
pub struct TopoGraph<T> {
    /// Sorted by `(place, cand)`.
    pub nodes: Vec<NodeId>,
    pub cells: Vec<GridPose>,
    /// Outgoing edges per node, sorted by target.
    pub edges: Vec<Vec<Edge<T>>>,
    pub psi: Vec<Vec<T>>,
    pub params: GraphParams,
    pub unreachable: Vec<usize>,
    place_costs: Vec<Option<PlaceCosts<T>>>,
    /// Reverse cost field toward every node, for start edges.
    fields: Vec<CostField<T>>,
}

impl<T: Scalar> TopoGraph<T> {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_edges() == 0
    }

    pub fn connected(&self, k_prev: usize, k: usize) -> bool {
        k_prev == k || self.psi[k_prev][k].as_f64() > self.params.edge_eps
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&Edge<T>> {
        let out = &self.edges[from];
        out.binary_search_by_key(&to, |e| e.to).ok().map(|i| &out[i])
    }

    pub fn place_costs(&self, k: usize) -> Option<&PlaceCosts<T>> {
        self.place_costs.get(k).and_then(Option::as_ref)
    }

    /// Edges from an arbitrary start cell attached to place `k0` to every
    /// node reachable under the graph's connectivity and step cap.
    pub fn start_edges(&self, cm: &CostMap<T>, start: GridPose, k0: usize) -> Vec<Edge<T>> {
        let s = cm.index(start);
        let mut out = Vec::new();
        for (j, node) in self.nodes.iter().enumerate() {
            if !self.connected(k0, node.place) {
                continue;
            }
            let f = &self.fields[j];
            if !f.dist[s].is_finite() {
                continue;
            }
            let costs = self.place_costs(node.place).expect("graph nodes have costs");
            let cells = f.path(cm, start).expect("finite field distance has a path");
            if cells.len() - 1 > self.params.max_steps {
                continue;
            }
            out.push(Edge { to: j, path: PartialPath::from_cells(cells, costs.cost[s], f.dist[s]) });
        }
        out
    }

    /// Node-edge content for equality checks, independent of cached fields.
    pub fn structure(&self) -> (&[NodeId], &[Vec<Edge<T>>]) {
        (&self.nodes, &self.edges)
    }
}

fn node_layout(cands: &CandidateSet) -> (Vec<NodeId>, Vec<GridPose>) {
    let mut nodes = Vec::new();
    let mut cells = Vec::new();
    for (k, list) in cands.per_place.iter().enumerate() {
        for (n, &c) in list.iter().enumerate() {
            nodes.push(NodeId { place: k, cand: n });
            cells.push(c);
        }
    }
    (nodes, cells)
}

fn prepare<T: Scalar>(
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
    cands: &CandidateSet,
    cells: &[GridPose],
    nodes: &[NodeId],
) -> Result<(Vec<Option<PlaceCosts<T>>>, Vec<CostField<T>>)> {
    let place_costs: Vec<Option<PlaceCosts<T>>> = (0..model.n_places())
        .into_par_iter()
        .map(|k| if cands.per_place[k].is_empty() { Ok(None) } else { PlaceCosts::new(model, cm, k).map(Some) })
        .collect::<Result<_>>()?;
    let fields = nodes
        .par_iter()
        .zip(cells.par_iter())
        .map(|(n, &c)| CostField::build(cm, &place_costs[n.place].as_ref().expect("costs").cost, c))
        .collect();
    Ok((place_costs, fields))
}

pub fn build_graph<T: Scalar>(
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
    cands: &CandidateSet,
    params: GraphParams,
) -> Result<TopoGraph<T>> {
    if cands.per_place.len() != model.n_places() {
        return Err(Error::InvalidInput("candidate set does not match the model's places".into()));
    }
    for list in &cands.per_place {
        if let Some(c) = list.iter().find(|c| !cm.traversable(**c)) {
            return Err(Error::InvalidInput(format!("candidate ({}, {}) is not traversable", c.row, c.col)));
        }
    }
    let (nodes, cells) = node_layout(cands);
    let (place_costs, fields) = prepare(model, cm, cands, &cells, &nodes)?;
    let psi = model.psi.clone();
    let connected = |a: usize, b: usize| a == b || psi[a][b].as_f64() > params.edge_eps;
    let edges: Vec<Vec<Edge<T>>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in 0..nodes.len() {
                if !connected(nodes[i].place, nodes[j].place) {
                    continue;
                }
                let costs = place_costs[nodes[j].place].as_ref().expect("costs");
                match astar_with_costs(costs, cm, cells[i], cells[j]) {
                    Ok(p) if p.steps <= params.max_steps => out.push(Edge { to: j, path: p }),
                    Ok(_) | Err(Error::NoPath { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let g = TopoGraph { nodes, cells, edges, psi, params, unreachable: cands.unreachable.clone(), place_costs, fields };
    if g.is_empty() {
        log::warn!("topological graph has no edges");
    }
    Ok(g)
}

/// Hex SHA-256 over everything the graph depends on.
pub fn graph_digest<T: Scalar>(model: &ConceptModel<T>, cm: &CostMap<T>, cands: &CandidateSet, params: GraphParams) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(std::any::type_name::<T>().as_bytes());
    h.update(serde_json::to_vec(model).expect("model serializes"));
    h.update((cm.width as u64).to_le_bytes());
    h.update((cm.height as u64).to_le_bytes());
    for w in &cm.weight {
        h.update(w.as_f64().to_le_bytes());
    }
    h.update(serde_json::to_vec(cands).expect("candidates serialize"));
    h.update(params.edge_eps.to_le_bytes());
    h.update((params.max_steps as u64).to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct GraphDoc<T> {
    digest: String,
    params: GraphParams,
    candidates: CandidateSet,
    edges: Vec<Vec<Edge<T>>>,
}

pub fn save_graph<T: Scalar>(graph: &TopoGraph<T>, digest: &str, cands: &CandidateSet, path: &Path) -> Result<()> {
    let doc = GraphDoc { digest: digest.to_string(), params: graph.params, candidates: cands.clone(), edges: graph.edges.clone() };
    write_json(path, GRAPH_SCHEMA, GRAPH_VERSION, &doc)
}

/// Loads the cached graph at `path` when its digest matches, otherwise builds
/// it and rewrites the cache. Returns the graph and whether the cache hit.
pub fn load_or_build_graph<T: Scalar>(
    model: &ConceptModel<T>,
    cm: &CostMap<T>,
    cands: &CandidateSet,
    params: GraphParams,
    path: &Path,
    no_cache: bool,
) -> Result<(TopoGraph<T>, bool)> {
    let digest = graph_digest(model, cm, cands, params);
    if !no_cache && path.exists() {
        match read_json::<GraphDoc<T>>(path, GRAPH_SCHEMA, GRAPH_VERSION) {
            Ok(doc) if doc.digest == digest => {
                let (nodes, cells) = node_layout(cands);
                let (place_costs, fields) = prepare(model, cm, cands, &cells, &nodes)?;
                let g = TopoGraph {
                    nodes,
                    cells,
                    edges: doc.edges,
                    psi: model.psi.clone(),
                    params,
                    unreachable: cands.unreachable.clone(),
                    place_costs,
                    fields,
                };
                return Ok((g, true));
            }
            Ok(_) => log::info!("graph cache {} is stale; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable graph cache {}: {e}", path.display()),
        }
    }
    let g = build_graph(model, cm, cands, params)?;
    save_graph(&g, &digest, cands, path)?;
    Ok((g, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::Vocabulary;
    use crate::grid_map::{build_costmap, Cell, OccupancyGrid};
    use crate::linalg::Mat2;

    fn open_map(w: usize, h: usize) -> CostMap<f64> {
        let g = OccupancyGrid::filled(w, h, 1.0, Cell::Free).unwrap();
        build_costmap(&g, 0.0, 1.0).unwrap()
    }

    fn model(k: usize, shape: [usize; 2]) -> ConceptModel<f64> {
        let mut v = Vocabulary::default();
        v.intern("a");
        ConceptModel::uniform(1, k, v, 4, shape)
    }

    #[test]
    fn mean_candidate_snaps_with_tie_break() {
        let mut g = OccupancyGrid::filled(5, 5, 1.0, Cell::Free).unwrap();
        g.set(GridPose::new(2, 2), Cell::Occupied);
        let cm: CostMap<f64> = build_costmap(&g, 0.0, 1.0).unwrap();
        // four neighbors are equidistant; (1, 2) is lexicographically first
        assert_eq!(nearest_traversable(&cm, [2.0, 2.0], None), Some(GridPose::new(1, 2)));
        assert_eq!(nearest_traversable(&cm, [3.0, 3.0], None), Some(GridPose::new(3, 3)));
        assert_eq!(nearest_traversable(&cm, [2.0, 2.0], Some(0.5)), None);
    }

    #[test]
    fn degenerate_sampling_collapses_to_mean() {
        let cm = open_map(10, 10);
        let mut m = model(1, [10, 10]);
        m.mu[0] = [4.2, 6.8];
        m.sigma[0] = Mat2::diag(1e-12, 1e-12);
        let c = sample_candidates(&m, &cm, 5, CandidateMode::Sample, 3).unwrap();
        assert_eq!(c.per_place[0], vec![GridPose::new(4, 7); 5]);
        let c = sample_candidates(&m, &cm, 5, CandidateMode::Mean, 3).unwrap();
        assert_eq!(c.per_place[0], vec![GridPose::new(4, 7)]);
    }

    #[test]
    fn partial_path_trivial_cases() {
        let cm = open_map(10, 10);
        let mut m = model(1, [10, 10]);
        let s = GridPose::new(3, 3);
        let p = astar_partial(s, s, 0, &m, &cm).unwrap();
        assert_eq!(p.cells, vec![s]);
        assert_eq!(p.steps, 0);
        assert!((p.log_w - m.position_emission(s, 0).unwrap()).abs() < 1e-12);
        // flat Gaussian: constant per-cell cost
        m.sigma[0] = Mat2::diag(1e10, 1e10);
        m.mu[0] = [5.0, 5.0];
        let p = astar_partial(GridPose::new(0, 0), GridPose::new(9, 9), 0, &m, &cm).unwrap();
        assert_eq!(p.steps, 18);
        let per: f64 = -m.position_emission(GridPose::new(5, 5), 0).unwrap();
        assert!((-p.log_w - 19.0 * per).abs() < 1e-6);
    }

    #[test]
    fn edge_counts() {
        let cm = open_map(8, 8);
        let m = model(1, [8, 8]);
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.edges[0][0].path.steps, 0);

        let mut m = model(2, [8, 8]);
        m.mu = vec![[1.0, 1.0], [6.0, 6.0]];
        let c = sample_candidates(&m, &cm, 1, CandidateMode::Mean, 0).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        assert_eq!(g.n_edges(), 4);

        m.psi = vec![vec![0.99, 0.01], vec![0.02, 0.98]];
        let g = build_graph(&m, &cm, &c, GraphParams { edge_eps: 0.05, ..Default::default() }).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert!(g.edges.iter().enumerate().all(|(i, out)| out.iter().all(|e| e.to == i)));
    }

    #[test]
    fn start_edges_match_astar() {
        let mut grid = OccupancyGrid::filled(12, 12, 1.0, Cell::Free).unwrap();
        for r in 2..10 {
            grid.set(GridPose::new(r, 6), Cell::Occupied);
        }
        let cm: CostMap<f64> = build_costmap(&grid, 0.0, 1.0).unwrap();
        let mut m = model(2, [12, 12]);
        m.mu = vec![[5.0, 2.0], [5.0, 9.0]];
        m.sigma = vec![Mat2::diag(4.0, 3.0), Mat2::new(5.0, 1.0, 1.0, 2.0)];
        let c = sample_candidates(&m, &cm, 2, CandidateMode::Sample, 9).unwrap();
        let g = build_graph(&m, &cm, &c, GraphParams::default()).unwrap();
        let start = GridPose::new(0, 0);
        for e in g.start_edges(&cm, start, 0) {
            let n = g.nodes[e.to];
            let a = astar_partial(start, g.cells[e.to], n.place, &m, &cm).unwrap();
            assert!((a.log_w - e.path.log_w).abs() < 1e-9);
            assert!(e.path.cells.windows(2).all(|w| w[0].manhattan(&w[1]) == 1));
        }
    }

    #[test]
    fn cache_round_trip_and_staleness() {
        let cm = open_map(9, 9);
        let mut m = model(2, [9, 9]);
        m.mu = vec![[1.0, 1.0], [7.0, 6.0]];
        let c = sample_candidates(&m, &cm, 2, CandidateMode::Sample, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        let (g1, hit) = load_or_build_graph(&m, &cm, &c, GraphParams::default(), &path, false).unwrap();
        assert!(!hit);
        let (g2, hit) = load_or_build_graph(&m, &cm, &c, GraphParams::default(), &path, false).unwrap();
        assert!(hit);
        assert_eq!(g1.structure(), g2.structure());
        let (_, hit) = load_or_build_graph(&m, &cm, &c, GraphParams::default(), &path, true).unwrap();
        assert!(!hit);
        m.mu[1] = [6.0, 6.0];
        let (_, hit) = load_or_build_graph(&m, &cm, &c, GraphParams::default(), &path, false).unwrap();
        assert!(!hit);
    }
}
