//! Task definitions, per-task scoring and suite tables.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    heuristic_baseline, spconavi_astar_approx, spconavi_viterbi, AStarApproxConfig, HeuristicVariant, ViterbiConfig,
};
use crate::concept::{read_json, write_json, ConceptModel};
use crate::error::{Error, Result};
use crate::grid_map::{CostMap, GridPose};
use crate::planner::{topo_plan, EdgeScore, Instruction, PlanRequest, PlanResult, DEFAULT_HORIZON};
use crate::scalar::Scalar;
use crate::search::bfs_distances;
use crate::topo_graph::TopoGraph;

pub const TASKS_SCHEMA: &str = "topo-nav.tasks";
pub const TASKS_VERSION: u32 = 1;

/// Half-open cell rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Rect {
    pub fn contains(&self, p: GridPose) -> bool {
        (self.row0..self.row1).contains(&p.row) && (self.col0..self.col1).contains(&p.col)
    }

    pub fn cells(&self) -> impl Iterator<Item = GridPose> + '_ {
        (self.row0..self.row1).flat_map(move |r| (self.col0..self.col1).map(move |c| GridPose::new(r, c)))
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.row0 + self.row1) as f64 / 2.0 - 0.5, (self.col0 + self.col1) as f64 / 2.0 - 0.5]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub kind: String,
    pub rect: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Basic,
    Advanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub kind: TaskKind,
    pub start: GridPose,
    pub goal_words: String,
    #[serde(default)]
    pub via_words: Option<String>,
    pub goal_regions: Vec<Region>,
    #[serde(default)]
    pub waypoint_regions: Vec<Region>,
    #[serde(default)]
    pub shortest_len: Option<usize>,
}

impl TaskSpec {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.goal_regions.is_empty() {
            return Err(Error::InvalidInput(format!("task {} has no goal region", self.id)));
        }
        for r in self.goal_regions.iter().chain(&self.waypoint_regions) {
            let q = r.rect;
            if q.row0 >= q.row1 || q.col0 >= q.col1 || q.row1 > height || q.col1 > width {
                return Err(Error::InvalidInput(format!("task {}: region `{}` is empty or outside the map", self.id, r.name)));
            }
        }
        if self.via_words.is_some() && self.waypoint_regions.is_empty() {
            return Err(Error::InvalidInput(format!("task {} names a waypoint but has no waypoint region", self.id)));
        }
        Ok(())
    }

    pub fn instruction<T: Scalar>(&self, model: &ConceptModel<T>) -> Result<Instruction> {
        Instruction::parse(&model.vocab, &self.goal_words, self.via_words.as_deref())
    }
}

#[derive(Serialize, Deserialize)]
struct TasksDoc<V> {
    tasks: V,
}

pub fn save_tasks(tasks: &[TaskSpec], path: &Path) -> Result<()> {
    write_json(path, TASKS_SCHEMA, TASKS_VERSION, &TasksDoc { tasks })
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    let doc: TasksDoc<Vec<TaskSpec>> = read_json(path, TASKS_SCHEMA, TASKS_VERSION)?;
    Ok(doc.tasks)
}

/// Reference quantities of a task, shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOracle {
    /// Index into `goal_regions` of the region nearest the start.
    pub nearest_goal: usize,
    /// Unit-step shortest length, through a waypoint region when required.
    pub shortest_len: usize,
}

fn region_distance(dist: &[Option<usize>], r: &Region, cm: &CostMap<impl Scalar>) -> Option<usize> {
    r.rect.cells().filter(|p| cm.in_bounds(*p)).filter_map(|p| dist[cm.index(p)]).min()
}

pub fn task_oracle<T: Scalar>(task: &TaskSpec, cm: &CostMap<T>) -> Result<TaskOracle> {
    task.validate(cm.width, cm.height)?;
    let from_start = bfs_distances(cm, &[task.start]);
    let unreachable = || Error::InvalidInput(format!("task {}: goal is unreachable from the start", task.id));
    let per_goal: Vec<Option<usize>> = task.goal_regions.iter().map(|r| region_distance(&from_start, r, cm)).collect();
    let nearest_goal = (0..per_goal.len())
        .filter(|&i| per_goal[i].is_some())
        .min_by_key(|&i| (per_goal[i], i))
        .ok_or_else(unreachable)?;
    let shortest_len = if task.waypoint_regions.is_empty() {
        per_goal[nearest_goal].unwrap()
    } else {
        let sources: Vec<GridPose> = task.goal_regions.iter().flat_map(|r| r.rect.cells().collect::<Vec<_>>()).collect();
        let to_goal = bfs_distances(cm, &sources);
        task.waypoint_regions
            .iter()
            .flat_map(|r| r.rect.cells().collect::<Vec<_>>())
            .filter(|p| cm.in_bounds(*p))
            .filter_map(|p| Some(from_start[cm.index(p)]? + to_goal[cm.index(p)]?))
            .min()
            .ok_or_else(unreachable)?
    };
    Ok(TaskOracle { nearest_goal, shortest_len })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: usize,
    pub method: String,
    pub sr: bool,
    pub n_sr: bool,
    /// `None` for tasks without a waypoint.
    pub w_sr: Option<bool>,
    pub pl: usize,
    pub spl: f64,
    pub time_s: f64,
    pub error: Option<String>,
}

fn in_any(p: GridPose, regions: &[Region]) -> bool {
    regions.iter().any(|r| r.rect.contains(p))
}

/// Scores one plan against its task.
pub fn score<T: Scalar>(result: &PlanResult<T>, task: &TaskSpec, oracle: &TaskOracle) -> TaskScore {
    let end = result.path.last().copied().unwrap_or(task.start);
    let sr = in_any(end, &task.goal_regions);
    let n_sr = task.goal_regions[oracle.nearest_goal].rect.contains(end);
    let w_sr = (!task.waypoint_regions.is_empty()).then(|| {
        let first_goal = result.path.iter().position(|p| in_any(*p, &task.goal_regions)).unwrap_or(result.path.len());
        result.path[..first_goal].iter().any(|p| in_any(*p, &task.waypoint_regions))
    });
    let pl = result.path_length();
    let l = oracle.shortest_len as f64;
    let spl = if sr { if l == 0.0 { 1.0 } else { l / (pl as f64).max(l) } } else { 0.0 };
    TaskScore { task_id: task.id, method: result.method.clone(), sr, n_sr, w_sr, pl, spl, time_s: result.runtime_s, error: None }
}

fn failed(task: &TaskSpec, method: &str, e: &Error) -> TaskScore {
    TaskScore {
        task_id: task.id,
        method: method.to_string(),
        sr: false,
        n_sr: false,
        w_sr: (!task.waypoint_regions.is_empty()).then_some(false),
        pl: 0,
        spl: 0.0,
        time_s: 0.0,
        error: Some(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Spcotmhp,
    SpconaviViterbi,
    SpconaviAstar,
    BaselineCost,
    BaselineDistance,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Spcotmhp, Method::SpconaviViterbi, Method::SpconaviAstar, Method::BaselineCost, Method::BaselineDistance];

    pub fn name(self) -> &'static str {
        match self {
            Method::Spcotmhp => "spcotmhp",
            Method::SpconaviViterbi => "spconavi-viterbi",
            Method::SpconaviAstar => "spconavi-astar",
            Method::BaselineCost => "baseline-cost",
            Method::BaselineDistance => "baseline-distance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Method::Spcotmhp | Method::BaselineCost | Method::BaselineDistance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerSettings {
    pub horizon: usize,
    pub viterbi_horizon: usize,
    pub goal_candidates: usize,
    pub smoothing: bool,
    pub edge_score: EdgeScore,
    pub seed: u64,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            viterbi_horizon: ViterbiConfig::default().horizon,
            goal_candidates: AStarApproxConfig::default().goal_candidates,
            smoothing: true,
            edge_score: EdgeScore::default(),
            seed: 0,
        }
    }
}

/// Everything a planner may read.
pub struct PlanContext<'a, T> {
    pub model: &'a ConceptModel<T>,
    pub costmap: &'a CostMap<T>,
    pub graph: Option<&'a TopoGraph<T>>,
    pub settings: PlannerSettings,
}

impl<T: Scalar> PlanContext<'_, T> {
    pub fn plan(&self, method: Method, start: GridPose, instr: &Instruction) -> Result<PlanResult<T>> {
        let s = self.settings;
        let graph = || self.graph.ok_or_else(|| Error::InvalidInput(format!("{} needs a topological graph", method.name())));
        match method {
            Method::Spcotmhp => {
                let req = PlanRequest { start, instruction: instr.clone(), horizon: s.horizon, smoothing: s.smoothing, edge_score: s.edge_score };
                topo_plan(&req, self.model, graph()?, self.costmap)
            }
            Method::SpconaviViterbi => spconavi_viterbi(
                start,
                &instr.bag(),
                self.model,
                self.costmap,
                ViterbiConfig { horizon: s.viterbi_horizon },
                s.smoothing,
            ),
            Method::SpconaviAstar => spconavi_astar_approx(
                start,
                &instr.bag(),
                self.model,
                self.costmap,
                AStarApproxConfig { goal_candidates: s.goal_candidates },
                s.smoothing,
            ),
            Method::BaselineCost | Method::BaselineDistance => {
                let v = if method == Method::BaselineCost { HeuristicVariant::Cost } else { HeuristicVariant::Distance };
                heuristic_baseline(start, instr, self.model, graph()?, self.costmap, v, s.seed, s.smoothing)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub task_set: String,
    pub tasks: usize,
    pub sr: f64,
    pub n_sr: f64,
    pub w_sr: Option<f64>,
    pub pl: f64,
    pub spl: f64,
    pub time_s: f64,
    pub precompute_s: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn aggregate(method: &str, task_set: &str, scores: &[TaskScore], precompute_s: f64) -> ScoreRow {
    let w: Vec<f64> = scores.iter().filter_map(|s| s.w_sr).map(f64::from).collect();
    ScoreRow {
        method: method.to_string(),
        task_set: task_set.to_string(),
        tasks: scores.len(),
        sr: mean(scores.iter().map(|s| f64::from(s.sr))),
        n_sr: mean(scores.iter().map(|s| f64::from(s.n_sr))),
        w_sr: (!w.is_empty()).then(|| mean(w.into_iter())),
        pl: mean(scores.iter().map(|s| s.pl as f64)),
        spl: mean(scores.iter().map(|s| s.spl)),
        time_s: mean(scores.iter().map(|s| s.time_s)),
        precompute_s,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SuiteReport<T> {
    pub rows: Vec<ScoreRow>,
    pub scores: Vec<TaskScore>,
    pub plans: Vec<PlanResult<T>>,
}

/// Runs every method on every task. Rows come out per method, basic tasks
/// before advanced; within a method, tasks are in id order.
pub fn run_suite<T: Scalar>(
    methods: &[Method],
    tasks: &[TaskSpec],
    ctx: &PlanContext<'_, T>,
    precompute_s: f64,
) -> Result<SuiteReport<T>> {
    let mut tasks: Vec<&TaskSpec> = tasks.iter().collect();
    tasks.sort_by_key(|t| t.id);
    let oracles = tasks.iter().map(|t| task_oracle(t, ctx.costmap)).collect::<Result<Vec<_>>>()?;
    let instrs = tasks.iter().map(|t| t.instruction(ctx.model)).collect::<Result<Vec<_>>>()?;
    let mut report = SuiteReport { rows: Vec::new(), scores: Vec::new(), plans: Vec::new() };
    for &m in methods {
        let results: Vec<(TaskScore, Option<PlanResult<T>>)> = (0..tasks.len())
            .into_par_iter()
            .map(|i| match ctx.plan(m, tasks[i].start, &instrs[i]) {
                Ok(r) => (score(&r, tasks[i], &oracles[i]), Some(r)),
                Err(e) if e.is_internal() => panic!("internal error planning task {}: {e}", tasks[i].id),
                Err(e) => (failed(tasks[i], m.name(), &e), None),
            })
            .collect();
        let pre = if m.uses_graph() { precompute_s } else { 0.0 };
        for (set, kind) in [("basic", TaskKind::Basic), ("advanced", TaskKind::Advanced)] {
            let s: Vec<TaskScore> =
                tasks.iter().zip(&results).filter(|(t, _)| t.kind == kind).map(|(_, (s, _))| s.clone()).collect();
            if !s.is_empty() {
                report.rows.push(aggregate(m.name(), set, &s, pre));
            }
        }
        for (s, r) in results {
            report.scores.push(s);
            report.plans.extend(r);
        }
    }
    Ok(report)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

pub const TABLE_HEADER: [&str; 10] = ["method", "tasks", "n", "SR", "N-SR", "W-SR", "PL", "SPL", "time_s", "precompute_s"];

fn row_fields(r: &ScoreRow) -> [String; 10] {
    [
        r.method.clone(),
        r.task_set.clone(),
        r.tasks.to_string(),
        format!("{:.3}", r.sr),
        format!("{:.3}", r.n_sr),
        fmt_opt(r.w_sr),
        format!("{:.1}", r.pl),
        format!("{:.3}", r.spl),
        format!("{:.4}", r.time_s),
        format!("{:.4}", r.precompute_s),
    ]
}

pub fn to_csv(rows: &[ScoreRow]) -> String {
    let mut out = TABLE_HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&row_fields(r).join(","));
        out.push('\n');
    }
    out
}

pub fn to_text(rows: &[ScoreRow]) -> String {
    let cells: Vec<[String; 10]> = rows.iter().map(row_fields).collect();
    let mut width: Vec<usize> = TABLE_HEADER.iter().map(|h| h.len()).collect();
    for c in &cells {
        for (w, f) in width.iter_mut().zip(c) {
            *w = (*w).max(f.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, fields: &[&str]| {
        let parts: Vec<String> = fields
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (f, &w))| if i < 2 { format!("{f:<w$}") } else { format!("{f:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &TABLE_HEADER);
    for c in &cells {
        line(&mut out, &c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_map::{build_costmap, Cell, OccupancyGrid};

    fn region(name: &str, r0: usize, c0: usize, r1: usize, c1: usize) -> Region {
        Region { name: name.into(), kind: name.into(), rect: Rect { row0: r0, col0: c0, row1: r1, col1: c1 } }
    }

    fn plan(path: Vec<GridPose>) -> PlanResult<f64> {
        PlanResult {
            method: "m".into(),
            start: path[0],
            node_seq: vec![],
            i_seq: vec![],
            raw_path: path.clone(),
            path,
            log_score: 0.0,
            runtime_s: 0.5,
            timings: vec![],
        }
    }

    fn task(goal: Vec<Region>, via: Vec<Region>) -> TaskSpec {
        TaskSpec {
            id: 0,
            kind: if via.is_empty() { TaskKind::Basic } else { TaskKind::Advanced },
            start: GridPose::new(0, 0),
            goal_words: "g".into(),
            via_words: (!via.is_empty()).then(|| "w".to_string()),
            goal_regions: goal,
            waypoint_regions: via,
            shortest_len: None,
        }
    }

    fn row(n: usize) -> Vec<GridPose> {
        (0..n).map(|c| GridPose::new(0, c)).collect()
    }

    #[test]
    fn spl_and_failures() {
        let cm: CostMap<f64> = build_costmap(&OccupancyGrid::filled(10, 3, 1.0, Cell::Free).unwrap(), 0.0, 1.0).unwrap();
        let t = task(vec![region("g", 0, 6, 3, 8)], vec![]);
        let o = task_oracle(&t, &cm).unwrap();
        assert_eq!(o.shortest_len, 6);
        let s = score(&plan(row(7)), &t, &o);
        assert!(s.sr && s.n_sr);
        assert_eq!(s.spl, 1.0);
        let mut long = row(8);
        long.push(GridPose::new(1, 7));
        long.push(GridPose::new(1, 6));
        let s = score(&plan(long), &t, &o);
        assert!((s.spl - 6.0 / 9.0).abs() < 1e-12);
        let s = score(&plan(row(4)), &t, &o);
        assert!(!s.sr);
        assert_eq!((s.spl, s.pl), (0.0, 3));
    }

    #[test]
    fn waypoint_order_matters() {
        let cm: CostMap<f64> = build_costmap(&OccupancyGrid::filled(10, 3, 1.0, Cell::Free).unwrap(), 0.0, 1.0).unwrap();
        // goal in the middle, waypoint at the far end
        let t = task(vec![region("g", 0, 4, 1, 6)], vec![region("w", 0, 8, 3, 10)]);
        let o = task_oracle(&t, &cm).unwrap();
        assert_eq!(o.shortest_len, 8 + 3);
        let mut p = row(10);
        p.extend((4..9).rev().map(|c| GridPose::new(0, c)));
        let s = score(&plan(p), &t, &o);
        assert_eq!((s.sr, s.w_sr), (true, Some(false)));
        let mut p: Vec<GridPose> = (0..10).map(|c| GridPose::new(1, c)).collect();
        p.extend((5..9).rev().map(|c| GridPose::new(1, c)));
        p.push(GridPose::new(0, 5));
        let s = score(&plan(p), &t, &o);
        assert_eq!((s.sr, s.w_sr), (true, Some(true)));
    }

    #[test]
    fn nearest_goal_for_nsr() {
        let cm: CostMap<f64> = build_costmap(&OccupancyGrid::filled(20, 1, 1.0, Cell::Free).unwrap(), 0.0, 1.0).unwrap();
        let mut t = task(vec![region("far", 0, 15, 1, 20), region("near", 0, 3, 1, 5)], vec![]);
        t.start = GridPose::new(0, 8);
        let o = task_oracle(&t, &cm).unwrap();
        assert_eq!(o.nearest_goal, 1);
        let p: Vec<GridPose> = (8..17).map(|c| GridPose::new(0, c)).collect();
        let s = score(&plan(p), &t, &o);
        assert!(s.sr && !s.n_sr);
        assert!(task_oracle(&task(vec![], vec![]), &cm).is_err());
    }

    #[test]
    fn empty_suite_and_tables() {
        let rows: Vec<ScoreRow> = vec![];
        assert_eq!(to_csv(&rows).lines().count(), 1);
        let r = aggregate("m", "basic", &[], 0.0);
        assert_eq!(r.tasks, 0);
        let text = to_text(&[r]);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn tasks_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tasks.json");
        let ts = vec![task(vec![region("a", 0, 0, 1, 1)], vec![region("b", 2, 2, 3, 3)])];
        save_tasks(&ts, &p).unwrap();
        assert_eq!(load_tasks(&p).unwrap(), ts);
        save_tasks(&[], &p).unwrap();
        assert!(load_tasks(&p).unwrap().is_empty());
    }
}
