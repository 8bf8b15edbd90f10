//! `topo-nav`: generate synthetic worlds, learn a spatial concept model,
//! plan from word instructions, score and render.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use topo_nav::concept::{load_model, save_model, Hyperparameters, TeachingDataset};
use topo_nav::eval::{load_tasks, run_suite, to_csv, to_text, Method, PlanContext, PlannerSettings};
use topo_nav::grid_map::{build_costmap, load_map_yaml, GridPose, OccupancyGrid, DEFAULT_INFLATION_RADIUS, DEFAULT_MIN_WEIGHT};
use topo_nav::learner::{ari, gibbs_fit, nmi, GibbsConfig, InitMode};
use topo_nav::planner::{EdgeScore, Instruction};
use topo_nav::render::{render_ppm, render_svg, RenderOptions};
use topo_nav::synth::{generate_env, generate_tasks, generate_teaching, save_env, EnvSpec};
use topo_nav::topo_graph::{load_or_build_graph, sample_candidates, CandidateMode, GraphParams};
use topo_nav::{ConceptModel, CostMap, Error, PlanResult, Result, TopoGraph};

#[derive(Parser)]
#[command(name = "topo-nav", version, about = "Spatial concept learning and word-instructed path planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic environment, teaching dataset and task file.
    Generate(GenerateArgs),
    /// Fit a concept model to a teaching dataset.
    Learn(LearnArgs),
    /// Plan a path for one instruction.
    Plan(PlanArgs),
    /// Score methods on a task file.
    Eval(EvalArgs),
    /// Time several methods on one instruction.
    Bench(BenchArgs),
    /// Draw the map, the model and optionally a plan as SVG and/or PPM.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    SingleRoom,
    ThreeBedroom,
    ThreeBedroomLarge,
    Separated,
}

#[derive(Args)]
struct GenerateArgs {
    /// Environment layout.
    #[arg(long, value_enum, default_value = "three-bedroom")]
    env: EnvKind,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Room count for `separated`.
    #[arg(long, default_value_t = 3)]
    rooms: usize,
    /// Width and height for `single-room`.
    #[arg(long, default_value_t = 20)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    /// Teaching utterances per region.
    #[arg(long, default_value_t = 15)]
    per_place: usize,
    /// Number of basic ("go to X") tasks.
    #[arg(long, default_value_t = 20)]
    basic: usize,
    /// Number of advanced ("go to X via Y") tasks.
    #[arg(long, default_value_t = 20)]
    advanced: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LearnArgs {
    /// Teaching dataset (JSON).
    #[arg(long)]
    dataset: PathBuf,
    /// Map YAML the dataset was recorded on.
    #[arg(long)]
    map: PathBuf,
    /// Output model file.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the post-burn-in maximum-joint model here.
    #[arg(long)]
    best_out: Option<PathBuf>,
    /// Learning report (JSON). Defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Log-joint trace (CSV). Defaults to `<out>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Concept truncation level.
    #[arg(long = "L", default_value_t = 24)]
    l_max: usize,
    /// Place truncation level.
    #[arg(long = "K", default_value_t = 24)]
    k_max: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    /// Count every transition in both directions.
    #[arg(long)]
    reverse_replay: bool,
    /// Initialize places uniformly at random instead of by k-means.
    #[arg(long)]
    random_init: bool,
    /// Keep place transitions uniform.
    #[arg(long)]
    no_transitions: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct PlannerArgs {
    /// Learned model file.
    #[arg(long)]
    model: PathBuf,
    /// Map YAML.
    #[arg(long)]
    map: PathBuf,
    /// Topological horizon (number of place steps).
    #[arg(long = "E", default_value_t = PlannerSettings::default().horizon)]
    e: usize,
    /// Metric-level horizon of the cell Viterbi baseline.
    #[arg(long = "T", default_value_t = PlannerSettings::default().viterbi_horizon)]
    t: usize,
    /// Goal candidates of the A* approximation.
    #[arg(long = "J", default_value_t = PlannerSettings::default().goal_candidates)]
    j: usize,
    /// Candidate nodes per place in the topological graph.
    #[arg(long = "N", default_value_t = 1)]
    n: usize,
    /// Draw place candidates from the Gaussians instead of using their means.
    #[arg(long)]
    sample_candidates: bool,
    /// Edge scoring of the topological search.
    #[arg(long, value_enum, default_value = "raw")]
    edge_score: EdgeScoreArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep raw 4-connected paths.
    #[arg(long)]
    no_smoothing: bool,
    /// Rebuild the topological graph even if a cache file matches.
    #[arg(long)]
    no_cache: bool,
    /// Graph cache file. Defaults to `<model>.graph.json`.
    #[arg(long)]
    graph_cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeScoreArg {
    Raw,
    LengthNormalized,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long, default_value = "spcotmhp")]
    method: String,
    /// Start cell as `row,col`.
    #[arg(long)]
    start: String,
    /// Goal words, space separated.
    #[arg(long)]
    goal: String,
    /// Waypoint words, space separated.
    #[arg(long)]
    via: Option<String>,
    /// Output plan file.
    #[arg(long, short)]
    out: PathBuf,
    /// Overlay image; `.svg` writes vector output, anything else PPM.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    planner: PlannerArgs,
    /// Task file.
    #[arg(long)]
    tasks: PathBuf,
    /// Comma-separated methods; all by default.
    #[arg(long)]
    methods: Option<String>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write per-task scores as JSON.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    planner: PlannerArgs,
    /// Comma-separated methods.
    #[arg(long, default_value = "spcotmhp,spconavi-viterbi")]
    methods: String,
    #[arg(long)]
    start: String,
    #[arg(long)]
    goal: String,
    #[arg(long)]
    via: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    /// Map YAML.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    ppm: Option<PathBuf>,
    /// Pixels per cell.
    #[arg(long, default_value_t = 8)]
    scale: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.into(), source })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_pose(s: &str) -> Result<GridPose> {
    let bad = || Error::InvalidInput(format!("start `{s}` is not `row,col`"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok(GridPose::new(r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').map(str::trim).filter(|m| !m.is_empty()).map(Method::parse).collect()
}

fn settings(p: &PlannerArgs) -> PlannerSettings {
    PlannerSettings {
        horizon: p.e,
        viterbi_horizon: p.t,
        goal_candidates: p.j,
        smoothing: !p.no_smoothing,
        edge_score: match p.edge_score {
            EdgeScoreArg::Raw => EdgeScore::Raw,
            EdgeScoreArg::LengthNormalized => EdgeScore::LengthNormalized,
        },
        seed: p.seed,
    }
}

struct Loaded {
    grid: OccupancyGrid,
    model: ConceptModel,
    costmap: CostMap,
    graph: Option<TopoGraph>,
    precompute_s: f64,
}

fn load_inputs(p: &PlannerArgs, need_graph: bool) -> Result<Loaded> {
    let grid = load_map_yaml(&p.map)?;
    let model: ConceptModel = load_model(&p.model)?;
    if model.map_shape != [grid.height, grid.width] {
        return Err(Error::InvalidInput(format!(
            "model was learned on a {}x{} map, map is {}x{}",
            model.map_shape[0], model.map_shape[1], grid.height, grid.width
        )));
    }
    let costmap = build_costmap(&grid, DEFAULT_INFLATION_RADIUS, DEFAULT_MIN_WEIGHT)?;
    let mut graph = None;
    let mut precompute_s = 0.0;
    if need_graph {
        let t0 = Instant::now();
        let mode = if p.sample_candidates { CandidateMode::Sample } else { CandidateMode::Mean };
        let cands = sample_candidates(&model, &costmap, p.n, mode, p.seed)?;
        let cache = p.graph_cache.clone().unwrap_or_else(|| with_suffix(&p.model, ".graph.json"));
        let (g, hit) = load_or_build_graph(&model, &costmap, &cands, GraphParams::default(), &cache, p.no_cache)?;
        precompute_s = t0.elapsed().as_secs_f64();
        log::info!("graph: {} nodes, {} edges, cache {}", g.n_nodes(), g.n_edges(), if hit { "hit" } else { "miss" });
        graph = Some(g);
    }
    Ok(Loaded { grid, model, costmap, graph, precompute_s })
}

impl Loaded {
    fn ctx(&self, s: PlannerSettings) -> PlanContext<'_, f64> {
        PlanContext { model: &self.model, costmap: &self.costmap, graph: self.graph.as_ref(), settings: s }
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let spec = match a.env {
        EnvKind::SingleRoom => EnvSpec::single_room(a.width, a.height),
        EnvKind::ThreeBedroom => EnvSpec::three_bedroom(),
        EnvKind::ThreeBedroomLarge => EnvSpec::three_bedroom_large(),
        EnvKind::Separated => EnvSpec::separated(a.rooms),
    };
    let env = generate_env(&spec, a.seed)?;
    let env_path = save_env(&env, &a.out)?;
    let ds = generate_teaching(&env, a.per_place, a.seed)?;
    ds.save(&a.out.join("dataset.json"))?;
    let tasks = generate_tasks(&env, a.basic, a.advanced, a.seed)?;
    topo_nav::eval::save_tasks(&tasks, &a.out.join("tasks.json"))?;
    println!(
        "wrote {} ({} regions, place budget {}), dataset.json ({} events), tasks.json ({} tasks)",
        env_path.display(),
        env.regions.len(),
        env.place_budget(),
        ds.n_events(),
        tasks.len()
    );
    Ok(())
}

fn learn(a: &LearnArgs) -> Result<()> {
    let grid = load_map_yaml(&a.map)?;
    let ds = TeachingDataset::load(&a.dataset)?;
    ds.validate(Some(&grid))?;
    let hyper = Hyperparameters::<f64> { l_max: a.l_max, k_max: a.k_max, ..Default::default() };
    let config = GibbsConfig {
        iterations: a.iterations,
        burn_in: a.burn_in,
        seed: a.seed,
        reverse_replay: a.reverse_replay,
        init_mode: if a.random_init { InitMode::Random } else { InitMode::KmeansPositions },
        learn_transitions: !a.no_transitions,
    };
    let t0 = Instant::now();
    let r = gibbs_fit(&ds, [grid.height, grid.width], &hyper, &config)?;
    let elapsed = t0.elapsed().as_secs_f64();
    save_model(&r.model, &a.out)?;
    if let Some(p) = &a.best_out {
        save_model(&r.best_model, p)?;
    }

    let mut trace = String::from("sweep,log_joint\n");
    for (s, lj) in r.log_joint_trace.iter().enumerate() {
        trace.push_str(&format!("{s},{lj}\n"));
    }
    write_file(&a.trace.clone().unwrap_or_else(|| with_suffix(&a.out, ".trace.csv")), trace.as_bytes())?;

    let distinct = |v: &[usize]| v.iter().collect::<std::collections::BTreeSet<_>>().len();
    let scores = |c: &[usize], i: &[usize]| {
        json!({
            "concepts_used": distinct(c),
            "places_used": distinct(i),
            "nmi_concept": ds.truth_c.as_deref().map(|t| nmi(t, c)),
            "ari_concept": ds.truth_c.as_deref().map(|t| ari(t, c)),
            "nmi_place": ds.truth_i.as_deref().map(|t| nmi(t, i)),
            "ari_place": ds.truth_i.as_deref().map(|t| ari(t, i)),
        })
    };
    let report = json!({
        "events": ds.n_events(),
        "config": config,
        "l_max": hyper.l_max,
        "k_max": hyper.k_max,
        "seconds": elapsed,
        "final": {
            "log_joint": r.log_joint_trace.last(),
            "scores": scores(&r.assignment.c, &r.assignment.i),
        },
        "max_joint": {
            "sweep": r.best_sweep,
            "log_joint": r.log_joint_trace.get(r.best_sweep),
            "scores": scores(&r.best_assignment.c, &r.best_assignment.i),
        },
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.json")), text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn overlay(grid: &OccupancyGrid, model: Option<&ConceptModel>, path: Option<&[GridPose]>, out: &Path, scale: usize) -> Result<()> {
    let opts = RenderOptions { scale, ..Default::default() };
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        write_file(out, render_svg(grid, model, path, &opts).as_bytes())
    } else {
        write_file(out, &render_ppm(grid, model, path, &opts))
    }
}

fn plan(a: &PlanArgs) -> Result<()> {
    let method = Method::parse(&a.method)?;
    let start = parse_pose(&a.start)?;
    let l = load_inputs(&a.planner, method.uses_graph())?;
    let instr = Instruction::parse(&l.model.vocab, &a.goal, a.via.as_deref())?;
    let r = l.ctx(settings(&a.planner)).plan(method, start, &instr)?;
    r.save(&a.out)?;
    if let Some(o) = &a.overlay {
        overlay(&l.grid, Some(&l.model), Some(&r.path), o, RenderOptions::default().scale)?;
    }
    println!(
        "{}: {} cells, places {:?}, log score {:.3}, {:.4}s",
        r.method,
        r.path_length(),
        r.i_seq,
        r.log_score,
        r.runtime_s
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let methods = match &a.methods {
        Some(m) => parse_methods(m)?,
        None => Method::ALL.to_vec(),
    };
    let tasks = load_tasks(&a.tasks)?;
    let need_graph = !tasks.is_empty() && methods.iter().any(|m| m.uses_graph());
    let l = load_inputs(&a.planner, need_graph)?;
    let report = run_suite(&methods, &tasks, &l.ctx(settings(&a.planner)), l.precompute_s)?;
    print!("{}", to_text(&report.rows));
    if let Some(p) = &a.csv {
        write_file(p, to_csv(&report.rows).as_bytes())?;
    }
    if let Some(p) = &a.scores {
        let text = serde_json::to_string_pretty(&report.scores).map_err(|e| Error::Format(e.to_string()))?;
        write_file(p, text.as_bytes())?;
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let methods = parse_methods(&a.methods)?;
    let start = parse_pose(&a.start)?;
    let l = load_inputs(&a.planner, methods.iter().any(|m| m.uses_graph()))?;
    let instr = Instruction::parse(&l.model.vocab, &a.goal, a.via.as_deref())?;
    let ctx = l.ctx(settings(&a.planner));
    let mut rows = Vec::new();
    for m in methods {
        let r: Result<PlanResult> = ctx.plan(m, start, &instr);
        let pre = if m.uses_graph() { l.precompute_s } else { 0.0 };
        rows.push(match r {
            Ok(r) => [m.name().to_string(), format!("{:.5}", r.runtime_s), format!("{pre:.5}"), r.path_length().to_string(), format!("{:.3}", r.log_score)],
            Err(e) if e.is_internal() => return Err(e),
            Err(e) => {
                log::warn!("{}: {e}", m.name());
                [m.name().to_string(), "-".into(), format!("{pre:.5}"), "-".into(), "-".into()]
            }
        });
    }
    let header = ["method", "time_s", "precompute_s", "PL", "log_score"];
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
    println!("{}", line(header.to_vec()));
    for r in &rows {
        println!("{}", line(r.iter().map(String::as_str).collect()));
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    if a.svg.is_none() && a.ppm.is_none() {
        return Err(Error::InvalidInput("nothing to write; pass --svg and/or --ppm".into()));
    }
    let grid = load_map_yaml(&a.map)?;
    let model: Option<ConceptModel> = a.model.as_deref().map(load_model).transpose()?;
    let plan: Option<PlanResult> = a.plan.as_deref().map(PlanResult::load).transpose()?;
    let path = plan.as_ref().map(|p| p.path.as_slice());
    for out in [&a.svg, &a.ppm].into_iter().flatten() {
        overlay(&grid, model.as_ref(), path, out, a.scale)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Learn(a) => learn(a),
        Command::Plan(a) => plan(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Render(a) => render(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 3 } else { 2 })
        }
        Err(_) => ExitCode::from(3),
    }
}
