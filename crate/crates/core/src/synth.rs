//! Synthetic home environments: rooms off a corridor, teaching walks with
//! ground truth, and navigation tasks.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{read_json, write_json, TeachingDataset, TeachingEvent, Vocabulary, DEFAULT_FEATURES};
use crate::error::{Error, Result};
use crate::eval::{task_oracle, Rect, Region, TaskKind, TaskSpec};
use crate::grid_map::{build_costmap, load_map_yaml, save_map, Cell, CostMap, GridPose, OccupancyGrid};
use crate::search::bfs_path;

pub const ENV_SCHEMA: &str = "topo-nav.environment";
pub const ENV_VERSION: u32 = 1;
pub const CORRIDOR: &str = "corridor";
/// Feature draws per teaching event.
pub const FEATURE_DRAWS: u32 = 20;

/// Room kinds and the words used for them; the first word is canonical.
pub const ROOM_WORDS: &[(&str, &[&str])] = &[
    ("bedroom", &["bedroom"]),
    ("kitchen", &["kitchen"]),
    ("lavatory", &["lavatory", "toilet"]),
    ("bath", &["bath", "bathroom"]),
    ("entrance", &["entrance", "doorway"]),
    ("living", &["living", "lounge"]),
    ("dining", &["dining"]),
    ("storage", &["storage", "closet"]),
    ("study", &["study", "office"]),
    ("laundry", &["laundry"]),
    (CORRIDOR, &["corridor", "hallway"]),
];

pub fn words_for(kind: &str) -> Result<&'static [&'static str]> {
    ROOM_WORDS
        .iter()
        .find(|(k, _)| *k == kind)
        .map(|(_, w)| *w)
        .ok_or_else(|| Error::InvalidInput(format!("unknown room kind `{kind}`")))
}

fn kind_index(kind: &str) -> usize {
    ROOM_WORDS.iter().position(|(k, _)| *k == kind).expect("known kind")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    /// Zero means no corridor; only valid with a single room.
    pub corridor_height: usize,
    pub door_width: usize,
    pub min_room_width: usize,
    /// Room kinds; the generator shuffles them and splits them across both
    /// sides of the corridor.
    pub rooms: Vec<String>,
}

impl EnvSpec {
    pub fn single_room(width: usize, height: usize) -> Self {
        Self { width, height, resolution: 0.1, corridor_height: 0, door_width: 3, min_room_width: 5, rooms: vec!["living".into()] }
    }

    /// Ten rooms (three bedrooms) on a 64 x 48 grid.
    pub fn three_bedroom() -> Self {
        let rooms = ["bedroom", "bedroom", "bedroom", "kitchen", "lavatory", "bath", "entrance", "living", "dining", "storage"];
        Self {
            width: 64,
            height: 48,
            resolution: 0.1,
            corridor_height: 6,
            door_width: 3,
            min_room_width: 9,
            rooms: rooms.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The three-bedroom layout on a 100 x 100 grid.
    pub fn three_bedroom_large() -> Self {
        Self { width: 100, height: 100, corridor_height: 8, door_width: 4, min_room_width: 14, ..Self::three_bedroom() }
    }

    /// `n` rooms with pairwise distinct words off one corridor.
    pub fn separated(n: usize) -> Self {
        let kinds = ["kitchen", "bath", "living", "study", "storage", "dining", "laundry"];
        Self {
            width: 12 * n.div_ceil(2) + 8,
            height: 34,
            resolution: 0.1,
            corridor_height: 6,
            door_width: 3,
            min_room_width: 9,
            rooms: kinds.iter().cycle().take(n).map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rooms.is_empty() {
            return Err(Error::InvalidInput("environment needs at least one room".into()));
        }
        for r in &self.rooms {
            if r == CORRIDOR {
                return Err(Error::InvalidInput("the corridor is implicit; do not list it as a room".into()));
            }
            words_for(r)?;
        }
        if self.corridor_height == 0 && self.rooms.len() > 1 {
            return Err(Error::InvalidInput("several rooms need a corridor".into()));
        }
        let side = self.rooms.len().div_ceil(2);
        if side * (self.min_room_width + 1) + 1 > self.width {
            return Err(Error::InvalidInput("map too narrow for the requested rooms".into()));
        }
        if self.corridor_height > 0 && self.corridor_height + 2 * 4 + 4 > self.height {
            return Err(Error::InvalidInput("map too short for rooms and corridor".into()));
        }
        if self.corridor_height > 0 && (self.door_width == 0 || self.door_width + 2 > self.min_room_width) {
            return Err(Error::InvalidInput("door width must be positive and fit in the narrowest room".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEnv {
    pub grid: OccupancyGrid,
    /// Index 0 is the corridor when there is one.
    pub regions: Vec<Region>,
    pub adjacency: Vec<Vec<usize>>,
}

impl SynthEnv {
    pub fn words(&self, region: usize) -> &'static [&'static str] {
        words_for(&self.regions[region].kind).expect("known kind")
    }

    /// Transition matrix of the teaching walk: uniform over neighbors, or a
    /// self-loop for an isolated region.
    pub fn walk_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.regions.len();
        (0..n)
            .map(|r| {
                let mut row = vec![0.0; n];
                if self.adjacency[r].is_empty() {
                    row[r] = 1.0;
                } else {
                    for &q in &self.adjacency[r] {
                        row[q] += 1.0 / self.adjacency[r].len() as f64;
                    }
                }
                row
            })
            .collect()
    }

    pub fn region_of(&self, p: GridPose) -> Option<usize> {
        self.regions.iter().position(|r| r.rect.contains(p))
    }

    pub fn costmap(&self) -> Result<CostMap<f64>> {
        build_costmap(&self.grid, crate::grid_map::DEFAULT_INFLATION_RADIUS, crate::grid_map::DEFAULT_MIN_WEIGHT)
    }

    fn free_cells_in(&self, r: usize) -> Vec<GridPose> {
        self.regions[r].rect.cells().filter(|p| self.grid.is_free(*p)).collect()
    }

    /// Place truncation level used when learning from this environment.
    /// k-means spends several centres on the corridor, so twice the region
    /// count keeps every room on its own place.
    pub fn place_budget(&self) -> usize {
        2 * self.regions.len() + 2
    }

    /// Free cells where teaching happens: the central third of a room on each
    /// axis, or the whole corridor.
    fn teaching_cells(&self, r: usize) -> Vec<GridPose> {
        let region = &self.regions[r];
        if region.kind == CORRIDOR {
            return self.free_cells_in(r);
        }
        let rc = region.rect;
        let (h, w) = (rc.row1 - rc.row0, rc.col1 - rc.col0);
        let inner = Rect { row0: rc.row0 + h / 3, col0: rc.col0 + w / 3, row1: rc.row1 - h / 3, col1: rc.col1 - w / 3 };
        let cells: Vec<GridPose> = inner.cells().filter(|p| self.grid.is_free(*p)).collect();
        if cells.len() >= 2 {
            cells
        } else {
            self.free_cells_in(r)
        }
    }
}

/// Splits `total` into `n` parts of at least `min`, randomly.
fn split<R: Rng>(total: usize, n: usize, min: usize, rng: &mut R) -> Vec<usize> {
    let mut parts = vec![min; n];
    for _ in 0..total - n * min {
        parts[rng.random_range(0..n)] += 1;
    }
    parts
}

pub fn generate_env(spec: &EnvSpec, seed: u64) -> Result<SynthEnv> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut grid = OccupancyGrid::filled(w, h, spec.resolution, Cell::Occupied)?;
    let carve = |grid: &mut OccupancyGrid, r: &Rect| {
        for p in r.cells() {
            grid.set(p, Cell::Free);
        }
    };
    if spec.corridor_height == 0 {
        let rect = Rect { row0: 1, col0: 1, row1: h - 1, col1: w - 1 };
        carve(&mut grid, &rect);
        let region = Region { name: spec.rooms[0].clone(), kind: spec.rooms[0].clone(), rect };
        return Ok(SynthEnv { grid, regions: vec![region], adjacency: vec![vec![]] });
    }
    let mut kinds = spec.rooms.clone();
    kinds.shuffle(&mut rng);
    let n_above = kinds.len().div_ceil(2);
    let (above, below) = kinds.split_at(n_above);
    let ch = spec.corridor_height;
    // room heights below and above the corridor, walls excluded
    let (hb, ha) = if below.is_empty() {
        (0, h - 3 - ch)
    } else {
        let rooms_total = h - 4 - ch;
        let hb = (rooms_total / 2 - 2 + rng.random_range(0..=4usize)).clamp(4, rooms_total - 4);
        (hb, rooms_total - hb)
    };
    let corridor_row0 = if below.is_empty() { 1 } else { 1 + hb + 1 };
    let corridor = Rect { row0: corridor_row0, col0: 1, row1: corridor_row0 + ch, col1: w - 1 };
    carve(&mut grid, &corridor);
    let mut regions = vec![Region { name: CORRIDOR.into(), kind: CORRIDOR.into(), rect: corridor }];
    let mut name_counts = std::collections::BTreeMap::new();
    for k in &kinds {
        *name_counts.entry(k.clone()).or_insert(0usize) += 1;
    }
    let mut seen = std::collections::BTreeMap::new();
    let sides: [(&[String], usize, usize, usize); 2] = [
        (below, 1, 1 + hb, corridor_row0 - 1),
        (above, corridor.row1 + 1, corridor.row1 + 1 + ha, corridor.row1),
    ];
    for (side, row0, row1, door_row) in sides {
        if side.is_empty() {
            continue;
        }
        let widths = split(w - 2 - (side.len() - 1), side.len(), spec.min_room_width, &mut rng);
        let mut col = 1;
        for (kind, &rw) in side.iter().zip(&widths) {
            let rect = Rect { row0, col0: col, row1, col1: col + rw };
            carve(&mut grid, &rect);
            let d0 = rng.random_range(col + 1..=col + rw - 1 - spec.door_width);
            for c in d0..d0 + spec.door_width {
                grid.set(GridPose::new(door_row, c), Cell::Free);
            }
            let i = seen.entry(kind.clone()).or_insert(0usize);
            *i += 1;
            let name = if name_counts[kind] > 1 { format!("{kind}_{i}") } else { kind.clone() };
            regions.push(Region { name, kind: kind.clone(), rect });
            col += rw + 1;
        }
    }
    let n = regions.len();
    let mut adjacency = vec![Vec::new(); n];
    for r in 1..n {
        adjacency[0].push(r);
        adjacency[r].push(0);
    }
    Ok(SynthEnv { grid, regions, adjacency })
}

/// Category feature profile: a dominant bin of its own, a secondary bin and a
/// uniform floor.
pub fn feature_profile(kind: &str, n_features: usize) -> Vec<f64> {
    let j = kind_index(kind);
    let mut p = vec![0.2 / n_features as f64; n_features];
    p[j % n_features] += 0.5;
    p[(j + ROOM_WORDS.len()) % n_features] += 0.3;
    let s: f64 = p.iter().sum();
    p.iter().map(|x| x / s).collect()
}

fn draw_histogram<R: Rng>(profile: &[f64], rng: &mut R) -> Vec<u32> {
    let dist = rand_distr::weighted::WeightedIndex::new(profile).expect("valid profile");
    let mut h = vec![0u32; profile.len()];
    for _ in 0..FEATURE_DRAWS {
        h[rand_distr::Distribution::sample(&dist, rng)] += 1;
    }
    h
}

/// Random walk over the room graph with one teaching event per visit, until
/// every region has `n_per_place` events.
pub fn generate_teaching(env: &SynthEnv, n_per_place: usize, seed: u64) -> Result<TeachingDataset> {
    if n_per_place == 0 {
        return Err(Error::InvalidInput("n_per_place must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cm = env.costmap()?;
    let n = env.regions.len();
    let mut vocab = Vocabulary::default();
    for r in 0..n {
        for w in env.words(r) {
            vocab.intern(w);
        }
    }
    let mut concept_of_kind: Vec<&str> = Vec::new();
    let truth_concept: Vec<usize> = env
        .regions
        .iter()
        .map(|r| match concept_of_kind.iter().position(|k| *k == r.kind) {
            Some(i) => i,
            None => {
                concept_of_kind.push(&r.kind);
                concept_of_kind.len() - 1
            }
        })
        .collect();
    let cells: Vec<Vec<GridPose>> = (0..n).map(|r| env.teaching_cells(r)).collect();
    if cells.iter().any(|c| c.len() < 2) {
        return Err(Error::InvalidInput("every region needs at least two free cells".into()));
    }
    let mut region = rng.random_range(0..n);
    let x0 = *cells[region].choose(&mut rng).unwrap();
    let mut trajectory = vec![x0];
    let mut events = Vec::new();
    let mut truth_c = Vec::new();
    let mut truth_i = Vec::new();
    let mut counts = vec![0usize; n];
    loop {
        let here = *trajectory.last().unwrap();
        let pose = loop {
            let p = *cells[region].choose(&mut rng).unwrap();
            if p != here {
                break p;
            }
        };
        let leg = bfs_path(&cm, here, pose).ok_or_else(|| Error::Invariant("synthetic rooms must be connected".into()))?;
        trajectory.extend_from_slice(&leg[1..]);
        let word = *env.words(region).choose(&mut rng).unwrap();
        events.push(TeachingEvent {
            t_end: trajectory.len() - 1,
            words: vec![vocab.id(word).unwrap()],
            feature: draw_histogram(&feature_profile(&env.regions[region].kind, DEFAULT_FEATURES), &mut rng),
            is_event: true,
        });
        truth_c.push(truth_concept[region]);
        truth_i.push(region);
        counts[region] += 1;
        if counts.iter().all(|&c| c >= n_per_place) {
            break;
        }
        region = match env.adjacency[region].choose(&mut rng) {
            Some(&r) => r,
            None => region,
        };
    }
    let ds = TeachingDataset {
        trajectory,
        events,
        vocab,
        n_features: DEFAULT_FEATURES,
        truth_c: Some(truth_c),
        truth_i: Some(truth_i),
    };
    ds.validate(Some(&env.grid))?;
    Ok(ds)
}

fn random_start<R: Rng>(env: &SynthEnv, avoid: &[Region], rng: &mut R) -> GridPose {
    let pool: Vec<GridPose> = env
        .regions
        .iter()
        .flat_map(|r| r.rect.cells().collect::<Vec<_>>())
        .filter(|p| env.grid.is_free(*p) && !avoid.iter().any(|r| r.rect.contains(*p)))
        .collect();
    *pool.choose(rng).expect("a free cell outside the goal regions")
}

/// Basic tasks ("go to <room>") then advanced ones ("go to <room> via
/// <other room>"); goals are drawn uniformly over rooms and cover every room
/// of the goal kind.
pub fn generate_tasks(env: &SynthEnv, n_basic: usize, n_advanced: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cm = env.costmap()?;
    let rooms: Vec<usize> = (0..env.regions.len()).filter(|&r| env.regions[r].kind != CORRIDOR).collect();
    let kinds: Vec<&str> = {
        let mut k: Vec<&str> = rooms.iter().map(|&r| env.regions[r].kind.as_str()).collect();
        k.sort_unstable();
        k.dedup();
        k
    };
    if n_basic + n_advanced > 0 && (rooms.len() < 2 || (n_advanced > 0 && kinds.len() < 2)) {
        return Err(Error::InvalidInput("tasks need at least two rooms of two kinds".into()));
    }
    let of_kind = |k: &str| -> Vec<Region> { env.regions.iter().filter(|r| r.kind == k).cloned().collect() };
    let mut tasks = Vec::with_capacity(n_basic + n_advanced);
    for id in 0..n_basic + n_advanced {
        let goal_kind = env.regions[*rooms.choose(&mut rng).unwrap()].kind.clone();
        let goal_regions = of_kind(&goal_kind);
        let (kind, via_words, waypoint_regions) = if id < n_basic {
            (TaskKind::Basic, None, Vec::new())
        } else {
            let others: Vec<&str> = kinds.iter().copied().filter(|k| *k != goal_kind).collect();
            let via = *others.choose(&mut rng).unwrap();
            (TaskKind::Advanced, Some(words_for(via)?[0].to_string()), of_kind(via))
        };
        let avoid: Vec<Region> = goal_regions.iter().chain(&waypoint_regions).cloned().collect();
        let start = random_start(env, &avoid, &mut rng);
        let mut t = TaskSpec {
            id,
            kind,
            start,
            goal_words: words_for(&goal_kind)?[0].to_string(),
            via_words,
            goal_regions,
            waypoint_regions,
            shortest_len: None,
        };
        t.shortest_len = Some(task_oracle(&t, &cm)?.shortest_len);
        tasks.push(t);
    }
    Ok(tasks)
}

#[derive(Serialize, Deserialize)]
struct EnvDoc {
    map_yaml: String,
    regions: Vec<Region>,
    adjacency: Vec<Vec<usize>>,
}

/// Writes `map.pgm`, `map.yaml` and `env.json` into `dir`; returns the path
/// of `env.json`.
pub fn save_env(env: &SynthEnv, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_map(&env.grid, &dir.join("map.yaml"))?;
    let doc = EnvDoc { map_yaml: "map.yaml".into(), regions: env.regions.clone(), adjacency: env.adjacency.clone() };
    let path = dir.join("env.json");
    write_json(&path, ENV_SCHEMA, ENV_VERSION, &doc)?;
    Ok(path)
}

pub fn load_env(path: &Path) -> Result<SynthEnv> {
    let doc: EnvDoc = read_json(path, ENV_SCHEMA, ENV_VERSION)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let grid = load_map_yaml(&base.join(&doc.map_yaml))?;
    if doc.adjacency.len() != doc.regions.len() || doc.adjacency.iter().flatten().any(|&r| r >= doc.regions.len()) {
        return Err(Error::Format("region adjacency does not match the region list".into()));
    }
    Ok(SynthEnv { grid, regions: doc.regions, adjacency: doc.adjacency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::bfs_distances;

    #[test]
    fn single_room_is_open_rectangle() {
        let env = generate_env(&EnvSpec::single_room(8, 6), 0).unwrap();
        assert_eq!(env.regions.len(), 1);
        assert_eq!(env.grid.free_cells().count(), 6 * 4);
    }

    #[test]
    fn three_bedroom_regions_reachable() {
        for seed in 0..5 {
            let env = generate_env(&EnvSpec::three_bedroom(), seed).unwrap();
            assert_eq!(env.regions.len(), 11);
            assert_eq!(env.regions.iter().filter(|r| r.kind == "bedroom").count(), 3);
            let cm = env.costmap().unwrap();
            let d = bfs_distances(&cm, &[env.regions[0].rect.cells().next().unwrap()]);
            for r in &env.regions {
                assert!(r.rect.cells().all(|p| d[cm.index(p)].is_some()), "{} unreachable", r.name);
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate_env(&EnvSpec::three_bedroom(), 7).unwrap();
        let b = generate_env(&EnvSpec::three_bedroom(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_env(&EnvSpec::three_bedroom(), 8).unwrap();
        assert_ne!(a.grid, c.grid);
        assert!(generate_env(&EnvSpec::three_bedroom_large(), 1).is_ok());
    }

    #[test]
    fn teaching_minimal_and_labels() {
        let spec = EnvSpec { rooms: vec!["kitchen".into()], ..EnvSpec::separated(1) };
        let env = generate_env(&spec, 0).unwrap();
        assert_eq!(env.regions.len(), 2);
        let ds = generate_teaching(&env, 1, 3).unwrap();
        assert_eq!(ds.n_events(), 2);
        for seed in 0..4 {
            let env = generate_env(&EnvSpec::three_bedroom(), seed).unwrap();
            let ds = generate_teaching(&env, 3, seed).unwrap();
            let ti = ds.truth_i.as_ref().unwrap();
            for e in 0..ds.n_events() {
                assert!(env.regions[ti[e]].rect.contains(ds.event_pose(e)));
            }
            // the three bedrooms share a concept label and a word
            let tc = ds.truth_c.as_ref().unwrap();
            let beds: Vec<usize> = (0..ds.n_events()).filter(|&e| env.regions[ti[e]].kind == "bedroom").collect();
            assert!(beds.iter().all(|&e| tc[e] == tc[beds[0]]));
            assert!(beds.iter().all(|&e| ds.events[e].words == ds.events[beds[0]].words));
        }
    }

    #[test]
    fn tasks_valid_and_deterministic() {
        let env = generate_env(&EnvSpec::three_bedroom(), 2).unwrap();
        assert!(generate_tasks(&env, 0, 0, 1).unwrap().is_empty());
        let a = generate_tasks(&env, 10, 10, 1).unwrap();
        assert_eq!(a, generate_tasks(&env, 10, 10, 1).unwrap());
        for t in &a {
            t.validate(env.grid.width, env.grid.height).unwrap();
            assert!(env.grid.is_free(t.start));
            assert!(!t.goal_regions.iter().chain(&t.waypoint_regions).any(|r| r.rect.contains(t.start)));
            assert_eq!(t.kind == TaskKind::Advanced, t.via_words.is_some());
        }
    }

    #[test]
    fn env_round_trip() {
        let env = generate_env(&EnvSpec::separated(3), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = save_env(&env, dir.path()).unwrap();
        assert_eq!(load_env(&p).unwrap(), env);
    }
}
