//! Occupancy grids in ROS map_server form and the traversal cost map derived
//! from them.
//!
//! Row 0 is the bottom of the map (smallest world `y`); the PGM image stores
//! the top row first, so rows are flipped on load and save.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_INFLATION_RADIUS: f64 = 0.3;
pub const DEFAULT_MIN_WEIGHT: f64 = 0.25;

const FREE_PIXEL: u8 = 254;
const OCCUPIED_PIXEL: u8 = 0;
const UNKNOWN_PIXEL: u8 = 205;
const SAVE_OCCUPIED_THRESH: f64 = 0.65;
const SAVE_FREE_THRESH: f64 = 0.196;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPose {
    pub row: usize,
    pub col: usize,
}

impl GridPose {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(&self, o: &GridPose) -> usize {
        self.row.abs_diff(o.row) + self.col.abs_diff(o.col)
    }

    pub fn is_adjacent_or_equal(&self, o: &GridPose) -> bool {
        self.manhattan(o) <= 1
    }

    /// Coordinate of the cell center in cell units, `[row, col]`.
    pub fn coord<T: Scalar>(&self) -> [T; 2] {
        [T::lit(self.row as f64), T::lit(self.col as f64)]
    }
}

/// The five discrete controls of the grid motion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stay,
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right];

    /// Deterministic transition; `None` when the move leaves the grid.
    pub fn apply(self, p: GridPose, width: usize, height: usize) -> Option<GridPose> {
        let (r, c) = (p.row, p.col);
        let next = match self {
            Action::Stay => Some((r, c)),
            Action::Up => (r + 1 < height).then_some((r + 1, c)),
            Action::Down => r.checked_sub(1).map(|r| (r, c)),
            Action::Left => c.checked_sub(1).map(|c| (r, c)),
            Action::Right => (c + 1 < width).then_some((r, c + 1)),
        };
        next.map(|(row, col)| GridPose { row, col })
    }

    pub fn inverse(self) -> Action {
        match self {
            Action::Stay => Action::Stay,
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// World pose of cell (0, 0)'s lower-left corner: x, y, yaw.
    pub origin: [f64; 3],
    pub cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 3], cells: Vec<Cell>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("grid dimensions must be positive".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidInput("resolution must be positive".into()));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Self { width, height, resolution, origin, cells })
    }

    pub fn filled(width: usize, height: usize, resolution: f64, cell: Cell) -> Result<Self> {
        Self::new(width, height, resolution, [0.0; 3], vec![cell; width * height])
    }

    #[inline]
    pub fn index(&self, p: GridPose) -> usize {
        p.row * self.width + p.col
    }

    pub fn pose(&self, idx: usize) -> GridPose {
        GridPose { row: idx / self.width, col: idx % self.width }
    }

    pub fn in_bounds(&self, p: GridPose) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn get(&self, p: GridPose) -> Cell {
        self.cells[self.index(p)]
    }

    pub fn set(&mut self, p: GridPose, c: Cell) {
        let i = self.index(p);
        self.cells[i] = c;
    }

    pub fn is_free(&self, p: GridPose) -> bool {
        self.in_bounds(p) && self.get(p) == Cell::Free
    }

    /// Containing cell of a world point, `Err` when outside the map.
    pub fn world_to_grid(&self, x: f64, y: f64) -> Result<GridPose> {
        let fx = (x - self.origin[0]) / self.resolution;
        let fy = (y - self.origin[1]) / self.resolution;
        if !(fx >= 0.0 && fy >= 0.0) || fx >= self.width as f64 || fy >= self.height as f64 {
            return Err(Error::OutOfBounds(x, y));
        }
        Ok(GridPose { row: fy.floor() as usize, col: fx.floor() as usize })
    }

    /// World coordinates of the center of `p`.
    pub fn grid_to_world(&self, p: GridPose) -> Result<(f64, f64)> {
        if !self.in_bounds(p) {
            return Err(Error::OutOfBounds(p.col as f64, p.row as f64));
        }
        Ok((
            self.origin[0] + (p.col as f64 + 0.5) * self.resolution,
            self.origin[1] + (p.row as f64 + 0.5) * self.resolution,
        ))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = GridPose> + '_ {
        (0..self.cells.len()).filter(|&i| self.cells[i] == Cell::Free).map(|i| self.pose(i))
    }
}

fn map_err(field: &'static str, msg: impl Into<String>) -> Error {
    Error::MapLoad { field, msg: msg.into() }
}

fn yaml_f64(map: &Mapping, key: &'static str) -> Result<f64> {
    match map.get(key) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| map_err(key, "not a number")),
        Some(_) => Err(map_err(key, "expected a number")),
        None => Err(map_err(key, "missing")),
    }
}

struct MapMeta {
    image: String,
    resolution: f64,
    origin: [f64; 3],
    negate: bool,
    occupied_thresh: f64,
    free_thresh: f64,
}

fn parse_map_yaml(text: &str) -> Result<MapMeta> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| map_err("yaml", e.to_string()))?;
    let map = doc.as_mapping().ok_or_else(|| map_err("yaml", "top level is not a mapping"))?;
    let image = match map.get("image") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(map_err("image", "expected a string")),
        None => return Err(map_err("image", "missing")),
    };
    let resolution = yaml_f64(map, "resolution")?;
    if !(resolution > 0.0) {
        return Err(map_err("resolution", "must be positive"));
    }
    let origin = match map.get("origin") {
        Some(Value::Sequence(seq)) if seq.len() == 3 => {
            let mut o = [0.0; 3];
            for (slot, v) in o.iter_mut().zip(seq) {
                *slot = v.as_f64().ok_or_else(|| map_err("origin", "entries must be numbers"))?;
            }
            o
        }
        Some(_) => return Err(map_err("origin", "expected [x, y, yaw]")),
        None => return Err(map_err("origin", "missing")),
    };
    let negate = match map.get("negate") {
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => n.as_i64().map(|v| v != 0).ok_or_else(|| map_err("negate", "expected 0 or 1"))?,
        Some(_) => return Err(map_err("negate", "expected 0 or 1")),
        None => return Err(map_err("negate", "missing")),
    };
    let occupied_thresh = yaml_f64(map, "occupied_thresh")?;
    let free_thresh = yaml_f64(map, "free_thresh")?;
    if !(0.0..=1.0).contains(&occupied_thresh) {
        return Err(map_err("occupied_thresh", "must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&free_thresh) || free_thresh > occupied_thresh {
        return Err(map_err("free_thresh", "must lie in [0, occupied_thresh]"));
    }
    Ok(MapMeta { image, resolution, origin, negate, occupied_thresh, free_thresh })
}

fn next_token(bytes: &[u8], pos: &mut usize, field: &'static str) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(map_err(field, "unexpected end of header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Parses a binary (P5) 8-bit PGM into `(width, height, pixels)`, top row first.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos, "magic")?;
    if magic != "P5" {
        return Err(map_err("magic", format!("expected P5, found {magic}")));
    }
    let num = |pos: &mut usize, field: &'static str| -> Result<usize> {
        next_token(bytes, pos, field)?.parse::<usize>().map_err(|_| map_err(field, "not an integer"))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(map_err("width", "dimensions must be positive"));
    }
    if maxval != 255 {
        return Err(map_err("maxval", format!("expected 255, found {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(map_err("data", "missing raster"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != width * height {
        return Err(map_err(
            "data",
            format!("expected {} bytes for {width}x{height}, found {}", width * height, raster.len()),
        ));
    }
    Ok((width, height, raster.to_vec()))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn classify(v: u8, meta: &MapMeta) -> Cell {
    let v = v as f64;
    let p = if meta.negate { v / 255.0 } else { (255.0 - v) / 255.0 };
    if p >= meta.occupied_thresh {
        Cell::Occupied
    } else if p <= meta.free_thresh {
        Cell::Free
    } else {
        Cell::Unknown
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a map from its PGM raster and YAML metadata. The YAML `image` key is
/// ignored in favor of `pgm_path`.
pub fn load_map(pgm_path: &Path, yaml_path: &Path) -> Result<OccupancyGrid> {
    let text = fs::read_to_string(yaml_path).map_err(|e| Error::io(yaml_path, e))?;
    let meta = parse_map_yaml(&text)?;
    let (width, height, pixels) = parse_pgm(&read(pgm_path)?)?;
    let mut cells = Vec::with_capacity(width * height);
    for row in 0..height {
        let img_row = height - 1 - row;
        cells.extend(pixels[img_row * width..(img_row + 1) * width].iter().map(|&v| classify(v, &meta)));
    }
    OccupancyGrid::new(width, height, meta.resolution, meta.origin, cells)
}

/// Loads a map from its YAML file, resolving `image` relative to it.
pub fn load_map_yaml(yaml_path: &Path) -> Result<OccupancyGrid> {
    let text = fs::read_to_string(yaml_path).map_err(|e| Error::io(yaml_path, e))?;
    let meta = parse_map_yaml(&text)?;
    let pgm = resolve_relative(yaml_path, &meta.image);
    load_map(&pgm, yaml_path)
}

fn resolve_relative(base: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes `<yaml_path>` and the PGM it names (same stem, `.pgm`).
pub fn save_map(grid: &OccupancyGrid, yaml_path: &Path) -> Result<PathBuf> {
    let pgm_path = yaml_path.with_extension("pgm");
    let mut pixels = Vec::with_capacity(grid.cells.len());
    for img_row in 0..grid.height {
        let row = grid.height - 1 - img_row;
        pixels.extend(grid.cells[row * grid.width..(row + 1) * grid.width].iter().map(|c| match c {
            Cell::Free => FREE_PIXEL,
            Cell::Occupied => OCCUPIED_PIXEL,
            Cell::Unknown => UNKNOWN_PIXEL,
        }));
    }
    write_file(&pgm_path, &encode_pgm(grid.width, grid.height, &pixels))?;
    let image = pgm_path.file_name().and_then(|s| s.to_str()).unwrap_or("map.pgm");
    let mut doc = Mapping::new();
    doc.insert("image".into(), image.into());
    doc.insert("resolution".into(), grid.resolution.into());
    doc.insert(
        "origin".into(),
        Value::Sequence(grid.origin.iter().map(|&v| Value::from(v)).collect()),
    );
    doc.insert("negate".into(), 0.into());
    doc.insert("occupied_thresh".into(), SAVE_OCCUPIED_THRESH.into());
    doc.insert("free_thresh".into(), SAVE_FREE_THRESH.into());
    let text = serde_yaml::to_string(&doc).map_err(|e| Error::Format(e.to_string()))?;
    write_file(yaml_path, text.as_bytes())?;
    Ok(pgm_path)
}

/// Per-cell traversal probability `p(x | m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CostMap<T> {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 3],
    pub weight: Vec<T>,
}

impl<T: Scalar> CostMap<T> {
    #[inline]
    pub fn index(&self, p: GridPose) -> usize {
        p.row * self.width + p.col
    }

    pub fn pose(&self, idx: usize) -> GridPose {
        GridPose { row: idx / self.width, col: idx % self.width }
    }

    pub fn in_bounds(&self, p: GridPose) -> bool {
        p.row < self.height && p.col < self.width
    }

    #[inline]
    pub fn weight(&self, p: GridPose) -> T {
        self.weight[self.index(p)]
    }

    pub fn traversable(&self, p: GridPose) -> bool {
        self.in_bounds(p) && self.weight(p) > T::zero()
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    /// 4-connected traversable neighbors, in Up, Down, Left, Right order.
    pub fn neighbors(&self, p: GridPose) -> impl Iterator<Item = GridPose> + '_ {
        Action::ALL[1..]
            .iter()
            .filter_map(move |a| a.apply(p, self.width, self.height))
            .filter(move |q| self.weight(*q) > T::zero())
    }

    pub fn traversable_cells(&self) -> impl Iterator<Item = GridPose> + '_ {
        (0..self.weight.len()).filter(|&i| self.weight[i] > T::zero()).map(|i| self.pose(i))
    }

    /// Writes the weights as little-endian `f64`, row-major, plus a YAML
    /// sidecar at `<path>.yaml` describing the layout.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.weight.len() * 8);
        for w in &self.weight {
            bytes.extend_from_slice(&w.as_f64().to_le_bytes());
        }
        write_file(path, &bytes)?;
        let mut doc = Mapping::new();
        doc.insert("width".into(), (self.width as u64).into());
        doc.insert("height".into(), (self.height as u64).into());
        doc.insert("resolution".into(), self.resolution.into());
        doc.insert(
            "origin".into(),
            Value::Sequence(self.origin.iter().map(|&v| Value::from(v)).collect()),
        );
        doc.insert("dtype".into(), "f64le".into());
        doc.insert("order".into(), "row-major, row 0 = bottom".into());
        let text = serde_yaml::to_string(&doc).map_err(|e| Error::Format(e.to_string()))?;
        let mut side = path.as_os_str().to_owned();
        side.push(".yaml");
        write_file(Path::new(&side), text.as_bytes())
    }
}

/// Inflates obstacles into a probabilistic cost map.
///
/// Free cells get `min_weight + (1 - min_weight) * min(d / radius, 1)` where
/// `d` is the metric distance to the nearest non-free cell center. Non-free
/// cells get 0. A zero radius disables inflation.
pub fn build_costmap<T: Scalar>(grid: &OccupancyGrid, inflation_radius: f64, min_weight: f64) -> Result<CostMap<T>> {
    if !(inflation_radius >= 0.0) {
        return Err(Error::InvalidInput("inflation radius must be non-negative".into()));
    }
    if !(min_weight > 0.0 && min_weight <= 1.0) {
        return Err(Error::InvalidInput("min_weight must lie in (0, 1]".into()));
    }
    let (w, h) = (grid.width, grid.height);
    let reach = (inflation_radius / grid.resolution).ceil() as isize;
    let mut weight = vec![T::zero(); w * h];
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if grid.cells[idx] != Cell::Free {
                continue;
            }
            if inflation_radius == 0.0 {
                weight[idx] = T::one();
                continue;
            }
            let mut best_sq = isize::MAX;
            for dr in -reach..=reach {
                let r = row as isize + dr;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for dc in -reach..=reach {
                    let c = col as isize + dc;
                    if c < 0 || c >= w as isize {
                        continue;
                    }
                    if grid.cells[r as usize * w + c as usize] != Cell::Free {
                        best_sq = best_sq.min(dr * dr + dc * dc);
                    }
                }
            }
            let ramp = if best_sq == isize::MAX {
                1.0
            } else {
                ((best_sq as f64).sqrt() * grid.resolution / inflation_radius).min(1.0)
            };
            weight[idx] = T::lit(min_weight + (1.0 - min_weight) * ramp);
        }
    }
    Ok(CostMap { width: w, height: h, resolution: grid.resolution, origin: grid.origin, weight })
}
