//! Map overlays: SVG for inspection, binary PPM for quick raster checks.
//!
//! Image rows run top to bottom, so grid row `r` lands at image row
//! `height - 1 - r`.

use std::fmt::Write as _;

use crate::concept::ConceptModel;
use crate::grid_map::{Cell, GridPose, OccupancyGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Pixels per cell.
    pub scale: usize,
    /// ψ entries at or below this are not drawn.
    pub psi_min: f64,
    /// Places whose prior mass `Σ_c π_c φ_c(k)` is at or below this are
    /// skipped; unused truncation slots fall here.
    pub min_place_mass: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { scale: 8, psi_min: 0.05, min_place_mass: 1e-3 }
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
];
const PATH_RGB: [u8; 3] = [220, 0, 0];
const EDGE_RGB: [u8; 3] = [90, 90, 90];

fn cell_rgb(c: Cell) -> [u8; 3] {
    match c {
        Cell::Free => [255, 255, 255],
        Cell::Occupied => [0, 0, 0],
        Cell::Unknown => [205, 205, 205],
    }
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Places worth drawing, in index order.
pub fn visible_places<T: Scalar>(model: &ConceptModel<T>, min_mass: f64) -> Vec<usize> {
    (0..model.n_places())
        .filter(|&k| {
            let mass: f64 = model.pi.iter().zip(&model.phi).map(|(p, row)| (*p * row[k]).to_f64().unwrap_or(0.0)).sum();
            mass > min_mass
        })
        .collect()
}

/// 2σ ellipse of place `k` in image units (cell = 1): centre, radii, and the
/// major-axis angle in degrees, clockwise from the image x axis.
fn ellipse<T: Scalar>(model: &ConceptModel<T>, k: usize, height: usize) -> ([f64; 2], [f64; 2], f64) {
    let f = |x: T| x.to_f64().unwrap_or(0.0);
    let mu = model.mu[k];
    let (vals, v) = model.sigma[k].sym_eigen();
    let centre = [f(mu[1]) + 0.5, height as f64 - f(mu[0]) - 0.5];
    let radii = [2.0 * f(vals[0]).max(0.0).sqrt(), 2.0 * f(vals[1]).max(0.0).sqrt()];
    // eigenvector is (row, col); image x = col, image y = -row
    let angle = (-f(v[0])).atan2(f(v[1])).to_degrees();
    (centre, radii, angle)
}

fn psi_edges<T: Scalar>(model: &ConceptModel<T>, places: &[usize], psi_min: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for &j in places {
        for &k in places {
            let p = model.psi[j][k].to_f64().unwrap_or(0.0);
            if j != k && p > psi_min {
                out.push((j, k, p));
            }
        }
    }
    out
}

/// SVG overlay of the map, place ellipses, ψ edges between means and an
/// optional path.
pub fn render_svg<T: Scalar>(
    grid: &OccupancyGrid,
    model: Option<&ConceptModel<T>>,
    path: Option<&[GridPose]>,
    opts: &RenderOptions,
) -> String {
    let s = opts.scale.max(1) as f64;
    let (w, h) = (grid.width, grid.height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {w} {h}">"#,
        w as f64 * s,
        h as f64 * s
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="{}"/>"#, hex(cell_rgb(Cell::Free)));
    let _ = writeln!(out, r#"<g shape-rendering="crispEdges">"#);
    for row in 0..h {
        // run-length encode each row
        let mut col = 0;
        while col < w {
            let c = grid.get(GridPose::new(row, col));
            let mut end = col + 1;
            while end < w && grid.get(GridPose::new(row, end)) == c {
                end += 1;
            }
            if c != Cell::Free {
                let _ = writeln!(
                    out,
                    r#"<rect x="{col}" y="{}" width="{}" height="1" fill="{}"/>"#,
                    h - 1 - row,
                    end - col,
                    hex(cell_rgb(c))
                );
            }
            col = end;
        }
    }
    let _ = writeln!(out, "</g>");
    if let Some(m) = model {
        let places = visible_places(m, opts.min_place_mass);
        let centre = |k: usize| ellipse(m, k, h).0;
        for (j, k, p) in psi_edges(m, &places, opts.psi_min) {
            let (a, b) = (centre(j), centre(k));
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{:.3}" stroke-opacity="0.6"/>"#,
                a[0],
                a[1],
                b[0],
                b[1],
                hex(EDGE_RGB),
                0.1 + 0.4 * p
            );
        }
        for (n, &k) in places.iter().enumerate() {
            let (c, r, angle) = ellipse(m, k, h);
            let col = hex(PALETTE[n % PALETTE.len()]);
            let _ = writeln!(
                out,
                r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" transform="rotate({angle:.2} {:.2} {:.2})" fill="none" stroke="{col}" stroke-width="0.25"/>"#,
                c[0], c[1], r[0], r[1], c[0], c[1]
            );
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="0.5" fill="{col}"/>"#, c[0], c[1]);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="2" fill="{col}">{k}</text>"#,
                c[0] + 0.8,
                c[1] - 0.8
            );
        }
    }
    if let Some(p) = path.filter(|p| !p.is_empty()) {
        let pts: Vec<String> =
            p.iter().map(|c| format!("{:.1},{:.1}", c.col as f64 + 0.5, (h - 1 - c.row) as f64 + 0.5)).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="0.4" stroke-linejoin="round"/>"#,
            pts.join(" "),
            hex(PATH_RGB)
        );
        let (a, b) = (p[0], p[p.len() - 1]);
        for (c, fill) in [(a, "#00a000"), (b, "#0000d0")] {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="0.8" fill="{fill}"/>"#,
                c.col as f64 + 0.5,
                (h - 1 - c.row) as f64 + 0.5
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[u8; 3]>,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    fn line(&mut self, a: [f64; 2], b: [f64; 2], c: [u8; 3]) {
        let n = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.put((a[0] + t * (b[0] - a[0])) as i64, (a[1] + t * (b[1] - a[1])) as i64, c);
        }
    }
}

/// Binary PPM (P6) overlay with the same layers as [`render_svg`].
pub fn render_ppm<T: Scalar>(
    grid: &OccupancyGrid,
    model: Option<&ConceptModel<T>>,
    path: Option<&[GridPose]>,
    opts: &RenderOptions,
) -> Vec<u8> {
    let s = opts.scale.max(1);
    let (w, h) = (grid.width * s, grid.height * s);
    let mut cv = Canvas { w, h, px: vec![[255; 3]; w * h] };
    for row in 0..grid.height {
        for col in 0..grid.width {
            let c = cell_rgb(grid.get(GridPose::new(row, col)));
            let y0 = (grid.height - 1 - row) * s;
            for dy in 0..s {
                for dx in 0..s {
                    cv.px[(y0 + dy) * w + col * s + dx] = c;
                }
            }
        }
    }
    let sf = s as f64;
    if let Some(m) = model {
        let places = visible_places(m, opts.min_place_mass);
        let centre = |k: usize| {
            let c = ellipse(m, k, grid.height).0;
            [c[0] * sf, c[1] * sf]
        };
        for (j, k, _) in psi_edges(m, &places, opts.psi_min) {
            cv.line(centre(j), centre(k), EDGE_RGB);
        }
        for (n, &k) in places.iter().enumerate() {
            let (c, r, angle) = ellipse(m, k, grid.height);
            let (sin, cos) = angle.to_radians().sin_cos();
            let col = PALETTE[n % PALETTE.len()];
            let steps = 180;
            let mut prev: Option<[f64; 2]> = None;
            for i in 0..=steps {
                let t = i as f64 / steps as f64 * std::f64::consts::TAU;
                let (ex, ey) = (r[0] * t.cos(), r[1] * t.sin());
                let p = [(c[0] + ex * cos - ey * sin) * sf, (c[1] + ex * sin + ey * cos) * sf];
                if let Some(q) = prev {
                    cv.line(q, p, col);
                }
                prev = Some(p);
            }
        }
    }
    if let Some(p) = path {
        let to_px = |c: GridPose| [(c.col as f64 + 0.5) * sf, ((grid.height - 1 - c.row) as f64 + 0.5) * sf];
        for seg in p.windows(2) {
            cv.line(to_px(seg[0]), to_px(seg[1]), PATH_RGB);
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for px in &cv.px {
        out.extend_from_slice(px);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::Vocabulary;
    use crate::linalg::Mat2;

    fn grid() -> OccupancyGrid {
        let mut g = OccupancyGrid::filled(6, 4, 0.1, Cell::Free).unwrap();
        g.set(GridPose::new(0, 0), Cell::Occupied);
        g
    }

    fn model() -> ConceptModel<f64> {
        let mut m = ConceptModel::uniform(1, 2, Vocabulary::from(vec!["a".to_string()]), 2, [4, 6]);
        m.phi[0] = vec![1.0 - 1e-9, 1e-9];
        m.mu[0] = [1.0, 2.0];
        m.sigma[0] = Mat2::diag(4.0, 1.0);
        m
    }

    #[test]
    fn ppm_header_and_flip() {
        let g = grid();
        let img = render_ppm::<f64>(&g, None, None, &RenderOptions { scale: 1, ..Default::default() });
        let header = b"P6\n6 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        assert_eq!(px.len(), 6 * 4 * 3);
        // grid (0, 0) is the bottom-left pixel
        let bottom_left = 3 * 6 * 3;
        assert_eq!(&px[bottom_left..bottom_left + 3], &[0, 0, 0]);
        assert_eq!(&px[..3], &[255, 255, 255]);
    }

    #[test]
    fn ellipse_axes_follow_sigma() {
        let m = model();
        let (c, r, angle) = ellipse(&m, 0, 4);
        assert_eq!(c, [2.5, 2.5]);
        assert!((r[0] - 4.0).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12);
        // the long axis is along rows, which is vertical in the image
        assert!((angle.abs() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn svg_skips_unused_places() {
        let m = model();
        assert_eq!(visible_places(&m, 1e-3), vec![0]);
        let path = [GridPose::new(1, 1), GridPose::new(1, 2)];
        let svg = render_svg(&grid(), Some(&m), Some(&path), &RenderOptions::default());
        assert_eq!(svg.matches("<ellipse").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
