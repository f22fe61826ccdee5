//! Constrained refined Delaunay meshes over the station domain.
//!
//! The domain is the convex hull of the (cutoff-merged) locations grown by
//! `of1` (inner zone), surrounded by a second ring grown by a further `of2`
//! (outer zone). Coordinates are planar degrees.

mod geometry;
mod projector;
mod triangulation;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use geometry::{convex_hull, point_in_polygon, polygon_area, triangle_area, Point};
pub use projector::{projector, Projector};
use triangulation::{Quality, Triangulation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub me1: f64,
    pub me2: f64,
    pub of1: f64,
    pub of2: f64,
    pub cutoff: f64,
    #[serde(default = "default_min_angle")]
    pub min_angle: f64,
    #[serde(default = "default_max_vertices")]
    pub max_vertices: usize,
}

fn default_min_angle() -> f64 {
    21.0
}

fn default_max_vertices() -> usize {
    200_000
}

impl MeshSpec {
    pub fn new(me1: f64, me2: f64, of1: f64, of2: f64, cutoff: f64) -> Self {
        Self { me1, me2, of1, of2, cutoff, min_angle: default_min_angle(), max_vertices: default_max_vertices() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("me1", self.me1), ("me2", self.me2), ("of1", self.of1), ("of2", self.of2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("mesh {name} must be positive, got {v}")));
            }
        }
        if !(self.cutoff >= 0.0) {
            return Err(Error::Config(format!("mesh cutoff must be non-negative, got {}", self.cutoff)));
        }
        if !(self.min_angle > 0.0 && self.min_angle < 34.0) {
            return Err(Error::Config(format!("mesh min_angle must lie in (0, 34) degrees, got {}", self.min_angle)));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.me1 > self.me2 {
            w.push(format!("me1 ({}) exceeds me2 ({})", self.me1, self.me2));
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Inner,
    Outer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    /// Zone of each vertex; a vertex touching an inner triangle is inner.
    pub boundary: Vec<Zone>,
    /// Zone of each triangle.
    pub triangle_zone: Vec<Zone>,
    /// Inner boundary polygon (counter-clockwise).
    pub inner_boundary: Vec<Point>,
    /// Outer boundary polygon (counter-clockwise).
    pub outer_boundary: Vec<Point>,
}

impl Mesh {
    /// Single-zone mesh from the plain Delaunay triangulation of `points`.
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let triangles = delaunay(points)?;
        let hull = convex_hull(points);
        Ok(Mesh {
            vertices: points.to_vec(),
            triangle_zone: vec![Zone::Inner; triangles.len()],
            triangles,
            boundary: vec![Zone::Inner; points.len()],
            inner_boundary: hull.clone(),
            outer_boundary: hull,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        triangle_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Bounding box `[min, max]` of the inner-zone vertices.
    pub fn inner_bbox(&self) -> [Point; 2] {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for (v, z) in self.vertices.iter().zip(&self.boundary) {
            if *z == Zone::Inner {
                for k in 0..2 {
                    lo[k] = lo[k].min(v[k]);
                    hi[k] = hi[k].max(v[k]);
                }
            }
        }
        [lo, hi]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(crate::error::open(path)?);
        let mesh: Mesh = serde_json::from_reader(f)?;
        mesh.check()?;
        Ok(mesh)
    }

    /// Structural validity: indices in range, positive orientation.
    pub fn check(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.boundary.len() != n || self.triangle_zone.len() != self.triangles.len() {
            return Err(Error::Mesh("zone arrays do not match vertex/triangle counts".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
            }
            if !(self.triangle_area(t) > 0.0) {
                return Err(Error::Mesh(format!("triangle {t} is degenerate")));
            }
        }
        Ok(())
    }
}

/// Greedy cutoff merge: points are visited in lexicographic order and kept
/// when no previously kept point lies within `cutoff`.
pub fn merge_points(points: &[Point], cutoff: f64) -> Vec<Point> {
    let mut sorted: Vec<Point> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    sorted.dedup();
    if cutoff <= 0.0 {
        return sorted;
    }
    let cell = cutoff;
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    let mut kept: Vec<Point> = Vec::new();
    for p in sorted {
        let cx = (p[0] / cell).floor() as i64;
        let cy = (p[1] / cell).floor() as i64;
        let near = (cx - 1..=cx + 1).any(|i| {
            (cy - 1..=cy + 1).any(|j| grid.get(&(i, j)).is_some_and(|ids| ids.iter().any(|&k| geometry::dist(kept[k], p) < cutoff)))
        });
        if !near {
            grid.entry((cx, cy)).or_default().push(kept.len());
            kept.push(p);
        }
    }
    kept
}

/// Plain Delaunay triangulation of distinct points (ccw triangles).
pub fn delaunay(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::Mesh("at least three points are needed".into()));
    }
    let mut tri = Triangulation::new(bbox(points));
    let mut ids = Vec::with_capacity(points.len());
    for &p in points {
        ids.push(tri.insert(p));
    }
    let mut inverse = vec![usize::MAX; tri.points.len()];
    for (i, &id) in ids.iter().enumerate() {
        inverse[id] = i;
    }
    Ok(tri.finite_triangles().into_iter().map(|t| t.map(|v| inverse[v])).collect())
}

fn bbox(points: &[Point]) -> [Point; 2] {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    [lo, hi]
}

/// Splits ring edges until no other point lies in any edge's diametral disc,
/// so that every ring edge is present in the Delaunay triangulation.
fn gabriel_split(rings: &mut [Vec<Point>], free: &[Point]) {
    loop {
        let all: Vec<Point> = rings.iter().flatten().copied().chain(free.iter().copied()).collect();
        let mut grid = PointGrid::new(&all);
        let mut changed = false;
        for ring in rings.iter_mut() {
            let mut out = Vec::with_capacity(ring.len());
            let n = ring.len();
            for i in 0..n {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                out.push(a);
                let m = geometry::midpoint(a, b);
                let r = 0.5 * geometry::dist(a, b);
                let blocked = grid.within(m, r).any(|q| q != a && q != b && geometry::dist(q, m) <= r * (1.0 + 1e-9));
                if blocked {
                    out.push(m);
                    changed = true;
                }
            }
            *ring = out;
        }
        grid.clear();
        if !changed {
            return;
        }
    }
}

struct PointGrid<'a> {
    points: &'a [Point],
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Point]) -> Self {
        let [lo, hi] = bbox(points);
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let side = (points.len() as f64).sqrt().ceil().max(1.0);
        let cell = span / side;
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, p) in points.iter().enumerate() {
            let cx = (((p[0] - lo[0]) / cell) as usize).min(nx - 1);
            let cy = (((p[1] - lo[1]) / cell) as usize).min(ny - 1);
            cells[cy * nx + cx].push(i);
        }
        Self { points, lo, cell, nx, ny, cells }
    }

    fn within(&self, c: Point, r: f64) -> impl Iterator<Item = Point> + '_ {
        let clampx = |x: f64| (((x - self.lo[0]) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let clampy = |y: f64| (((y - self.lo[1]) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        let (x0, x1) = (clampx(c[0] - r), clampx(c[0] + r));
        let (y0, y1) = (clampy(c[1] - r), clampy(c[1] + r));
        (y0..=y1).flat_map(move |y| (x0..=x1).flat_map(move |x| self.cells[y * self.nx + x].iter().map(|&i| self.points[i])))
    }

    fn clear(&mut self) {
        self.cells.clear();
    }
}

/// Builds the two-zone refined mesh around `locations`.
pub fn build_mesh(locations: &[Point], spec: &MeshSpec) -> Result<Mesh> {
    spec.validate()?;
    let merged = merge_points(locations, spec.cutoff);
    if merged.len() < 3 {
        return Err(Error::Mesh(format!(
            "only {} distinct location(s) remain after cutoff merging; at least three non-collinear points are needed",
            merged.len()
        )));
    }
    let hull = convex_hull(&merged);
    if hull.len() < 3 || polygon_area(&hull) <= 0.0 {
        return Err(Error::Mesh("locations are collinear".into()));
    }
    let inner_ring = geometry::dilate_convex(&hull, spec.of1, spec.me1);
    let outer_ring = geometry::dilate_convex(&hull, spec.of1 + spec.of2, spec.me2);
    let mut rings = vec![inner_ring, outer_ring];
    gabriel_split(&mut rings, &merged);
    let [inner_ring, outer_ring] = [rings[0].clone(), rings[1].clone()];

    let mut tri = Triangulation::new(bbox(&outer_ring));
    let mut ring_ids: Vec<Vec<usize>> = Vec::new();
    for ring in [&inner_ring, &outer_ring] {
        ring_ids.push(ring.iter().map(|&p| tri.insert(p)).collect());
    }
    for &p in &merged {
        tri.insert(p);
    }
    for ids in &ring_ids {
        let n = ids.len();
        for i in 0..n {
            let (a, b) = (ids[i], ids[(i + 1) % n]);
            if !tri.has_edge(a, b) {
                return Err(Error::Mesh("boundary segment missing from triangulation".into()));
            }
            tri.add_segment(a, b);
        }
    }
    tri.label_regions(|c| {
        if point_in_polygon(c, &inner_ring) {
            2
        } else if point_in_polygon(c, &outer_ring) {
            1
        } else {
            0
        }
    });
    let quality = Quality {
        max_edge: vec![f64::INFINITY, spec.me2, spec.me1],
        min_angle_deg: spec.min_angle,
        max_vertices: spec.max_vertices,
        min_feature: 1e-3 * spec.me1.min(spec.me2),
    };
    if !tri.refine(&quality) {
        return Err(Error::Mesh(format!("refinement stopped at the vertex cap of {}", spec.max_vertices)));
    }
    Ok(assemble(&tri, inner_ring, outer_ring))
}

fn assemble(tri: &Triangulation, inner: Vec<Point>, outer: Vec<Point>) -> Mesh {
    let dom = tri.domain_triangles();
    let mut map = vec![usize::MAX; tri.points.len()];
    let mut used: Vec<usize> = dom.iter().flat_map(|(t, _)| t.iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    let mut vertices = Vec::with_capacity(used.len());
    for (k, &v) in used.iter().enumerate() {
        map[v] = k;
        vertices.push(tri.points[v]);
    }
    let mut boundary = vec![Zone::Outer; vertices.len()];
    let mut triangles = Vec::with_capacity(dom.len());
    let mut triangle_zone = Vec::with_capacity(dom.len());
    for (t, region) in dom {
        let t = t.map(|v| map[v]);
        let zone = if region == 2 { Zone::Inner } else { Zone::Outer };
        if zone == Zone::Inner {
            for &v in &t {
                boundary[v] = Zone::Inner;
            }
        }
        triangles.push(t);
        triangle_zone.push(zone);
    }
    Mesh { vertices, triangles, boundary, triangle_zone, inner_boundary: inner, outer_boundary: outer }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stations() -> Vec<Point> {
        vec![
            [16.4833, -28.583331],
            [19.7760, -31.4707],
            [18.5285, -31.6391],
            [17.9833, -32.9000],
            [19.9000, -34.4667],
            [20.8064, -32.3743],
            [22.0333, -33.2167],
            [24.7440, -34.0027],
            [24.9499, -31.1874],
            [28.1498, -32.3308],
        ]
    }

    #[test]
    fn unit_square_corners_give_two_triangles() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let t = delaunay(&pts).unwrap();
        assert_eq!(t.len(), 2);
        let area: f64 = t.iter().map(|t| triangle_area(pts[t[0]], pts[t[1]], pts[t[2]])).sum();
        assert!((area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn delaunay_matches_brute_force() {
        let mut state = 7u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts: Vec<Point> = (0..40).map(|_| [rnd(), rnd()]).collect();
        let mut ours: Vec<[usize; 3]> = delaunay(&pts).unwrap().into_iter().map(canonical).collect();
        let mut oracle: Vec<[usize; 3]> = windspde_oracles::delaunay::triangles(&pts).into_iter().map(canonical).collect();
        ours.sort_unstable();
        oracle.sort_unstable();
        assert_eq!(ours, oracle);
    }

    fn canonical(mut t: [usize; 3]) -> [usize; 3] {
        t.sort_unstable();
        t
    }

    #[test]
    fn cutoff_merges_duplicates() {
        let pts = [[0.0, 0.0], [0.0, 0.0], [0.01, 0.0], [1.0, 1.0]];
        assert_eq!(merge_points(&pts, 0.1).len(), 2);
        assert_eq!(merge_points(&pts, 0.0).len(), 3);
    }

    #[test]
    fn collinear_and_overmerged_inputs_fail() {
        let spec = MeshSpec::new(0.5, 0.5, 0.1, 0.1, 0.01);
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(build_mesh(&line, &spec).is_err());
        let spec = MeshSpec::new(0.5, 0.5, 0.1, 0.1, 100.0);
        assert!(build_mesh(&stations(), &spec).is_err());
    }

    #[test]
    fn station_mesh_satisfies_bounds() {
        let spec = MeshSpec::new(0.55, 0.55, 0.15, 0.15, 0.55);
        let mesh = build_mesh(&stations(), &spec).unwrap();
        mesh.check().unwrap();
        let area = polygon_area(&mesh.outer_boundary);
        assert!(((mesh.total_area() - area) / area).abs() < 1e-8);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let bound = if mesh.triangle_zone[t] == Zone::Inner { spec.me1 } else { spec.me2 };
            for k in 0..3 {
                let l = geometry::dist(mesh.vertices[tri[k]], mesh.vertices[tri[(k + 1) % 3]]);
                assert!(l <= bound * (1.0 + 1e-12));
            }
        }
    }
}
