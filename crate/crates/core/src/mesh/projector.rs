//! Barycentric interpolation from mesh vertices to arbitrary locations.

use rayon::prelude::*;

use super::geometry::Point;
use super::Mesh;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: CsrMatrix,
    /// Number of locations that fell outside the mesh (zero rows).
    pub outside: usize,
}

impl Projector {
    pub fn is_inside(&self, row: usize) -> bool {
        self.matrix.indptr()[row + 1] > self.matrix.indptr()[row]
    }
}

/// Uniform grid of triangle buckets for point location.
pub(crate) struct TriangleLocator<'a> {
    mesh: &'a Mesh,
    lo: Point,
    cell: [f64; 2],
    n: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

impl<'a> TriangleLocator<'a> {
    pub(crate) fn new(mesh: &'a Mesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &mesh.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let side = ((mesh.triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let n = [side, side];
        let cell = [((hi[0] - lo[0]) / side as f64).max(1e-300), ((hi[1] - lo[1]) / side as f64).max(1e-300)];
        let mut buckets = vec![Vec::new(); side * side];
        let mut loc = Self { mesh, lo, cell, n, buckets: Vec::new() };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let ps = tri.map(|i| mesh.vertices[i]);
            let (x0, y0) = loc.cell_of([ps.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), ps.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)]);
            let (x1, y1) = loc.cell_of([ps.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max), ps.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max)]);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    buckets[y * side + x].push(t as u32);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let f = |k: usize| (((p[k] - self.lo[k]) / self.cell[k]).floor().max(0.0) as usize).min(self.n[k] - 1);
        (f(0), f(1))
    }

    /// Containing triangle and barycentric weights.
    pub(crate) fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return None;
        }
        let (x, y) = self.cell_of(p);
        let tol = -1e-12;
        let mut best: Option<(usize, [f64; 3])> = None;
        for &t in &self.buckets[y * self.n[0] + x] {
            let t = t as usize;
            let w = barycentric(self.mesh, t, p);
            if w.iter().all(|&x| x >= 0.0) {
                return Some((t, w));
            }
            if w.iter().all(|&x| x >= tol) && best.is_none() {
                best = Some((t, w));
            }
        }
        best
    }
}

fn barycentric(mesh: &Mesh, t: usize, p: Point) -> [f64; 3] {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l1, l2, 1.0 - l1 - l2]
}

/// Sparse `locations × vertices` interpolation matrix. Locations outside the
/// mesh get empty rows and are counted in [`Projector::outside`].
pub fn projector(mesh: &Mesh, locations: &[Point]) -> Projector {
    let loc = TriangleLocator::new(mesh);
    let rows: Vec<Option<(usize, [f64; 3])>> = locations.par_iter().map(|&p| loc.locate(p)).collect();
    let mut triplets = Vec::with_capacity(3 * locations.len());
    let mut outside = 0;
    for (r, hit) in rows.into_iter().enumerate() {
        match hit {
            Some((t, w)) => {
                for k in 0..3 {
                    if w[k] != 0.0 {
                        triplets.push((r, mesh.triangles[t][k], w[k]));
                    }
                }
            }
            None => outside += 1,
        }
    }
    Projector { matrix: CsrMatrix::from_triplets(locations.len(), mesh.n_vertices(), &triplets), outside }
}
