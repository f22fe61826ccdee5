//! Incremental Delaunay triangulation with protected segments and
//! Delaunay refinement.

use std::collections::{HashMap, HashSet, VecDeque};

use super::geometry::{circumcenter, dist, encroaches, in_circle, midpoint, min_angle, orient, Point};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Tri {
    v: [usize; 3],
    /// `n[i]` is the neighbour across the edge opposite `v[i]`.
    n: [usize; 3],
    region: u8,
    alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Location {
    Inside(usize),
    OnEdge(usize, usize),
    OnVertex(usize),
}

/// Outcome of an attempted circumcentre insertion.
enum Attempt {
    Inserted,
    SplitSegment((usize, usize)),
    Rejected,
}

/// Quality bounds used during refinement, indexed by region label.
#[derive(Debug, Clone)]
pub struct Quality {
    pub max_edge: Vec<f64>,
    pub min_angle_deg: f64,
    pub max_vertices: usize,
    /// Triangles whose shortest edge is below this length are not refined for angle.
    pub min_feature: f64,
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    pub points: Vec<Point>,
    tris: Vec<Tri>,
    segments: HashSet<(usize, usize)>,
    n_super: usize,
    last: usize,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Triangulation {
    /// Starts from a large triangle that contains `bbox` with a wide margin.
    pub fn new(bbox: [Point; 2]) -> Self {
        let cx = 0.5 * (bbox[0][0] + bbox[1][0]);
        let cy = 0.5 * (bbox[0][1] + bbox[1][1]);
        let span = (bbox[1][0] - bbox[0][0]).max(bbox[1][1] - bbox[0][1]).max(1.0);
        let r = 1e3 * span;
        let points = vec![[cx - 2.0 * r, cy - r], [cx + 2.0 * r, cy - r], [cx, cy + 2.0 * r]];
        let tris = vec![Tri { v: [0, 1, 2], n: [NONE; 3], region: 0, alive: true }];
        Self { points, tris, segments: HashSet::new(), n_super: 3, last: 0 }
    }

    pub fn vertex_count(&self) -> usize {
        self.points.len() - self.n_super
    }

    fn p(&self, i: usize) -> Point {
        self.points[i]
    }

    fn locate(&self, q: Point) -> Location {
        let mut t = if self.tris[self.last].alive { self.last } else { self.tris.iter().rposition(|t| t.alive).unwrap() };
        let mut steps = 0usize;
        'walk: loop {
            steps += 1;
            let tri = &self.tris[t];
            let rot = steps % 3;
            let mut zero_edge = None;
            for k in 0..3 {
                let i = (k + rot) % 3;
                let a = self.p(tri.v[(i + 1) % 3]);
                let b = self.p(tri.v[(i + 2) % 3]);
                let o = orient(a, b, q);
                if o < 0.0 {
                    if tri.n[i] == NONE {
                        break 'walk;
                    }
                    t = tri.n[i];
                    continue 'walk;
                }
                if o == 0.0 {
                    zero_edge = Some(i);
                }
            }
            for &v in &tri.v {
                if self.p(v) == q {
                    return Location::OnVertex(v);
                }
            }
            return match zero_edge {
                Some(i) => Location::OnEdge(t, i),
                None => Location::Inside(t),
            };
        }
        // Only reachable when the point lies outside the super triangle.
        panic!("point {q:?} outside the triangulation");
    }

    fn cavity(&self, q: Point, start: &[usize], skip_segment: Option<(usize, usize)>) -> (Vec<usize>, Vec<(usize, usize, usize, u8)>) {
        let mut in_cavity: HashSet<usize> = start.iter().copied().collect();
        let mut order: Vec<usize> = start.to_vec();
        let mut stack: Vec<usize> = start.to_vec();
        let mut boundary = Vec::new();
        while let Some(t) = stack.pop() {
            let tri = &self.tris[t];
            for i in 0..3 {
                let a = tri.v[(i + 1) % 3];
                let b = tri.v[(i + 2) % 3];
                let nb = tri.n[i];
                if nb != NONE && in_cavity.contains(&nb) {
                    continue;
                }
                let is_seg = self.segments.contains(&key(a, b)) && skip_segment != Some(key(a, b));
                let grow = nb != NONE && !is_seg && {
                    let o = &self.tris[nb];
                    in_circle(self.p(o.v[0]), self.p(o.v[1]), self.p(o.v[2]), q) > 0.0
                };
                if grow {
                    in_cavity.insert(nb);
                    order.push(nb);
                    stack.push(nb);
                } else {
                    boundary.push((a, b, nb, tri.region));
                }
            }
        }
        (order, boundary)
    }

    /// Inserts `q`, returning its vertex index (existing index if it coincides with a vertex).
    pub fn insert(&mut self, q: Point) -> usize {
        self.insert_with(q, None)
    }

    fn insert_with(&mut self, q: Point, split: Option<(usize, usize)>) -> usize {
        let loc = self.locate(q);
        let start = match loc {
            Location::OnVertex(v) => return v,
            Location::Inside(t) => vec![t],
            Location::OnEdge(t, i) => {
                let nb = self.tris[t].n[i];
                if nb == NONE {
                    vec![t]
                } else {
                    vec![t, nb]
                }
            }
        };
        let (cavity, boundary) = self.cavity(q, &start, split);
        let idx = self.points.len();
        self.points.push(q);
        for &t in &cavity {
            self.tris[t].alive = false;
        }
        let mut starts: HashMap<usize, usize> = HashMap::new();
        let mut ends: HashMap<usize, usize> = HashMap::new();
        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, nb, region) in &boundary {
            if orient(self.p(a), self.p(b), q) <= 0.0 {
                // The point sits on this boundary edge; no triangle is formed here.
                continue;
            }
            let id = self.tris.len();
            self.tris.push(Tri { v: [a, b, idx], n: [NONE, NONE, nb], region, alive: true });
            if nb != NONE {
                let o = &mut self.tris[nb];
                let j = (0..3).find(|&j| o.v[j] != a && o.v[j] != b).unwrap();
                o.n[j] = id;
            }
            starts.insert(a, id);
            ends.insert(b, id);
            created.push(id);
        }
        for &id in &created {
            let [a, b, _] = self.tris[id].v;
            self.tris[id].n[0] = starts.get(&b).copied().unwrap_or(NONE);
            self.tris[id].n[1] = ends.get(&a).copied().unwrap_or(NONE);
        }
        if let Some(&last) = created.last() {
            self.last = last;
        }
        idx
    }

    pub fn add_segment(&mut self, a: usize, b: usize) {
        self.segments.insert(key(a, b));
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.tris.iter().any(|t| t.alive && t.v.contains(&a) && t.v.contains(&b))
    }

    /// Assigns a region label to every live triangle from its centroid.
    pub fn label_regions(&mut self, f: impl Fn(Point) -> u8) {
        for t in 0..self.tris.len() {
            if !self.tris[t].alive {
                continue;
            }
            let v = self.tris[t].v;
            if v.iter().any(|&i| i < self.n_super) {
                self.tris[t].region = 0;
                continue;
            }
            let c = [
                (self.p(v[0])[0] + self.p(v[1])[0] + self.p(v[2])[0]) / 3.0,
                (self.p(v[0])[1] + self.p(v[1])[1] + self.p(v[2])[1]) / 3.0,
            ];
            self.tris[t].region = f(c);
        }
    }

    fn split_segment(&mut self, s: (usize, usize)) -> usize {
        let m = midpoint(self.p(s.0), self.p(s.1));
        self.segments.remove(&s);
        let idx = self.insert_with(m, Some(s));
        self.segments.insert(key(s.0, idx));
        self.segments.insert(key(idx, s.1));
        idx
    }

    fn encroached_segments_of(&self, t: usize) -> Vec<(usize, usize)> {
        let tri = &self.tris[t];
        let mut out = Vec::new();
        for i in 0..3 {
            let a = tri.v[(i + 1) % 3];
            let b = tri.v[(i + 2) % 3];
            if self.segments.contains(&key(a, b)) && encroaches(self.p(a), self.p(b), self.p(tri.v[i])) {
                out.push(key(a, b));
            }
        }
        out
    }

    fn is_encroached(&self, s: (usize, usize)) -> bool {
        self.tris.iter().any(|t| {
            t.alive && t.v.contains(&s.0) && t.v.contains(&s.1) && {
                let apex = *t.v.iter().find(|&&v| v != s.0 && v != s.1).unwrap();
                apex >= self.n_super && encroaches(self.p(s.0), self.p(s.1), self.p(apex))
            }
        })
    }

    fn is_bad(&self, t: usize, q: &Quality) -> bool {
        let tri = &self.tris[t];
        if tri.region == 0 {
            return false;
        }
        let [a, b, c] = tri.v.map(|i| self.p(i));
        let lens = [dist(a, b), dist(b, c), dist(c, a)];
        let longest = lens.iter().cloned().fold(0.0, f64::max);
        if longest > q.max_edge[tri.region as usize] {
            return true;
        }
        let shortest = lens.iter().cloned().fold(f64::INFINITY, f64::min);
        shortest > q.min_feature && min_angle(a, b, c) < q.min_angle_deg.to_radians()
    }

    fn try_circumcenter(&mut self, t: usize) -> Attempt {
        let v = self.tris[t].v;
        let c = circumcenter(self.p(v[0]), self.p(v[1]), self.p(v[2]));
        if !c[0].is_finite() || !c[1].is_finite() {
            return Attempt::Rejected;
        }
        // Walk from the bad triangle; crossing a protected segment means the
        // circumcentre lies beyond it.
        let mut cur = t;
        let mut steps = 0usize;
        'walk: loop {
            steps += 1;
            if steps > 100_000 {
                return Attempt::Rejected;
            }
            let tri = &self.tris[cur];
            for k in 0..3 {
                let i = (k + steps) % 3;
                let a = tri.v[(i + 1) % 3];
                let b = tri.v[(i + 2) % 3];
                if orient(self.p(a), self.p(b), c) < 0.0 {
                    if self.segments.contains(&key(a, b)) {
                        return Attempt::SplitSegment(key(a, b));
                    }
                    if tri.n[i] == NONE {
                        return Attempt::Rejected;
                    }
                    cur = tri.n[i];
                    continue 'walk;
                }
            }
            break;
        }
        if self.tris[cur].region == 0 {
            return Attempt::Rejected;
        }
        let start = match self.locate_from(cur, c) {
            Location::OnVertex(_) => return Attempt::Rejected,
            Location::Inside(t) => vec![t],
            Location::OnEdge(t, i) => {
                let tri = &self.tris[t];
                let (a, b) = (tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]);
                if self.segments.contains(&key(a, b)) {
                    return Attempt::SplitSegment(key(a, b));
                }
                let nb = tri.n[i];
                if nb == NONE {
                    vec![t]
                } else {
                    vec![t, nb]
                }
            }
        };
        let (_, boundary) = self.cavity(c, &start, None);
        for &(a, b, _, _) in &boundary {
            if self.segments.contains(&key(a, b)) && encroaches(self.p(a), self.p(b), c) {
                return Attempt::SplitSegment(key(a, b));
            }
        }
        self.last = cur;
        self.insert(c);
        Attempt::Inserted
    }

    fn locate_from(&mut self, t: usize, q: Point) -> Location {
        self.last = t;
        self.locate(q)
    }

    /// Refines until no protected segment is encroached and every non-exterior
    /// triangle satisfies the quality bounds, or the vertex cap is reached.
    /// Returns `false` when the cap stopped refinement.
    pub fn refine(&mut self, q: &Quality) -> bool {
        let mut seg_queue: VecDeque<(usize, usize)> = {
            let mut s: Vec<_> = self.segments.iter().copied().collect();
            s.sort_unstable();
            s.into()
        };
        let mut bad_queue: VecDeque<(usize, [usize; 3])> =
            (0..self.tris.len()).filter(|&t| self.tris[t].alive).map(|t| (t, self.tris[t].v)).collect();
        loop {
            if self.vertex_count() >= q.max_vertices {
                return false;
            }
            if let Some(s) = seg_queue.pop_front() {
                if self.segments.contains(&s) && self.is_encroached(s) {
                    let before = self.tris.len();
                    let m = self.split_segment(s);
                    seg_queue.push_back(key(s.0, m));
                    seg_queue.push_back(key(m, s.1));
                    self.enqueue_new(before, &mut seg_queue, &mut bad_queue);
                }
                continue;
            }
            if let Some((t, v)) = bad_queue.pop_front() {
                if !self.tris[t].alive || self.tris[t].v != v || !self.is_bad(t, q) {
                    continue;
                }
                let before = self.tris.len();
                match self.try_circumcenter(t) {
                    Attempt::Inserted => self.enqueue_new(before, &mut seg_queue, &mut bad_queue),
                    Attempt::SplitSegment(s) => {
                        let m = self.split_segment(s);
                        seg_queue.push_back(key(s.0, m));
                        seg_queue.push_back(key(m, s.1));
                        self.enqueue_new(before, &mut seg_queue, &mut bad_queue);
                        if self.tris[t].alive {
                            bad_queue.push_back((t, v));
                        }
                    }
                    Attempt::Rejected => {}
                }
                continue;
            }
            return true;
        }
    }

    fn enqueue_new(&self, from: usize, seg_queue: &mut VecDeque<(usize, usize)>, bad_queue: &mut VecDeque<(usize, [usize; 3])>) {
        for t in from..self.tris.len() {
            if !self.tris[t].alive {
                continue;
            }
            seg_queue.extend(self.encroached_segments_of(t));
            bad_queue.push_back((t, self.tris[t].v));
        }
    }

    /// Live triangles outside region 0 together with their region labels.
    pub fn domain_triangles(&self) -> Vec<([usize; 3], u8)> {
        self.tris.iter().filter(|t| t.alive && t.region != 0).map(|t| (t.v, t.region)).collect()
    }

    /// All live triangles that avoid the super vertices.
    pub fn finite_triangles(&self) -> Vec<[usize; 3]> {
        self.tris.iter().filter(|t| t.alive && t.v.iter().all(|&v| v >= self.n_super)).map(|t| t.v).collect()
    }
}
