//! Planar predicates and polygon helpers.

use std::f64::consts::PI;

use robust::Coord;

pub type Point = [f64; 2];

fn coord(p: Point) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Positive when `a, b, c` turn counter-clockwise.
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(c))
}

/// Positive when `d` lies strictly inside the circle through the ccw triple `a, b, c`.
pub fn in_circle(a: Point, b: Point, c: Point, d: Point) -> f64 {
    robust::incircle(coord(a), coord(b), coord(c), coord(d))
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn circumcenter(a: Point, b: Point, c: Point) -> Point {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d]
}

/// Smallest interior angle in radians.
pub fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let la = dist(b, c);
    let lb = dist(a, c);
    let lc = dist(a, b);
    let angle = |opp: f64, s1: f64, s2: f64| ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0).acos();
    angle(la, lb, lc).min(angle(lb, la, lc)).min(angle(lc, la, lb))
}

/// `true` when `p` lies strictly inside the closed diametral disc of `a b`
/// (the angle `a p b` exceeds 90 degrees).
pub fn encroaches(a: Point, b: Point, p: Point) -> bool {
    (a[0] - p[0]) * (b[0] - p[0]) + (a[1] - p[1]) * (b[1] - p[1]) < 0.0
}

/// Convex hull in counter-clockwise order, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Boundary of a convex ccw polygon grown by `radius`, with rounded corners.
/// Every boundary edge of the result is at most `max_edge` long.
pub fn dilate_convex(hull: &[Point], radius: f64, max_edge: f64) -> Vec<Point> {
    let n = hull.len();
    let normal = |i: usize| {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let l = dist(a, b);
        [(b[1] - a[1]) / l, -(b[0] - a[0]) / l]
    };
    // Corner arcs: chords no longer than the edge bound and no wider than 22.5 degrees.
    let max_step = (PI / 8.0).min(2.0 * (0.5 * max_edge / radius).min(1.0).asin());
    let mut out: Vec<Point> = Vec::new();
    for i in 0..n {
        let n_in = normal((i + n - 1) % n);
        let n_out = normal(i);
        let a0 = n_in[1].atan2(n_in[0]);
        let mut a1 = n_out[1].atan2(n_out[0]);
        while a1 < a0 {
            a1 += 2.0 * PI;
        }
        let steps = ((a1 - a0) / max_step).ceil().max(1.0) as usize;
        let v = hull[i];
        for k in 0..=steps {
            let t = a0 + (a1 - a0) * k as f64 / steps as f64;
            out.push([v[0] + radius * t.cos(), v[1] + radius * t.sin()]);
        }
    }
    let mut ring: Vec<Point> = Vec::with_capacity(out.len());
    let tiny = 1e-9 * radius.max(max_edge);
    for p in out {
        if ring.last().is_none_or(|&q| dist(p, q) > tiny) {
            ring.push(p);
        }
    }
    while ring.len() > 1 && dist(ring[0], *ring.last().unwrap()) <= tiny {
        ring.pop();
    }
    subdivide_ring(&ring, max_edge)
}

/// Inserts equally spaced points so that no edge of the closed ring exceeds `max_edge`.
pub fn subdivide_ring(ring: &[Point], max_edge: f64) -> Vec<Point> {
    let n = ring.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        let pieces = (dist(a, b) / max_edge).ceil().max(1.0) as usize;
        for k in 0..pieces {
            let t = k as f64 / pieces as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5], [1.0, 1.0], [0.0, 1.0], [0.5, 0.0]];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!((polygon_area(&h) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dilation_area_matches_minkowski_sum() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let r = 0.2;
        let ring = dilate_convex(&sq, r, 0.01);
        let exact = 1.0 + 4.0 * r + PI * r * r;
        assert!(((polygon_area(&ring) - exact) / exact).abs() < 1e-3);
        for i in 0..ring.len() {
            assert!(dist(ring[i], ring[(i + 1) % ring.len()]) <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn circumcenter_is_equidistant() {
        let (a, b, c) = ([0.1, 0.2], [1.3, -0.4], [0.7, 0.9]);
        let o = circumcenter(a, b, c);
        assert!((dist(o, a) - dist(o, b)).abs() < 1e-12);
        assert!((dist(o, a) - dist(o, c)).abs() < 1e-12);
    }
}
