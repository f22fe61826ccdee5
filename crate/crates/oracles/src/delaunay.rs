//! Brute-force Delaunay triangulation: every triple whose circumcircle is
//! empty of the remaining points. O(n^4), fine for a handful of points.

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Sorted vertex triples of all Delaunay triangles. Co-circular quadruples
/// produce both diagonals, so callers should use point sets in general position.
pub fn triangles(points: &[[f64; 2]]) -> Vec<[usize; 3]> {
    let n = points.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let o = orient(a, b, c);
                if o.abs() < 1e-14 {
                    continue;
                }
                let empty = (0..n).filter(|&m| m != i && m != j && m != k).all(|m| {
                    let s = in_circle(a, b, c, points[m]);
                    if o > 0.0 {
                        s <= 1e-14
                    } else {
                        s >= -1e-14
                    }
                });
                if empty {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}
