//! Posterior mean and sd of the spatial field on a regular lon/lat lattice.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorResult;
use crate::mesh::{Mesh, Point, Projector};

/// Value written for nodes outside the mesh.
pub const MASKED: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub step: f64,
}

impl Lattice {
    /// Bounding box of the mesh's inner domain.
    pub fn from_mesh(mesh: &Mesh, step: f64) -> Self {
        let [lo, hi] = mesh.inner_bbox();
        Self { lon_min: lo[0], lon_max: hi[0], lat_min: lo[1], lat_max: hi[1], step }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lon_min, self.lon_max, self.lat_min, self.lat_max, self.step].iter().all(|v| v.is_finite());
        if !ok || !(self.step > 0.0) || self.lon_max < self.lon_min || self.lat_max < self.lat_min {
            return Err(Error::Config(format!("invalid lattice {self:?}")));
        }
        Ok(())
    }

    fn count(lo: f64, hi: f64, step: f64) -> usize {
        ((hi - lo) / step + 1e-9).floor() as usize + 1
    }

    pub fn n_lon(&self) -> usize {
        Self::count(self.lon_min, self.lon_max, self.step)
    }

    pub fn n_lat(&self) -> usize {
        Self::count(self.lat_min, self.lat_max, self.step)
    }

    /// Nodes row by row from the south-west corner.
    pub fn nodes(&self) -> Vec<Point> {
        let (nx, ny) = (self.n_lon(), self.n_lat());
        (0..ny)
            .flat_map(|j| (0..nx).map(move |i| [self.lon_min + i as f64 * self.step, self.lat_min + j as f64 * self.step]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub lattice: Lattice,
    pub nodes: Vec<Point>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `true` where the node lies outside the mesh.
    pub masked: Vec<bool>,
}

impl FieldGrid {
    /// Mean sd of unmasked nodes within `near` degrees of any site, and
    /// farther than `far` degrees from every site.
    pub fn sd_contrast(&self, sites: &[Point], near: f64, far: f64) -> (Option<f64>, Option<f64>) {
        let (mut a, mut na, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for (k, p) in self.nodes.iter().enumerate() {
            if self.masked[k] {
                continue;
            }
            let d = sites.iter().map(|s| (p[0] - s[0]).hypot(p[1] - s[1])).fold(f64::INFINITY, f64::min);
            if d <= near {
                a += self.sd[k];
                na += 1;
            } else if d > far {
                b += self.sd[k];
                nb += 1;
            }
        }
        ((na > 0).then(|| a / na as f64), (nb > 0).then(|| b / nb as f64))
    }

    pub fn unmasked_means(&self) -> impl Iterator<Item = f64> + '_ {
        self.mean.iter().zip(&self.masked).filter(|(_, m)| !**m).map(|(v, _)| *v)
    }
}

fn projector_rows(mesh: &Mesh, nodes: &[Point]) -> Projector {
    crate::mesh::projector(mesh, nodes)
}

/// Projects arbitrary vertex values; masked nodes get [`MASKED`].
pub fn project_values(mesh: &Mesh, lattice: &Lattice, values: &[f64]) -> Result<FieldGrid> {
    lattice.validate()?;
    if values.len() != mesh.n_vertices() {
        return Err(Error::Data(format!("{} values for a mesh with {} vertices", values.len(), mesh.n_vertices())));
    }
    let nodes = lattice.nodes();
    let a = projector_rows(mesh, &nodes);
    let masked: Vec<bool> = (0..nodes.len()).map(|k| !a.is_inside(k)).collect();
    let mean = (0..nodes.len())
        .map(|k| {
            if masked[k] {
                MASKED
            } else {
                let (c, w) = a.matrix.row(k);
                c.iter().zip(w).map(|(&j, &wj)| wj * values[j]).sum()
            }
        })
        .collect();
    let sd = masked.iter().map(|&m| if m { MASKED } else { 0.0 }).collect();
    Ok(FieldGrid { lattice: *lattice, nodes, mean, sd, masked })
}

/// Mixture mean and sd of the spatial block at every lattice node.
pub fn project_field(result: &PosteriorResult, mesh: &Mesh, lattice: &Lattice) -> Result<FieldGrid> {
    lattice.validate()?;
    let sp = result.spatial.as_ref().ok_or_else(|| Error::Data("posterior has no spatial block".into()))?;
    let block = result.block(&sp.block).ok_or_else(|| Error::Data("spatial block missing from posterior".into()))?;
    if block.len != mesh.n_vertices() {
        return Err(Error::Data(format!("posterior spatial block has {} values but the mesh has {} vertices", block.len, mesh.n_vertices())));
    }
    let mu = &result.latent_mean[block.start..block.start + block.len];
    let sd = &result.latent_sd[block.start..block.start + block.len];
    let nodes = lattice.nodes();
    let a = projector_rows(mesh, &nodes);
    let cells: Vec<Result<(f64, f64, bool)>> = (0..nodes.len())
        .into_par_iter()
        .map(|k| {
            if !a.is_inside(k) {
                return Ok((MASKED, MASKED, true));
            }
            let (c, w) = a.matrix.row(k);
            let m: f64 = c.iter().zip(w).map(|(&j, &wj)| wj * mu[j]).sum();
            let mut second = 0.0;
            for (p, &i) in c.iter().enumerate() {
                for (q, &j) in c.iter().enumerate() {
                    let e = if i == j {
                        sd[i] * sd[i] + mu[i] * mu[i]
                    } else {
                        sp.get(i, j).ok_or_else(|| Error::Numerical(format!("no second moment stored for vertices {i} and {j}")))?
                    };
                    second += w[p] * w[q] * e;
                }
            }
            Ok((m, (second - m * m).max(0.0).sqrt(), false))
        })
        .collect();
    let mut mean = Vec::with_capacity(nodes.len());
    let mut sdv = Vec::with_capacity(nodes.len());
    let mut masked = Vec::with_capacity(nodes.len());
    for c in cells {
        let (m, s, k) = c?;
        mean.push(m);
        sdv.push(s);
        masked.push(k);
    }
    Ok(FieldGrid { lattice: *lattice, nodes, mean, sd: sdv, masked })
}

/// CSV with header `lon,lat,mean,sd,masked`, rows from the south-west corner.
pub fn write_grid(grid: &FieldGrid, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "lon,lat,mean,sd,masked")?;
    for k in 0..grid.nodes.len() {
        let p = grid.nodes[k];
        writeln!(f, "{},{},{},{},{}", p[0], p[1], grid.mean[k], grid.sd[k], u8::from(grid.masked[k]))?;
    }
    f.flush()?;
    Ok(())
}

/// Blank-line separated blocks of `lon lat mean sd`, one block per latitude row.
pub fn write_gnuplot(grid: &FieldGrid, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let nx = grid.lattice.n_lon();
    for (k, p) in grid.nodes.iter().enumerate() {
        if k > 0 && k % nx == 0 {
            writeln!(f)?;
        }
        if grid.masked[k] {
            writeln!(f, "{} {} NaN NaN", p[0], p[1])?;
        } else {
            writeln!(f, "{} {} {} {}", p[0], p[1], grid.mean[k], grid.sd[k])?;
        }
    }
    f.flush()?;
    Ok(())
}
