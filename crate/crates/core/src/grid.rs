//! Global space–time grid shared by snapshots and kernels.
//!
//! Values on the grid are flattened vessel-major, then by x node, then by
//! time: `index = (offset(v) + j)·m + k`.

use crate::error::{Error, Result};
use crate::vasc_model::{uniform_grid, NetworkTopology, VesselId};

#[derive(Debug, Clone, PartialEq)]
pub struct VesselGrid {
    pub id: VesselId,
    pub length: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub vessels: Vec<VesselGrid>,
    /// `t_k = k·T/m`, `k = 0..m`.
    pub times: Vec<f64>,
    pub period: f64,
    offsets: Vec<usize>,
}

/// A point on the network at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimePoint {
    pub vessel: VesselId,
    pub x: f64,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(vessel: VesselId, x: f64, t: f64) -> Self {
        SpaceTimePoint { vessel, x, t }
    }
}

/// Bilinear interpolation weights: four `(flat index, weight)` corners.
pub type Stencil = [(usize, f64); 4];

impl SpaceTimeGrid {
    pub fn new(vessels: Vec<VesselGrid>, period: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Domain(format!("need at least 2 snapshots per period, got {m}")));
        }
        if !(period > 0.0) {
            return Err(Error::Domain(format!("period must be positive, got {period}")));
        }
        let mut offsets = Vec::with_capacity(vessels.len());
        let mut total = 0;
        for v in &vessels {
            if v.x.len() < 2 {
                return Err(Error::Domain(format!("vessel {} grid has fewer than 2 nodes", v.id)));
            }
            offsets.push(total);
            total += v.x.len();
        }
        let times = (0..m).map(|k| k as f64 * period / m as f64).collect();
        Ok(SpaceTimeGrid {
            vessels,
            times,
            period,
            offsets,
        })
    }

    /// Uniform grid with each vessel's configured node count.
    pub fn from_network(net: &NetworkTopology, m: usize) -> Result<Self> {
        let vessels = net
            .vessels()
            .iter()
            .map(|v| VesselGrid {
                id: v.id,
                length: v.length,
                x: uniform_grid(v.length, v.nodes),
            })
            .collect();
        Self::new(vessels, net.period()?, m)
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }

    /// Total spatial nodes `Σ n_k`.
    pub fn space_nodes(&self) -> usize {
        self.vessels.iter().map(|v| v.x.len()).sum()
    }

    /// `N = (Σ n_k)·m`.
    pub fn len(&self) -> usize {
        self.space_nodes() * self.m()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self, vessel_index: usize) -> usize {
        self.offsets[vessel_index]
    }

    pub fn vessel_index(&self, id: VesselId) -> Option<usize> {
        self.vessels.iter().position(|v| v.id == id)
    }

    #[inline]
    pub fn index(&self, vessel_index: usize, j: usize, k: usize) -> usize {
        (self.offsets[vessel_index] + j) * self.m() + k
    }

    /// Point at grid node `(j, k)` of vessel position `vessel_index`.
    pub fn node(&self, vessel_index: usize, j: usize, k: usize) -> SpaceTimePoint {
        let v = &self.vessels[vessel_index];
        SpaceTimePoint::new(v.id, v.x[j], self.times[k])
    }

    /// All grid points in flattened order.
    pub fn points(&self) -> Vec<SpaceTimePoint> {
        let mut out = Vec::with_capacity(self.len());
        for (vi, v) in self.vessels.iter().enumerate() {
            for j in 0..v.x.len() {
                for k in 0..self.m() {
                    out.push(self.node(vi, j, k));
                }
            }
        }
        out
    }

    /// Bilinear stencil for `p`. Times in `(t_{m-1}, T]` interpolate towards
    /// `t_0` by periodicity.
    pub fn locate(&self, p: &SpaceTimePoint) -> Result<Stencil> {
        let vi = self
            .vessel_index(p.vessel)
            .ok_or_else(|| Error::Domain(format!("unknown vessel {}", p.vessel)))?;
        let v = &self.vessels[vi];
        if !(p.x >= 0.0 && p.x <= v.length) {
            return Err(Error::Domain(format!("x = {} outside vessel {} (length {})", p.x, v.id, v.length)));
        }
        if !(p.t >= 0.0 && p.t <= self.period) {
            return Err(Error::Domain(format!("t = {} outside [0, {}]", p.t, self.period)));
        }
        let (j0, j1, fx) = bracket(&v.x, p.x);
        let m = self.m();
        let dt = self.period / m as f64;
        let s = p.t / dt;
        let mut k0 = (s.floor() as usize).min(m);
        let mut ft = s - k0 as f64;
        if ft > 1.0 - 1e-12 {
            k0 += 1;
            ft = 0.0;
        } else if ft < 1e-12 {
            ft = 0.0;
        }
        let k0 = k0 % m;
        let k1 = (k0 + 1) % m;
        Ok([
            (self.index(vi, j0, k0), (1.0 - fx) * (1.0 - ft)),
            (self.index(vi, j1, k0), fx * (1.0 - ft)),
            (self.index(vi, j0, k1), (1.0 - fx) * ft),
            (self.index(vi, j1, k1), fx * ft),
        ])
    }
}

/// Interval `[x_j0, x_j1]` containing `x` on a sorted grid, with the
/// fractional position. Fractions within 1e-12 of a node snap to it.
fn bracket(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    let j = grid.partition_point(|g| *g <= x).clamp(1, n - 1) - 1;
    let f = (x - grid[j]) / (grid[j + 1] - grid[j]);
    if f < 1e-12 {
        (j, j + 1, 0.0)
    } else if f > 1.0 - 1e-12 {
        (j, j + 1, 1.0)
    } else {
        (j, j + 1, f)
    }
}

/// Linear interpolation of `values` given on `from` onto the points `to`.
pub fn resample(from: &[f64], values: &[f64], to: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for &x in to {
        let (j0, j1, f) = bracket(from, x);
        out.push(values[j0] * (1.0 - f) + values[j1] * f);
    }
}
