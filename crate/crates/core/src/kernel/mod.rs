//! Low-rank empirical kernel built from a snapshot ensemble.
//!
//! `U = ΦΣYᵀ` (thin SVD) gives `K ≈ Φ Λ Φᵀ` with `λ_i = σ_i²/s`. The N×N
//! kernel is never formed; off-grid evaluation interpolates each column of Φ
//! bilinearly in (x, t):
//!
//! `K̂(p, q) = Σ_i λ_i φ̂_i(p) φ̂_i(q)`

mod container;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::SnapshotMatrix;
use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, SpaceTimePoint};

pub use container::{load_kernel, load_snapshots, save_kernel, save_snapshots, FORMAT_VERSION, MAGIC};

/// How the retained rank is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSelection {
    /// Smallest `r` whose captured energy `Σ_{i≤r}σ_i² / Σσ_i²` reaches the threshold.
    Energy(f64),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub selection: RankSelection,
    /// Retain `Y` (s × r) so posterior means can be expressed as sample weights.
    pub keep_right_vectors: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            selection: RankSelection::Energy(0.99),
            keep_right_vectors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankKernel {
    grid: SpaceTimeGrid,
    /// N × r, orthonormal columns.
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// Full spectrum of U, length s.
    singular_values: Vec<f64>,
    samples: usize,
    energy_threshold: f64,
    right_vectors: Option<DMatrix<f64>>,
}

/// Cumulative energy fractions `e_r = Σ_{i≤r}σ_i² / Σσ_i²`, `r = 1..=s`.
pub fn energy_profile(singular_values: &[f64]) -> Vec<f64> {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    singular_values
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect()
}

/// Rank from the energy rule on a descending spectrum. Equal singular values
/// straddling the cut are kept together.
pub fn select_rank(singular_values: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Domain(format!("energy threshold must lie in (0, 1], got {threshold}")));
    }
    let energy = energy_profile(singular_values);
    let positive = singular_values.iter().take_while(|s| **s > 0.0).count();
    let mut r = energy.iter().position(|e| *e >= threshold).map_or(singular_values.len(), |i| i + 1);
    while r < singular_values.len() && singular_values[r] > 0.0 && singular_values[r] >= singular_values[r - 1] * (1.0 - 1e-12) {
        r += 1;
    }
    Ok(r.min(positive))
}

/// Thin SVD of a tall matrix via Householder QR followed by an SVD of R.
/// Returns `(Φ, σ, Y)` with σ descending.
fn thin_svd(u: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (n, s) = u.shape();
    let (q, r) = if n > s {
        let qr = u.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, u.clone())
    };
    let svd = r.svd(true, true);
    let (ur, vt) = match (svd.u, svd.v_t) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Numerical("SVD did not produce singular vectors".into())),
    };
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left = DMatrix::from_fn(ur.nrows(), k, |row, c| ur[(row, order[c])]);
    let y = DMatrix::from_fn(s, k, |row, c| vt[(order[c], row)]);
    let phi = match q {
        Some(q) => q * left,
        None => left,
    };
    Ok((phi, sigma, y))
}

/// Kernel from an ensemble with the energy rule at `energy_threshold`.
pub fn build_kernel(u: &SnapshotMatrix, energy_threshold: f64) -> Result<LowRankKernel> {
    build_kernel_with(
        &u.values,
        &u.grid,
        &KernelOptions {
            selection: RankSelection::Energy(energy_threshold),
            keep_right_vectors: false,
        },
    )
}

pub fn build_kernel_with(values: &DMatrix<f64>, grid: &SpaceTimeGrid, options: &KernelOptions) -> Result<LowRankKernel> {
    let (n, s) = values.shape();
    if n != grid.len() {
        return Err(Error::Domain(format!(
            "snapshot matrix has {n} rows but the grid has {} points",
            grid.len()
        )));
    }
    if s < 2 {
        return Err(Error::Domain(format!("kernel needs at least 2 samples, got {s}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("snapshot matrix contains non-finite values".into()));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::Domain("snapshot matrix is identically zero; no kernel".into()));
    }
    let (phi, sigma, y) = thin_svd(values)?;
    let (r, threshold) = match options.selection {
        RankSelection::Energy(t) => (select_rank(&sigma, t)?, t),
        RankSelection::Fixed(r) => {
            let positive = sigma.iter().filter(|v| **v > 0.0).count();
            if r == 0 || r > positive {
                return Err(Error::Domain(format!("fixed rank {r} outside 1..={positive}")));
            }
            (r, energy_profile(&sigma)[r - 1])
        }
    };
    let basis = phi.columns(0, r).into_owned();
    let eigenvalues = sigma[..r].iter().map(|v| v * v / s as f64).collect();
    let right_vectors = options.keep_right_vectors.then(|| y.columns(0, r).into_owned());
    log::info!("kernel rank {r} of {s}, energy {:.6}", energy_profile(&sigma)[r - 1]);
    Ok(LowRankKernel {
        grid: grid.clone(),
        basis,
        eigenvalues,
        singular_values: sigma,
        samples: s,
        energy_threshold: threshold,
        right_vectors,
    })
}

impl LowRankKernel {
    pub(crate) fn from_parts(
        grid: SpaceTimeGrid,
        basis: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        singular_values: Vec<f64>,
        samples: usize,
        energy_threshold: f64,
        right_vectors: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let r = eigenvalues.len();
        let bad = |reason: String| Err(Error::format("kernel", reason));
        if basis.shape() != (grid.len(), r) {
            return bad(format!("basis is {:?}, expected ({}, {r})", basis.shape(), grid.len()));
        }
        if singular_values.len() != samples || r > samples || r == 0 {
            return bad(format!("rank {r}, {} singular values for s = {samples}", singular_values.len()));
        }
        if let Some(y) = &right_vectors {
            if y.shape() != (samples, r) {
                return bad(format!("right vectors are {:?}, expected ({samples}, {r})", y.shape()));
            }
        }
        Ok(LowRankKernel {
            grid,
            basis,
            eigenvalues,
            singular_values,
            samples,
            energy_threshold,
            right_vectors,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn energy_threshold(&self) -> f64 {
        self.energy_threshold
    }

    /// Energy fraction captured by the retained rank.
    pub fn captured_energy(&self) -> f64 {
        energy_profile(&self.singular_values)[self.rank() - 1]
    }

    pub fn right_vectors(&self) -> Option<&DMatrix<f64>> {
        self.right_vectors.as_ref()
    }

    /// `φ̂(p)`, length r.
    pub fn eval_basis(&self, p: &SpaceTimePoint) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.rank());
        self.accumulate_basis(p, out.as_mut_slice())?;
        Ok(out)
    }

    fn accumulate_basis(&self, p: &SpaceTimePoint, out: &mut [f64]) -> Result<()> {
        for (idx, w) in self.grid.locate(p)? {
            if w != 0.0 {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += w * self.basis[(idx, i)];
                }
            }
        }
        Ok(())
    }

    /// `Φ_P`: row `k` is `φ̂(points[k])ᵀ`.
    pub fn basis_rows(&self, points: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        let r = self.rank();
        let mut rows = DMatrix::zeros(points.len(), r);
        let mut buf = vec![0.0; r];
        for (k, p) in points.iter().enumerate() {
            buf.iter_mut().for_each(|b| *b = 0.0);
            self.accumulate_basis(p, &mut buf)
                .map_err(|e| Error::Domain(format!("point {k} ({}, {}, {}): {e}", p.vessel, p.x, p.t)))?;
            for (i, b) in buf.iter().enumerate() {
                rows[(k, i)] = *b;
            }
        }
        Ok(rows)
    }

    pub fn eval_kernel(&self, p: &SpaceTimePoint, q: &SpaceTimePoint) -> Result<f64> {
        let a = self.eval_basis(p)?;
        let b = self.eval_basis(q)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(l, (x, y))| l * x * y)
            .sum())
    }

    /// `[K̂(p_i, q_j)]`.
    pub fn cross_covariance(&self, p: &[SpaceTimePoint], q: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        let a = self.basis_rows(p)?;
        let b = self.basis_rows(q)?;
        Ok(self.scaled(&a) * b.transpose())
    }

    /// `Φ_P Λ`.
    pub(crate) fn scaled(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rows.clone();
        for (i, l) in self.eigenvalues.iter().enumerate() {
            out.column_mut(i).scale_mut(*l);
        }
        out
    }

    /// `‖ΦᵀΦ − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis;
        (g - DMatrix::identity(self.rank(), self.rank())).amax()
    }
}
