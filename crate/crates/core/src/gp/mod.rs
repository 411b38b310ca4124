//! GP regression with the empirical low-rank kernel.
//!
//! With `G = K̂(X, X)` and `z = (G + σ_n²I)⁻¹u`:
//!
//! * `μ(p) = K̂(p, X) z = Σ_i w_i φ̂_i(p)`, `w = Λ Φ_Xᵀ z`
//! * `σ²(p) = K̂(p, p) − K̂(p, X)(G + σ_n²I)⁻¹K̂(X, p)`
//!
//! When the kernel keeps its right singular vectors the mean is also a
//! combination of ensemble members, `μ = Σ_j a_j u_j` with
//! `a_j = Σ_i w_i Y_ji / σ_i`.

mod io;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::ensemble::SnapshotMatrix;
use crate::error::{Error, Result};
use crate::grid::SpaceTimePoint;
use crate::kernel::LowRankKernel;
use crate::vasc_model::NetworkTopology;

pub use io::{read_measurements, read_queries, write_measurements, write_posterior, write_queries};

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub points: Vec<SpaceTimePoint>,
    /// m/s
    pub values: Vec<f64>,
    /// m/s; fitted when `None`.
    pub noise_std: Option<f64>,
}

impl MeasurementSet {
    pub fn new(points: Vec<SpaceTimePoint>, values: Vec<f64>) -> Result<Self> {
        let set = MeasurementSet {
            points,
            values,
            noise_std: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_noise_std(mut self, std: f64) -> Self {
        self.noise_std = Some(std);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Domain("measurement set is empty".into()));
        }
        if self.points.len() != self.values.len() {
            return Err(Error::Domain(format!(
                "{} measurement points but {} values",
                self.points.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("measurement {i} is not finite")));
        }
        if let Some(s) = self.noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("noise std must be non-negative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sample variance of the values (population form).
    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// `K̂(X, X)`.
pub fn gram(k: &LowRankKernel, mset: &MeasurementSet) -> Result<DMatrix<f64>> {
    mset.validate()?;
    let phi = k.basis_rows(&mset.points)?;
    Ok(k.scaled(&phi) * phi.transpose())
}

fn log_det_and_solve(g: &DMatrix<f64>, u: &DVector<f64>, variance: f64) -> Option<(f64, f64)> {
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += variance;
    }
    let chol = Cholesky::new(a)?;
    let l = chol.l_dirty();
    let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let alpha = chol.solve(u);
    Some((u.dot(&alpha), log_det))
}

/// `½uᵀ(G+σ²I)⁻¹u + ½ln|G+σ²I| + (N/2)ln 2π`; `+∞` when the matrix is not
/// positive definite.
pub fn nlml(k: &LowRankKernel, mset: &MeasurementSet, noise_variance: f64) -> Result<f64> {
    let g = gram(k, mset)?;
    let u = DVector::from_column_slice(&mset.values);
    let n = mset.len() as f64;
    Ok(match log_det_and_solve(&g, &u, noise_variance) {
        Some((quad, log_det)) => 0.5 * quad + 0.5 * log_det + 0.5 * n * (2.0 * std::f64::consts::PI).ln(),
        None => f64::INFINITY,
    })
}

/// Search range for the noise variance relative to `Var(u)`.
pub const NOISE_SEARCH_RANGE: (f64, f64) = (1e-12, 1e2);
const GRID_POINTS: usize = 60;

/// Noise variance minimizing the NLML: log-spaced grid, then golden-section
/// refinement in `ln σ²` around the best grid point.
pub fn fit_noise(k: &LowRankKernel, mset: &MeasurementSet) -> Result<f64> {
    if mset.len() < 2 {
        return Err(Error::Domain("noise fitting needs at least 2 measurements".into()));
    }
    let var_u = mset.variance();
    if !(var_u > 0.0) {
        return Err(Error::Domain(
            "measurements are constant; noise variance is not identifiable".into(),
        ));
    }
    let g = gram(k, mset)?;
    let eig = SymmetricEigen::new(g);
    let u = DVector::from_column_slice(&mset.values);
    let proj = eig.eigenvectors.transpose() * &u;
    let d: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let n = mset.len() as f64;
    let half_log_2pi = 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    let objective = |log_var: f64| -> f64 {
        let v = log_var.exp();
        let mut total = half_log_2pi;
        for (di, ci) in d.iter().zip(proj.iter()) {
            total += 0.5 * ci * ci / (di + v) + 0.5 * (di + v).ln();
        }
        total
    };
    let (lo, hi) = ((NOISE_SEARCH_RANGE.0 * var_u).ln(), (NOISE_SEARCH_RANGE.1 * var_u).ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..GRID_POINTS).map(|i| lo + i as f64 * step).map(|x| (x, objective(x))).collect();
    let best = grid
        .iter()
        .enumerate()
        .filter(|(_, (_, f))| f.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerical("NLML is non-finite over the whole noise search range".into()))?;
    let (mut a, mut b) = (grid[best.saturating_sub(1)].0, grid[(best + 1).min(GRID_POINTS - 1)].0);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut e = a + ratio * (b - a);
    let (mut fc, mut fe) = (objective(c), objective(e));
    for _ in 0..80 {
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - ratio * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + ratio * (b - a);
            fe = objective(e);
        }
    }
    let mut x = 0.5 * (a + b);
    if objective(x) > grid[best].1 {
        x = grid[best].0;
    }
    Ok(x.exp())
}

/// Posterior at a batch of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    pub points: Vec<SpaceTimePoint>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// σ_n² used in the solve, including any jitter.
    pub noise_variance: f64,
    /// `(G + σ_n²I)⁻¹u`
    pub z: Vec<f64>,
    /// `Λ Φ_Xᵀ z`
    pub w: Vec<f64>,
    /// Sample weights, when the kernel keeps right singular vectors.
    pub a: Option<Vec<f64>>,
}

impl PosteriorField {
    /// `Σ_i w_i φ̂_i(p)` at any point of the kernel's domain.
    pub fn mean_at(&self, k: &LowRankKernel, p: &SpaceTimePoint) -> Result<f64> {
        Ok(k.eval_basis(p)?.iter().zip(&self.w).map(|(phi, w)| phi * w).sum())
    }
}

/// Conditioned system shared by every query batch.
struct Conditioned {
    chol: Cholesky<f64, Dyn>,
    phi_x: DMatrix<f64>,
    noise_variance: f64,
}

fn condition(k: &LowRankKernel, mset: &MeasurementSet, noise_variance: f64) -> Result<Conditioned> {
    mset.validate()?;
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {noise_variance}")));
    }
    let phi_x = k.basis_rows(&mset.points)?;
    let g = k.scaled(&phi_x) * phi_x.transpose();
    let n = g.nrows();
    let jitter = 1e-10 * g.trace() / n as f64;
    let factor = |v: f64| {
        let mut a = g.clone();
        for i in 0..n {
            a[(i, i)] += v;
        }
        Cholesky::new(a)
    };
    // Accept an unjittered factorization only when it is well conditioned.
    let well_conditioned = |c: &Cholesky<f64, Dyn>| {
        let l = c.l_dirty();
        let diag = (0..n).map(|i| l[(i, i)] * l[(i, i)]);
        let (min, max) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        min > 1e-12 * max
    };
    let mut used = noise_variance;
    let chol = match factor(noise_variance) {
        Some(c) if noise_variance > 0.0 || well_conditioned(&c) => c,
        _ => {
            used = noise_variance + jitter;
            factor(used)
                .ok_or_else(|| Error::Numerical("Gram matrix is singular even with jitter; use a positive noise variance".into()))?
        }
    };
    Ok(Conditioned {
        chol,
        phi_x,
        noise_variance: used,
    })
}

pub fn predict(k: &LowRankKernel, mset: &MeasurementSet, noise_variance: f64, queries: &[SpaceTimePoint]) -> Result<PosteriorField> {
    let c = condition(k, mset, noise_variance)?;
    let r = k.rank();
    let u = DVector::from_column_slice(&mset.values);
    let z = c.chol.solve(&u);
    let lambda = DVector::from_column_slice(k.eigenvalues());
    let w = (c.phi_x.transpose() * &z).component_mul(&lambda);

    // Posterior covariance in basis coordinates:
    // Λ − ΛΦ_Xᵀ(G + σ²I)⁻¹Φ_XΛ = Λ^½ (I − VᵀV) Λ^½, V = L⁻¹Φ_XΛ^½.
    let sqrt_l = lambda.map(f64::sqrt);
    let mut scaled = c.phi_x.clone();
    for i in 0..r {
        scaled.column_mut(i).scale_mut(sqrt_l[i]);
    }
    let v = c
        .chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&scaled)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut cov = -(v.transpose() * &v);
    for i in 0..r {
        cov[(i, i)] += 1.0;
    }
    for i in 0..r {
        for j in 0..r {
            cov[(i, j)] *= sqrt_l[i] * sqrt_l[j];
        }
    }

    let phi_q = k.basis_rows(queries)?;
    let lambda_max = lambda.max();
    let mut mean = Vec::with_capacity(queries.len());
    let mut std = Vec::with_capacity(queries.len());
    for (q, p) in queries.iter().enumerate() {
        let row = phi_q.row(q).transpose();
        mean.push(row.dot(&w));
        let prior: f64 = row.iter().zip(lambda.iter()).map(|(f, l)| l * f * f).sum();
        let var = (&cov * &row).dot(&row);
        let tolerance = 1e-10 * prior + 1e-14 * lambda_max * row.norm_squared();
        if var < -tolerance {
            return Err(Error::Invariant(format!(
                "negative posterior variance {var:e} at ({}, {}, {}) with prior {prior:e}",
                p.vessel, p.x, p.t
            )));
        }
        std.push(var.max(0.0).sqrt());
    }
    let a = k.right_vectors().map(|y| {
        let sigma = k.singular_values();
        (0..y.nrows()).map(|j| (0..r).map(|i| w[i] * y[(j, i)] / sigma[i]).sum()).collect()
    });
    Ok(PosteriorField {
        points: queries.to_vec(),
        mean,
        std,
        noise_variance: c.noise_variance,
        z: z.iter().copied().collect(),
        w: w.iter().copied().collect(),
        a,
    })
}

/// Noise variance for `mset`: from `noise_std` when set, fitted otherwise.
pub fn noise_variance(k: &LowRankKernel, mset: &MeasurementSet) -> Result<f64> {
    match mset.noise_std {
        Some(s) => Ok(s * s),
        None => fit_noise(k, mset),
    }
}

/// Flux imbalance of a velocity field at every junction and snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct MassAudit {
    pub times: Vec<f64>,
    /// `[junction][k]`: `|ΣQ_parent − ΣQ_child| / max|Q|`, the maximum taken
    /// over the junction's vessels and all times.
    pub residual: Vec<Vec<f64>>,
}

impl MassAudit {
    pub fn max(&self) -> f64 {
        self.residual.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Audit any velocity field with `Q = A0·u` at the vessel ends.
pub fn audit_velocity(velocity: impl Fn(&SpaceTimePoint) -> Result<f64>, net: &NetworkTopology, times: &[f64]) -> Result<MassAudit> {
    let mut residual = Vec::with_capacity(net.junctions().len());
    for (j, jn) in net.junctions().iter().enumerate() {
        let ends: Vec<(f64, f64, f64)> = jn
            .parents
            .iter()
            .map(|id| (id, true))
            .chain(jn.children.iter().map(|id| (id, false)))
            .map(|(id, parent)| {
                let v = net
                    .vessel(*id)
                    .ok_or_else(|| Error::Domain(format!("junction {j}: no area data for vessel {id}")))?;
                let x = if parent { v.length } else { 0.0 };
                Ok((*id as f64, x, if parent { 1.0 } else { -1.0 } * v.area0(x)))
            })
            .collect::<Result<_>>()?;
        let mut net_flux = Vec::with_capacity(times.len());
        let mut max_q: f64 = 0.0;
        for &t in times {
            let mut sum = 0.0;
            for (id, x, signed_area) in &ends {
                let q = signed_area * velocity(&SpaceTimePoint::new(*id as u32, *x, t))?;
                max_q = max_q.max(q.abs());
                sum += q;
            }
            net_flux.push(sum.abs());
        }
        let scale = if max_q > 0.0 { max_q } else { 1.0 };
        residual.push(net_flux.iter().map(|f| f / scale).collect());
    }
    Ok(MassAudit {
        times: times.to_vec(),
        residual,
    })
}

/// Junction flux balance of the posterior mean at the kernel's snapshot
/// times, with areas from `net`.
pub fn mass_audit(field: &PosteriorField, net: &NetworkTopology, k: &LowRankKernel) -> Result<MassAudit> {
    for jn in net.junctions() {
        for id in jn.parents.iter().chain(&jn.children) {
            if k.grid().vessel_index(*id).is_none() {
                return Err(Error::Domain(format!("kernel has no grid for vessel {id}")));
            }
        }
    }
    audit_velocity(|p| field.mean_at(k, p), net, &k.grid().times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub a: Vec<f64>,
    /// Reported only; no constraint applies.
    pub sum: f64,
    /// `max |μ(p) − Σ_j a_j u_j(p)| / max |μ|` over the probes.
    pub max_relative_error: f64,
}

/// Express the posterior mean as a combination of ensemble members and
/// verify it at `probes`.
pub fn decompose(field: &PosteriorField, k: &LowRankKernel, ensemble: &SnapshotMatrix, probes: &[SpaceTimePoint]) -> Result<Decomposition> {
    let a = field
        .a
        .clone()
        .ok_or_else(|| Error::Domain("kernel lacks right singular vectors; rebuild it with --keep-right-vectors".into()))?;
    if a.len() != ensemble.samples() || ensemble.grid != *k.grid() {
        return Err(Error::Domain(format!(
            "ensemble ({} samples) does not match the kernel ({} samples)",
            ensemble.samples(),
            a.len()
        )));
    }
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for p in probes {
        let mu = field.mean_at(k, p)?;
        let mut combo = 0.0;
        for (idx, wt) in k.grid().locate(p)? {
            if wt != 0.0 {
                combo += wt * ensemble.values.row(idx).iter().zip(&a).map(|(u, a)| u * a).sum::<f64>();
            }
        }
        worst = worst.max((mu - combo).abs());
        scale = scale.max(mu.abs());
    }
    Ok(Decomposition {
        sum: a.iter().sum(),
        a,
        max_relative_error: if scale > 0.0 { worst / scale } else { worst },
    })
}
