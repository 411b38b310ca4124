use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic inflow velocity built from a constant plus Gaussian bumps:
///
/// `u(t) = a0 + Σ a_i exp(-(τ - b_i)² / c_i)`, with `τ = t - floor(t/T)·T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InletWaveform {
    /// Period `T` in seconds.
    pub period: f64,
    /// Base velocity `a0` (m/s).
    pub a0: f64,
    /// Bump amplitudes `a_i` (m/s).
    pub peaks: Vec<f64>,
    /// Bump centers `b_i` (s).
    pub centers: Vec<f64>,
    /// Bump widths `c_i` (s²).
    pub widths: Vec<f64>,
}

impl InletWaveform {
    pub fn constant(period: f64, velocity: f64) -> Self {
        InletWaveform {
            period,
            a0: velocity,
            peaks: vec![0.0],
            centers: vec![0.0],
            widths: vec![1.0],
        }
    }

    pub fn components(&self) -> usize {
        self.peaks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Domain(format!("inlet period must be positive, got {}", self.period)));
        }
        let n = self.peaks.len();
        if n == 0 {
            return Err(Error::Domain("inlet waveform needs at least one component".into()));
        }
        if self.centers.len() != n || self.widths.len() != n {
            return Err(Error::Domain(format!(
                "inlet waveform component lists differ in length ({} peaks, {} centers, {} widths)",
                n,
                self.centers.len(),
                self.widths.len()
            )));
        }
        if let Some(c) = self.widths.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::Domain(format!("inlet width must be positive, got {c}")));
        }
        Ok(())
    }

    /// Time reduced into `[0, T)`.
    pub fn phase(&self, t: f64) -> f64 {
        t - (t / self.period).floor() * self.period
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let tau = self.phase(t);
        let bumps: f64 = self
            .peaks
            .iter()
            .zip(&self.centers)
            .zip(&self.widths)
            .map(|((a, b), c)| a * (-(tau - b).powi(2) / c).exp())
            .sum();
        self.a0 + bumps
    }

    /// Mean velocity over one period, by composite trapezoid on `samples` points.
    pub fn mean(&self, samples: usize) -> f64 {
        let dt = self.period / samples as f64;
        (0..samples).map(|k| self.evaluate(k as f64 * dt)).sum::<f64>() / samples as f64
    }
}
