use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{propagate_sweep, SpinConstants, SpinError, SpinSystem, SweepParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowderNode {
    pub theta_rad: f64,
    pub weight: f64,
}

/// Orientation quadrature over the hemisphere ϑ ∈ [0, π/2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowderEnsemble {
    pub nodes: Vec<PowderNode>,
}

/// Gauss–Legendre nodes and weights on [−1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

impl PowderEnsemble {
    /// `n`-point Gauss–Legendre rule in cos ϑ ∈ (0, 1); the weights carry the
    /// sin ϑ measure and sum to one.
    pub fn gauss_legendre(n: usize) -> Result<Self, SpinError> {
        if n == 0 {
            return Err(SpinError::InvalidParameters("quadrature needs at least one node".into()));
        }
        let mut nodes: Vec<PowderNode> = gauss_legendre(n)
            .into_iter()
            .map(|(x, w)| PowderNode {
                theta_rad: (0.5 * (x + 1.0)).acos(),
                weight: 0.5 * w,
            })
            .collect();
        nodes.sort_by(|a, b| a.theta_rad.total_cmp(&b.theta_rad));
        Ok(Self { nodes })
    }

    pub fn single(theta_rad: f64) -> Self {
        Self {
            nodes: vec![PowderNode {
                theta_rad,
                weight: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if self.nodes.is_empty() {
            return Err(SpinError::InvalidParameters("empty powder ensemble".into()));
        }
        let sum: f64 = self.nodes.iter().map(|n| n.weight).sum();
        if self.nodes.iter().any(|n| !(n.weight >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(SpinError::InvalidParameters(
                "powder weights must be non-negative and sum to one".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowderPoint {
    pub theta_rad: f64,
    pub weight: f64,
    pub polarization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowderResult {
    pub mean: f64,
    pub points: Vec<PowderPoint>,
}

impl PowderResult {
    /// True when every orientation transfers polarization of the same sign.
    pub fn sign_uniform(&self) -> bool {
        self.points.iter().all(|p| p.polarization > 0.0)
            || self.points.iter().all(|p| p.polarization < 0.0)
    }
}

/// Weighted powder mean of [`propagate_sweep`] over `ensemble`.
///
/// All orientations share one sweep band; each orientation's resonance sits
/// at its own offset within it. Orientations run in parallel and are reduced
/// in node order.
pub fn powder_average(
    template: &SpinSystem,
    sweep: &SweepParams,
    ensemble: &PowderEnsemble,
    c: &SpinConstants,
) -> Result<PowderResult, SpinError> {
    ensemble.validate()?;
    let points = ensemble
        .nodes
        .par_iter()
        .map(|n| {
            let sys = template.with_theta(n.theta_rad);
            propagate_sweep(&sys, sweep, c).map(|o| PowderPoint {
                theta_rad: n.theta_rad,
                weight: n.weight,
                polarization: o.polarization,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = points.iter().map(|p| p.weight * p.polarization).sum();
    Ok(PowderResult { mean, points })
}

/// Writes `theta_rad,weight,polarization` rows.
pub fn write_sweep_csv<W: Write>(writer: W, result: &PowderResult) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in &result.points {
        w.serialize(p).map_err(std::io::Error::other)?;
    }
    w.flush()
}
