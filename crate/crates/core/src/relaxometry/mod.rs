//! Field-cycled T1 measurements: polarize at low field, shuttle to B_relax,
//! wait, shuttle to the detection field and read out.

mod fit;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fieldmap::{FieldMap, FieldMapError};
use crate::motion::{self, MotionLimits, MotionProfile};

pub use fit::{build_t1_map, fit_decay, write_map_csv, FitModel, FitResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelaxError {
    #[error("field not reachable: {0}")]
    FieldNotReachable(String),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("fit diverged: {0}")]
    FitDiverged(String),
}

impl From<FieldMapError> for RelaxError {
    fn from(e: FieldMapError) -> Self {
        RelaxError::FieldNotReachable(e.to_string())
    }
}

/// Field dependence of the longitudinal relaxation.
pub trait Relaxation: Sync {
    /// T1 at field `b_t` (s).
    fn t1_s(&self, b_t: f64) -> f64;

    /// Stretch exponent of the decay while parked at `b_t`.
    fn beta(&self, _b_t: f64) -> f64 {
        1.0
    }
}

/// Field-independent T1. `f64::INFINITY` gives no relaxation at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantT1(pub f64);

impl Relaxation for ConstantT1 {
    fn t1_s(&self, _b_t: f64) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationForm {
    SaturatingKnee,
}

/// Phenomenological knee g(B) = Bᵖ/(Bᵖ + B_kneeᵖ), scaled so that T1 passes
/// exactly through (B_low, T1_low) and (B_high, T1_high):
/// T1(B) = T1_low + (T1_high − T1_low)·(g(B) − g(B_low))/(g(B_high) − g(B_low)).
///
/// Below `stretch_below_t` the wait decay is exp(−(t/T1)^β) with
/// β = `stretch_beta`, mimicking the faster-than-exponential loss seen at
/// low field. The default β of 1 keeps every decay exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxationModel {
    pub form: RelaxationForm,
    pub t1_high_s: f64,
    #[serde(rename = "b_high_T")]
    pub b_high_t: f64,
    pub t1_low_s: f64,
    #[serde(rename = "b_low_T")]
    pub b_low_t: f64,
    #[serde(rename = "b_knee_T")]
    pub b_knee_t: f64,
    pub exponent: f64,
    pub stretch_beta: f64,
    #[serde(rename = "stretch_below_T")]
    pub stretch_below_t: f64,
}

impl Default for RelaxationModel {
    fn default() -> Self {
        Self {
            form: RelaxationForm::SaturatingKnee,
            t1_high_s: 395.7,
            b_high_t: 7.0,
            t1_low_s: 10.19,
            b_low_t: 0.008,
            b_knee_t: 0.5,
            exponent: 2.0,
            stretch_beta: 1.0,
            stretch_below_t: 0.1,
        }
    }
}

impl RelaxationModel {
    /// T1 at zero field, the smallest value the model takes.
    pub fn t1_floor_s(&self) -> f64 {
        t1_of_field(0.0, self)
    }

    pub fn validate(&self) -> Result<(), RelaxError> {
        let ok = self.t1_low_s > 0.0
            && self.t1_high_s >= self.t1_low_s
            && self.b_low_t > 0.0
            && self.b_high_t > self.b_low_t
            && self.t1_floor_s() > 0.0
            && self.b_knee_t > 0.0
            && self.exponent > 0.0
            && (0.5..=2.5).contains(&self.stretch_beta);
        if ok {
            Ok(())
        } else {
            Err(RelaxError::InvalidProtocol(format!("invalid relaxation model {self:?}")))
        }
    }
}

impl Relaxation for RelaxationModel {
    fn t1_s(&self, b_t: f64) -> f64 {
        t1_of_field(b_t, self)
    }

    fn beta(&self, b_t: f64) -> f64 {
        if b_t < self.stretch_below_t {
            self.stretch_beta
        } else {
            1.0
        }
    }
}

pub fn t1_of_field(b_t: f64, m: &RelaxationModel) -> f64 {
    // Written as 1/(1 + (B_knee/B)^p) to stay finite for large B.
    let knee = |b: f64| {
        let b = b.abs();
        if b == 0.0 {
            0.0
        } else {
            1.0 / (1.0 + (m.b_knee_t / b).powf(m.exponent))
        }
    };
    let (g_lo, g_hi) = (knee(m.b_low_t), knee(m.b_high_t));
    m.t1_low_s + (m.t1_high_s - m.t1_low_s) * (knee(b_t) - g_lo) / (g_hi - g_lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationSign {
    #[default]
    Aligned,
    AntiAligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxometryProtocol {
    #[serde(rename = "b_pol_T")]
    pub b_pol_t: f64,
    pub t_pol_s: f64,
    #[serde(rename = "b_relax_T")]
    pub b_relax_t: f64,
    pub waits_s: Vec<f64>,
    #[serde(rename = "detect_field_T")]
    pub detect_field_t: f64,
    pub initial_polarization_sign: PolarizationSign,
    /// Signal per unit polarization at detection.
    pub gain: f64,
}

impl Default for RelaxometryProtocol {
    fn default() -> Self {
        Self {
            b_pol_t: 0.008,
            t_pol_s: 40.0,
            b_relax_t: 0.008,
            waits_s: vec![5.0, 10.0, 20.0, 40.0],
            detect_field_t: 7.0,
            initial_polarization_sign: PolarizationSign::Aligned,
            gain: 1.0,
        }
    }
}

impl RelaxometryProtocol {
    pub fn validate(&self) -> Result<(), RelaxError> {
        if self.waits_s.is_empty() || self.waits_s.iter().any(|t| !(*t >= 0.0)) {
            return Err(RelaxError::InvalidProtocol("waits must be non-negative".into()));
        }
        if self.waits_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RelaxError::InvalidProtocol("waits must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// How the sample travels between fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transit<'a> {
    /// Zero-duration moves: no decay en route.
    Instant,
    /// Time-optimal moves under these limits, integrating decay along them.
    Planned(&'a MotionLimits),
}

/// Additive Gaussian noise on each detected point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_au: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    /// (T_relax_s, signal_au)
    pub points: Vec<(f64, f64)>,
    pub noise_sigma: f64,
    /// Fraction of polarization surviving both shuttles.
    pub transit_survival: f64,
}

impl DecayCurve {
    pub fn from_points(points: Vec<(f64, f64)>) -> Self {
        Self {
            points,
            noise_sigma: 0.0,
            transit_survival: 1.0,
        }
    }
}

/// Default integration step for decay along a move (s).
pub const TRANSIT_STEP_S: f64 = 1e-3;

/// exp(−∫dt/T1(B(z(t)))) along `profile`, by composite Simpson on each
/// constant-acceleration segment with steps no longer than `dt`.
pub fn transit_survival(
    profile: &MotionProfile,
    map: &FieldMap,
    model: &dyn Relaxation,
    dt: f64,
) -> Result<f64, RelaxError> {
    let rate = |t: f64| -> Result<f64, RelaxError> {
        let b = map.sample(profile.position_at(t))?.field_t;
        Ok(1.0 / model.t1_s(b))
    };
    let mut integral = 0.0;
    let mut t0 = 0.0;
    for seg in &profile.segments {
        let len = seg.duration_s;
        if len > 0.0 {
            let n = 2 * ((len / dt / 2.0).ceil() as usize).max(1);
            let h = len / n as f64;
            let mut s = rate(t0)? + rate(t0 + len)?;
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                // Sample strictly inside the segment so position_at uses it.
                s += w * rate(t0 + k as f64 * h)?;
            }
            integral += s * h / 3.0;
        }
        t0 += len;
    }
    Ok((-integral).exp())
}

fn position(map: &FieldMap, b_t: f64, what: &str) -> Result<f64, RelaxError> {
    map.position_of_field(b_t)
        .map_err(|e| RelaxError::FieldNotReachable(format!("{what} {b_t} T: {e}")))
}

/// Simulates the detected signal for each wait time.
///
/// Polarization starts at ±1 after pumping at B_pol, decays with rate
/// 1/T1(B(z(t))) along both shuttles and as exp(−(T/T1)^β) at B_relax.
pub fn simulate_protocol(
    protocol: &RelaxometryProtocol,
    map: &FieldMap,
    transit: Transit<'_>,
    model: &dyn Relaxation,
    noise: Option<NoiseSpec>,
) -> Result<DecayCurve, RelaxError> {
    protocol.validate()?;
    let z_pol = position(map, protocol.b_pol_t, "polarization field")?;
    let z_relax = position(map, protocol.b_relax_t, "relaxation field")?;
    let z_det = position(map, protocol.detect_field_t, "detection field")?;

    let survival = match transit {
        Transit::Instant => 1.0,
        Transit::Planned(limits) => {
            let legs = [(z_pol, z_relax), (z_relax, z_det)];
            let mut s = 1.0;
            for (a, b) in legs {
                let p = motion::plan_between(a, b, limits, None)
                    .map_err(|e| RelaxError::FieldNotReachable(e.to_string()))?;
                s *= transit_survival(&p, map, model, TRANSIT_STEP_S)?;
            }
            s
        }
    };

    let sign = match protocol.initial_polarization_sign {
        PolarizationSign::Aligned => 1.0,
        PolarizationSign::AntiAligned => -1.0,
    };
    let t1 = model.t1_s(protocol.b_relax_t);
    let beta = model.beta(protocol.b_relax_t);
    let mut rng = noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let points = protocol
        .waits_s
        .iter()
        .map(|&t| {
            let wait = (-(t / t1).powf(beta)).exp();
            let mut y = sign * protocol.gain * survival * wait;
            if let (Some(n), Some(rng)) = (noise, rng.as_mut()) {
                let z: f64 = StandardNormal.sample(rng);
                y += n.sigma_au * z;
            }
            (t, y)
        })
        .collect();
    Ok(DecayCurve {
        points,
        noise_sigma: noise.map_or(0.0, |n| n.sigma_au),
        transit_survival: survival,
    })
}

/// Writes `T_relax_s,signal_au` rows.
pub fn write_curve_csv<W: Write>(writer: W, curve: &DecayCurve) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["T_relax_s", "signal_au"]).map_err(std::io::Error::other)?;
    for (t, y) in &curve.points {
        w.write_record([t.to_string(), y.to_string()]).map_err(std::io::Error::other)?;
    }
    w.flush()
}
