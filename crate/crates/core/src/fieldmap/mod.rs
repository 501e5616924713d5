//! On-axis magnetic field along the shuttling axis.
//!
//! The origin sits at the magnet center and `z` grows toward the low-field
//! shield, so the field is strictly decreasing over the map domain. A
//! [`FieldMap`] is immutable once built and can be shared across threads.

mod calibrate;
mod io;
mod model;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate, canonical_anchors};
pub use io::{read_anchors_csv, write_anchors_csv, FieldMapDocument, SCHEMA_VERSION};
pub use model::{MonotoneSpline, SolenoidParams, SplineKnots};

/// Default positional precision of the actuator (m).
pub const DEFAULT_PRECISION_M: f64 = 50e-6;
/// Default actuator velocity cap (m/s).
pub const DEFAULT_V_MAX: f64 = 2.0;
/// Total travel of the shuttle (m).
pub const TRAVEL_RANGE_M: f64 = 1.600;
/// Distance between the low-field and high-field centers (m).
pub const CENTER_SEPARATION_M: f64 = 0.830;
/// Field below which the shield, not the fringe model, sets the value (T).
pub const DEFAULT_SHIELD_FLOOR_T: f64 = 1e-3;

/// Field of the NV excited-state level anticrossing (T).
pub const ESLAC_FIELD_T: f64 = 0.051;
/// Field of the NV ground-state level anticrossing (T).
pub const GSLAC_FIELD_T: f64 = 0.102;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldMapError {
    #[error("position {z_m} m is outside the map domain [{lo}, {hi}] m")]
    OutOfDomain { z_m: f64, lo: f64, hi: f64 },
    #[error("field {field_t} T is not reachable (map spans {min_t}..{max_t} T)")]
    FieldNotReachable { field_t: f64, min_t: f64, max_t: f64 },
    #[error("calibration did not converge: {0}")]
    NoConvergence(String),
    #[error("model is not monotone: {0}")]
    NonMonotonicModel(String),
    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),
    #[error("field map I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    FieldValue,
    GradientAtField,
}

/// A calibration constraint on the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldAnchor {
    pub kind: AnchorKind,
    pub position_m: Option<f64>,
    #[serde(rename = "field_T")]
    pub field_t: f64,
    #[serde(rename = "gradient_T_per_m")]
    pub gradient_t_per_m: Option<f64>,
    pub tolerance_rel: f64,
}

impl FieldAnchor {
    pub fn field_value(position_m: f64, field_t: f64, tolerance_rel: f64) -> Self {
        Self {
            kind: AnchorKind::FieldValue,
            position_m: Some(position_m),
            field_t,
            gradient_t_per_m: None,
            tolerance_rel,
        }
    }

    /// Constrains the gradient magnitude at whatever position carries `field_t`.
    pub fn gradient_at_field(field_t: f64, gradient_t_per_m: f64, tolerance_rel: f64) -> Self {
        Self {
            kind: AnchorKind::GradientAtField,
            position_m: None,
            field_t,
            gradient_t_per_m: Some(gradient_t_per_m),
            tolerance_rel,
        }
    }

    pub fn validate(&self) -> Result<(), FieldMapError> {
        if !(self.field_t > 0.0) || !self.field_t.is_finite() {
            return Err(FieldMapError::InvalidAnchor(format!(
                "field must be positive, got {}",
                self.field_t
            )));
        }
        if !(self.tolerance_rel > 0.0) {
            return Err(FieldMapError::InvalidAnchor("tolerance_rel must be positive".into()));
        }
        match self.kind {
            AnchorKind::FieldValue if self.position_m.is_none() => Err(
                FieldMapError::InvalidAnchor("field_value anchor needs a position".into()),
            ),
            AnchorKind::GradientAtField => match self.gradient_t_per_m {
                Some(g) if g != 0.0 && g.is_finite() => Ok(()),
                _ => Err(FieldMapError::InvalidAnchor(
                    "gradient_at_field anchor needs a non-zero gradient".into(),
                )),
            },
            _ => Ok(()),
        }
    }

    pub(crate) fn is_center(&self) -> bool {
        self.kind == AnchorKind::FieldValue && self.position_m == Some(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FiniteSolenoid,
    MonotoneSpline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum FieldModel {
    FiniteSolenoid(SolenoidParams),
    MonotoneSpline(MonotoneSpline),
}

impl FieldModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FieldModel::FiniteSolenoid(_) => ModelKind::FiniteSolenoid,
            FieldModel::MonotoneSpline(_) => ModelKind::MonotoneSpline,
        }
    }

    fn field(&self, z: f64) -> f64 {
        match self {
            FieldModel::FiniteSolenoid(p) => p.field(z),
            FieldModel::MonotoneSpline(s) => s.field(z),
        }
    }

    fn gradient(&self, z: f64) -> f64 {
        match self {
            FieldModel::FiniteSolenoid(p) => p.gradient(z),
            FieldModel::MonotoneSpline(s) => s.gradient(z),
        }
    }
}

/// Whether a clamped field value comes from the fringe model or the shield floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRegion {
    Fringe,
    ShieldRegion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub field_t: f64,
    pub region: FieldRegion,
}

/// Field resolution and sweep rate available at a level anticrossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LacPlan {
    pub target_field_t: f64,
    pub position_m: f64,
    pub gradient_t_per_m: f64,
    pub resolution_t: f64,
    pub max_sweep_rate_t_per_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub model: FieldModel,
    pub domain_m: (f64, f64),
    pub travel_range_m: f64,
    pub center_separation_m: f64,
    pub shield_floor_t: f64,
}

impl FieldMap {
    pub fn new(model: FieldModel, domain_m: (f64, f64)) -> Self {
        Self {
            model,
            domain_m,
            travel_range_m: TRAVEL_RANGE_M,
            center_separation_m: CENTER_SEPARATION_M,
            shield_floor_t: DEFAULT_SHIELD_FLOOR_T,
        }
    }

    /// The shipped map: finite solenoid calibrated to [`canonical_anchors`].
    pub fn canonical() -> Self {
        FieldMap::new(
            FieldModel::FiniteSolenoid(calibrate::CANONICAL_SOLENOID),
            (0.0, TRAVEL_RANGE_M),
        )
    }

    pub fn center_field_t(&self) -> f64 {
        self.model.field(0.0_f64.max(self.domain_m.0))
    }

    fn check_domain(&self, z: f64) -> Result<(), FieldMapError> {
        let (lo, hi) = self.domain_m;
        if z >= lo && z <= hi {
            Ok(())
        } else {
            Err(FieldMapError::OutOfDomain { z_m: z, lo, hi })
        }
    }

    /// Longitudinal field at axial position `z` (T).
    pub fn field_at(&self, z: f64) -> Result<f64, FieldMapError> {
        self.check_domain(z)?;
        Ok(self.model.field(z))
    }

    /// dB/dz at `z` (T/m); non-positive over the domain.
    pub fn gradient_at(&self, z: f64) -> Result<f64, FieldMapError> {
        self.check_domain(z)?;
        Ok(self.model.gradient(z))
    }

    /// Field with the shield floor applied; values under the floor are
    /// reported as the floor with [`FieldRegion::ShieldRegion`].
    pub fn sample(&self, z: f64) -> Result<FieldSample, FieldMapError> {
        let b = self.field_at(z)?;
        Ok(if b < self.shield_floor_t {
            FieldSample {
                field_t: self.shield_floor_t,
                region: FieldRegion::ShieldRegion,
            }
        } else {
            FieldSample {
                field_t: b,
                region: FieldRegion::Fringe,
            }
        })
    }

    /// Range of fields covered by the domain, as (min, max).
    pub fn field_span(&self) -> (f64, f64) {
        let (lo, hi) = self.domain_m;
        (self.model.field(hi), self.model.field(lo))
    }

    /// Inverts the map: the unique position carrying `field_t`.
    pub fn position_of_field(&self, field_t: f64) -> Result<f64, FieldMapError> {
        let (min_t, max_t) = self.field_span();
        if !(field_t >= min_t && field_t <= max_t) {
            return Err(FieldMapError::FieldNotReachable {
                field_t,
                min_t,
                max_t,
            });
        }
        let (mut lo, mut hi) = self.domain_m;
        if field_t == max_t {
            return Ok(lo);
        }
        if field_t == min_t {
            return Ok(hi);
        }
        // Safeguarded Newton on a decreasing function; bracket always kept.
        let mut z = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.model.field(z) - field_t;
            if f == 0.0 {
                return Ok(z);
            }
            if f > 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let g = self.model.gradient(z);
            let newton = z - f / g;
            z = if g < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
            if ((self.model.field(z) - field_t) / field_t).abs() <= 1e-13 {
                break;
            }
        }
        Ok(z)
    }

    /// Resolution and maximum sweep rate at `target_field_t` given the
    /// actuator precision and velocity cap.
    pub fn plan_lac_access(
        &self,
        target_field_t: f64,
        precision_m: f64,
        v_max: f64,
    ) -> Result<LacPlan, FieldMapError> {
        let position_m = self.position_of_field(target_field_t)?;
        let gradient = self.model.gradient(position_m);
        Ok(LacPlan {
            target_field_t,
            position_m,
            gradient_t_per_m: gradient,
            resolution_t: gradient.abs() * precision_m,
            max_sweep_rate_t_per_s: gradient.abs() * v_max,
        })
    }
}
