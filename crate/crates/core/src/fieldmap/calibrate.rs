use super::model::{MonotoneSpline, SolenoidParams};
use super::{
    AnchorKind, FieldAnchor, FieldMap, FieldMapError, FieldModel, ModelKind, ESLAC_FIELD_T,
    GSLAC_FIELD_T, TRAVEL_RANGE_M,
};
use crate::lsq::{self, LsqOptions};

/// Geometry obtained by calibrating against [`canonical_anchors`].
pub(super) const CANONICAL_SOLENOID: SolenoidParams = SolenoidParams {
    center_field_t: 7.0,
    half_length_m: 0.452_131_632_5,
    radius_m: 0.086_900_114_5,
};

/// Anchors for the shipped map: 7 T at the center, the gradient magnitudes
/// implied by the LAC field resolutions at 50 µm, and ≈30 mT at the shield entry.
pub fn canonical_anchors() -> Vec<FieldAnchor> {
    vec![
        FieldAnchor::field_value(0.0, 7.0, 1e-6),
        FieldAnchor::gradient_at_field(ESLAC_FIELD_T, 0.228, 0.01),
        FieldAnchor::gradient_at_field(GSLAC_FIELD_T, 0.606, 0.01),
        FieldAnchor::field_value(1.06, 0.030, 0.20),
    ]
}

/// Fits a field model to `anchors`.
///
/// A lone center anchor keeps the canonical geometry and only rescales the
/// center field. Otherwise the solenoid's half-length and radius are fitted
/// by bounded damped least squares on relative residuals.
pub fn calibrate(anchors: &[FieldAnchor], kind: ModelKind) -> Result<FieldMap, FieldMapError> {
    if anchors.is_empty() {
        return Err(FieldMapError::InvalidAnchor("no anchors given".into()));
    }
    for a in anchors {
        a.validate()?;
    }
    let center = anchors
        .iter()
        .find(|a| a.is_center())
        .ok_or_else(|| {
            FieldMapError::InvalidAnchor("a field_value anchor at z = 0 is required".into())
        })?;

    let map = match kind {
        ModelKind::FiniteSolenoid => calibrate_solenoid(anchors, center.field_t)?,
        ModelKind::MonotoneSpline => calibrate_spline(anchors)?,
    };
    check_anchors(&map.model, anchors)?;
    Ok(map)
}

/// Position of `field_t` on an unbounded solenoid axis (z ≥ 0).
fn solenoid_position(p: &SolenoidParams, field_t: f64) -> Option<f64> {
    if !(field_t > 0.0 && field_t <= p.center_field_t) {
        return None;
    }
    let mut hi = 1.0;
    while p.field(hi) > field_t {
        hi *= 2.0;
        if hi > 1e4 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p.field(mid) > field_t {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn model_position(model: &FieldModel, field_t: f64) -> Option<f64> {
    match model {
        FieldModel::FiniteSolenoid(p) => solenoid_position(p, field_t),
        FieldModel::MonotoneSpline(s) => {
            let map = FieldMap::new(model.clone(), s.domain());
            map.position_of_field(field_t).ok()
        }
    }
}

fn model_field(model: &FieldModel, z: f64) -> f64 {
    match model {
        FieldModel::FiniteSolenoid(p) => p.field(z),
        FieldModel::MonotoneSpline(s) => s.field(z),
    }
}

fn model_gradient(model: &FieldModel, z: f64) -> f64 {
    match model {
        FieldModel::FiniteSolenoid(p) => p.gradient(z),
        FieldModel::MonotoneSpline(s) => s.gradient(z),
    }
}

/// Relative residual of one anchor under `model`.
fn anchor_residual(model: &FieldModel, a: &FieldAnchor) -> Option<f64> {
    match a.kind {
        AnchorKind::FieldValue => {
            let z = a.position_m?;
            Some((model_field(model, z) - a.field_t) / a.field_t)
        }
        AnchorKind::GradientAtField => {
            let target = a.gradient_t_per_m?.abs();
            let z = model_position(model, a.field_t)?;
            Some((model_gradient(model, z).abs() - target) / target)
        }
    }
}

fn check_anchors(model: &FieldModel, anchors: &[FieldAnchor]) -> Result<(), FieldMapError> {
    for a in anchors {
        let r = anchor_residual(model, a).ok_or_else(|| {
            FieldMapError::NoConvergence(format!("anchor at {} T cannot be evaluated", a.field_t))
        })?;
        if r.abs() > a.tolerance_rel {
            return Err(FieldMapError::NoConvergence(format!(
                "{:?} anchor at {} T has relative residual {:.3e} > {:.3e}",
                a.kind, a.field_t, r, a.tolerance_rel
            )));
        }
    }
    Ok(())
}

fn calibrate_solenoid(anchors: &[FieldAnchor], center_t: f64) -> Result<FieldMap, FieldMapError> {
    let domain = (0.0, TRAVEL_RANGE_M);
    let fitted: Vec<&FieldAnchor> = anchors.iter().filter(|a| !a.is_center()).collect();
    if fitted.is_empty() {
        let params = SolenoidParams {
            center_field_t: center_t,
            ..CANONICAL_SOLENOID
        };
        return Ok(FieldMap::new(FieldModel::FiniteSolenoid(params), domain));
    }

    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let model = FieldModel::FiniteSolenoid(SolenoidParams {
            center_field_t: center_t,
            half_length_m: p[0],
            radius_m: p[1],
        });
        fitted.iter().map(|a| anchor_residual(&model, a)).collect()
    };

    // Deterministic start: coarse log grid over the geometry.
    let grid = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    };
    let mut best = (f64::INFINITY, [CANONICAL_SOLENOID.half_length_m, CANONICAL_SOLENOID.radius_m]);
    for &l in &grid(0.02, 3.0, 25) {
        for &r in &grid(0.01, 1.5, 25) {
            if let Some(res) = residuals(&[l, r]) {
                let c: f64 = res.iter().map(|x| x * x).sum();
                if c.is_finite() && c < best.0 {
                    best = (c, [l, r]);
                }
            }
        }
    }

    let bounds = [(1e-3, 10.0), (1e-3, 10.0)];
    let sol = lsq::minimize(residuals, &best.1, &bounds, LsqOptions::default())
        .map_err(|e| FieldMapError::NoConvergence(e.to_string()))?;
    let params = SolenoidParams {
        center_field_t: center_t,
        half_length_m: sol.params[0],
        radius_m: sol.params[1],
    };
    Ok(FieldMap::new(FieldModel::FiniteSolenoid(params), domain))
}

fn calibrate_spline(anchors: &[FieldAnchor]) -> Result<FieldMap, FieldMapError> {
    let mut knots: Vec<(f64, f64)> = anchors
        .iter()
        .filter(|a| a.kind == AnchorKind::FieldValue)
        .filter_map(|a| a.position_m.map(|z| (z, a.field_t)))
        .collect();
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spline = MonotoneSpline::new(&knots)?;
    let domain = spline.domain();
    Ok(FieldMap::new(FieldModel::MonotoneSpline(spline), domain))
}
