//! Shuttle kinematics: time-optimal piecewise-constant-acceleration moves
//! under velocity and acceleration caps, timing jitter, and the field seen
//! by the sample along a move.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fieldmap::{FieldMap, FieldMapError};

/// Distance back-solved from the 648 ms 8 mT → 7 T shuttle at full limits (m).
pub const DEFAULT_SHUTTLE_DISTANCE_M: f64 = 1.1627;
/// Standard deviation of the measured shuttle time (s).
pub const DEFAULT_JITTER_SIGMA_S: f64 = 2.6e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MotionError {
    #[error("distance {distance_m} m exceeds the travel range {travel_m} m")]
    DistanceExceedsTravel { distance_m: f64, travel_m: f64 },
    #[error("target velocity {0} m/s is not in (0, v_max]")]
    InvalidTarget(f64),
    #[error("invalid motion limits: {0}")]
    InvalidLimits(String),
}

/// Actuator capabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub precision_m: f64,
    pub travel_range_m: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            a_max: 30.0,
            precision_m: 50e-6,
            travel_range_m: 1.600,
        }
    }
}

impl MotionLimits {
    pub fn validate(&self) -> Result<(), MotionError> {
        let all_positive = [self.v_max, self.a_max, self.precision_m, self.travel_range_m]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite());
        if !all_positive {
            return Err(MotionError::InvalidLimits(format!("{self:?}")));
        }
        if self.precision_m >= self.travel_range_m {
            return Err(MotionError::InvalidLimits(
                "precision must be smaller than the travel range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    Trapezoidal,
    Triangular,
    Null,
}

/// Constant-acceleration piece of a move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    pub accel_m_s2: f64,
    pub v_start_m_s: f64,
    pub z_start_m: f64,
}

impl Segment {
    fn position(&self, dt: f64) -> f64 {
        self.z_start_m + self.v_start_m_s * dt + 0.5 * self.accel_m_s2 * dt * dt
    }
    fn velocity(&self, dt: f64) -> f64 {
        self.v_start_m_s + self.accel_m_s2 * dt
    }
}

/// Kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KinematicState {
    pub t_s: f64,
    pub z_m: f64,
    pub v_m_s: f64,
    pub a_m_s2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub segments: Vec<Segment>,
    /// Signed displacement, end minus start.
    pub total_distance_m: f64,
    pub total_duration_s: f64,
    pub shape: ProfileShape,
    pub start_z_m: f64,
}

impl MotionProfile {
    /// A profile that stays at `z` and takes no time.
    pub fn stationary(z: f64) -> Self {
        Self {
            segments: Vec::new(),
            total_distance_m: 0.0,
            total_duration_s: 0.0,
            shape: ProfileShape::Null,
            start_z_m: z,
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn end_z_m(&self) -> f64 {
        self.start_z_m + self.total_distance_m
    }

    pub fn peak_speed(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.velocity(s.duration_s).abs().max(s.v_start_m_s.abs()))
            .fold(0.0, f64::max)
    }

    /// State at time `t` (clamped to the move). Acceleration is taken
    /// right-continuous at segment boundaries and zero once the move is over.
    pub fn state_at(&self, t: f64) -> KinematicState {
        let mut t0 = 0.0;
        for seg in &self.segments {
            if t < t0 + seg.duration_s {
                let dt = (t - t0).max(0.0);
                return KinematicState {
                    t_s: t,
                    z_m: seg.position(dt),
                    v_m_s: seg.velocity(dt),
                    a_m_s2: seg.accel_m_s2,
                };
            }
            t0 += seg.duration_s;
        }
        KinematicState {
            t_s: t,
            z_m: self.end_z_m(),
            v_m_s: 0.0,
            a_m_s2: 0.0,
        }
    }

    /// Position at `t`, holding the start before the move and the end after it.
    pub fn position_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.start_z_m
        } else {
            self.state_at(t).z_m
        }
    }

    /// Samples on a uniform `dt` grid merged with every segment boundary and
    /// the end time. Including the boundaries keeps the samples consistent
    /// with piecewise-constant acceleration.
    pub fn sample_trajectory(&self, dt: f64) -> Vec<KinematicState> {
        assert!(dt > 0.0, "sample step must be positive");
        let total = self.duration();
        if total == 0.0 {
            return vec![KinematicState {
                t_s: 0.0,
                z_m: self.start_z_m,
                v_m_s: 0.0,
                a_m_s2: 0.0,
            }];
        }
        let mut times: Vec<f64> = Vec::new();
        let n = (total / dt).floor() as usize;
        times.extend((0..=n).map(|k| k as f64 * dt).filter(|&t| t < total));
        let mut acc = 0.0;
        for seg in &self.segments {
            acc += seg.duration_s;
            times.push(acc.min(total));
        }
        times.push(total);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * total.max(1.0));
        times.into_iter().map(|t| self.state_at(t)).collect()
    }
}

/// Time-optimal move of `distance` (≥ 0) starting at z = 0.
pub fn plan(
    distance: f64,
    limits: &MotionLimits,
    v_target: Option<f64>,
) -> Result<MotionProfile, MotionError> {
    limits.validate()?;
    if !(distance >= 0.0) || distance > limits.travel_range_m {
        return Err(MotionError::DistanceExceedsTravel {
            distance_m: distance,
            travel_m: limits.travel_range_m,
        });
    }
    let v = match v_target {
        Some(v) if v > 0.0 && v <= limits.v_max => v,
        Some(v) => return Err(MotionError::InvalidTarget(v)),
        None => limits.v_max,
    };
    let a = limits.a_max;
    if distance == 0.0 {
        return Ok(MotionProfile::stationary(0.0));
    }

    let ramp_distance = v * v / a;
    let (segments, shape) = if distance >= ramp_distance {
        let t_ramp = v / a;
        let t_cruise = (distance - ramp_distance) / v;
        let z1 = 0.5 * a * t_ramp * t_ramp;
        let z2 = z1 + v * t_cruise;
        (
            vec![
                Segment { duration_s: t_ramp, accel_m_s2: a, v_start_m_s: 0.0, z_start_m: 0.0 },
                Segment { duration_s: t_cruise, accel_m_s2: 0.0, v_start_m_s: v, z_start_m: z1 },
                Segment { duration_s: t_ramp, accel_m_s2: -a, v_start_m_s: v, z_start_m: z2 },
            ],
            ProfileShape::Trapezoidal,
        )
    } else {
        let t_half = (distance / a).sqrt();
        let v_peak = a * t_half;
        (
            vec![
                Segment { duration_s: t_half, accel_m_s2: a, v_start_m_s: 0.0, z_start_m: 0.0 },
                Segment {
                    duration_s: t_half,
                    accel_m_s2: -a,
                    v_start_m_s: v_peak,
                    z_start_m: 0.5 * distance,
                },
            ],
            ProfileShape::Triangular,
        )
    };
    let total_duration_s = segments.iter().map(|s| s.duration_s).sum();
    Ok(MotionProfile {
        segments,
        total_distance_m: distance,
        total_duration_s,
        shape,
        start_z_m: 0.0,
    })
}

/// Time-optimal move between two axial positions.
pub fn plan_between(
    from_z: f64,
    to_z: f64,
    limits: &MotionLimits,
    v_target: Option<f64>,
) -> Result<MotionProfile, MotionError> {
    let base = plan((to_z - from_z).abs(), limits, v_target)?;
    let sign = if to_z < from_z { -1.0 } else { 1.0 };
    let segments = base
        .segments
        .iter()
        .map(|s| Segment {
            duration_s: s.duration_s,
            accel_m_s2: sign * s.accel_m_s2,
            v_start_m_s: sign * s.v_start_m_s,
            z_start_m: from_z + sign * s.z_start_m,
        })
        .collect();
    Ok(MotionProfile {
        segments,
        total_distance_m: sign * base.total_distance_m,
        total_duration_s: base.total_duration_s,
        shape: base.shape,
        start_z_m: from_z,
    })
}

/// Closed-form minimum time for `distance` under cruise speed `v` and acceleration `a`.
pub fn closed_form_duration(distance: f64, v: f64, a: f64) -> f64 {
    if distance >= v * v / a {
        distance / v + v / a
    } else {
        2.0 * (distance / a).sqrt()
    }
}

/// (t, B) along a move through `map`.
pub fn field_vs_time(
    profile: &MotionProfile,
    map: &FieldMap,
    dt: f64,
) -> Result<Vec<(f64, f64)>, FieldMapError> {
    profile
        .sample_trajectory(dt)
        .into_iter()
        .map(|s| map.field_at(s.z_m).map(|b| (s.t_s, b)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterDistribution {
    Gaussian,
}

/// Gaussian timing noise on a move's duration.
///
/// Draw `k` depends only on `(seed, k)`, so parallel sweeps reproduce the
/// serial result as long as they partition draw indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    pub sigma_s: f64,
    pub distribution: JitterDistribution,
    pub seed: u64,
}

impl JitterModel {
    pub fn gaussian(sigma_s: f64, seed: u64) -> Self {
        assert!(sigma_s >= 0.0, "jitter sigma must be non-negative");
        Self {
            sigma_s,
            distribution: JitterDistribution::Gaussian,
            seed,
        }
    }

    /// Zero-mean offset for draw `index` (s).
    pub fn offset(&self, index: u64) -> f64 {
        if self.sigma_s == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let z: f64 = StandardNormal.sample(&mut rng);
        self.sigma_s * z
    }
}

impl Default for JitterModel {
    fn default() -> Self {
        Self::gaussian(DEFAULT_JITTER_SIGMA_S, 0)
    }
}

/// `duration` plus draw `index` of the jitter model, floored at zero.
pub fn apply_jitter(duration: f64, jm: &JitterModel, index: u64) -> f64 {
    (duration + jm.offset(index)).max(0.0)
}

/// Writes `t_s,z_m,v_mps,a_mps2,B_T` rows. `B_T` is left empty when `map` is absent.
pub fn write_trajectory_csv<W: std::io::Write>(
    writer: W,
    samples: &[KinematicState],
    map: Option<&FieldMap>,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t_s", "z_m", "v_mps", "a_mps2", "B_T"])?;
    for s in samples {
        let b = match map {
            Some(m) => m.field_at(s.z_m)?.to_string(),
            None => String::new(),
        };
        w.write_record([
            s.t_s.to_string(),
            s.z_m.to_string(),
            s.v_m_s.to_string(),
            s.a_m_s2.to_string(),
            b,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> MotionLimits {
        MotionLimits::default()
    }

    #[test]
    fn headline_shuttle_time() {
        let p = plan(DEFAULT_SHUTTLE_DISTANCE_M, &limits(), None).unwrap();
        assert_eq!(p.shape, ProfileShape::Trapezoidal);
        assert!((p.duration() - 0.648).abs() < 0.5e-3, "{}", p.duration());
    }

    #[test]
    fn short_move_is_triangular() {
        let p = plan(0.1, &limits(), None).unwrap();
        assert_eq!(p.shape, ProfileShape::Triangular);
        let expected = 2.0 * (0.1_f64 / 30.0).sqrt();
        assert!((p.duration() - expected).abs() < 1e-12);
        assert!((p.duration() - 0.11547).abs() < 1e-5);
    }

    #[test]
    fn zero_distance_is_null() {
        let p = plan(0.0, &limits(), None).unwrap();
        assert_eq!(p.shape, ProfileShape::Null);
        assert_eq!(p.duration(), 0.0);
        let s = p.sample_trajectory(1e-3);
        assert_eq!(s, vec![KinematicState { t_s: 0.0, z_m: 0.0, v_m_s: 0.0, a_m_s2: 0.0 }]);
    }

    #[test]
    fn half_speed_duration() {
        let p = plan(DEFAULT_SHUTTLE_DISTANCE_M, &limits(), Some(1.0)).unwrap();
        let expected = DEFAULT_SHUTTLE_DISTANCE_M / 1.0 + 1.0 / 30.0;
        assert!((p.duration() - expected).abs() < 1e-9);
        assert!((p.duration() - 1.196).abs() < 1e-3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            plan(2.0, &limits(), None),
            Err(MotionError::DistanceExceedsTravel { .. })
        ));
        assert!(matches!(plan(-0.1, &limits(), None), Err(MotionError::DistanceExceedsTravel { .. })));
        assert!(matches!(plan(1.0, &limits(), Some(3.0)), Err(MotionError::InvalidTarget(_))));
        assert!(matches!(plan(1.0, &limits(), Some(0.0)), Err(MotionError::InvalidTarget(_))));
        let bad = MotionLimits { a_max: 0.0, ..limits() };
        assert!(matches!(plan(1.0, &bad, None), Err(MotionError::InvalidLimits(_))));
    }

    #[test]
    fn reverse_moves_end_where_asked() {
        let p = plan_between(1.5, 0.3, &limits(), None).unwrap();
        assert!((p.end_z_m() - 0.3).abs() < 1e-12);
        let last = p.state_at(p.duration());
        assert!((last.z_m - 0.3).abs() < 1e-12);
        let mid = p.state_at(0.5 * p.duration());
        assert!(mid.v_m_s < 0.0);
    }

    #[test]
    fn sampled_end_point_matches_closed_form() {
        let p = plan(1.2, &limits(), None).unwrap();
        let s = p.sample_trajectory(1e-4);
        let last = s.last().unwrap();
        assert!((last.z_m - 1.2).abs() < 1e-6);
        assert_eq!(last.v_m_s.abs(), 0.0_f64.max(last.v_m_s.abs()));
        assert!(s.iter().all(|x| x.v_m_s.abs() <= 2.0 + 1e-12));
    }

    #[test]
    fn jitter_zero_sigma_is_identity() {
        let jm = JitterModel::gaussian(0.0, 7);
        assert_eq!(apply_jitter(0.648, &jm, 0), 0.648);
    }

    #[test]
    fn jitter_is_reproducible_per_seed_and_index() {
        let jm = JitterModel::gaussian(2.6e-3, 42);
        let a: Vec<f64> = (0..50).map(|k| apply_jitter(0.648, &jm, k)).collect();
        let b: Vec<f64> = (0..50).map(|k| apply_jitter(0.648, &jm, k)).collect();
        assert_eq!(a, b);
        let other = JitterModel::gaussian(2.6e-3, 43);
        assert_ne!(a[0], apply_jitter(0.648, &other, 0));
    }

    #[test]
    fn stationary_profile_sees_constant_field() {
        let map = FieldMap::canonical();
        let p = MotionProfile::stationary(0.9);
        let series = field_vs_time(&p, &map, 1e-3).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].1, map.field_at(0.9).unwrap());
    }

    #[test]
    fn trajectory_csv_header() {
        let p = plan(0.1, &limits(), None).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &p.sample_trajectory(0.05), None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_s,z_m,v_mps,a_mps2,B_T\n"));
    }
}
