//! Parametric on-axis field shapes.

use serde::{Deserialize, Serialize};

use super::FieldMapError;

/// On-axis field of a uniformly wound solenoid of finite length, normalized
/// so the value at the magnet center equals `center_field_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolenoidParams {
    pub center_field_t: f64,
    pub half_length_m: f64,
    pub radius_m: f64,
}

impl SolenoidParams {
    fn shape(&self, z: f64) -> f64 {
        let (l, r) = (self.half_length_m, self.radius_m);
        let a = z + l;
        let b = z - l;
        a / (a * a + r * r).sqrt() - b / (b * b + r * r).sqrt()
    }

    fn shape_derivative(&self, z: f64) -> f64 {
        let (l, r) = (self.half_length_m, self.radius_m);
        let r2 = r * r;
        let a = z + l;
        let b = z - l;
        r2 / (a * a + r2).powf(1.5) - r2 / (b * b + r2).powf(1.5)
    }

    pub fn field(&self, z: f64) -> f64 {
        self.center_field_t * self.shape(z) / self.shape(0.0)
    }

    pub fn gradient(&self, z: f64) -> f64 {
        self.center_field_t * self.shape_derivative(z) / self.shape(0.0)
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson) of ln B(z).
///
/// Interpolating the logarithm keeps the field strictly positive between
/// knots while preserving monotonicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineKnots", into = "SplineKnots")]
pub struct MonotoneSpline {
    z: Vec<f64>,
    ln_b: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineKnots {
    /// `(z_m, field_T)` pairs ordered by position.
    pub knots: Vec<(f64, f64)>,
}

impl TryFrom<SplineKnots> for MonotoneSpline {
    type Error = FieldMapError;
    fn try_from(k: SplineKnots) -> Result<Self, Self::Error> {
        MonotoneSpline::new(&k.knots)
    }
}

impl From<MonotoneSpline> for SplineKnots {
    fn from(s: MonotoneSpline) -> Self {
        SplineKnots { knots: s.knots() }
    }
}

impl MonotoneSpline {
    /// Builds the interpolant. Knots must have strictly increasing positions
    /// and strictly decreasing positive fields.
    pub fn new(knots: &[(f64, f64)]) -> Result<Self, FieldMapError> {
        if knots.len() < 2 {
            return Err(FieldMapError::NonMonotonicModel(
                "a spline needs at least two knots".into(),
            ));
        }
        for w in knots.windows(2) {
            let ((z0, b0), (z1, b1)) = (w[0], w[1]);
            if !(z1 > z0) {
                return Err(FieldMapError::NonMonotonicModel(format!(
                    "knot positions not strictly increasing at z = {z0}"
                )));
            }
            if !(b1 < b0) {
                return Err(FieldMapError::NonMonotonicModel(format!(
                    "knot fields not strictly decreasing between z = {z0} and z = {z1}"
                )));
            }
        }
        if knots.iter().any(|&(z, b)| !z.is_finite() || !(b > 0.0) || !b.is_finite()) {
            return Err(FieldMapError::NonMonotonicModel(
                "knot fields must be finite and positive".into(),
            ));
        }
        let z: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let ln_b: Vec<f64> = knots.iter().map(|k| k.1.ln()).collect();
        let slopes = fritsch_carlson_slopes(&z, &ln_b);
        Ok(Self { z, ln_b, slopes })
    }

    pub fn knots(&self) -> Vec<(f64, f64)> {
        self.z.iter().zip(&self.ln_b).map(|(&z, &y)| (z, y.exp())).collect()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.z[0], *self.z.last().unwrap())
    }

    fn locate(&self, z: f64) -> usize {
        let n = self.z.len();
        match self.z.binary_search_by(|k| k.total_cmp(&z)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Returns (ln B, d ln B / dz).
    fn eval_log(&self, z: f64) -> (f64, f64) {
        let i = self.locate(z);
        let h = self.z[i + 1] - self.z[i];
        let t = (z - self.z[i]) / h;
        let (y0, y1) = (self.ln_b[i], self.ln_b[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let y = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        let dy = (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / h;
        (y, dy)
    }

    pub fn field(&self, z: f64) -> f64 {
        self.eval_log(z).0.exp()
    }

    pub fn gradient(&self, z: f64) -> f64 {
        let (y, dy) = self.eval_log(z);
        y.exp() * dy
    }
}

fn fritsch_carlson_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let secants: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    if n == 2 {
        return vec![secants[0]; 2];
    }
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        let (d0, d1) = (secants[i - 1], secants[i]);
        if d0 * d1 <= 0.0 {
            m[i] = 0.0;
        } else {
            // weighted harmonic mean
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            m[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
    }
    m[0] = end_slope(x[1] - x[0], x[2] - x[1], secants[0], secants[1]);
    m[n - 1] = end_slope(
        x[n - 1] - x[n - 2],
        x[n - 2] - x[n - 3],
        secants[n - 2],
        secants[n - 3],
    );
    m
}

/// Three-point end slope with the usual shape-preserving corrections.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
