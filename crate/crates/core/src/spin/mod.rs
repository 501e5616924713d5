//! NV–¹³C low-field hyperpolarization model.
//!
//! The electron is truncated to the mₛ = 0 and mₛ = −1 levels and coupled to
//! a single spin-½ ¹³C, giving a four-level system. Microwave sweeps are
//! simulated in the frame rotating with the instantaneous microwave
//! frequency; each traversal of an α–β level crossing is a Landau–Zener
//! event whose adiabaticity sets how much nuclear polarization is moved.
//!
//! Frequencies are in hertz (cycles per second) unless a name says otherwise.

mod hamiltonian;
mod larmor;
mod lz;
mod powder;
mod propagate;
mod thermal;

use serde::{Deserialize, Serialize};

pub use hamiltonian::{diabatic_levels, static_hamiltonian, static_larmor_splitting, DiabaticLevels};
pub use larmor::shifted_larmor;
pub use lz::{crossings, lz_composition, lz_probability, lz_probability_hz, Crossing};
pub use powder::{powder_average, write_sweep_csv, PowderEnsemble, PowderNode, PowderPoint, PowderResult};
pub use propagate::{propagate_sweep, sweep_unitary, SweepOutcome, NORM_TOLERANCE};
pub use thermal::{boltzmann_polarization, enhancement_to_equivalent_field, snr_field_scaling};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpinError {
    #[error("operating point within {guard_hz} Hz of the Δ − γₑB cos ϑ = 0 divergence")]
    NearDivergence { guard_hz: f64 },
    #[error("norm drift {drift:.3e} per sweep exceeds {tolerance:.1e}; reduce the step")]
    StepTooCoarse { drift: f64, tolerance: f64 },
    #[error("enhanced polarization leaves the linear regime (tanh argument {argument:.3})")]
    NonlinearRegime { argument: f64 },
    #[error("invalid spin parameters: {0}")]
    InvalidParameters(String),
}

/// Physical constants used by the model.
///
/// Gyromagnetic ratios are γ/2π. Defaults: free-electron-like NV value,
/// ¹³C from CODATA nuclear tables, NV ground-state zero-field splitting,
/// and exact SI values of h and k_B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpinConstants {
    pub gamma_e_hz_per_t: f64,
    pub gamma_n_hz_per_t: f64,
    pub delta_zfs_hz: f64,
    pub planck_j_s: f64,
    pub boltzmann_j_per_k: f64,
}

impl Default for SpinConstants {
    fn default() -> Self {
        Self {
            gamma_e_hz_per_t: 28.024e9,
            gamma_n_hz_per_t: 10.7084e6,
            delta_zfs_hz: 2.87e9,
            planck_j_s: 6.626_070_15e-34,
            boltzmann_j_per_k: 1.380_649e-23,
        }
    }
}

/// One NV center with a single hyperfine-coupled ¹³C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    /// Hyperfine coupling magnitude A (Hz).
    pub hyperfine_hz: f64,
    /// Angle ϑ between the N–V axis and the external field (rad).
    pub theta_rad: f64,
    /// Polarizing field (T).
    pub b_pol_t: f64,
}

impl SpinSystem {
    pub fn new(hyperfine_hz: f64, theta_rad: f64, b_pol_t: f64) -> Result<Self, SpinError> {
        let s = Self {
            hyperfine_hz,
            theta_rad,
            b_pol_t,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if !(0.0..=std::f64::consts::PI).contains(&self.theta_rad) {
            return Err(SpinError::InvalidParameters(format!(
                "theta {} outside [0, π]",
                self.theta_rad
            )));
        }
        if !(self.b_pol_t > 0.0) || !self.hyperfine_hz.is_finite() {
            return Err(SpinError::InvalidParameters("B_pol must be positive".into()));
        }
        Ok(())
    }

    pub fn with_theta(&self, theta_rad: f64) -> Self {
        Self { theta_rad, ..*self }
    }

    /// Bare nuclear Larmor frequency γₙB (Hz).
    pub fn larmor_hz(&self, c: &SpinConstants) -> f64 {
        c.gamma_n_hz_per_t * self.b_pol_t
    }

    /// True when the Larmor frequency does not exceed the hyperfine coupling.
    pub fn low_field(&self, c: &SpinConstants) -> bool {
        self.larmor_hz(c) <= self.hyperfine_hz.abs()
    }

    /// mₛ = 0 ↔ −1 transition frequency for this orientation (Hz).
    pub fn electron_resonance_hz(&self, c: &SpinConstants) -> f64 {
        c.delta_zfs_hz - c.gamma_e_hz_per_t * self.b_pol_t * self.theta_rad.cos()
    }
}

/// A linear microwave chirp repeated `n_sweeps` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub band_center_hz: f64,
    pub band_width_hz: f64,
    /// Signed chirp rate; positive sweeps upward in frequency.
    pub sweep_rate_hz_per_s: f64,
    /// Microwave Rabi frequency Ω on the bare electron transition (Hz).
    pub mw_rabi_hz: f64,
    pub n_sweeps: u32,
    /// Probability that the electron is reset to mₛ = 0 between sweeps.
    pub repolarization: f64,
    /// Optional cap on the integrator step (s).
    pub max_step_s: Option<f64>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            band_center_hz: 2.73e9,
            band_width_hz: 400e6,
            sweep_rate_hz_per_s: 3e11,
            mw_rabi_hz: 0.5e6,
            n_sweeps: 1,
            repolarization: 1.0,
            max_step_s: None,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.band_width_hz > 0.0) {
            return Err(SpinError::InvalidParameters("band width must be positive".into()));
        }
        if self.sweep_rate_hz_per_s == 0.0 || !self.sweep_rate_hz_per_s.is_finite() {
            return Err(SpinError::InvalidParameters("sweep rate must be non-zero".into()));
        }
        if !(self.mw_rabi_hz >= 0.0) {
            return Err(SpinError::InvalidParameters("Rabi frequency must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.repolarization) {
            return Err(SpinError::InvalidParameters("repolarization must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Start and end frequencies in sweep order.
    pub fn frequency_span(&self) -> (f64, f64) {
        let lo = self.band_center_hz - 0.5 * self.band_width_hz;
        let hi = self.band_center_hz + 0.5 * self.band_width_hz;
        if self.sweep_rate_hz_per_s > 0.0 {
            (lo, hi)
        } else {
            (hi, lo)
        }
    }

    pub fn sweep_duration_s(&self) -> f64 {
        self.band_width_hz / self.sweep_rate_hz_per_s.abs()
    }

    /// Band covering the crossings of one orientation with `margin_hz` either side.
    pub fn centered_on(sys: &SpinSystem, c: &SpinConstants, margin_hz: f64) -> Self {
        Self {
            band_center_hz: sys.electron_resonance_hz(c),
            band_width_hz: 2.0 * margin_hz,
            ..Self::default()
        }
    }
}
