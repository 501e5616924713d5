use super::{SpinConstants, SpinError, SpinSystem};

/// Half-width of the excluded band around Δ − γₑB cos ϑ = 0 (Hz).
pub const DIVERGENCE_GUARD_HZ: f64 = 1e6;

/// Hyperfine-shifted nuclear Larmor frequency in the mₛ = 0 manifold (Hz):
/// ω̃_L = ω_L + γₑB A sin ϑ / (Δ − γₑB cos ϑ).
pub fn shifted_larmor(sys: &SpinSystem, c: &SpinConstants) -> Result<f64, SpinError> {
    let wl = sys.larmor_hz(c);
    let denom = sys.electron_resonance_hz(c);
    if denom.abs() < DIVERGENCE_GUARD_HZ {
        return Err(SpinError::NearDivergence {
            guard_hz: DIVERGENCE_GUARD_HZ,
        });
    }
    let s = sys.theta_rad.sin();
    if s == 0.0 || sys.hyperfine_hz == 0.0 {
        return Ok(wl);
    }
    Ok(wl + c.gamma_e_hz_per_t * sys.b_pol_t * sys.hyperfine_hz * s / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn perpendicular_ten_millitesla_example() {
        let c = SpinConstants::default();
        let s = SpinSystem::new(1e6, FRAC_PI_2, 0.010).unwrap();
        assert!((s.larmor_hz(&c) - 107_084.0).abs() < 1e-6);
        // 0.28024 GHz · 1 MHz / 2.87 GHz
        let shift = 0.28024e9 * 1e6 / 2.87e9;
        let got = shifted_larmor(&s, &c).unwrap();
        assert!((got - (107_084.0 + shift)).abs() < 1e-6);
        assert!((got - 204.7e3).abs() < 0.1e3);
    }

    #[test]
    fn aligned_or_uncoupled_reduces_to_bare_larmor() {
        let c = SpinConstants::default();
        for &(a, th) in &[(5e6, 0.0), (0.0, 1.0), (0.0, FRAC_PI_2)] {
            let s = SpinSystem::new(a, th, 0.03).unwrap();
            assert_eq!(shifted_larmor(&s, &c).unwrap(), s.larmor_hz(&c));
        }
    }

    #[test]
    fn guard_band_is_enforced() {
        let c = SpinConstants::default();
        let b = c.delta_zfs_hz / c.gamma_e_hz_per_t;
        let s = SpinSystem::new(1e6, 0.0, b).unwrap();
        assert!(matches!(shifted_larmor(&s, &c), Err(SpinError::NearDivergence { .. })));
    }
}
