use super::{SpinConstants, SpinError};

/// Largest tanh argument treated as linear.
const LINEAR_LIMIT: f64 = 0.1;

fn thermal_argument(b_t: f64, temperature_k: f64, c: &SpinConstants) -> f64 {
    c.planck_j_s * c.gamma_n_hz_per_t * b_t / (2.0 * c.boltzmann_j_per_k * temperature_k)
}

/// ¹³C thermal polarization tanh(hγₙB / 2k_BT).
pub fn boltzmann_polarization(b_t: f64, temperature_k: f64, c: &SpinConstants) -> f64 {
    thermal_argument(b_t, temperature_k, c).tanh()
}

/// Field whose thermal polarization equals `epsilon` times that at `b_ref_t`.
pub fn enhancement_to_equivalent_field(
    epsilon: f64,
    b_ref_t: f64,
    temperature_k: f64,
    c: &SpinConstants,
) -> Result<f64, SpinError> {
    if !(epsilon > 0.0) || !(b_ref_t > 0.0) || !(temperature_k > 0.0) {
        return Err(SpinError::InvalidParameters(
            "enhancement, field and temperature must be positive".into(),
        ));
    }
    let b_eq = epsilon * b_ref_t;
    for b in [b_ref_t, b_eq] {
        let argument = thermal_argument(b, temperature_k, c);
        if argument > LINEAR_LIMIT {
            return Err(SpinError::NonlinearRegime { argument });
        }
    }
    Ok(b_eq)
}

/// NMR sensitivity gain (B2/B1)^{7/4} from detecting at `b2_t` instead of `b1_t`.
pub fn snr_field_scaling(b1_t: f64, b2_t: f64) -> f64 {
    (b2_t / b1_t).powf(1.75)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_field_is_unpolarized() {
        assert_eq!(boltzmann_polarization(0.0, 298.0, &SpinConstants::default()), 0.0);
    }

    #[test]
    fn enhancement_examples() {
        let c = SpinConstants::default();
        assert_eq!(enhancement_to_equivalent_field(1.0, 7.0, 298.0, &c).unwrap(), 7.0);
        assert_eq!(enhancement_to_equivalent_field(0.5, 7.0, 298.0, &c).unwrap(), 3.5);
        assert!(matches!(
            enhancement_to_equivalent_field(1e6, 7.0, 298.0, &c),
            Err(SpinError::NonlinearRegime { .. })
        ));
        assert!(enhancement_to_equivalent_field(0.0, 7.0, 298.0, &c).is_err());
    }

    #[test]
    fn snr_scaling_examples() {
        assert_eq!(snr_field_scaling(7.0, 7.0), 1.0);
        assert!((snr_field_scaling(1.0, 2.0) - 3.363_585_661).abs() < 1e-8);
        let r = snr_field_scaling(0.008, 7.0);
        assert!((r / 1.4e5 - 1.0).abs() < 0.02, "{r}");
    }

    proptest! {
        #[test]
        fn boltzmann_is_odd_and_increasing(b in 0.0f64..50.0, db in 1e-3f64..5.0, t in 1.0f64..400.0) {
            let c = SpinConstants::default();
            let p = boltzmann_polarization(b, t, &c);
            prop_assert_eq!(boltzmann_polarization(-b, t, &c), -p);
            prop_assert!(boltzmann_polarization(b + db, t, &c) > p);
        }

        #[test]
        fn boltzmann_is_linear_at_low_field(b in 1e-6f64..1e-2) {
            let c = SpinConstants::default();
            let r = boltzmann_polarization(2.0 * b, 298.0, &c) / boltzmann_polarization(b, 298.0, &c);
            prop_assert!((r - 2.0).abs() < 1e-9);
        }
    }
}
