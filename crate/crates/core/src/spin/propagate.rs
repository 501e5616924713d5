use std::f64::consts::PI;

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;

use super::{diabatic_levels, DiabaticLevels, SpinConstants, SpinError, SpinSystem, SweepParams};

type CMatrix4 = Matrix4<Complex64>;

/// Largest tolerated ‖U†U − I‖ (max entry) for one sweep.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Drive phase accumulated per step, (Ω/2)·2π·dt.
const PHASE_PER_STEP: f64 = 1e-2;
const MIN_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Nuclear polarization ⟨σz⟩ after the last sweep.
    pub polarization: f64,
    /// Polarization after each sweep.
    pub per_sweep: Vec<f64>,
    /// ‖U†U − I‖ of the single-sweep propagator.
    pub norm_drift: f64,
    pub steps_per_sweep: usize,
    pub step_s: f64,
}

/// Rotating-frame Hamiltonian (Hz) at microwave detuning δ = resonance − f:
/// |0⟩⟨0|⊗H_α + |−1⟩⟨−1|⊗(H_β + δ) + (Ω/2)·X⊗1.
fn rotating_hamiltonian(base: &Matrix4<f64>, detuning_hz: f64) -> Matrix4<f64> {
    let mut h = *base;
    h[(2, 2)] += detuning_hz;
    h[(3, 3)] += detuning_hz;
    h
}

fn step_exponential(h: Matrix4<f64>, dt: f64) -> CMatrix4 {
    let eig = SymmetricEigen::new(h);
    let v = eig.eigenvectors;
    let phases: [Complex64; 4] =
        std::array::from_fn(|m| Complex64::from_polar(1.0, -2.0 * PI * eig.eigenvalues[m] * dt));
    CMatrix4::from_fn(|r, c| {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..4 {
            acc += phases[m] * (v[(r, m)] * v[(c, m)]);
        }
        acc
    })
}

/// Rotating-frame Hamiltonian at zero detuning.
fn driven_base(lv: &DiabaticLevels, sweep: &SweepParams) -> Matrix4<f64> {
    let half_rabi = 0.5 * sweep.mw_rabi_hz;
    let mut base = Matrix4::<f64>::zeros();
    base.fixed_view_mut::<2, 2>(0, 0).copy_from(&lv.h_alpha);
    base.fixed_view_mut::<2, 2>(2, 2).copy_from(&lv.h_beta);
    for k in 0..2 {
        base[(k, k + 2)] = half_rabi;
        base[(k + 2, k)] = half_rabi;
    }
    base
}

fn step_count(sweep: &SweepParams) -> usize {
    let duration = sweep.sweep_duration_s();
    let mut dt = if sweep.mw_rabi_hz > 0.0 {
        PHASE_PER_STEP / (PI * sweep.mw_rabi_hz)
    } else {
        f64::INFINITY
    };
    if let Some(cap) = sweep.max_step_s {
        dt = dt.min(cap);
    }
    ((duration / dt).ceil() as usize).max(MIN_STEPS)
}

/// Propagator for one sweep via the exponential midpoint rule.
///
/// Each step exponentiates the Hamiltonian at the step midpoint exactly, so
/// the product is unitary up to rounding; a linear chirp makes the midpoint
/// sample exact for the diagonal part.
pub fn sweep_unitary(
    sys: &SpinSystem,
    sweep: &SweepParams,
    c: &SpinConstants,
) -> Result<(Matrix4<Complex64>, usize, f64), SpinError> {
    sweep.validate()?;
    let lv = diabatic_levels(sys, c)?;
    let base = driven_base(&lv, sweep);

    let n = step_count(sweep);
    let dt = sweep.sweep_duration_s() / n as f64;
    let (f_start, _) = sweep.frequency_span();
    let offset = lv.resonance_hz - f_start;
    let rate = sweep.sweep_rate_hz_per_s;

    let mut u = CMatrix4::identity();
    for k in 0..n {
        let t_mid = (k as f64 + 0.5) * dt;
        let h = rotating_hamiltonian(&base, offset - rate * t_mid);
        u = step_exponential(h, dt) * u;
    }
    Ok((u, n, dt))
}

fn norm_drift(u: &CMatrix4) -> f64 {
    let g = u.adjoint() * u - CMatrix4::identity();
    g.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn nuclear_polarization(rho: &CMatrix4) -> f64 {
    (rho[(0, 0)] - rho[(1, 1)] + rho[(2, 2)] - rho[(3, 3)]).re
}

/// Eigenbasis of the undriven rotating-frame Hamiltonian, block diagonal in
/// the electron manifolds.
fn manifold_basis(lv: &DiabaticLevels) -> Matrix4<f64> {
    let mut w = Matrix4::zeros();
    for k in 0..2 {
        w.fixed_view_mut::<2, 1>(0, k).copy_from(&lv.alpha[k].1);
        w.fixed_view_mut::<2, 1>(2, 2 + k).copy_from(&lv.beta[k].1);
    }
    w
}

/// All 24 orderings of four indices.
fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    if (0..4).all(|i| (0..i).all(|j| p[i] != p[j])) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Map from bare manifold eigenstates to the driven eigenstates they
/// adiabatically connect to at detuning δ: columns are dressed states,
/// ordered and phased to match the columns of `bare`.
fn dressed_basis(base: &Matrix4<f64>, detuning_hz: f64, bare: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = SymmetricEigen::new(rotating_hamiltonian(base, detuning_hz));
    let ov = bare.transpose() * eig.eigenvectors;
    let best = permutations4()
        .into_iter()
        .max_by(|p, q| {
            let score = |p: &[usize; 4]| (0..4).map(|k| ov[(k, p[k])].abs().ln()).sum::<f64>();
            score(p).total_cmp(&score(q))
        })
        .expect("non-empty");
    let mut d = Matrix4::zeros();
    for k in 0..4 {
        let sign = if ov[(k, best[k])] < 0.0 { -1.0 } else { 1.0 };
        d.set_column(k, &(eig.eigenvectors.column(best[k]) * sign));
    }
    d
}

/// Changes basis with a real orthogonal map: M ρ Mᵀ.
fn conjugate(rho: &CMatrix4, m: &Matrix4<f64>) -> CMatrix4 {
    let mc = m.map(Complex64::from);
    mc * rho * mc.transpose()
}

/// Keeps only the populations of `basis` states. Coherences between
/// manifold eigenstates precess at the level splittings once the crossings
/// are passed, so an ensemble measurement sees only the populations.
fn dephase(rho: &CMatrix4, basis: &Matrix4<f64>) -> CMatrix4 {
    let in_basis = conjugate(rho, &basis.transpose());
    let diag = CMatrix4::from_diagonal(&in_basis.diagonal());
    conjugate(&diag, basis)
}

/// Traces out the electron and re-prepares mₛ = 0 with probability `fidelity`.
fn repolarize(rho: &CMatrix4, fidelity: f64) -> CMatrix4 {
    let mut reset = CMatrix4::zeros();
    for a in 0..2 {
        for b in 0..2 {
            reset[(a, b)] = rho[(a, b)] + rho[(a + 2, b + 2)];
        }
    }
    reset * Complex64::from(fidelity) + rho * Complex64::from(1.0 - fidelity)
}

/// Nuclear polarization after `n_sweeps` chirps starting from the electron
/// in mₛ = 0 and an unpolarized nucleus.
///
/// The drive is switched on and off adiabatically at the band edges: each
/// sweep starts in the driven eigenstates connected to the bare manifold
/// eigenstates and ends by projecting back onto them. Coherences between
/// manifold eigenstates are dropped at the end of every sweep. Together
/// these make the result insensitive to where the band edges sit once the
/// crossings are well inside it.
pub fn propagate_sweep(
    sys: &SpinSystem,
    sweep: &SweepParams,
    c: &SpinConstants,
) -> Result<SweepOutcome, SpinError> {
    let (u, steps, dt) = sweep_unitary(sys, sweep, c)?;
    let lv = diabatic_levels(sys, c)?;
    let drift = norm_drift(&u);
    if !(drift <= NORM_TOLERANCE) {
        return Err(SpinError::StepTooCoarse {
            drift,
            tolerance: NORM_TOLERANCE,
        });
    }
    let mut rho = CMatrix4::zeros();
    rho[(0, 0)] = Complex64::from(0.5);
    rho[(1, 1)] = Complex64::from(0.5);
    let ud = u.adjoint();
    let bare = manifold_basis(&lv);
    let base = driven_base(&lv, sweep);
    let (f_start, f_end) = sweep.frequency_span();
    let on = dressed_basis(&base, lv.resonance_hz - f_start, &bare) * bare.transpose();
    let off = bare * dressed_basis(&base, lv.resonance_hz - f_end, &bare).transpose();
    let mut per_sweep = Vec::with_capacity(sweep.n_sweeps as usize);
    for k in 0..sweep.n_sweeps {
        if k > 0 {
            rho = repolarize(&rho, sweep.repolarization);
        }
        let driven = u * conjugate(&dephase(&rho, &bare), &on) * ud;
        rho = dephase(&conjugate(&driven, &off), &bare);
        per_sweep.push(nuclear_polarization(&rho));
    }
    Ok(SweepOutcome {
        polarization: per_sweep.last().copied().unwrap_or(0.0),
        per_sweep,
        norm_drift: drift,
        steps_per_sweep: steps,
        step_s: dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::lz_composition;

    fn test_system() -> SpinSystem {
        SpinSystem::new(20e6, 60f64.to_radians(), 0.030).unwrap()
    }

    /// Band covering only the two β₀ crossings with 1 MHz padding.
    fn two_crossing_sweep(sys: &SpinSystem, c: &SpinConstants, rate: f64) -> SweepParams {
        let lv = diabatic_levels(sys, c).unwrap();
        let f: Vec<f64> = (0..2).map(|i| lv.resonance_hz + lv.beta[0].0 - lv.alpha[i].0).collect();
        let (lo, hi) = (f[0].min(f[1]) - 1e6, f[0].max(f[1]) + 1e6);
        SweepParams {
            band_center_hz: 0.5 * (lo + hi),
            band_width_hz: hi - lo,
            sweep_rate_hz_per_s: rate,
            mw_rabi_hz: 5e3,
            n_sweeps: 1,
            ..SweepParams::default()
        }
    }

    #[test]
    fn unitary_within_tolerance() {
        let c = SpinConstants::default();
        let sys = test_system();
        let sweep = two_crossing_sweep(&sys, &c, 6.25e8);
        let out = propagate_sweep(&sys, &sweep, &c).unwrap();
        assert!(out.norm_drift < NORM_TOLERANCE, "{}", out.norm_drift);
        assert!(out.polarization.abs() <= 1.0);
    }

    #[test]
    fn agrees_with_crossing_composition() {
        let c = SpinConstants::default();
        let sys = test_system();
        let sweep = two_crossing_sweep(&sys, &c, 6.25e8);
        let full = propagate_sweep(&sys, &sweep, &c).unwrap().polarization;
        let lz = lz_composition(&sys, &sweep, &c).unwrap();
        assert!((full - lz).abs() < 1e-3, "full {full} lz {lz}");
        assert!(lz.abs() > 1e-2);
    }

    #[test]
    fn fast_sweep_leaves_nucleus_unpolarized() {
        let c = SpinConstants::default();
        let sys = SpinSystem::new(1e6, 1.0, 0.01).unwrap();
        let sweep = SweepParams {
            sweep_rate_hz_per_s: 1e17,
            ..SweepParams::default()
        };
        let p = propagate_sweep(&sys, &sweep, &c).unwrap().polarization;
        assert!(p.abs() < 1e-4, "{p}");
    }

    #[test]
    fn repolarization_is_trace_preserving() {
        let mut rho = CMatrix4::zeros();
        rho[(0, 0)] = Complex64::from(0.1);
        rho[(3, 3)] = Complex64::from(0.6);
        rho[(2, 2)] = Complex64::from(0.3);
        rho[(1, 2)] = Complex64::new(0.05, 0.01);
        rho[(2, 1)] = Complex64::new(0.05, -0.01);
        for f in [0.0, 0.4, 1.0] {
            let r = repolarize(&rho, f);
            assert!((r.trace() - Complex64::from(1.0)).norm() < 1e-15);
            assert!((nuclear_polarization(&r) - nuclear_polarization(&rho)).abs() < 1e-15);
        }
        let full = repolarize(&rho, 1.0);
        assert_eq!(full[(2, 2)], Complex64::from(0.0));
    }

    #[test]
    fn dephasing_keeps_populations_and_trace() {
        let c = SpinConstants::default();
        let sys = SpinSystem::new(1e6, 1.1, 0.01).unwrap();
        let basis = manifold_basis(&diabatic_levels(&sys, &c).unwrap());
        assert!((basis.transpose() * basis - Matrix4::identity()).amax() < 1e-14);
        let mut rho = CMatrix4::from_element(Complex64::new(0.05, 0.0));
        for k in 0..4 {
            rho[(k, k)] = Complex64::from(0.25);
        }
        let d = dephase(&rho, &basis);
        assert!((d.trace() - Complex64::from(1.0)).norm() < 1e-14);
        assert!(norm_drift(&CMatrix4::identity()) == 0.0);
        assert!((dephase(&d, &basis) - d).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn bit_reproducible() {
        let c = SpinConstants::default();
        let sys = SpinSystem::new(1e6, 0.7, 0.01).unwrap();
        let sweep = SweepParams {
            band_width_hz: 40e6,
            band_center_hz: sys.electron_resonance_hz(&c),
            ..SweepParams::default()
        };
        let a = propagate_sweep(&sys, &sweep, &c).unwrap();
        let b = propagate_sweep(&sys, &sweep, &c).unwrap();
        assert_eq!(a, b);
        assert!(a.polarization != 0.0);
    }
}
