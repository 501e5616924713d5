use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2};

use super::{shifted_larmor, SpinConstants, SpinError, SpinSystem};

/// Laboratory-frame static Hamiltonian (Hz) of the truncated NV–¹³C pair.
///
/// Basis order is |0↑⟩, |0↓⟩, |−1↑⟩, |−1↓⟩ with the nuclear axis along B.
/// The transverse Zeeman term b = γₑB sin ϑ and the hyperfine term both
/// couple mₛ = 0 to mₛ = −1; their cross term at second order shifts the
/// nuclear splitting inside the mₛ = 0 manifold.
pub fn static_hamiltonian(sys: &SpinSystem, c: &SpinConstants) -> Matrix4<f64> {
    let (s, co) = sys.theta_rad.sin_cos();
    let d = c.delta_zfs_hz - c.gamma_e_hz_per_t * sys.b_pol_t * co;
    let b = c.gamma_e_hz_per_t * sys.b_pol_t * s;
    let wl = sys.larmor_hz(c);
    let a = sys.hyperfine_hz;
    let r2 = std::f64::consts::SQRT_2;

    let mut h = Matrix4::zeros();
    // Nuclear Zeeman −ω_L I_z in both manifolds.
    for e in 0..2 {
        h[(2 * e, 2 * e)] -= 0.5 * wl;
        h[(2 * e + 1, 2 * e + 1)] += 0.5 * wl;
    }
    h[(2, 2)] += d;
    h[(3, 3)] += d;
    // (b/√2)·X ⊗ 1 + (A/√2)·X ⊗ I_z
    let up = b / r2 + 0.5 * a / r2;
    let dn = b / r2 - 0.5 * a / r2;
    h[(0, 2)] = up;
    h[(2, 0)] = up;
    h[(1, 3)] = dn;
    h[(3, 1)] = dn;
    h
}

/// Nuclear splitting in the mₛ = 0 manifold from exact diagonalization (Hz).
///
/// The two eigenstates with the largest mₛ = 0 weight are selected, so the
/// result does not depend on the manifolds being energy-ordered.
pub fn static_larmor_splitting(sys: &SpinSystem, c: &SpinConstants) -> f64 {
    let eig = SymmetricEigen::new(static_hamiltonian(sys, c));
    let mut idx: Vec<(f64, f64)> = (0..4)
        .map(|k| {
            let v = eig.eigenvectors.column(k);
            (v[0] * v[0] + v[1] * v[1], eig.eigenvalues[k])
        })
        .collect();
    idx.sort_by(|a, b| b.0.total_cmp(&a.0));
    (idx[0].1 - idx[1].1).abs()
}

/// Nuclear eigenbases of the two electron manifolds in the rotating frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DiabaticLevels {
    /// Eigenvalues (Hz) and eigenvectors of H_α, the mₛ = 0 nuclear Hamiltonian.
    pub alpha: [(f64, Vector2<f64>); 2],
    /// Eigenvalues (Hz) and eigenvectors of H_β, the mₛ = −1 nuclear Hamiltonian.
    pub beta: [(f64, Vector2<f64>); 2],
    /// Electron resonance Δ − γₑB cos ϑ (Hz).
    pub resonance_hz: f64,
    pub h_alpha: Matrix2<f64>,
    pub h_beta: Matrix2<f64>,
}

fn eig2(m: Matrix2<f64>) -> [(f64, Vector2<f64>); 2] {
    let e = SymmetricEigen::new(m);
    let mut out = [0usize, 1].map(|k| {
        let mut v: Vector2<f64> = e.eigenvectors.column(k).into_owned();
        // Fix the sign so the larger component is positive.
        if v[0].abs() >= v[1].abs() && v[0] < 0.0 || v[1].abs() > v[0].abs() && v[1] < 0.0 {
            v = -v;
        }
        (e.eigenvalues[k], v)
    });
    // Order by ↑ weight so index 0 is the state closest to |↑⟩.
    out.sort_by(|a, b| (b.1[0] * b.1[0]).total_cmp(&(a.1[0] * a.1[0])));
    out
}

/// H_α = −(ω̃_L/2)σz and H_β = −(ω_L/2)σz − (A/2)(cos ϑ σz + sin ϑ σx).
pub fn diabatic_levels(sys: &SpinSystem, c: &SpinConstants) -> Result<DiabaticLevels, SpinError> {
    let wt = shifted_larmor(sys, c)?;
    let wl = sys.larmor_hz(c);
    let (s, co) = sys.theta_rad.sin_cos();
    let a = sys.hyperfine_hz;
    let h_alpha = Matrix2::new(-0.5 * wt, 0.0, 0.0, 0.5 * wt);
    let h_beta = Matrix2::new(-0.5 * wl - 0.5 * a * co, -0.5 * a * s, -0.5 * a * s, 0.5 * wl + 0.5 * a * co);
    Ok(DiabaticLevels {
        alpha: eig2(h_alpha),
        beta: eig2(h_beta),
        resonance_hz: sys.electron_resonance_hz(c),
        h_alpha,
        h_beta,
    })
}

impl DiabaticLevels {
    /// ⟨σz⟩ of a nuclear state vector.
    pub fn sigma_z(v: &Vector2<f64>) -> f64 {
        v[0] * v[0] - v[1] * v[1]
    }

    /// |⟨α_i|β_j⟩|.
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.alpha[i].1.dot(&self.beta[j].1).abs()
    }
}
