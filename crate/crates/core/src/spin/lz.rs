use std::f64::consts::PI;

use super::{diabatic_levels, DiabaticLevels, SpinConstants, SpinError, SpinSystem, SweepParams};

/// Diabatic passage probability exp(−2π g² / |r|).
///
/// `gap` is the half-splitting at the crossing and `rate` the rate of change
/// of the diabatic energy difference, both in angular units (rad/s, rad/s²).
pub fn lz_probability(gap: f64, rate: f64) -> f64 {
    if gap == 0.0 {
        return 1.0;
    }
    (-2.0 * PI * gap * gap / rate.abs()).exp()
}

/// [`lz_probability`] with the gap in Hz and the rate in Hz/s.
pub fn lz_probability_hz(gap_hz: f64, rate_hz_per_s: f64) -> f64 {
    lz_probability(2.0 * PI * gap_hz, 2.0 * PI * rate_hz_per_s)
}

/// One α_i ↔ β_j crossing met by the microwave sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub frequency_hz: f64,
    pub alpha: usize,
    pub beta: usize,
    /// Half-splitting (Ω/2)|⟨α_i|β_j⟩| in Hz.
    pub gap_hz: f64,
    /// Diabatic passage probability.
    pub probability: f64,
}

/// Crossings inside the swept band, in the order the sweep meets them.
pub fn crossings(
    sys: &SpinSystem,
    sweep: &SweepParams,
    c: &SpinConstants,
) -> Result<Vec<Crossing>, SpinError> {
    let lv = diabatic_levels(sys, c)?;
    Ok(crossings_for(&lv, sweep))
}

fn crossings_for(lv: &DiabaticLevels, sweep: &SweepParams) -> Vec<Crossing> {
    let (f0, f1) = sweep.frequency_span();
    let (lo, hi) = (f0.min(f1), f0.max(f1));
    let mut out = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            let f = lv.resonance_hz + lv.beta[j].0 - lv.alpha[i].0;
            if f < lo || f > hi {
                continue;
            }
            let gap_hz = 0.5 * sweep.mw_rabi_hz * lv.overlap(i, j);
            out.push(Crossing {
                frequency_hz: f,
                alpha: i,
                beta: j,
                gap_hz,
                probability: lz_probability_hz(gap_hz, sweep.sweep_rate_hz_per_s),
            });
        }
    }
    if sweep.sweep_rate_hz_per_s > 0.0 {
        out.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    } else {
        out.sort_by(|a, b| b.frequency_hz.total_cmp(&a.frequency_hz));
    }
    out
}

/// Nuclear polarization predicted by treating every crossing as an
/// independent Landau–Zener event acting on diabatic populations.
///
/// Starts from the unpolarized mₛ = 0 state; between sweeps β populations
/// are returned to the α manifold by projection onto the α basis.
pub fn lz_composition(
    sys: &SpinSystem,
    sweep: &SweepParams,
    c: &SpinConstants,
) -> Result<f64, SpinError> {
    sweep.validate()?;
    let lv = diabatic_levels(sys, c)?;
    let xs = crossings_for(&lv, sweep);
    // Populations of α0, α1, β0, β1.
    let mut p = [0.5, 0.5, 0.0, 0.0];
    let sz = [
        DiabaticLevels::sigma_z(&lv.alpha[0].1),
        DiabaticLevels::sigma_z(&lv.alpha[1].1),
        DiabaticLevels::sigma_z(&lv.beta[0].1),
        DiabaticLevels::sigma_z(&lv.beta[1].1),
    ];
    let polarization = |p: &[f64; 4]| p.iter().zip(&sz).map(|(a, b)| a * b).sum::<f64>();
    let mut last = 0.0;
    for sweep_idx in 0..sweep.n_sweeps {
        if sweep_idx > 0 {
            let f = sweep.repolarization;
            let mut next = p;
            for j in 0..2 {
                let moved = f * p[2 + j];
                next[2 + j] -= moved;
                for i in 0..2 {
                    next[i] += moved * lv.overlap(i, j).powi(2);
                }
            }
            p = next;
        }
        for x in &xs {
            let (a, b) = (p[x.alpha], p[2 + x.beta]);
            let d = x.probability;
            p[x.alpha] = d * a + (1.0 - d) * b;
            p[2 + x.beta] = d * b + (1.0 - d) * a;
        }
        last = polarization(&p);
    }
    Ok(last)
}
