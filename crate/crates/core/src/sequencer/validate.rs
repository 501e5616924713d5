use serde::{Deserialize, Serialize};

use super::{ChannelId, Event, Timeline};
use crate::fieldmap::FieldMap;

/// Slack for comparing times built from sums of floats.
const TIME_EPS: f64 = 1e-12;
/// Spacing of the position checks inside an optical event.
const POSITION_STEP_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    AcquireDuringMotion,
    OpticalOutsideShield,
    AcquireBeforeCompletion,
    NegativeDuration,
    Causality,
    ValveLatencyExceeded,
    EventsUnordered,
    UnknownDependency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub event_ids: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, event_ids: Vec<usize>, detail: String) {
        self.violations.push(Violation {
            kind,
            event_ids,
            detail,
        });
    }
}

fn overlaps(a: &Event, b: &Event) -> bool {
    a.effective_start_s() < b.effective_end_s() - TIME_EPS
        && b.effective_start_s() < a.effective_end_s() - TIME_EPS
}

/// Checks every timeline invariant and lists the offending events.
///
/// Positions come from the actuator events' profiles; the low-field region
/// is wherever `map` gives B ≤ the timeline's shield threshold.
pub fn validate(tl: &Timeline, map: &FieldMap) -> ValidationReport {
    let mut r = ValidationReport::default();

    for w in tl.events.windows(2) {
        if w[1].t_start_s < w[0].t_start_s {
            r.push(
                ViolationKind::EventsUnordered,
                vec![w[0].id, w[1].id],
                format!("{} starts before {}", w[1].label, w[0].label),
            );
        }
    }

    for e in &tl.events {
        if !(e.duration_s >= 0.0) {
            r.push(ViolationKind::NegativeDuration, vec![e.id], format!("{} has duration {}", e.label, e.duration_s));
        }
        if e.channel.is_valve() && e.latency_s > tl.max_valve_latency_s + TIME_EPS {
            r.push(
                ViolationKind::ValveLatencyExceeded,
                vec![e.id],
                format!("{} latency {} s > {} s", e.label, e.latency_s, tl.max_valve_latency_s),
            );
        }
        if let Some(dep) = e.after {
            match tl.event(dep) {
                None => r.push(ViolationKind::UnknownDependency, vec![e.id], format!("{} waits for missing event {dep}", e.label)),
                Some(d) if e.effective_start_s() < d.effective_end_s() - TIME_EPS => r.push(
                    ViolationKind::Causality,
                    vec![d.id, e.id],
                    format!("{} starts before {} ends", e.label, d.label),
                ),
                Some(_) => {}
            }
        }
    }

    let motions: Vec<&Event> = tl.by_channel(ChannelId::ActuatorMotion).collect();
    let completions: Vec<&Event> = tl.by_channel(ChannelId::CompletionPulse).collect();
    for acq in tl.by_channel(ChannelId::NmrAcquire) {
        for m in &motions {
            if overlaps(acq, m) {
                r.push(
                    ViolationKind::AcquireDuringMotion,
                    vec![m.id, acq.id],
                    format!("{} overlaps {}", acq.label, m.label),
                );
            }
        }
        // The completion pulse that should gate this acquisition is the
        // latest one issued before it, or the first one if none precede it.
        let gate = completions
            .iter()
            .filter(|c| c.t_start_s <= acq.t_start_s)
            .last()
            .or(completions.first());
        match gate {
            Some(c) if acq.effective_start_s() <= c.effective_end_s() + TIME_EPS => r.push(
                ViolationKind::AcquireBeforeCompletion,
                vec![c.id, acq.id],
                format!(
                    "{} starts at {:.6} s, completion ends at {:.6} s",
                    acq.label,
                    acq.effective_start_s(),
                    c.effective_end_s()
                ),
            ),
            None => r.push(ViolationKind::AcquireBeforeCompletion, vec![acq.id], "no completion pulse".into()),
            _ => {}
        }
    }

    for e in tl.events.iter().filter(|e| e.channel.is_optical()) {
        let (t0, t1) = (e.effective_start_s(), e.effective_end_s());
        let mut times: Vec<f64> = vec![t0, t1];
        for m in &motions {
            let (m0, m1) = (m.effective_start_s(), m.effective_end_s());
            if m1 > t0 && m0 < t1 {
                let (a, b) = (m0.max(t0), m1.min(t1));
                let n = ((b - a) / POSITION_STEP_S).ceil() as usize;
                times.extend((0..=n).map(|k| a + (b - a) * k as f64 / n.max(1) as f64));
            }
        }
        let worst = times
            .iter()
            .map(|&t| map.sample(tl.position_at(t)).map(|s| s.field_t).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        if worst > tl.shield_field_t {
            r.push(
                ViolationKind::OpticalOutsideShield,
                vec![e.id],
                format!("{} sees up to {:.4} T (limit {} T)", e.label, worst, tl.shield_field_t),
            );
        }
    }
    r
}
