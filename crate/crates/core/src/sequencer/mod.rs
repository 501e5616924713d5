//! Trigger timeline for field-cycling experiments.
//!
//! A timeline is a list of channel events with nominal start times measured
//! from the first pulse-generator edge. Each event may name the event whose
//! end it waits for; simulation pushes timing noise on the actuator through
//! those dependencies.

mod simulate;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fieldmap::{FieldMap, FieldMapError};
use crate::motion::{self, MotionLimits, MotionProfile, DEFAULT_SHUTTLE_DISTANCE_M};

pub use simulate::{simulate, simulate_run, write_log_csv, EventLog, LogMetadata, LogRow};
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    PulseGen,
    ServoTrigger,
    ActuatorMotion,
    CompletionPulse,
    NmrAcquire,
    Laser,
    MwSweep,
    CryoFillValve,
    CryoEjectValve,
}

impl ChannelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelId::PulseGen => "pulse_gen",
            ChannelId::ServoTrigger => "servo_trigger",
            ChannelId::ActuatorMotion => "actuator_motion",
            ChannelId::CompletionPulse => "completion_pulse",
            ChannelId::NmrAcquire => "nmr_acquire",
            ChannelId::Laser => "laser",
            ChannelId::MwSweep => "mw_sweep",
            ChannelId::CryoFillValve => "cryo_fill_valve",
            ChannelId::CryoEjectValve => "cryo_eject_valve",
        }
    }

    pub fn is_optical(&self) -> bool {
        matches!(self, ChannelId::Laser | ChannelId::MwSweep)
    }

    pub fn is_valve(&self) -> bool {
        matches!(self, ChannelId::CryoFillValve | ChannelId::CryoEjectValve)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error("invalid sequence spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Field(#[from] FieldMapError),
}

/// Fixed delays of the level-shifting and switching stages between the
/// pulse generator and the servo trigger input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerChain {
    pub inverter_s: f64,
    pub switch_s: f64,
    pub divider_s: f64,
}

impl TriggerChain {
    pub fn total_s(&self) -> f64 {
        self.inverter_s + self.switch_s + self.divider_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    None,
    MwSweep { band_center_hz: f64, band_width_hz: f64 },
    Motion { profile: MotionProfile },
    Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: usize,
    pub channel: ChannelId,
    pub label: String,
    /// Commanded start, before the channel latency.
    pub t_start_s: f64,
    pub latency_s: f64,
    pub duration_s: f64,
    /// Event whose end this one waits for.
    pub after: Option<usize>,
    pub payload: Payload,
}

impl Event {
    /// Start once the channel latency has elapsed.
    pub fn effective_start_s(&self) -> f64 {
        self.t_start_s + self.latency_s
    }

    pub fn effective_end_s(&self) -> f64 {
        self.effective_start_s() + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Ordered by `t_start_s`; ids are stable indices assigned at build time.
    pub events: Vec<Event>,
    /// Sample position before the first move.
    pub start_z_m: f64,
    /// Upper field bound of the low-field region (T).
    pub shield_field_t: f64,
    pub chain_latency_s: f64,
    pub max_valve_latency_s: f64,
}

impl Timeline {
    pub fn event(&self, id: usize) -> Option<&Event> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn by_channel(&self, ch: ChannelId) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.channel == ch)
    }

    pub fn by_label(&self, label: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.label == label)
    }

    /// Sample position at time `t` following the actuator events.
    pub fn position_at(&self, t: f64) -> f64 {
        let mut z = self.start_z_m;
        for e in self.by_channel(ChannelId::ActuatorMotion) {
            let Payload::Motion { profile } = &e.payload else { continue };
            let t0 = e.effective_start_s();
            if t < t0 {
                return z;
            }
            z = profile.position_at(t - t0);
        }
        z
    }

    /// Re-sorts events by nominal start, keeping id order for ties.
    pub fn sort(&mut self) {
        self.events.sort_by(|a, b| a.t_start_s.total_cmp(&b.t_start_s).then(a.id.cmp(&b.id)));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuttleSpec {
    /// Field at the polarization position (T).
    pub from_field_t: f64,
    /// Travel toward the magnet center (m).
    pub distance_m: f64,
    pub limits: MotionLimits,
    pub v_target: Option<f64>,
}

impl Default for ShuttleSpec {
    fn default() -> Self {
        Self {
            from_field_t: 0.008,
            distance_m: DEFAULT_SHUTTLE_DISTANCE_M,
            limits: MotionLimits::default(),
            v_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CryoSpec {
    pub eject_s: f64,
    pub valve_latency_s: f64,
    /// Delay from the start of the eject jet to a frozen sample.
    pub cold_delay_s: f64,
    pub refill_s: f64,
}

impl Default for CryoSpec {
    fn default() -> Self {
        Self {
            eject_s: 1.0,
            valve_latency_s: 1e-3,
            cold_delay_s: 3.5,
            refill_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MwBand {
    pub band_center_hz: f64,
    pub band_width_hz: f64,
}

impl Default for MwBand {
    fn default() -> Self {
        Self {
            band_center_hz: 2.73e9,
            band_width_hz: 400e6,
        }
    }
}

/// Parameters of the canonical polarize → shuttle → detect sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceSpec {
    pub t_pol_s: f64,
    pub laser: bool,
    pub mw: Option<MwBand>,
    pub trigger_pulse_s: f64,
    pub completion_pulse_s: f64,
    /// Gap between the end of the completion pulse and acquisition.
    pub acquire_delay_s: f64,
    pub acquire_s: f64,
    pub latencies: BTreeMap<ChannelId, f64>,
    pub chain: TriggerChain,
    pub shuttle: ShuttleSpec,
    pub cryo: Option<CryoSpec>,
    pub shield_field_t: f64,
    pub max_valve_latency_s: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            t_pol_s: 40.0,
            laser: true,
            mw: Some(MwBand::default()),
            trigger_pulse_s: 0.010,
            completion_pulse_s: 0.010,
            acquire_delay_s: 1e-3,
            acquire_s: 0.1,
            latencies: BTreeMap::new(),
            chain: TriggerChain::default(),
            shuttle: ShuttleSpec::default(),
            cryo: None,
            shield_field_t: 0.030,
            max_valve_latency_s: 1e-3,
        }
    }
}

impl SequenceSpec {
    fn latency(&self, ch: ChannelId) -> f64 {
        self.latencies.get(&ch).copied().unwrap_or(0.0)
    }

    fn check(&self) -> Result<(), SequenceError> {
        let durations = [
            ("t_pol_s", self.t_pol_s),
            ("trigger_pulse_s", self.trigger_pulse_s),
            ("completion_pulse_s", self.completion_pulse_s),
            ("acquire_delay_s", self.acquire_delay_s),
            ("acquire_s", self.acquire_s),
        ];
        for (name, v) in durations {
            if !(v >= 0.0) {
                return Err(SequenceError::SpecInvalid(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        for (ch, v) in &self.latencies {
            if !(*v >= 0.0) {
                return Err(SequenceError::SpecInvalid(format!(
                    "latency of {} must be ≥ 0",
                    ch.as_str()
                )));
            }
        }
        let c = &self.chain;
        if !(c.inverter_s >= 0.0 && c.switch_s >= 0.0 && c.divider_s >= 0.0) {
            return Err(SequenceError::SpecInvalid("trigger chain delays must be ≥ 0".into()));
        }
        if let Some(cryo) = &self.cryo {
            if !(cryo.eject_s >= 0.0 && cryo.valve_latency_s >= 0.0 && cryo.cold_delay_s >= 0.0 && cryo.refill_s >= 0.0) {
                return Err(SequenceError::SpecInvalid("cryo timings must be ≥ 0".into()));
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    spec: &'a SequenceSpec,
    events: Vec<Event>,
}

impl Builder<'_> {
    fn push(
        &mut self,
        channel: ChannelId,
        label: &str,
        after: Option<usize>,
        extra_delay_s: f64,
        duration_s: f64,
        payload: Payload,
    ) -> usize {
        let base = after.map_or(0.0, |id| self.events[id].effective_end_s());
        let mut latency_s = self.spec.latency(channel);
        if channel == ChannelId::ServoTrigger {
            latency_s += self.spec.chain.total_s();
        }
        if channel.is_valve() {
            if let Some(c) = &self.spec.cryo {
                latency_s += c.valve_latency_s;
            }
        }
        let id = self.events.len();
        self.events.push(Event {
            id,
            channel,
            label: label.to_string(),
            t_start_s: base + extra_delay_s,
            latency_s,
            duration_s,
            after,
            payload,
        });
        id
    }
}

/// Builds the canonical DNP timeline: optical pumping and microwave sweep
/// for `t_pol`, then trigger pulse → shuttle → completion pulse → acquire.
/// A cryo block prepends the LN₂ eject and waits for the sample to freeze
/// before pumping starts.
pub fn build_timeline(spec: &SequenceSpec, map: &FieldMap) -> Result<Timeline, SequenceError> {
    spec.check()?;
    let start_z = map.position_of_field(spec.shuttle.from_field_t)?;
    let end_z = start_z - spec.shuttle.distance_m;
    if end_z < map.domain_m.0 - 1e-12 {
        return Err(SequenceError::SpecInvalid(format!(
            "shuttle of {} m from z = {start_z:.4} m leaves the field map",
            spec.shuttle.distance_m
        )));
    }
    let profile = motion::plan_between(start_z, end_z, &spec.shuttle.limits, spec.shuttle.v_target)
        .map_err(|e| SequenceError::SpecInvalid(e.to_string()))?;

    let mut b = Builder {
        spec,
        events: Vec::new(),
    };
    let edge = b.push(ChannelId::PulseGen, "dnp_start", None, 0.0, 0.0, Payload::None);

    let mut pump_after = edge;
    if let Some(cryo) = &spec.cryo {
        let eject = b.push(ChannelId::CryoEjectValve, "ln2_eject", Some(edge), 0.0, cryo.eject_s, Payload::None);
        b.push(ChannelId::CryoFillValve, "dewar_refill", Some(eject), 0.0, cryo.refill_s, Payload::None);
        // The cold flag is timed from the start of the jet, not its end.
        let eject_start = b.events[eject].effective_start_s();
        let cold_delay = eject_start + cryo.cold_delay_s - b.events[edge].effective_end_s();
        pump_after = b.push(ChannelId::PulseGen, "sample_cold", Some(edge), cold_delay, 0.0, Payload::Marker);
    }

    let mut pumping = Vec::new();
    if spec.t_pol_s > 0.0 {
        if spec.laser {
            pumping.push(b.push(ChannelId::Laser, "optical_pumping", Some(pump_after), 0.0, spec.t_pol_s, Payload::None));
        }
        if let Some(mw) = &spec.mw {
            pumping.push(b.push(
                ChannelId::MwSweep,
                "mw_sweep",
                Some(pump_after),
                0.0,
                spec.t_pol_s,
                Payload::MwSweep {
                    band_center_hz: mw.band_center_hz,
                    band_width_hz: mw.band_width_hz,
                },
            ));
        }
    }
    let shuttle_after = if pumping.is_empty() {
        // No pumping events: hold the pulse-generator program for t_pol anyway.
        b.push(ChannelId::PulseGen, "pump_window", Some(pump_after), 0.0, spec.t_pol_s, Payload::Marker)
    } else {
        *pumping
            .iter()
            .max_by(|x, y| b.events[**x].effective_end_s().total_cmp(&b.events[**y].effective_end_s()))
            .expect("non-empty")
    };

    let go = b.push(ChannelId::PulseGen, "shuttle_edge", Some(shuttle_after), 0.0, 0.0, Payload::None);
    let trig = b.push(ChannelId::ServoTrigger, "trigger_pulse", Some(go), 0.0, spec.trigger_pulse_s, Payload::None);
    let mv = b.push(
        ChannelId::ActuatorMotion,
        "shuttle",
        Some(trig),
        0.0,
        profile.duration(),
        Payload::Motion { profile },
    );
    let done = b.push(ChannelId::CompletionPulse, "completion", Some(mv), 0.0, spec.completion_pulse_s, Payload::None);
    b.push(ChannelId::NmrAcquire, "acquire", Some(done), spec.acquire_delay_s, spec.acquire_s, Payload::None);

    let mut tl = Timeline {
        events: b.events,
        start_z_m: start_z,
        shield_field_t: spec.shield_field_t,
        chain_latency_s: spec.chain.total_s(),
        max_valve_latency_s: spec.max_valve_latency_s,
    };
    tl.sort();
    Ok(tl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_timing() {
        let tl = build_timeline(&SequenceSpec::default(), &FieldMap::canonical()).unwrap();
        let order: Vec<&str> = tl.events.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(
            order,
            ["dnp_start", "optical_pumping", "mw_sweep", "shuttle_edge", "trigger_pulse", "shuttle", "completion", "acquire"]
        );
        let acq = tl.by_label("acquire").unwrap();
        let mv = tl.by_label("shuttle").unwrap();
        assert!((mv.duration_s - 0.648).abs() < 5e-4);
        assert!(acq.effective_start_s() >= 40.0 + 0.010 + mv.duration_s + 0.010);
        let z0 = tl.position_at(0.0);
        assert!((FieldMap::canonical().field_at(z0).unwrap() - 0.008).abs() < 1e-9);
    }

    #[test]
    fn chain_latency_delays_trigger() {
        let spec = SequenceSpec {
            chain: TriggerChain {
                inverter_s: 1e-4,
                switch_s: 2e-4,
                divider_s: 0.0,
            },
            ..SequenceSpec::default()
        };
        let tl = build_timeline(&spec, &FieldMap::canonical()).unwrap();
        assert!((tl.chain_latency_s - 3e-4).abs() < 1e-15);
        let trig = tl.by_label("trigger_pulse").unwrap();
        assert!((trig.latency_s - 3e-4).abs() < 1e-15);
        let mv = tl.by_label("shuttle").unwrap();
        assert!((mv.t_start_s - (40.0 + 3e-4 + 0.010)).abs() < 1e-12);
    }

    #[test]
    fn no_pumping_means_no_laser() {
        let spec = SequenceSpec {
            t_pol_s: 0.0,
            ..SequenceSpec::default()
        };
        let tl = build_timeline(&spec, &FieldMap::canonical()).unwrap();
        assert_eq!(tl.by_channel(ChannelId::Laser).count(), 0);
        assert_eq!(tl.by_channel(ChannelId::MwSweep).count(), 0);
    }

    #[test]
    fn negative_duration_is_rejected() {
        let spec = SequenceSpec {
            acquire_s: -1.0,
            ..SequenceSpec::default()
        };
        assert!(matches!(
            build_timeline(&spec, &FieldMap::canonical()),
            Err(SequenceError::SpecInvalid(_))
        ));
    }

    #[test]
    fn cryo_eject_precedes_pumping() {
        let spec = SequenceSpec {
            cryo: Some(CryoSpec::default()),
            ..SequenceSpec::default()
        };
        let tl = build_timeline(&spec, &FieldMap::canonical()).unwrap();
        let eject = tl.by_label("ln2_eject").unwrap();
        let laser = tl.by_label("optical_pumping").unwrap();
        let cold = tl.by_label("sample_cold").unwrap();
        assert_eq!(eject.duration_s, 1.0);
        assert!(eject.latency_s <= 1e-3);
        assert!(laser.t_start_s >= eject.effective_end_s());
        assert!((cold.effective_start_s() - eject.effective_start_s() - 3.5).abs() < 1e-12);
    }
}
