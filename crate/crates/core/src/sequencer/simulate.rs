use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChannelId, Timeline};
use crate::motion::{apply_jitter, JitterModel};

/// One row of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub run_id: u64,
    pub channel: String,
    pub event: String,
    pub t_nominal_s: f64,
    pub t_realized_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub runs: u64,
    pub chain_latency_s: f64,
    pub channel_latencies_s: BTreeMap<String, f64>,
    pub jitter: JitterModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub metadata: LogMetadata,
    pub rows: Vec<LogRow>,
}

impl EventLog {
    /// Realized start of `event` in each run, in run order.
    pub fn realized(&self, event: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.event == event).map(|r| r.t_realized_s).collect()
    }
}

/// Realizes one run: each event starts at its nominal time plus its channel
/// latency, shifted by however late its dependency finished. Actuator
/// durations receive jitter draw `run_id` (further moves in the same run use
/// disjoint draw indices).
pub fn simulate_run(tl: &Timeline, jitter: &JitterModel, run_id: u64) -> Vec<LogRow> {
    let mut ids: Vec<usize> = tl.events.iter().map(|e| e.id).collect();
    ids.sort_unstable();
    let index_of = |id: usize| tl.events.iter().position(|e| e.id == id);

    // (realized start, realized duration) per event position.
    let mut done: Vec<Option<(f64, f64)>> = vec![None; tl.events.len()];
    let mut motion_ordinal = 0u64;
    // Dependencies may point forward in position; resolve until stable.
    let mut pending: Vec<usize> = ids.iter().filter_map(|&id| index_of(id)).collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|&k| {
            let e = &tl.events[k];
            let shift = match e.after.and_then(index_of) {
                None => 0.0,
                Some(d) => match done[d] {
                    None => return true,
                    Some((s, dur)) => s + dur - tl.events[d].effective_end_s(),
                },
            };
            let duration = if e.channel == ChannelId::ActuatorMotion {
                let index = run_id + (motion_ordinal << 32);
                motion_ordinal += 1;
                apply_jitter(e.duration_s, jitter, index)
            } else {
                e.duration_s
            };
            done[k] = Some((e.effective_start_s() + shift, duration));
            false
        });
        assert!(pending.len() < before, "dependency cycle in timeline");
    }

    let mut rows: Vec<(usize, LogRow)> = tl
        .events
        .iter()
        .zip(&done)
        .map(|(e, d)| {
            let (start, duration) = d.expect("all events resolved");
            (
                e.id,
                LogRow {
                    run_id,
                    channel: e.channel.as_str().to_string(),
                    event: e.label.clone(),
                    t_nominal_s: e.t_start_s,
                    t_realized_s: start,
                    duration_s: duration,
                },
            )
        })
        .collect();
    rows.sort_by(|a, b| a.1.t_realized_s.total_cmp(&b.1.t_realized_s).then(a.0.cmp(&b.0)));
    rows.into_iter().map(|(_, r)| r).collect()
}

/// Realizes `runs` independent runs; run `k` uses jitter draw `k`.
pub fn simulate(tl: &Timeline, jitter: &JitterModel, runs: u64) -> EventLog {
    let rows: Vec<LogRow> = (0..runs)
        .into_par_iter()
        .map(|k| simulate_run(tl, jitter, k))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut channel_latencies_s = BTreeMap::new();
    for e in &tl.events {
        channel_latencies_s.entry(e.channel.as_str().to_string()).or_insert(e.latency_s);
    }
    EventLog {
        metadata: LogMetadata {
            runs,
            chain_latency_s: tl.chain_latency_s,
            channel_latencies_s,
            jitter: *jitter,
        },
        rows,
    }
}

/// Writes `run_id,channel,event,t_nominal_s,t_realized_s,duration_s` rows.
pub fn write_log_csv<W: Write>(writer: W, log: &EventLog) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &log.rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}
