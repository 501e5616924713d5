use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::spec::{ExperimentKind, ExperimentSpec, FieldMapRef, SpecError, TransitMode};
use crate::fieldmap::{self, FieldMap};
use crate::motion::{self, JitterModel};
use crate::relaxometry::{self, NoiseSpec, RelaxometryProtocol, Transit};
use crate::sequencer::{self, ValidationReport, Violation};
use crate::spin::{self, PowderEnsemble, SpinSystem};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RECORD_FILE: &str = "run_record.json";

/// Per-module seed tags: the module name packed as ASCII bytes.
pub const MODULE_TAGS: [(&str, u64); 3] = [
    ("motion", 0x6d6f_7469_6f6e),
    ("relaxometry", 0x7265_6c61_7865),
    ("sequencer", 0x7365_7175_656e),
];

/// Seed for `module`: the spec seed XOR the module's tag.
pub fn module_seed(seed: u64, module: &str) -> u64 {
    let tag = MODULE_TAGS
        .iter()
        .find(|(m, _)| *m == module)
        .map(|(_, t)| *t)
        .expect("known module tag");
    seed ^ tag
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    Violations,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Spec,
    Numerical,
    Io,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl RunError {
    pub fn class(&self) -> ErrorClass {
        match self {
            RunError::Spec(_) => ErrorClass::Spec,
            RunError::Numerical(_) => ErrorClass::Numerical,
            RunError::Io(_) => ErrorClass::Io,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> RunError {
    RunError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedError {
    pub class: ErrorClass,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub status: RunStatus,
    pub kind: ExperimentKind,
    pub spec_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub module_seeds: BTreeMap<String, u64>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub config: Value,
    pub manifest: Vec<ManifestEntry>,
    pub error: Option<RecordedError>,
    pub violations: Vec<Violation>,
}

impl RunRecord {
    /// CLI exit status: 0 success, 2 violations, 3 spec error, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match (self.status, self.error.as_ref().map(|e| e.class)) {
            (RunStatus::Succeeded, _) => 0,
            (RunStatus::Violations, _) => 2,
            (_, Some(ErrorClass::Spec)) => 3,
            (_, Some(ErrorClass::Numerical)) => 4,
            _ => 1,
        }
    }
}

/// Wall-clock seconds, or `SOURCE_DATE_EPOCH` when set so records are reproducible.
fn now_unix_s() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Result files held in memory until the experiment has fully succeeded.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    violations: Vec<Violation>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), RunError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(io_err)?;
        self.add(name, buf);
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(v).map_err(io_err)?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }
}

/// Executes `spec`, writes its outputs and a [`RunRecord`] under the output
/// directory, and returns the record. Failures are recorded, not returned.
pub fn run(spec: &ExperimentSpec) -> RunRecord {
    let started = now_unix_s();
    let module_seeds = MODULE_TAGS
        .iter()
        .map(|(m, _)| (m.to_string(), module_seed(spec.seed, m)))
        .collect();
    let mut record = RunRecord {
        status: RunStatus::Failed,
        kind: spec.kind,
        spec_hash: spec.spec_hash.clone(),
        tool_version: TOOL_VERSION.to_string(),
        seed: spec.seed,
        module_seeds,
        started_unix_s: started,
        finished_unix_s: started,
        config: spec.config_snapshot(),
        manifest: Vec::new(),
        error: None,
        violations: Vec::new(),
    };

    let out = spec.output_path();
    let outcome = execute(spec).and_then(|a| {
        std::fs::create_dir_all(&out).map_err(io_err)?;
        let mut manifest = Vec::new();
        for (name, bytes) in &a.files {
            write_atomic(&out.join(name), bytes).map_err(io_err)?;
            manifest.push(ManifestEntry {
                path: name.clone(),
                bytes: bytes.len() as u64,
                sha256: format!("{:x}", Sha256::digest(bytes)),
            });
        }
        Ok((manifest, a.violations))
    });
    match outcome {
        Ok((manifest, violations)) => {
            record.status = if violations.is_empty() {
                RunStatus::Succeeded
            } else {
                RunStatus::Violations
            };
            record.manifest = manifest;
            record.violations = violations;
        }
        Err(e) => {
            record.error = Some(RecordedError {
                class: e.class(),
                message: e.to_string(),
            });
        }
    }
    record.finished_unix_s = now_unix_s();
    if std::fs::create_dir_all(&out).is_ok() {
        if let Ok(mut text) = serde_json::to_string_pretty(&record) {
            text.push('\n');
            if let Err(e) = write_atomic(&out.join(RECORD_FILE), text.as_bytes()) {
                record.status = RunStatus::Failed;
                record.error = Some(RecordedError {
                    class: ErrorClass::Io,
                    message: e.to_string(),
                });
            }
        }
    }
    record
}

fn execute(spec: &ExperimentSpec) -> Result<Artifacts, RunError> {
    let map = spec.load_field_map().map_err(|e| {
        RunError::Spec(SpecError::SchemaViolation {
            path: "field_map".into(),
            message: e.to_string(),
        })
    })?;
    let mut a = Artifacts::default();
    match spec.kind {
        ExperimentKind::ShuttleCharacterization => shuttle_characterization(spec, &map, &mut a)?,
        ExperimentKind::LacPlan => lac_plan(spec, &map, &mut a)?,
        ExperimentKind::DnpSweep => dnp_sweep(spec, &mut a)?,
        ExperimentKind::T1FieldMap => t1_field_map(spec, &map, &mut a)?,
        ExperimentKind::SequenceValidation => sequence_validation(spec, &map, &mut a)?,
    }
    Ok(a)
}

/// Sample standard deviation (n − 1).
fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn shuttle_characterization(spec: &ExperimentSpec, map: &FieldMap, a: &mut Artifacts) -> Result<(), RunError> {
    let s = &spec.shuttle;
    let lim = &spec.motion;
    let profiles = s
        .velocities_m_s
        .iter()
        .map(|&v| motion::plan(s.distance_m, lim, Some(v)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(numerical)?;
    a.csv("shuttle_durations.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["v_mps", "duration_s", "closed_form_s", "shape"])?;
        for (v, p) in s.velocities_m_s.iter().zip(&profiles) {
            w.write_record([
                v.to_string(),
                p.duration().to_string(),
                motion::closed_form_duration(s.distance_m, *v, lim.a_max).to_string(),
                serde_json::to_value(p.shape).map_err(io::Error::other)?.as_str().unwrap_or_default().to_string(),
            ])?;
        }
        w.flush()
    })?;

    // Reference move at the velocity cap, from the polarization field inward.
    let start = map
        .position_of_field(sequencer::ShuttleSpec::default().from_field_t)
        .map_err(numerical)?;
    let reference = motion::plan_between(start, start - s.distance_m, lim, None).map_err(numerical)?;
    let mut traj = Vec::new();
    motion::write_trajectory_csv(&mut traj, &reference.sample_trajectory(s.trajectory_dt_s), Some(map))
        .map_err(numerical)?;
    a.add("trajectory.csv", traj);

    let jm = JitterModel::gaussian(s.jitter_sigma_s, module_seed(spec.seed, "motion"));
    let trials: Vec<f64> = (0..s.trials).map(|k| motion::apply_jitter(reference.duration(), &jm, k)).collect();
    a.csv("jitter_trials.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["trial", "duration_s"])?;
        for (k, d) in trials.iter().enumerate() {
            w.write_record([k.to_string(), d.to_string()])?;
        }
        w.flush()
    })?;
    let mean = trials.iter().sum::<f64>() / trials.len().max(1) as f64;
    a.json(
        "shuttle_summary.json",
        &json!({
            "distance_m": s.distance_m,
            "nominal_duration_s": reference.duration(),
            "trials": s.trials,
            "jitter_sigma_s": s.jitter_sigma_s,
            "mean_duration_s": mean,
            "std_duration_s": if trials.len() > 1 { std_dev(&trials) } else { 0.0 },
        }),
    )
}

fn lac_plan(spec: &ExperimentSpec, map: &FieldMap, a: &mut Artifacts) -> Result<(), RunError> {
    let l = &spec.lac;
    let plans = l
        .targets
        .iter()
        .map(|t| map.plan_lac_access(t.field_t, l.precision_m, l.v_max_m_s).map(|p| (t.name.clone(), p)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(numerical)?;
    a.csv("lac_plan.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["name", "target_field_T", "position_m", "gradient_T_per_m", "resolution_G", "max_sweep_rate_T_per_s"])?;
        for (name, p) in &plans {
            w.write_record([
                name.clone(),
                p.target_field_t.to_string(),
                p.position_m.to_string(),
                p.gradient_t_per_m.to_string(),
                (p.resolution_t * 1e4).to_string(),
                p.max_sweep_rate_t_per_s.to_string(),
            ])?;
        }
        w.flush()
    })
}

fn dnp_sweep(spec: &ExperimentSpec, a: &mut Artifacts) -> Result<(), RunError> {
    let d = &spec.dnp;
    let sys = SpinSystem::new(d.hyperfine_hz, 0.0, d.b_pol_t).map_err(numerical)?;
    let ensemble = PowderEnsemble::gauss_legendre(d.nodes).map_err(numerical)?;
    let result = spin::powder_average(&sys, &d.sweep, &ensemble, &d.constants).map_err(numerical)?;
    a.csv("dnp_sweep.csv", |buf| spin::write_sweep_csv(buf, &result))?;

    let thermal = spin::boltzmann_polarization(d.detect_field_t, d.temperature_k, &d.constants);
    let enhancement = result.mean / thermal;
    let equivalent = spin::enhancement_to_equivalent_field(enhancement, d.detect_field_t, d.temperature_k, &d.constants).ok();
    a.json(
        "dnp_summary.json",
        &json!({
            "nodes": d.nodes,
            "mean_polarization": result.mean,
            "sign_uniform": result.sign_uniform(),
            "thermal_polarization": thermal,
            "enhancement": enhancement,
            "equivalent_field_T": equivalent,
        }),
    )
}

/// Field map in absolute terms: anchors for calibrated maps, the document otherwise.
fn resolved_field_map(spec: &ExperimentSpec, map: &FieldMap) -> Result<Value, RunError> {
    let v = match &spec.field_map {
        FieldMapRef::Named(name) => json!({
            "name": name,
            "model": "finite_solenoid",
            "anchors": fieldmap::canonical_anchors(),
        }),
        FieldMapRef::Anchors { anchors, model } => {
            let file = std::fs::File::open(spec.resolve(anchors)).map_err(io_err)?;
            json!({
                "model": model.unwrap_or(fieldmap::ModelKind::FiniteSolenoid),
                "anchors": fieldmap::read_anchors_csv(file).map_err(numerical)?,
            })
        }
        FieldMapRef::File { .. } => {
            json!({ "map": serde_json::from_str::<Value>(&map.to_json()).map_err(io_err)? })
        }
    };
    Ok(v)
}

fn t1_field_map(spec: &ExperimentSpec, map: &FieldMap, a: &mut Artifacts) -> Result<(), RunError> {
    let t = &spec.t1_map;
    let base_seed = module_seed(spec.seed, "relaxometry");
    let curves = t
        .fields_t
        .par_iter()
        .enumerate()
        .map(|(k, &b)| {
            let t1 = relaxometry::t1_of_field(b, &t.model);
            let protocol = RelaxometryProtocol {
                b_pol_t: t.b_pol_t,
                t_pol_s: t.t_pol_s,
                b_relax_t: b,
                waits_s: t.wait_fractions.iter().map(|f| f * t1).collect(),
                detect_field_t: t.detect_field_t,
                initial_polarization_sign: t.initial_polarization_sign,
                gain: 1.0,
            };
            let transit = match t.transit {
                TransitMode::Instant => Transit::Instant,
                TransitMode::Planned => Transit::Planned(&spec.motion),
            };
            let noise = t.snr.map(|snr| NoiseSpec {
                sigma_au: protocol.gain / snr,
                seed: base_seed.wrapping_add(k as u64),
            });
            relaxometry::simulate_protocol(&protocol, map, transit, &t.model, noise).map(|c| (b, c))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(numerical)?;

    for (k, (b, c)) in curves.iter().enumerate() {
        a.csv(&format!("t1_curve_{k:02}_{b}T.csv"), |buf| relaxometry::write_curve_csv(buf, c))?;
    }
    let fitted = relaxometry::build_t1_map(&curves, t.fit);
    a.csv("t1_map.csv", |buf| relaxometry::write_map_csv(buf, &fitted))?;
    let failures: Vec<String> = fitted
        .iter()
        .filter_map(|(b, r)| r.as_ref().err().map(|e| format!("{b} T: {e}")))
        .collect();
    if !failures.is_empty() {
        return Err(RunError::Numerical(failures.join("; ")));
    }
    a.json(
        "resolved_config.json",
        &json!({
            "kind": spec.kind,
            "field_map": resolved_field_map(spec, map)?,
            "motion": spec.motion,
            "t1_map": t,
        }),
    )
}

fn sequence_validation(spec: &ExperimentSpec, map: &FieldMap, a: &mut Artifacts) -> Result<(), RunError> {
    let s = &spec.sequence;
    let tl = sequencer::build_timeline(&s.timing, map).map_err(|e| match e {
        sequencer::SequenceError::SpecInvalid(m) => RunError::Spec(SpecError::SchemaViolation {
            path: "sequence.timing".into(),
            message: m,
        }),
        other => numerical(other),
    })?;
    a.csv("timeline.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["id", "channel", "label", "t_start_s", "latency_s", "duration_s", "after"])?;
        for e in &tl.events {
            w.write_record([
                e.id.to_string(),
                e.channel.as_str().to_string(),
                e.label.clone(),
                e.t_start_s.to_string(),
                e.latency_s.to_string(),
                e.duration_s.to_string(),
                e.after.map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()
    })?;
    let report: ValidationReport = sequencer::validate(&tl, map);
    a.json("validation.json", &report)?;
    if s.runs > 0 {
        let jm = JitterModel::gaussian(s.jitter_sigma_s, module_seed(spec.seed, "sequencer"));
        let log = sequencer::simulate(&tl, &jm, s.runs);
        a.csv("event_log.csv", |buf| sequencer::write_log_csv(buf, &log))?;
        a.json("event_log_meta.json", &log.metadata)?;
    }
    a.violations = report.violations;
    Ok(())
}
