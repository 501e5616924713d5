use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::fieldmap::{self, FieldMap, ModelKind, DEFAULT_PRECISION_M, DEFAULT_V_MAX, ESLAC_FIELD_T, GSLAC_FIELD_T};
use crate::motion::{MotionLimits, DEFAULT_JITTER_SIGMA_S, DEFAULT_SHUTTLE_DISTANCE_M};
use crate::relaxometry::{FitModel, PolarizationSign, RelaxationModel};
use crate::sequencer::SequenceSpec;
use crate::spin::{SpinConstants, SweepParams};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("unknown experiment kind `{0}`")]
    UnknownKind(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(u64),
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ShuttleCharacterization,
    LacPlan,
    DnpSweep,
    T1FieldMap,
    SequenceValidation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::ShuttleCharacterization,
        ExperimentKind::LacPlan,
        ExperimentKind::DnpSweep,
        ExperimentKind::T1FieldMap,
        ExperimentKind::SequenceValidation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ShuttleCharacterization => "shuttle_characterization",
            ExperimentKind::LacPlan => "lac_plan",
            ExperimentKind::DnpSweep => "dnp_sweep",
            ExperimentKind::T1FieldMap => "t1_field_map",
            ExperimentKind::SequenceValidation => "sequence_validation",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Where the field map comes from. Relative paths resolve against the
/// directory of the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldMapRef {
    /// The string `"canonical"`.
    Named(String),
    /// A map document written by `calibrate-field`.
    File { path: PathBuf },
    /// Anchors CSV calibrated on load.
    Anchors { anchors: PathBuf, model: Option<ModelKind> },
}

impl Default for FieldMapRef {
    fn default() -> Self {
        FieldMapRef::Named("canonical".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuttleBlock {
    pub distance_m: f64,
    pub velocities_m_s: Vec<f64>,
    pub trajectory_dt_s: f64,
    pub jitter_sigma_s: f64,
    pub trials: u64,
}

impl Default for ShuttleBlock {
    fn default() -> Self {
        Self {
            distance_m: DEFAULT_SHUTTLE_DISTANCE_M,
            velocities_m_s: vec![0.5, 1.0, 1.5, 2.0],
            trajectory_dt_s: 1e-3,
            jitter_sigma_s: DEFAULT_JITTER_SIGMA_S,
            trials: 1400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LacTarget {
    pub name: String,
    #[serde(rename = "field_T")]
    pub field_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LacBlock {
    pub targets: Vec<LacTarget>,
    pub precision_m: f64,
    pub v_max_m_s: f64,
}

impl Default for LacBlock {
    fn default() -> Self {
        Self {
            targets: vec![
                LacTarget {
                    name: "ESLAC".into(),
                    field_t: ESLAC_FIELD_T,
                },
                LacTarget {
                    name: "GSLAC".into(),
                    field_t: GSLAC_FIELD_T,
                },
            ],
            precision_m: DEFAULT_PRECISION_M,
            v_max_m_s: DEFAULT_V_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnpBlock {
    pub hyperfine_hz: f64,
    #[serde(rename = "b_pol_T")]
    pub b_pol_t: f64,
    pub sweep: SweepParams,
    /// Gauss–Legendre nodes in cos ϑ.
    pub nodes: usize,
    pub constants: SpinConstants,
    /// Boltzmann reference for the enhancement summary.
    #[serde(rename = "detect_field_T")]
    pub detect_field_t: f64,
    pub temperature_k: f64,
}

impl Default for DnpBlock {
    fn default() -> Self {
        Self {
            hyperfine_hz: 1e6,
            b_pol_t: 0.010,
            sweep: SweepParams::default(),
            nodes: 16,
            constants: SpinConstants::default(),
            detect_field_t: 7.0,
            temperature_k: 298.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitMode {
    Instant,
    Planned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct T1MapBlock {
    #[serde(rename = "fields_T")]
    pub fields_t: Vec<f64>,
    pub model: RelaxationModel,
    #[serde(rename = "b_pol_T")]
    pub b_pol_t: f64,
    pub t_pol_s: f64,
    #[serde(rename = "detect_field_T")]
    pub detect_field_t: f64,
    /// Wait times as multiples of the model T1 at each field.
    pub wait_fractions: Vec<f64>,
    pub transit: TransitMode,
    /// Signal-to-noise ratio of the first point; absent means noiseless.
    pub snr: Option<f64>,
    pub fit: FitModel,
    pub initial_polarization_sign: PolarizationSign,
}

impl Default for T1MapBlock {
    fn default() -> Self {
        Self {
            fields_t: vec![0.008, 0.1, 0.5, 1.0, 7.0],
            model: RelaxationModel::default(),
            b_pol_t: 0.008,
            t_pol_s: 40.0,
            detect_field_t: 7.0,
            wait_fractions: vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
            transit: TransitMode::Planned,
            snr: None,
            fit: FitModel::Monoexponential,
            initial_polarization_sign: PolarizationSign::AntiAligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceBlock {
    pub timing: SequenceSpec,
    pub runs: u64,
    pub jitter_sigma_s: f64,
}

impl Default for SequenceBlock {
    fn default() -> Self {
        Self {
            timing: SequenceSpec::default(),
            runs: 0,
            jitter_sigma_s: DEFAULT_JITTER_SIGMA_S,
        }
    }
}

/// A parsed and validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u64,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub field_map: FieldMapRef,
    #[serde(default)]
    pub motion: MotionLimits,
    #[serde(default)]
    pub shuttle: ShuttleBlock,
    #[serde(default)]
    pub lac: LacBlock,
    #[serde(default)]
    pub dnp: DnpBlock,
    #[serde(default)]
    pub t1_map: T1MapBlock,
    #[serde(default)]
    pub sequence: SequenceBlock,
    /// sha256 of the input document with keys sorted.
    #[serde(skip)]
    pub spec_hash: String,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// sha256 over the compact JSON of `v` without its `output_dir`. `serde_json`
/// maps keep keys sorted, so the hash ignores key order in the source document.
pub fn canonical_hash(v: &Value) -> String {
    let mut v = v.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output_dir");
    }
    let text = serde_json::to_string(&v).expect("JSON value serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

/// Parses a spec document. `base_dir` anchors relative file references.
pub fn parse_spec(document: &str, base_dir: &Path) -> Result<ExperimentSpec, SpecError> {
    let value: Value = serde_json::from_str(document)
        .map_err(|e| violation(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| violation("$", "document must be a JSON object"))?;

    match obj.get("schema_version") {
        None => return Err(violation("schema_version", "missing required field")),
        Some(v) => match v.as_u64() {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(SpecError::UnsupportedVersion(other)),
            None => return Err(violation("schema_version", "must be a non-negative integer")),
        },
    }
    match obj.get("kind") {
        None => return Err(violation("kind", "missing required field")),
        Some(Value::String(s)) if ExperimentKind::parse(s).is_none() => {
            return Err(SpecError::UnknownKind(s.clone()))
        }
        Some(Value::String(_)) => {}
        Some(_) => return Err(violation("kind", "must be a string")),
    }

    let mut spec: ExperimentSpec = serde_path_to_error::deserialize(value.clone())
        .map_err(|e| violation(e.path().to_string(), e.inner().to_string()))?;
    spec.spec_hash = canonical_hash(&value);
    spec.base_dir = base_dir.to_path_buf();
    spec.validate()?;
    Ok(spec)
}

impl ExperimentSpec {
    /// Spec with every block at its default.
    pub fn with_defaults(kind: ExperimentKind) -> Self {
        let mut spec = Self {
            schema_version: SCHEMA_VERSION,
            kind,
            seed: 0,
            output_dir: default_output_dir(),
            field_map: FieldMapRef::default(),
            motion: MotionLimits::default(),
            shuttle: ShuttleBlock::default(),
            lac: LacBlock::default(),
            dnp: DnpBlock::default(),
            t1_map: T1MapBlock::default(),
            sequence: SequenceBlock::default(),
            spec_hash: String::new(),
            base_dir: PathBuf::from("."),
        };
        spec.rehash();
        spec
    }

    /// Recomputes the hash from the current contents, e.g. after CLI overrides.
    pub fn rehash(&mut self) {
        let v = serde_json::to_value(&*self).expect("spec serializes");
        self.spec_hash = canonical_hash(&v);
    }

    /// Checks the blocks the kind needs and that referenced files exist.
    pub fn validate(&self) -> Result<(), SpecError> {
        self.motion.validate().map_err(|e| violation("motion", e.to_string()))?;
        match self.kind {
            ExperimentKind::ShuttleCharacterization => {
                let s = &self.shuttle;
                if s.velocities_m_s.is_empty() || s.velocities_m_s.iter().any(|v| !(*v > 0.0)) {
                    return Err(violation("shuttle.velocities_m_s", "need positive velocities"));
                }
                if !(s.distance_m >= 0.0) {
                    return Err(violation("shuttle.distance_m", "must be ≥ 0"));
                }
                if !(s.trajectory_dt_s > 0.0) {
                    return Err(violation("shuttle.trajectory_dt_s", "must be > 0"));
                }
                if !(s.jitter_sigma_s >= 0.0) {
                    return Err(violation("shuttle.jitter_sigma_s", "must be ≥ 0"));
                }
            }
            ExperimentKind::LacPlan => {
                if self.lac.targets.is_empty() {
                    return Err(violation("lac.targets", "need at least one target"));
                }
                if !(self.lac.precision_m > 0.0) {
                    return Err(violation("lac.precision_m", "must be > 0"));
                }
            }
            ExperimentKind::DnpSweep => {
                if self.dnp.nodes == 0 {
                    return Err(violation("dnp.nodes", "must be ≥ 1"));
                }
                self.dnp.sweep.validate().map_err(|e| violation("dnp.sweep", e.to_string()))?;
            }
            ExperimentKind::T1FieldMap => {
                let t = &self.t1_map;
                if t.fields_t.is_empty() {
                    return Err(violation("t1_map.fields_T", "need at least one field"));
                }
                if t.wait_fractions.windows(2).any(|w| w[1] <= w[0]) || t.wait_fractions.iter().any(|f| !(*f >= 0.0)) {
                    return Err(violation("t1_map.wait_fractions", "must be non-negative and increasing"));
                }
                if matches!(t.snr, Some(s) if !(s > 0.0)) {
                    return Err(violation("t1_map.snr", "must be > 0"));
                }
                t.model.validate().map_err(|e| violation("t1_map.model", e.to_string()))?;
            }
            ExperimentKind::SequenceValidation => {
                if !(self.sequence.jitter_sigma_s >= 0.0) {
                    return Err(violation("sequence.jitter_sigma_s", "must be ≥ 0"));
                }
            }
        }
        match &self.field_map {
            FieldMapRef::Named(n) if n != "canonical" => {
                Err(violation("field_map", format!("unknown named map `{n}`")))
            }
            FieldMapRef::File { path } | FieldMapRef::Anchors { anchors: path, .. } => {
                let p = self.resolve(path);
                if p.is_file() {
                    Ok(())
                } else {
                    Err(violation("field_map", format!("{} does not exist", p.display())))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Loads the referenced field map.
    pub fn load_field_map(&self) -> Result<FieldMap, fieldmap::FieldMapError> {
        match &self.field_map {
            FieldMapRef::Named(_) => Ok(FieldMap::canonical()),
            FieldMapRef::File { path } => {
                let text = std::fs::read_to_string(self.resolve(path))
                    .map_err(|e| fieldmap::FieldMapError::Io(e.to_string()))?;
                FieldMap::from_json(&text)
            }
            FieldMapRef::Anchors { anchors, model } => {
                let file = std::fs::File::open(self.resolve(anchors))
                    .map_err(|e| fieldmap::FieldMapError::Io(e.to_string()))?;
                let a = fieldmap::read_anchors_csv(file)?;
                fieldmap::calibrate(&a, model.unwrap_or(ModelKind::FiniteSolenoid))
            }
        }
    }

    /// The blocks this kind actually uses, for the run record.
    pub fn config_snapshot(&self) -> Value {
        let block = match self.kind {
            ExperimentKind::ShuttleCharacterization => ("shuttle", serde_json::to_value(&self.shuttle)),
            ExperimentKind::LacPlan => ("lac", serde_json::to_value(&self.lac)),
            ExperimentKind::DnpSweep => ("dnp", serde_json::to_value(&self.dnp)),
            ExperimentKind::T1FieldMap => ("t1_map", serde_json::to_value(&self.t1_map)),
            ExperimentKind::SequenceValidation => ("sequence", serde_json::to_value(&self.sequence)),
        };
        serde_json::json!({
            "field_map": self.field_map,
            "motion": self.motion,
            block.0: block.1.expect("block serializes"),
        })
    }
}
