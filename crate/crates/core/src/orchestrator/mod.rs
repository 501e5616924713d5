//! Experiment specs, runs and their records.

mod run;
mod spec;

pub use run::{
    module_seed, run, write_atomic, ErrorClass, ManifestEntry, RecordedError, RunError, RunRecord, RunStatus,
    MODULE_TAGS, RECORD_FILE, TOOL_VERSION,
};
pub use spec::{
    canonical_hash, parse_spec, DnpBlock, ExperimentKind, ExperimentSpec, FieldMapRef, LacBlock, LacTarget,
    SequenceBlock, ShuttleBlock, SpecError, T1MapBlock, TransitMode, SCHEMA_VERSION,
};

/// Applies `FIELDCYCLE_THREADS` (0 or unset = one thread per core) to the
/// global rayon pool. Only the first call in a process has an effect.
pub fn configure_threads() {
    let n = std::env::var("FIELDCYCLE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}
