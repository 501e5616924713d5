//! Command-line front end. The binary is a thin wrapper around [`run`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fieldcycle::fieldmap::{self, FieldMap, ModelKind};
use fieldcycle::orchestrator::{
    self, parse_spec, ExperimentKind, ExperimentSpec, FieldMapRef, RunRecord, RunStatus, SpecError, TransitMode,
};
use fieldcycle::relaxometry::FitModel;
use fieldcycle::sequencer::CryoSpec;

const EXIT_SUCCESS: u8 = 0;
const EXIT_IO: u8 = 1;
const EXIT_SPEC: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "fieldcycle", version, about = "Field-cycling NMR instrument model")]
struct Cli {
    /// Seed for every random draw in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the run summary.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MapArg {
    /// Field map document (JSON) instead of the canonical map.
    #[arg(long)]
    field_map: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Duration table, trajectory and jitter trials for the shuttle move.
    PlanMotion {
        #[arg(long)]
        distance_m: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        velocities: Option<Vec<f64>>,
        #[arg(long)]
        a_max: Option<f64>,
        #[arg(long)]
        jitter_sigma_s: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
        #[command(flatten)]
        map: MapArg,
    },
    /// Fit a field map to anchors and write it with a sampled profile.
    CalibrateField {
        /// Anchors CSV; the canonical anchors when omitted.
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "finite-solenoid")]
        model: CliModel,
        /// Profile sample spacing (m).
        #[arg(long, default_value_t = 1e-3)]
        step_m: f64,
    },
    /// Resolution and sweep rate at the level anticrossings.
    PlanLac {
        #[arg(long)]
        precision_m: Option<f64>,
        #[arg(long)]
        v_max: Option<f64>,
        #[command(flatten)]
        map: MapArg,
    },
    /// Powder-averaged polarization transfer from a microwave sweep.
    DnpSweep {
        #[arg(long)]
        hyperfine_hz: Option<f64>,
        #[arg(long)]
        b_pol_t: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        sweep_rate_hz_per_s: Option<f64>,
        #[arg(long)]
        rabi_hz: Option<f64>,
    },
    /// Simulated relaxometry curves and fitted T1 per field.
    T1Map {
        #[arg(long, value_delimiter = ',')]
        fields_t: Option<Vec<f64>>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, value_enum)]
        fit: Option<CliFit>,
        #[arg(long, value_enum)]
        transit: Option<CliTransit>,
        #[command(flatten)]
        map: MapArg,
    },
    /// Build the canonical timeline and check its invariants.
    ValidateSequence {
        #[command(flatten)]
        seq: SequenceArgs,
    },
    /// Realize the timeline over many jittered runs and write the event log.
    SimulateSequence {
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long)]
        jitter_sigma_s: Option<f64>,
        #[command(flatten)]
        seq: SequenceArgs,
    },
    /// Run an experiment spec file.
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args)]
struct SequenceArgs {
    /// Include the cryogenic eject and refill events.
    #[arg(long)]
    cryo: bool,
    #[arg(long)]
    t_pol_s: Option<f64>,
    #[command(flatten)]
    map: MapArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliModel {
    FiniteSolenoid,
    MonotoneSpline,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFit {
    Mono,
    Stretched,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliTransit {
    Instant,
    Planned,
}

fn set_map(spec: &mut ExperimentSpec, map: &MapArg) {
    if let Some(p) = &map.field_map {
        spec.field_map = FieldMapRef::File { path: p.clone() };
    }
}

fn apply_sequence(spec: &mut ExperimentSpec, seq: &SequenceArgs) {
    if seq.cryo {
        spec.sequence.timing.cryo = Some(CryoSpec::default());
    }
    if let Some(t) = seq.t_pol_s {
        spec.sequence.timing.t_pol_s = t;
    }
    set_map(spec, &seq.map);
}

/// Spec for a verb: defaults for its kind with the flags applied.
fn spec_for(command: &Command) -> ExperimentSpec {
    let kind = match command {
        Command::PlanMotion { .. } => ExperimentKind::ShuttleCharacterization,
        Command::PlanLac { .. } => ExperimentKind::LacPlan,
        Command::DnpSweep { .. } => ExperimentKind::DnpSweep,
        Command::T1Map { .. } => ExperimentKind::T1FieldMap,
        Command::ValidateSequence { .. } | Command::SimulateSequence { .. } => ExperimentKind::SequenceValidation,
        Command::CalibrateField { .. } | Command::Run { .. } => unreachable!("not a generated spec"),
    };
    let mut s = ExperimentSpec::with_defaults(kind);
    match command {
        Command::PlanMotion { distance_m, velocities, a_max, jitter_sigma_s, trials, map } => {
            if let Some(d) = distance_m {
                s.shuttle.distance_m = *d;
            }
            if let Some(v) = velocities {
                s.shuttle.velocities_m_s = v.clone();
            }
            if let Some(a) = a_max {
                s.motion.a_max = *a;
            }
            if let Some(j) = jitter_sigma_s {
                s.shuttle.jitter_sigma_s = *j;
            }
            if let Some(n) = trials {
                s.shuttle.trials = *n;
            }
            set_map(&mut s, map);
        }
        Command::PlanLac { precision_m, v_max, map } => {
            if let Some(p) = precision_m {
                s.lac.precision_m = *p;
            }
            if let Some(v) = v_max {
                s.lac.v_max_m_s = *v;
            }
            set_map(&mut s, map);
        }
        Command::DnpSweep { hyperfine_hz, b_pol_t, nodes, sweep_rate_hz_per_s, rabi_hz } => {
            if let Some(a) = hyperfine_hz {
                s.dnp.hyperfine_hz = *a;
            }
            if let Some(b) = b_pol_t {
                s.dnp.b_pol_t = *b;
            }
            if let Some(n) = nodes {
                s.dnp.nodes = *n;
            }
            if let Some(r) = sweep_rate_hz_per_s {
                s.dnp.sweep.sweep_rate_hz_per_s = *r;
            }
            if let Some(r) = rabi_hz {
                s.dnp.sweep.mw_rabi_hz = *r;
            }
        }
        Command::T1Map { fields_t, snr, fit, transit, map } => {
            if let Some(f) = fields_t {
                s.t1_map.fields_t = f.clone();
            }
            s.t1_map.snr = *snr;
            if let Some(f) = fit {
                s.t1_map.fit = match f {
                    CliFit::Mono => FitModel::Monoexponential,
                    CliFit::Stretched => FitModel::Stretched,
                };
            }
            if let Some(t) = transit {
                s.t1_map.transit = match t {
                    CliTransit::Instant => TransitMode::Instant,
                    CliTransit::Planned => TransitMode::Planned,
                };
            }
            set_map(&mut s, map);
        }
        Command::ValidateSequence { seq } => apply_sequence(&mut s, seq),
        Command::SimulateSequence { runs, jitter_sigma_s, seq } => {
            s.sequence.runs = *runs;
            if let Some(j) = jitter_sigma_s {
                s.sequence.jitter_sigma_s = *j;
            }
            apply_sequence(&mut s, seq);
        }
        Command::CalibrateField { .. } | Command::Run { .. } => {}
    }
    s
}

fn spec_error(e: &SpecError) -> u8 {
    eprintln!("error: {e}");
    EXIT_SPEC
}

fn report(record: &RunRecord, out: &Path, quiet: bool) -> u8 {
    if let Some(e) = &record.error {
        eprintln!("error: {}", e.message);
    }
    for v in &record.violations {
        eprintln!("violation {:?}: {}", v.kind, v.detail);
    }
    if !quiet {
        let status = match record.status {
            RunStatus::Succeeded => "succeeded",
            RunStatus::Violations => "completed with violations",
            RunStatus::Failed => "failed",
        };
        println!("{} {status}; outputs in {}", record.kind.as_str(), out.display());
        for m in &record.manifest {
            println!("  {} ({} bytes)", m.path, m.bytes);
        }
    }
    record.exit_code() as u8
}

fn calibrate_field(anchors: Option<&Path>, model: CliModel, step_m: f64, out: &Path, quiet: bool) -> u8 {
    let anchors = match anchors {
        None => fieldmap::canonical_anchors(),
        Some(p) => match std::fs::File::open(p).map_err(|e| e.to_string()).and_then(|f| {
            fieldmap::read_anchors_csv(f).map_err(|e| e.to_string())
        }) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return EXIT_SPEC;
            }
        },
    };
    if !(step_m > 0.0) {
        eprintln!("error: --step-m must be > 0");
        return EXIT_SPEC;
    }
    let kind = match model {
        CliModel::FiniteSolenoid => ModelKind::FiniteSolenoid,
        CliModel::MonotoneSpline => ModelKind::MonotoneSpline,
    };
    let map = match fieldmap::calibrate(&anchors, kind) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERICAL;
        }
    };
    match write_calibration(&map, step_m, out) {
        Ok(files) => {
            if !quiet {
                println!("calibrate-field succeeded; outputs in {}", out.display());
                for f in files {
                    println!("  {f}");
                }
            }
            EXIT_SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
    }
}

fn write_calibration(map: &FieldMap, step_m: f64, out: &Path) -> Result<Vec<&'static str>, Box<dyn std::error::Error>> {
    std::fs::create_dir_all(out)?;
    let mut doc = map.to_json();
    doc.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["z_m", "B_T", "dBdz_T_per_m"])?;
    let (z0, z1) = map.domain_m;
    let n = ((z1 - z0) / step_m).round() as usize;
    for k in 0..=n {
        let z = (z0 + k as f64 * step_m).min(z1);
        w.write_record([z.to_string(), map.field_at(z)?.to_string(), map.gradient_at(z)?.to_string()])?;
    }
    let profile = w.into_inner()?;
    orchestrator::write_atomic(&out.join("field_map.json"), doc.as_bytes())?;
    orchestrator::write_atomic(&out.join("field_profile.csv"), &profile)?;
    Ok(vec!["field_map.json", "field_profile.csv"])
}

/// Parses `args` (program name first), runs the verb and returns the exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_SPEC } else { EXIT_SUCCESS };
        }
    };
    orchestrator::configure_threads();
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));

    if let Command::CalibrateField { anchors, model, step_m } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
        return calibrate_field(anchors.as_deref(), *model, *step_m, &out, cli.quiet);
    }

    let mut spec = match &cli.command {
        Command::Run { spec } => {
            let text = match std::fs::read_to_string(spec) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", spec.display());
                    return EXIT_SPEC;
                }
            };
            let base = spec.parent().map(Path::to_path_buf).unwrap_or_default();
            match parse_spec(&text, &base) {
                Ok(s) => s,
                Err(e) => return spec_error(&e),
            }
        }
        other => {
            let mut s = spec_for(other);
            s.base_dir = cwd.clone();
            s
        }
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.output_dir = cwd.join(out);
    }
    if !matches!(cli.command, Command::Run { .. }) || cli.seed.is_some() || cli.out.is_some() {
        if let Err(e) = spec.validate() {
            return spec_error(&e);
        }
        spec.rehash();
    }
    let record = orchestrator::run(&spec);
    report(&record, &spec.output_path(), cli.quiet)
}
