//! Command-line interface: tracking runs, synthetic data generation,
//! evaluation, per-event benchmarking and the built-in selftest.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or input
//! errors.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::event::Event;
use crate::io::{
    parse_seeds, parse_tracks, write_cdf_csv, write_metrics_csv, Config, EventReader, SeedSpec,
    StreamHeader, TimestampPolicy, TrackWriter,
};
use crate::synth::{
    feature_age_cdf, generate_events, parse_scenario, trajectory_error, EvalError,
    FeatureErrorReport, MotionPhase, MotionProfile, Scenario, SyntheticScene,
};
use crate::tracker::{
    SeedError, SolverMode, StepOutcome, TerminationReason, Tracker, TrackerParams, TrackerStatus,
    TrackRecord,
};
use crate::warp::FeatureState;

#[derive(Debug, Parser)]
#[command(
    name = "eecc",
    version,
    about = "Asynchronous per-event feature tracker for event cameras"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track seeded features through an event stream.
    Track {
        /// Events file: `t x y p` per line, t in seconds.
        #[arg(long)]
        events: PathBuf,
        /// Seeds file: `t x y [label]` per line.
        #[arg(long)]
        seeds: PathBuf,
        /// Config file (`key = value`); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for per-seed track CSVs and the run summary.
        #[arg(long)]
        out: PathBuf,
        /// Solver path: `incremental` or `full`.
        #[arg(long, default_value = "incremental")]
        mode: String,
        /// Fail on out-of-order timestamps instead of skipping them.
        #[arg(long)]
        strict_timestamps: bool,
    },
    /// Generate a synthetic event stream with exact ground truth.
    Synth {
        /// Scenario description (`key = value`).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for events.txt, seeds.txt and gt.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Evaluate tracks against a ground-truth trajectory file.
    Eval {
        /// Directory holding track_*.csv files.
        #[arg(long)]
        tracks: PathBuf,
        /// Ground-truth track CSV.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for metrics.csv and cdf.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time per-event solver steps on the standard synthetic workload.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `incremental`, `full`, or `both`.
        #[arg(long, default_value = "both")]
        mode: String,
        /// Write the timing CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Run the built-in verification suites.
    Selftest,
}

#[derive(Debug)]
pub enum CliError {
    /// Unusable input: missing files, malformed formats, bad flags.
    Input(String),
    /// Failure during an otherwise valid run.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track {
            events,
            seeds,
            config,
            out,
            mode,
            strict_timestamps,
        } => run_track(&events, &seeds, config.as_deref(), &out, &mode, strict_timestamps),
        Command::Synth {
            scenario,
            out,
            rng_seed,
        } => run_synth(&scenario, &out, rng_seed),
        Command::Eval {
            tracks,
            gt,
            config,
            out,
        } => run_eval(&tracks, &gt, config.as_deref(), &out),
        Command::Bench {
            config,
            mode,
            out,
            rng_seed,
        } => run_bench(config.as_deref(), &mode, out.as_deref(), rng_seed),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| CliError::Input(format!("cannot open config {}: {e}", path.display())))?;
            Config::parse(BufReader::new(file))
                .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
        }
    }
}

fn create_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Input(format!("cannot create output dir {}: {e}", path.display())))
}

fn worker_count(tasks: usize) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("EECC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(available);
    cap.min(tasks).max(1)
}

struct SeedResult {
    index: usize,
    label: Option<String>,
    record: TrackRecord,
    initialized: bool,
    accepted: u64,
    rejected: u64,
    clamped: u64,
}

/// One streaming pass over the events file driving every seed assigned to
/// this worker.
fn track_worker(
    events_path: &Path,
    header: StreamHeader,
    policy: TimestampPolicy,
    params: &TrackerParams,
    mode: SolverMode,
    seeds: &[(usize, SeedSpec)],
) -> Result<(Vec<SeedResult>, u64), CliError> {
    let file = File::open(events_path).map_err(|e| {
        CliError::Input(format!("cannot open events {}: {e}", events_path.display()))
    })?;
    let mut reader = EventReader::new(BufReader::with_capacity(1 << 16, file), header, policy);

    struct Slot {
        index: usize,
        spec: SeedSpec,
        tracker: Option<Tracker>,
        done: bool,
    }
    let mut slots: Vec<Slot> = seeds
        .iter()
        .map(|(index, spec)| {
            let seed_state = FeatureState::seed(spec.x, spec.y);
            match Tracker::new(*index as u32, seed_state, spec.t_us, params, mode) {
                Ok(tracker) => Slot {
                    index: *index,
                    spec: spec.clone(),
                    tracker: Some(tracker),
                    done: false,
                },
                Err(SeedError::TooCloseToBorder) => Slot {
                    index: *index,
                    spec: spec.clone(),
                    tracker: None,
                    done: true,
                },
            }
        })
        .collect();

    let mut live = slots.iter().filter(|s| !s.done).count();
    if live > 0 {
        for item in reader.by_ref() {
            let event = item.map_err(|e| {
                CliError::Input(format!("events {}: {e}", events_path.display()))
            })?;
            for slot in &mut slots {
                if slot.done || event.t_us < slot.spec.t_us {
                    continue;
                }
                let tracker = slot.tracker.as_mut().expect("live slot has a tracker");
                if let StepOutcome::Terminated(_) = tracker.process_event(&event) {
                    slot.done = true;
                    live -= 1;
                }
            }
            if live == 0 {
                break;
            }
        }
    }
    let skipped = reader.skipped();

    let results = slots
        .into_iter()
        .map(|slot| match slot.tracker {
            Some(mut tracker) => {
                tracker.finalize();
                let initialized = !matches!(
                    tracker.record().reason,
                    Some(TerminationReason::InitStarved)
                );
                SeedResult {
                    index: slot.index,
                    label: slot.spec.label,
                    initialized,
                    accepted: tracker.accepted_events(),
                    rejected: tracker.rejected_events(),
                    clamped: tracker.clamped_steps(),
                    record: tracker.into_record(),
                }
            }
            None => {
                let mut record = TrackRecord::new(slot.index as u32);
                record.reason = Some(TerminationReason::SeedRejected);
                SeedResult {
                    index: slot.index,
                    label: slot.spec.label,
                    record,
                    initialized: false,
                    accepted: 0,
                    rejected: 0,
                    clamped: 0,
                }
            }
        })
        .collect();
    Ok((results, skipped))
}

pub fn run_track(
    events_path: &Path,
    seeds_path: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
    mode: &str,
    strict_timestamps: bool,
) -> Result<(), CliError> {
    let mode: SolverMode = mode.parse().map_err(CliError::Input)?;
    let config = load_config(config_path)?;
    let header = config.header();
    let params = config.tracker_params();
    let policy = if strict_timestamps {
        TimestampPolicy::Strict
    } else {
        TimestampPolicy::SkipWithWarning
    };

    if !events_path.is_file() {
        return Err(CliError::Input(format!(
            "events file {} does not exist",
            events_path.display()
        )));
    }
    let seeds_file = File::open(seeds_path)
        .map_err(|e| CliError::Input(format!("cannot open seeds {}: {e}", seeds_path.display())))?;
    let seeds = parse_seeds(BufReader::new(seeds_file), &header)
        .map_err(|e| CliError::Input(format!("seeds {}: {e}", seeds_path.display())))?;
    for rejection in &seeds.rejected {
        eprintln!(
            "warning: seed at line {} rejected: {}",
            rejection.line, rejection.reason
        );
    }
    create_out_dir(out_dir)?;

    let tasks: Vec<(usize, SeedSpec)> = seeds.seeds.into_iter().enumerate().collect();
    let workers = worker_count(tasks.len());
    let mut results: Vec<SeedResult> = Vec::with_capacity(tasks.len());
    let mut parser_skipped = 0u64;
    if !tasks.is_empty() {
        let chunks: Vec<Vec<(usize, SeedSpec)>> = (0..workers)
            .map(|w| {
                tasks
                    .iter()
                    .skip(w)
                    .step_by(workers)
                    .cloned()
                    .collect::<Vec<_>>()
            })
            .collect();
        let outcomes: Vec<Result<(Vec<SeedResult>, u64), CliError>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|chunk| {
                        let params = &params;
                        scope.spawn(move || {
                            track_worker(events_path, header, policy, params, mode, chunk)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker thread panicked"))
                    .collect()
            });
        for outcome in outcomes {
            let (mut chunk_results, skipped) = outcome?;
            parser_skipped = parser_skipped.max(skipped);
            results.append(&mut chunk_results);
        }
        results.sort_by_key(|r| r.index);
    }
    if parser_skipped > 0 {
        eprintln!("warning: skipped {parser_skipped} out-of-order events");
    }

    // One track CSV per seed plus the run summary, written in seed order.
    let mut summary_path = out_dir.to_path_buf();
    summary_path.push("summary.csv");
    let summary_file = File::create(&summary_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", summary_path.display())))?;
    let mut summary = BufWriter::new(summary_file);
    writeln!(
        summary,
        "feature_id,label,initialized,states,accepted,rejected,clamped,age_s,reason"
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut uninitialized = 0usize;
    for result in &results {
        let track_path = out_dir.join(format!("track_{:04}.csv", result.index));
        let file = File::create(&track_path).map_err(|e| {
            CliError::Runtime(format!("cannot write {}: {e}", track_path.display()))
        })?;
        let mut writer = TrackWriter::new(BufWriter::new(file));
        writer
            .write_record(&result.record)
            .map_err(|e| CliError::Runtime(format!("write {}: {e}", track_path.display())))?;
        writer
            .into_inner()
            .flush()
            .map_err(|e| CliError::Runtime(e.to_string()))?;

        if !result.initialized {
            uninitialized += 1;
        }
        let reason = result
            .record
            .reason
            .map(|r| r.as_str())
            .unwrap_or("open");
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{:.6},{}",
            result.index,
            result.label.as_deref().unwrap_or(""),
            result.initialized as u8,
            result.record.states.len(),
            result.accepted,
            result.rejected,
            result.clamped,
            result.record.age_secs(),
            reason
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    summary.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    if uninitialized > 0 {
        return Err(CliError::Runtime(format!(
            "{uninitialized} seed(s) failed to initialize"
        )));
    }
    Ok(())
}

pub fn run_synth(scenario_path: &Path, out_dir: &Path, rng_seed: u64) -> Result<(), CliError> {
    let file = File::open(scenario_path).map_err(|e| {
        CliError::Input(format!("cannot open scenario {}: {e}", scenario_path.display()))
    })?;
    let scenario = parse_scenario(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("scenario {}: {e}", scenario_path.display())))?;
    create_out_dir(out_dir)?;

    let (events, truth) = generate_events(&scenario, rng_seed);

    let events_path = out_dir.join("events.txt");
    let file = File::create(&events_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", events_path.display())))?;
    let mut writer = BufWriter::new(file);
    for event in &events {
        writeln!(
            writer,
            "{:.6} {:.4} {:.4} {}",
            event.t_secs(),
            event.x,
            event.y,
            if event.polarity > 0 { 1 } else { 0 }
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let seeds_path = out_dir.join("seeds.txt");
    let file = File::create(&seeds_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", seeds_path.display())))?;
    let mut writer = BufWriter::new(file);
    for seed in truth.seed_specs() {
        writeln!(
            writer,
            "{:.6} {:.4} {:.4} {}",
            seed.t_us as f64 * 1e-6,
            seed.x,
            seed.y,
            seed.label.unwrap_or_default()
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let gt_path = out_dir.join("gt.csv");
    let file = File::create(&gt_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", gt_path.display())))?;
    let mut writer = TrackWriter::new(BufWriter::new(file));
    for record in truth.records(1_000) {
        writer
            .write_record(&record)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    writer
        .into_inner()
        .flush()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    eprintln!(
        "wrote {} events, {} seeds -> {}",
        events.len(),
        truth.anchor_count(),
        out_dir.display()
    );
    Ok(())
}

pub fn run_eval(
    tracks_dir: &Path,
    gt_path: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;

    let gt_file = File::open(gt_path)
        .map_err(|e| CliError::Input(format!("cannot open ground truth {}: {e}", gt_path.display())))?;
    let gt_records = parse_tracks(BufReader::new(gt_file))
        .map_err(|e| CliError::Input(format!("ground truth {}: {e}", gt_path.display())))?;
    let gt_by_id: BTreeMap<u32, &TrackRecord> =
        gt_records.iter().map(|r| (r.feature_id, r)).collect();

    let mut track_files: Vec<PathBuf> = fs::read_dir(tracks_dir)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", tracks_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("track_") && n.ends_with(".csv"))
        })
        .collect();
    track_files.sort();
    if track_files.is_empty() {
        return Err(CliError::Input(format!(
            "no track_*.csv files under {}",
            tracks_dir.display()
        )));
    }

    let mut tracks: Vec<TrackRecord> = Vec::new();
    for path in &track_files {
        let file = File::open(path)
            .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
        let mut records = parse_tracks(BufReader::new(file))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        tracks.append(&mut records);
    }

    let missing: Vec<u32> = tracks
        .iter()
        .map(|t| t.feature_id)
        .filter(|id| !gt_by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Input(format!(
            "track ids missing from ground truth: {missing:?}"
        )));
    }

    let horizon_s = gt_records
        .iter()
        .map(|r| r.age_secs())
        .fold(0.0f64, f64::max);
    let mut reports: Vec<FeatureErrorReport> = Vec::new();
    for track in &tracks {
        let gt = gt_by_id[&track.feature_id];
        match trajectory_error(track, gt, config.outlier_px) {
            Ok(report) => reports.push(report),
            // A record with no usable overlap (e.g. a rejected seed) counts
            // as lost immediately.
            Err(EvalError::EmptyOverlap) => reports.push(FeatureErrorReport {
                feature_id: track.feature_id,
                samples: 0,
                mean_pos_err: 0.0,
                max_pos_err: 0.0,
                mean_theta_err: 0.0,
                max_theta_err: 0.0,
                age_s: 0.0,
                first_outlier_s: None,
                terminated_early: true,
                outlier: false,
            }),
            Err(e) => return Err(CliError::Runtime(e.to_string())),
        }
    }

    create_out_dir(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let file = File::create(&metrics_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", metrics_path.display())))?;
    let mut writer = BufWriter::new(file);
    write_metrics_csv(&mut writer, &reports).map_err(|e| CliError::Runtime(e.to_string()))?;
    writer.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let cdf = feature_age_cdf(&reports, horizon_s.max(1e-6), 101)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let cdf_path = out_dir.join("cdf.csv");
    let file = File::create(&cdf_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", cdf_path.display())))?;
    let mut writer = BufWriter::new(file);
    write_cdf_csv(&mut writer, &cdf).map_err(|e| CliError::Runtime(e.to_string()))?;
    writer.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

/// Per-mode timing statistics over the standard bench workload.
#[derive(Debug, Clone, Copy)]
pub struct BenchStats {
    pub steps: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
}

/// The fixed workload used by `bench` and the performance acceptance check:
/// a translating corner feature (two 12-pixel edges meeting at the tracked
/// point) observed for just under a second.
pub fn standard_bench_workload(rng_seed: u64) -> (Vec<Event>, FeatureState, i64) {
    let scene = SyntheticScene {
        segments: vec![
            crate::synth::Segment { a: [0.0, 0.0], b: [12.0, 0.0] },
            crate::synth::Segment { a: [0.0, 0.0], b: [0.0, 12.0] },
        ],
        seed_anchors: vec![[0.0, 0.0]],
        events_per_edge_px: 2200.0,
        noise_rate: 800.0,
        jitter_px: 0.3,
        width: 240,
        height: 180,
    };
    let scenario = Scenario {
        scene,
        motion: MotionProfile {
            start: [95.0, 85.0],
            phases: vec![MotionPhase {
                vx: 32.0,
                vy: 9.0,
                omega: 0.0,
                duration_s: 0.9,
            }],
        },
        seed_time_s: 0.0,
    };
    let (events, truth) = generate_events(&scenario, rng_seed);
    let seed = truth.state_of(0, truth.seed_t_us());
    (events, FeatureState::seed(seed.x, seed.y), truth.seed_t_us())
}

/// Run one tracker over the workload and collect per-accepted-event solver
/// step times.
pub fn bench_mode(
    events: &[Event],
    seed: FeatureState,
    seed_t_us: i64,
    params: &TrackerParams,
    mode: SolverMode,
) -> Result<BenchStats, CliError> {
    let mut tracker = Tracker::new(0, seed, seed_t_us, params, mode)
        .map_err(|e| CliError::Runtime(format!("bench seed rejected: {e}")))?;
    let mut durations_us: Vec<f64> = Vec::with_capacity(events.len() / 4);
    for event in events {
        match tracker.process_event(event) {
            StepOutcome::Accepted(diag) => {
                durations_us.push(diag.step_time.as_secs_f64() * 1e6);
            }
            StepOutcome::Terminated(reason) => {
                return Err(CliError::Runtime(format!(
                    "bench track terminated early: {}",
                    reason.as_str()
                )))
            }
            _ => {}
        }
    }
    if *tracker.status() != TrackerStatus::Tracking {
        return Err(CliError::Runtime("bench track never initialized".into()));
    }
    if durations_us.len() < 100 {
        return Err(CliError::Runtime(format!(
            "bench produced only {} solver steps",
            durations_us.len()
        )));
    }
    let steps = durations_us.len();
    let mean_us = durations_us.iter().sum::<f64>() / steps as f64;
    let mut sorted = durations_us;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_us = sorted[steps / 2];
    let p95_us = sorted[(steps as f64 * 0.95) as usize..]
        .first()
        .copied()
        .unwrap_or(sorted[steps - 1]);
    Ok(BenchStats {
        steps,
        mean_us,
        median_us,
        p95_us,
    })
}

pub fn run_bench(
    config_path: Option<&Path>,
    mode: &str,
    out_path: Option<&Path>,
    rng_seed: u64,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let params = config.tracker_params();
    let modes: Vec<SolverMode> = match mode {
        "both" => vec![SolverMode::Incremental, SolverMode::FullRecompute],
        other => vec![other.parse().map_err(CliError::Input)?],
    };

    let (events, seed, seed_t_us) = standard_bench_workload(rng_seed);
    let mut csv = String::from("mode,steps,mean_us,median_us,p95_us\n");
    for mode in modes {
        let stats = bench_mode(&events, seed, seed_t_us, &params, mode)?;
        csv.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3}\n",
            mode.as_str(),
            stats.steps,
            stats.mean_us,
            stats.median_us,
            stats.p95_us
        ));
    }
    match out_path {
        Some(path) => fs::write(path, csv)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn run_selftest() -> Result<(), CliError> {
    let mut failures = 0usize;
    let mut check = |name: &str, result: Result<String, String>| match result {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL {name}: {detail}");
        }
    };
    check("bilinear-mass-conservation", selftest::bilinear_conservation());
    check("jacobian-finite-difference", selftest::jacobian_finite_difference());
    check("closed-form-grid-optimality", selftest::grid_optimality());
    check("incremental-equivalence", selftest::incremental_equivalence());
    if failures > 0 {
        return Err(CliError::Runtime(format!("{failures} selftest suite(s) failed")));
    }
    Ok(())
}

/// The verification suites behind `eecc selftest`: independent oracles
/// (finite differences, dense grid search, from-scratch recomputation) run
/// against the production solver paths.
pub mod selftest {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::density::DensityMap;
    use crate::ecc::{cache_products, ecc_cost, EccCache};
    use crate::event::{Event, EventBuffer};
    use crate::mat::{add3, norm3, Vec3};
    use crate::synth::{generate_events, MotionPhase, MotionProfile, Scenario, SyntheticScene};
    use crate::tracker::{SolverMode, StepOutcome, Tracker, TrackerParams};
    use crate::warp::{warp_from_template, warp_to_template, FeatureState};
    use crate::window::ModelWindow;

    pub(crate) fn random_instance(
        rng: &mut StdRng,
        radius: i32,
        lattice_state: bool,
    ) -> (DensityMap, ModelWindow, FeatureState) {
        let mut template = DensityMap::new(radius);
        let span = radius as f64 - 2.0;
        let mut positions = Vec::new();
        for _ in 0..(radius * radius) {
            let p = [rng.random_range(-span..span), rng.random_range(-span..span)];
            template.splat(p);
            positions.push(p);
        }
        let state = if lattice_state {
            FeatureState::seed(0.0, 0.0)
        } else {
            FeatureState::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.2..0.2),
            )
        };
        let mut buffer = EventBuffer::with_capacity(((positions.len()) | 1).max(3));
        for (i, p) in positions.iter().enumerate() {
            let g = warp_from_template(*p, &state);
            buffer
                .push(Event::new(
                    i as i64,
                    g[0] + rng.random_range(-0.4..0.4),
                    g[1] + rng.random_range(-0.4..0.4),
                    1,
                ))
                .unwrap();
        }
        let model = ModelWindow::build(&buffer, &state, radius).unwrap();
        (template, model, state)
    }

    /// Linearized alignment cost `‖(t + J d)/‖t + J d‖ - m̂‖²`, written
    /// directly from its definition.
    pub fn linearized_cost(rows: &[Vec3], warped: &[f64], m_hat: &[f64], delta: Vec3) -> f64 {
        let mut moved = vec![0.0; warped.len()];
        for i in 0..warped.len() {
            moved[i] = warped[i]
                + rows[i][0] * delta[0]
                + rows[i][1] * delta[1]
                + rows[i][2] * delta[2];
        }
        ecc_cost(&moved, m_hat).unwrap_or(f64::INFINITY)
    }

    pub fn bilinear_conservation() -> Result<String, String> {
        let mut rng = StdRng::seed_from_u64(101);
        let mut map = DensityMap::new(15);
        let n = 10_000usize;
        for i in 0..n {
            let x = [rng.random_range(-13.0..13.0), rng.random_range(-13.0..13.0)];
            let (_, weights) = crate::density::bilinear_weights(x);
            if weights.iter().any(|w| *w < 0.0) {
                return Err(format!("negative weight at splat {i}"));
            }
            let deposited: f64 = weights.iter().sum();
            if (deposited - 1.0).abs() > 1e-12 {
                return Err(format!("splat {i} deposited {deposited}"));
            }
            map.splat(x);
        }
        let total = map.total();
        if (total - n as f64).abs() > 1e-9 {
            return Err(format!("map total {total} after {n} interior splats"));
        }
        Ok(format!("{n} interior splats conserve unit mass"))
    }

    pub fn jacobian_finite_difference() -> Result<String, String> {
        let mut rng = StdRng::seed_from_u64(202);
        let step = 1e-6;
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (template, model, state) = random_instance(&mut rng, 7, true);
            let cache = EccCache::build(&template, &state, &model);
            let mut max_abs = 0.0f64;
            let mut max_diff = 0.0f64;
            for idx in 0..cache.rows().len() {
                if !model.is_active(idx) {
                    continue;
                }
                let global = model.global_of(idx);
                for p in 0..3 {
                    let mut hi = state.as_array();
                    let mut lo = state.as_array();
                    hi[p] += step;
                    lo[p] -= step;
                    let s_hi = FeatureState { x: hi[0], y: hi[1], theta: hi[2] };
                    let s_lo = FeatureState { x: lo[0], y: lo[1], theta: lo[2] };
                    let fd = (template.sample(warp_to_template(global, &s_hi))
                        - template.sample(warp_to_template(global, &s_lo)))
                        / (2.0 * step);
                    max_abs = max_abs.max(fd.abs());
                    max_diff = max_diff.max((cache.rows()[idx][p] - fd).abs());
                }
            }
            if max_abs > 0.0 {
                worst = worst.max(max_diff / max_abs);
            }
        }
        if worst < 1e-4 {
            Ok(format!("max relative error {worst:.2e}"))
        } else {
            Err(format!("max relative error {worst:.2e} exceeds 1e-4"))
        }
    }

    pub fn grid_optimality() -> Result<String, String> {
        let mut rng = StdRng::seed_from_u64(303);
        let mut instances = 0;
        while instances < 8 {
            let (template, model, state) = random_instance(&mut rng, 7, false);
            let cache = EccCache::build(&template, &state, &model);
            let solution = match cache.solve_step(&model) {
                Ok(s) => s,
                Err(_) => continue,
            };
            instances += 1;
            let m_norm = model.norm();
            let m_hat: Vec<f64> = model.values().iter().map(|v| v / m_norm).collect();
            let analytic = linearized_cost(cache.rows(), cache.warped_template(), &m_hat, solution.delta);
            let mut best_grid = f64::INFINITY;
            let half = 5i32;
            for ix in -half..=half {
                for iy in -half..=half {
                    for it in -half..=half {
                        let delta = [
                            ix as f64 * 0.5 / half as f64,
                            iy as f64 * 0.5 / half as f64,
                            it as f64 * 0.05 / half as f64,
                        ];
                        best_grid = best_grid
                            .min(linearized_cost(cache.rows(), cache.warped_template(), &m_hat, delta));
                    }
                }
            }
            if analytic > best_grid + 1e-8 {
                return Err(format!(
                    "grid found cost {best_grid:.6e} below analytic {analytic:.6e}"
                ));
            }
        }
        Ok(format!("{instances} instances beat the local grid"))
    }

    pub fn incremental_equivalence() -> Result<String, String> {
        let mut scene = SyntheticScene::star(5, 8.0, 20.0);
        scene.events_per_edge_px = 400.0;
        scene.noise_rate = 200.0;
        let scenario = Scenario {
            scene,
            motion: MotionProfile {
                start: [120.0, 90.0],
                phases: vec![MotionPhase { vx: 0.0, vy: 0.0, omega: 0.0, duration_s: 0.6 }],
            },
            seed_time_s: 0.0,
        };
        let (events, truth) = generate_events(&scenario, 404);
        let seed = truth.state_of(0, 0);
        let params = TrackerParams {
            refresh_every: u32::MAX,
            ..TrackerParams::default()
        };
        let make = |mode| {
            Tracker::new(0, FeatureState::seed(seed.x, seed.y), 0, &params, mode).unwrap()
        };
        let mut incremental = make(SolverMode::Incremental);
        let mut full = make(SolverMode::FullRecompute);
        let mut audited = 0usize;
        let mut max_audit = 0.0f64;
        let mut max_state_gap = 0.0f64;
        for (i, event) in events.iter().enumerate() {
            let a = incremental.process_event(event);
            let b = full.process_event(event);
            if let (StepOutcome::Accepted(da), StepOutcome::Accepted(db)) = (&a, &b) {
                let gap = norm3([
                    da.state.x - db.state.x,
                    da.state.y - db.state.y,
                    da.state.theta - db.state.theta,
                ]);
                max_state_gap = max_state_gap.max(gap);
            }
            if i % 50 == 0 {
                if let Some(cache) = incremental.cache() {
                    max_audit = max_audit.max(cache.audit_consistency());
                    audited += 1;
                }
            }
        }
        if let Some(cache) = incremental.cache() {
            let (c, p_t, t2) = cache_products(cache.rows(), cache.warped_template());
            let _ = (c, add3(p_t, [0.0; 3]), t2);
            max_audit = max_audit.max(cache.audit_consistency());
        }
        if max_audit > 1e-9 {
            return Err(format!("cache drift {max_audit:.2e} exceeds 1e-9"));
        }
        if max_state_gap > 1e-6 {
            return Err(format!("solver paths diverged by {max_state_gap:.2e}"));
        }
        Ok(format!(
            "{audited} audits, drift {max_audit:.2e}, path gap {max_state_gap:.2e}"
        ))
    }
}
