//! Per-feature tracking state machine: seed, initialize from the first
//! buffer-full of gated events, then run one closed-form optimization step
//! per accepted event, updating the template with each new central event.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::density::DensityMap;
use crate::ecc::{ChangeSet, EccCache, FullSolveScratch, SolverError};
use crate::event::{Event, EventBuffer};
use crate::mat::Vec3;
use crate::warp::{in_neighborhood, warp_to_template, wrap_angle, FeatureState};
use crate::window::ModelWindow;

/// Consecutive low-correlation steps tolerated before a track is declared
/// lost.
pub const RHO_PATIENCE: u32 = 500;

/// Every jacobian row is re-evaluated at least once per this many accepted
/// events by the rotating sweep, bounding row staleness between full
/// rebuilds.
pub const SWEEP_PERIOD_EVENTS: usize = 80;

/// Re-anchor the model window once the feature center drifts this far from
/// the current integer anchor. Strictly above 0.5 so that noise around a
/// rounding boundary cannot flip the anchor back and forth every event.
pub const RECENTER_HYSTERESIS_PX: f64 = 0.75;

/// Tunable tracker parameters; defaults follow the reference configuration
/// (31x31 window, 193-event buffer, 240x180 sensor).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    /// Patch radius `N`; the window is `(2N+1)` pixels on a side.
    pub radius: i32,
    /// Event buffer capacity `2M+1`.
    pub buffer_capacity: usize,
    /// Per-event translation clamp in pixels; zero or negative disables it.
    pub clamp_px: f64,
    /// Per-event rotation clamp in radians; zero or negative disables it.
    pub clamp_rad: f64,
    /// Correlation floor below which steps count toward track loss.
    pub rho_floor: f64,
    /// Terminate after this long without a gated event, in microseconds.
    pub idle_timeout_us: i64,
    /// Full jacobian rebuild cadence in accepted events.
    pub refresh_every: u32,
    pub width: u32,
    pub height: u32,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            radius: 15,
            buffer_capacity: 193,
            clamp_px: 1.0,
            clamp_rad: 2.0_f64.to_radians(),
            rho_floor: 0.2,
            idle_timeout_us: 1_000_000,
            refresh_every: 1000,
            width: 240,
            height: 180,
        }
    }
}

/// Which route produces the closed-form step quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Maintain the solver quantities by add/subtract updates per event.
    Incremental,
    /// Recompute every solver quantity from scratch per event.
    FullRecompute,
}

impl std::str::FromStr for SolverMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incremental" => Ok(Self::Incremental),
            "full" => Ok(Self::FullRecompute),
            other => Err(format!("unknown solver mode `{other}` (expected `incremental` or `full`)")),
        }
    }
}

impl SolverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Incremental => "incremental",
            Self::FullRecompute => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    OutOfBounds,
    SolverDegenerate,
    DegenerateModel,
    LostCorrelation,
    Idle,
    StreamEnd,
    InitStarved,
    /// Seed rejected before a tracker existed (e.g. too close to a border).
    SeedRejected,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::OutOfBounds => "out_of_bounds",
            Self::SolverDegenerate => "solver_degenerate",
            Self::DegenerateModel => "degenerate_model",
            Self::LostCorrelation => "lost_correlation",
            Self::Idle => "idle",
            Self::StreamEnd => "stream_end",
            Self::InitStarved => "init_starved",
            Self::SeedRejected => "seed_rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "out_of_bounds" => Self::OutOfBounds,
            "solver_degenerate" => Self::SolverDegenerate,
            "degenerate_model" => Self::DegenerateModel,
            "lost_correlation" => Self::LostCorrelation,
            "idle" => Self::Idle,
            "stream_end" => Self::StreamEnd,
            "init_starved" => Self::InitStarved,
            "seed_rejected" => Self::SeedRejected,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackerStatus {
    Initializing,
    Tracking,
    Terminated(TerminationReason),
}

/// Per-step diagnostics reported alongside a successful state update.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub delta: Vec3,
    pub state: FeatureState,
    pub rho: f64,
    pub lambda: f64,
    /// Gradient pixels perturbed by this event's template update (`|S|`).
    pub gradient_changes: usize,
    /// Jacobian rows re-evaluated for this event.
    pub rows_refreshed: usize,
    pub clamped: bool,
    pub step_time: Duration,
}

#[derive(Debug, Clone, Copy)]
pub enum StepOutcome {
    /// Event fell outside the gate (or arrived out of order); nothing changed.
    RejectedGate,
    /// Event accepted during initialization; tracking starts once
    /// `accepted == needed`.
    Initializing { accepted: usize, needed: usize },
    /// State updated by one solver iteration.
    Accepted(StepDiagnostics),
    Terminated(TerminationReason),
}

/// One recorded state of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub t_us: i64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Output of a complete track: the seed state followed by one state per
/// accepted event, and the reason the track ended.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub feature_id: u32,
    pub states: Vec<TrackState>,
    pub reason: Option<TerminationReason>,
}

impl TrackRecord {
    pub fn new(feature_id: u32) -> Self {
        Self {
            feature_id,
            states: Vec::new(),
            reason: None,
        }
    }

    /// Track duration in seconds, first to last recorded state.
    pub fn age_secs(&self) -> f64 {
        match (self.states.first(), self.states.last()) {
            (Some(a), Some(b)) => (b.t_us - a.t_us) as f64 * 1e-6,
            _ => 0.0,
        }
    }
}

/// Warp the central buffer event by the just-updated state, splat it into
/// the template, and derive the change set that drives the incremental cache
/// update. An event warping entirely outside the template support yields an
/// empty change set.
pub fn update_template_with_central_event(
    template: &mut DensityMap,
    gradients: &crate::density::GradientField,
    state: &FeatureState,
    central: &Event,
) -> ChangeSet {
    let footprint = template.splat(warp_to_template(central.position(), state));
    if footprint.is_empty() {
        ChangeSet::empty()
    } else {
        ChangeSet::from_splat(&footprint, gradients)
    }
}

/// Component-wise state update with the per-event safety clamp: the
/// translation is rescaled to at most `clamp_px`, the rotation magnitude to
/// at most `clamp_rad`, and the angle re-wrapped. Non-positive clamps
/// disable the respective limit.
pub fn apply_state_update(
    state: &FeatureState,
    delta: Vec3,
    clamp_px: f64,
    clamp_rad: f64,
) -> (FeatureState, bool) {
    let mut dx = delta[0];
    let mut dy = delta[1];
    let mut dtheta = delta[2];
    let mut clamped = false;
    if clamp_px > 0.0 {
        let norm = (dx * dx + dy * dy).sqrt();
        if norm > clamp_px {
            let scale = clamp_px / norm;
            dx *= scale;
            dy *= scale;
            clamped = true;
        }
    }
    if clamp_rad > 0.0 && dtheta.abs() > clamp_rad {
        dtheta = clamp_rad.copysign(dtheta);
        clamped = true;
    }
    (
        FeatureState {
            x: state.x + dx,
            y: state.y + dy,
            theta: wrap_angle(state.theta + dtheta),
        },
        clamped,
    )
}

/// True when the feature center sits within `radius` pixels of the sensor
/// border (pixel coordinates span `[0, width-1] x [0, height-1]`).
pub fn border_violation(state: &FeatureState, radius: i32, width: u32, height: u32) -> bool {
    let margin = radius as f64;
    state.x < margin
        || state.y < margin
        || state.x > (width - 1) as f64 - margin
        || state.y > (height - 1) as f64 - margin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SeedError {
    #[error("seed center must be at least the patch radius away from every border")]
    TooCloseToBorder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InitError {
    #[error(transparent)]
    Seed(#[from] SeedError),
    #[error("stream exhausted after {accepted} gated events, before the buffer filled")]
    Starved { accepted: usize },
    #[error("initial model window is degenerate")]
    DegenerateModel,
}

#[derive(Debug)]
struct LiveSolver {
    model: ModelWindow,
    cache: EccCache,
}

/// A single tracked feature and everything it owns: state, event buffer,
/// template, model window and solver cache.
#[derive(Debug)]
pub struct Tracker {
    id: u32,
    params: TrackerParams,
    mode: SolverMode,
    state: FeatureState,
    status: TrackerStatus,
    buffer: EventBuffer,
    template: DensityMap,
    live: Option<LiveSolver>,
    record: TrackRecord,
    accepted: u64,
    rejected: u64,
    iterations: u64,
    low_rho_run: u32,
    last_event_us: i64,
    last_accepted_us: i64,
    events_since_refresh: u32,
    clamp_events: u64,
    dropped_template_updates: u64,
    scratch: FullSolveScratch,
    touched_rows: Vec<u32>,
}

impl Tracker {
    /// Seed a tracker at the given state and time. The orientation of the
    /// seed is forced to zero.
    pub fn new(
        id: u32,
        seed: FeatureState,
        seed_t_us: i64,
        params: &TrackerParams,
        mode: SolverMode,
    ) -> Result<Self, SeedError> {
        let seed = FeatureState::seed(seed.x, seed.y);
        if border_violation(&seed, params.radius, params.width, params.height) {
            return Err(SeedError::TooCloseToBorder);
        }
        let mut record = TrackRecord::new(id);
        record.states.push(TrackState {
            t_us: seed_t_us,
            x: seed.x,
            y: seed.y,
            theta: seed.theta,
        });
        Ok(Self {
            id,
            params: params.clone(),
            mode,
            state: seed,
            status: TrackerStatus::Initializing,
            buffer: EventBuffer::with_capacity(params.buffer_capacity),
            template: DensityMap::new(params.radius),
            live: None,
            record,
            accepted: 0,
            rejected: 0,
            iterations: 0,
            low_rho_run: 0,
            last_event_us: seed_t_us,
            last_accepted_us: seed_t_us,
            events_since_refresh: 0,
            clamp_events: 0,
            dropped_template_updates: 0,
            scratch: FullSolveScratch::default(),
            touched_rows: Vec::with_capacity(8),
        })
    }

    /// Convenience initializer: consume gated events from `events` until the
    /// buffer fills and tracking starts.
    pub fn init_feature(
        id: u32,
        seed: FeatureState,
        seed_t_us: i64,
        events: impl IntoIterator<Item = Event>,
        params: &TrackerParams,
        mode: SolverMode,
    ) -> Result<Self, InitError> {
        let mut tracker = Self::new(id, seed, seed_t_us, params, mode)?;
        for event in events {
            if let StepOutcome::Terminated(TerminationReason::DegenerateModel) =
                tracker.process_event(&event)
            {
                return Err(InitError::DegenerateModel);
            }
            if tracker.status == TrackerStatus::Tracking {
                return Ok(tracker);
            }
        }
        Err(InitError::Starved {
            accepted: tracker.buffer.len(),
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn state(&self) -> &FeatureState {
        &self.state
    }

    pub fn status(&self) -> &TrackerStatus {
        &self.status
    }

    pub fn mode(&self) -> SolverMode {
        self.mode
    }

    pub fn record(&self) -> &TrackRecord {
        &self.record
    }

    pub fn into_record(self) -> TrackRecord {
        self.record
    }

    pub fn template(&self) -> &DensityMap {
        &self.template
    }

    pub fn buffer(&self) -> &EventBuffer {
        &self.buffer
    }

    pub fn model(&self) -> Option<&ModelWindow> {
        self.live.as_ref().map(|l| &l.model)
    }

    pub fn cache(&self) -> Option<&EccCache> {
        self.live.as_ref().map(|l| &l.cache)
    }

    pub fn accepted_events(&self) -> u64 {
        self.accepted
    }

    pub fn rejected_events(&self) -> u64 {
        self.rejected
    }

    /// Solver iterations executed; exactly one per accepted tracking event.
    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn clamped_steps(&self) -> u64 {
        self.clamp_events
    }

    /// Template updates dropped because the central event warped outside the
    /// template support.
    pub fn dropped_template_updates(&self) -> u64 {
        self.dropped_template_updates
    }

    /// Current health: the status the last processed event left behind.
    pub fn check_health(&self) -> TrackerStatus {
        self.status
    }

    /// Close the record at end of stream. Still-initializing trackers are
    /// marked starved; live trackers end cleanly.
    pub fn finalize(&mut self) {
        match self.status {
            TrackerStatus::Tracking => self.terminate(TerminationReason::StreamEnd),
            TrackerStatus::Initializing => self.terminate(TerminationReason::InitStarved),
            TrackerStatus::Terminated(_) => {}
        }
    }

    fn terminate(&mut self, reason: TerminationReason) {
        self.status = TrackerStatus::Terminated(reason);
        self.record.reason = Some(reason);
    }

    /// Feed one event through the gate and, if accepted, through the solver
    /// pipeline. Events older than the last processed timestamp are rejected
    /// without side effects.
    pub fn process_event(&mut self, event: &Event) -> StepOutcome {
        match self.status {
            TrackerStatus::Terminated(reason) => StepOutcome::Terminated(reason),
            TrackerStatus::Initializing => self.init_step(event),
            TrackerStatus::Tracking => self.tracking_step(event),
        }
    }

    fn init_step(&mut self, event: &Event) -> StepOutcome {
        if event.t_us < self.last_event_us {
            self.rejected += 1;
            return StepOutcome::RejectedGate;
        }
        self.last_event_us = event.t_us;
        if !in_neighborhood(event.position(), &self.state, self.params.radius) {
            self.rejected += 1;
            return StepOutcome::RejectedGate;
        }
        if self.buffer.push(*event).is_err() {
            self.rejected += 1;
            return StepOutcome::RejectedGate;
        }
        // Orientation is zero during initialization, so the warped splat
        // position is just the offset from the seed center.
        self.template.splat(warp_to_template(event.position(), &self.state));
        self.accepted += 1;
        self.last_accepted_us = event.t_us;

        let needed = self.buffer.capacity();
        let accepted = self.buffer.len();
        if self.buffer.is_full() {
            let model = match ModelWindow::build(&self.buffer, &self.state, self.params.radius) {
                Ok(model) => model,
                Err(_) => {
                    self.terminate(TerminationReason::DegenerateModel);
                    return StepOutcome::Terminated(TerminationReason::DegenerateModel);
                }
            };
            let cache = EccCache::build(&self.template, &self.state, &model);
            self.live = Some(LiveSolver { model, cache });
            self.status = TrackerStatus::Tracking;
            self.events_since_refresh = 0;
        }
        StepOutcome::Initializing { accepted, needed }
    }

    fn tracking_step(&mut self, event: &Event) -> StepOutcome {
        let started = Instant::now();
        if event.t_us < self.last_event_us {
            self.rejected += 1;
            return StepOutcome::RejectedGate;
        }
        self.last_event_us = event.t_us;

        if !in_neighborhood(event.position(), &self.state, self.params.radius) {
            self.rejected += 1;
            if event.t_us - self.last_accepted_us > self.params.idle_timeout_us {
                self.terminate(TerminationReason::Idle);
                return StepOutcome::Terminated(TerminationReason::Idle);
            }
            return StepOutcome::RejectedGate;
        }

        let evicted = match self.buffer.push(*event) {
            Ok(evicted) => evicted,
            Err(_) => {
                self.rejected += 1;
                return StepOutcome::RejectedGate;
            }
        };
        let live = self.live.as_mut().expect("tracking status implies live solver");

        // The window keeps its anchor between full rebuilds; re-anchoring is
        // the drift guard's job below.
        if live.model.rebuild_at(&self.buffer, live.cache.center()).is_err() {
            self.terminate(TerminationReason::DegenerateModel);
            return StepOutcome::Terminated(TerminationReason::DegenerateModel);
        }

        // The buffer swap may have activated or deactivated the window pixels
        // under the entering and evicted events; re-evaluate those rows so the
        // activity gate stays consistent before solving.
        self.touched_rows.clear();
        live.cache.touched_rows(event.position(), &mut self.touched_rows);
        if let Some(evicted) = &evicted {
            live.cache.touched_rows(evicted.position(), &mut self.touched_rows);
        }
        live.cache
            .refresh_rows(&self.touched_rows, &self.template, &self.state, &live.model);
        // Amortized drift guard: cycle a small batch of rows per event so no
        // row's state or template factors go stale for more than one sweep.
        let sweep = (live.cache.rows().len() / SWEEP_PERIOD_EVENTS).max(4);
        live.cache
            .sweep_refresh(sweep, &self.template, &self.state, &live.model);

        let solution = match self.mode {
            SolverMode::Incremental => live.cache.solve_step(&live.model),
            SolverMode::FullRecompute => live.cache.solve_step_full(&live.model, &mut self.scratch),
        };
        let solution = match solution {
            Ok(s) => s,
            Err(SolverError::DegenerateWindow) => {
                self.terminate(TerminationReason::DegenerateModel);
                return StepOutcome::Terminated(TerminationReason::DegenerateModel);
            }
            Err(_) => {
                self.terminate(TerminationReason::SolverDegenerate);
                return StepOutcome::Terminated(TerminationReason::SolverDegenerate);
            }
        };

        let (new_state, clamped) = apply_state_update(
            &self.state,
            solution.delta,
            self.params.clamp_px,
            self.params.clamp_rad,
        );
        self.state = new_state;
        if clamped {
            self.clamp_events += 1;
        }

        // Template update with the new central buffer event, warped by the
        // just-updated state.
        let central = *self.buffer.central().expect("full buffer has a central event");
        let changes = update_template_with_central_event(
            &mut self.template,
            live.cache.gradients(),
            &self.state,
            &central,
        );
        let mut gradient_changes = 0;
        let mut rows_refreshed = 0;
        if changes.is_empty() {
            self.dropped_template_updates += 1;
        } else {
            gradient_changes = changes.gradient_pixels().len();
            rows_refreshed = live
                .cache
                .apply_splat(&self.template, &self.state, &live.model, &changes)
                .expect("splat footprint lies within the template support");
        }

        self.accepted += 1;
        self.iterations += 1;
        self.events_since_refresh += 1;
        self.last_accepted_us = event.t_us;
        self.record.states.push(TrackState {
            t_us: event.t_us,
            x: self.state.x,
            y: self.state.y,
            theta: self.state.theta,
        });

        // Drift guards: a full rebuild once the window anchor lags the center
        // by more than the hysteresis band, and on a fixed cadence
        // regardless. Identical in both solver modes so their trajectories
        // stay comparable.
        let anchor = live.cache.center();
        let needs_recenter = (self.state.x - anchor[0] as f64).abs() > RECENTER_HYSTERESIS_PX
            || (self.state.y - anchor[1] as f64).abs() > RECENTER_HYSTERESIS_PX;
        if needs_recenter || self.events_since_refresh >= self.params.refresh_every {
            if live.model.rebuild(&self.buffer, &self.state).is_err() {
                self.terminate(TerminationReason::DegenerateModel);
                return StepOutcome::Terminated(TerminationReason::DegenerateModel);
            }
            live.cache.rebuild(&self.template, &self.state, &live.model);
            self.events_since_refresh = 0;
        }

        if solution.rho < self.params.rho_floor {
            self.low_rho_run += 1;
            if self.low_rho_run >= RHO_PATIENCE {
                self.terminate(TerminationReason::LostCorrelation);
                return StepOutcome::Terminated(TerminationReason::LostCorrelation);
            }
        } else {
            self.low_rho_run = 0;
        }

        if border_violation(&self.state, self.params.radius, self.params.width, self.params.height)
        {
            self.terminate(TerminationReason::OutOfBounds);
            return StepOutcome::Terminated(TerminationReason::OutOfBounds);
        }

        StepOutcome::Accepted(StepDiagnostics {
            delta: solution.delta,
            state: self.state,
            rho: solution.rho,
            lambda: solution.lambda,
            gradient_changes,
            rows_refreshed,
            clamped,
            step_time: started.elapsed(),
        })
    }
}

/// Drive one tracker over an event sequence: events before the seed time are
/// skipped, initialization consumes the first buffer-full of gated events,
/// and the record is finalized at termination or stream end.
pub fn track_feature(
    id: u32,
    seed: FeatureState,
    seed_t_us: i64,
    events: impl IntoIterator<Item = Event>,
    params: &TrackerParams,
    mode: SolverMode,
) -> Result<Tracker, SeedError> {
    let mut tracker = Tracker::new(id, seed, seed_t_us, params, mode)?;
    for event in events {
        if event.t_us < seed_t_us {
            continue;
        }
        if let StepOutcome::Terminated(_) = tracker.process_event(&event) {
            break;
        }
    }
    tracker.finalize();
    Ok(tracker)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_params() -> TrackerParams {
        TrackerParams {
            radius: 7,
            buffer_capacity: 33,
            ..TrackerParams::default()
        }
    }

    /// Events resampled from a fixed cross pattern around (60, 60).
    fn cross_event(rng: &mut StdRng, t_us: i64, jitter: f64) -> Event {
        let along = rng.random_range(-5.0..5.0);
        let (x, y) = if rng.random_bool(0.5) {
            (60.0 + along, 60.0)
        } else {
            (60.0, 60.0 + along)
        };
        Event::new(
            t_us,
            x + rng.random_range(-jitter..jitter.max(1e-12)),
            y + rng.random_range(-jitter..jitter.max(1e-12)),
            if rng.random_bool(0.5) { 1 } else { -1 },
        )
    }

    fn init_on_cross(params: &TrackerParams, mode: SolverMode, jitter: f64) -> (Tracker, StdRng, i64) {
        let mut rng = StdRng::seed_from_u64(8);
        let seed = FeatureState::seed(60.0, 60.0);
        let mut tracker = Tracker::new(0, seed, 0, params, mode).unwrap();
        let mut t = 0i64;
        while *tracker.status() == TrackerStatus::Initializing {
            t += 100;
            tracker.process_event(&cross_event(&mut rng, t, jitter));
        }
        (tracker, rng, t)
    }

    #[test]
    fn seed_too_close_to_border_is_rejected() {
        let params = TrackerParams::default();
        let near = FeatureState::seed(10.0, 90.0); // x < N = 15
        assert_eq!(
            Tracker::new(0, near, 0, &params, SolverMode::Incremental).unwrap_err(),
            SeedError::TooCloseToBorder
        );
        let ok = FeatureState::seed(15.0, 90.0);
        assert!(Tracker::new(0, ok, 0, &params, SolverMode::Incremental).is_ok());
    }

    #[test]
    fn init_with_integer_seed_makes_template_equal_model() {
        let params = small_params();
        let (tracker, _, _) = init_on_cross(&params, SolverMode::Incremental, 0.6);
        assert_eq!(*tracker.status(), TrackerStatus::Tracking);
        let model = tracker.model().unwrap();
        // theta = 0 and an integer seed center make the two maps identical.
        for (idx, &mv) in model.values().iter().enumerate() {
            let px = tracker.template().offset_of(idx);
            let tv = tracker.template().value(px);
            assert!((tv - mv).abs() < 1e-12, "template/model mismatch at {px:?}");
        }
        // All init splats were interior, so the template holds the full mass.
        assert!((tracker.template().total() - params.buffer_capacity as f64).abs() < 1e-9);
    }

    #[test]
    fn out_of_gate_event_is_rejected_without_state_change() {
        let params = small_params();
        let (mut tracker, _, t) = init_on_cross(&params, SolverMode::Incremental, 0.6);
        let before = *tracker.state();
        let outcome = tracker.process_event(&Event::new(t + 10, 100.0, 100.0, 1));
        assert!(matches!(outcome, StepOutcome::RejectedGate));
        assert_eq!(before, *tracker.state());
        assert_eq!(tracker.rejected_events(), 1);
    }

    #[test]
    fn replaying_the_oldest_event_yields_a_vanishing_step() {
        let params = small_params();
        let (mut tracker, _, t) = init_on_cross(&params, SolverMode::Incremental, 0.6);
        let oldest = *tracker.buffer().oldest().unwrap();
        // Re-pushing the oldest position leaves the model window identical,
        // so the first solver step sees a perfectly aligned pair.
        let replay = Event::new(t + 10, oldest.x, oldest.y, oldest.polarity);
        match tracker.process_event(&replay) {
            StepOutcome::Accepted(diag) => {
                let norm = crate::mat::norm3(diag.delta);
                assert!(norm < 1e-6, "expected vanishing step, got {norm}");
            }
            other => panic!("expected acceptance, got {other:?}"),
        }
    }

    #[test]
    fn one_iteration_per_accepted_event_and_record_length() {
        let params = small_params();
        let (mut tracker, mut rng, mut t) = init_on_cross(&params, SolverMode::Incremental, 0.6);
        let init_accepted = tracker.accepted_events();
        for _ in 0..500 {
            t += 150;
            tracker.process_event(&cross_event(&mut rng, t, 0.6));
        }
        assert_eq!(*tracker.status(), TrackerStatus::Tracking);
        let tracked = tracker.accepted_events() - init_accepted;
        assert_eq!(tracker.iterations(), tracked);
        assert_eq!(tracker.record().states.len() as u64, tracked + 1);
        let times: Vec<i64> = tracker.record().states.iter().map(|s| s.t_us).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn clamp_limits_translation_and_flags() {
        let s = FeatureState::seed(10.0, 10.0);
        let (out, clamped) = apply_state_update(&s, [3.0, 0.0, 0.0], 1.0, 0.05);
        assert!(clamped);
        assert!((out.x - 11.0).abs() < 1e-12);
        assert_eq!(out.y, 10.0);

        let (out, clamped) = apply_state_update(&s, [0.0, 0.0, 0.0], 1.0, 0.05);
        assert!(!clamped);
        assert_eq!(out, s);

        // Rotation wraps past pi.
        let s = FeatureState::new(10.0, 10.0, 3.1);
        let (out, _) = apply_state_update(&s, [0.0, 0.0, 0.1], 1.0, 0.0);
        assert!(out.theta <= std::f64::consts::PI && out.theta > -std::f64::consts::PI);
    }

    #[test]
    fn border_violation_margins() {
        assert!(border_violation(&FeatureState::seed(14.9, 90.0), 15, 240, 180));
        assert!(!border_violation(&FeatureState::seed(120.0, 90.0), 15, 240, 180));
        assert!(border_violation(&FeatureState::seed(224.5, 90.0), 15, 240, 180));
        assert!(border_violation(&FeatureState::seed(120.0, 164.5), 15, 240, 180));
    }

    #[test]
    fn idle_window_terminates_the_track() {
        let params = small_params();
        let (mut tracker, _, t) = init_on_cross(&params, SolverMode::Incremental, 0.6);
        // An out-of-gate event far in the future trips the idle check.
        let late = Event::new(t + 2_000_000, 150.0, 150.0, 1);
        match tracker.process_event(&late) {
            StepOutcome::Terminated(TerminationReason::Idle) => {}
            other => panic!("expected idle termination, got {other:?}"),
        }
        assert_eq!(tracker.record().reason, Some(TerminationReason::Idle));
    }

    #[test]
    fn sustained_low_correlation_terminates_the_track() {
        // Raise the correlation floor so heavily jittered events count as
        // low-correlation steps while the solver stays healthy.
        let params = TrackerParams {
            rho_floor: 0.95,
            ..small_params()
        };
        let (mut tracker, mut rng, mut t) = init_on_cross(&params, SolverMode::Incremental, 0.3);
        let mut steps = 0u32;
        let reason = loop {
            t += 120;
            match tracker.process_event(&cross_event(&mut rng, t, 2.5)) {
                StepOutcome::Terminated(reason) => break reason,
                StepOutcome::Accepted(_) => steps += 1,
                _ => {}
            }
            assert!(steps < 20_000, "track never terminated");
        };
        assert_eq!(reason, TerminationReason::LostCorrelation);
        assert!(steps + 1 >= RHO_PATIENCE, "terminated after only {steps} steps");
    }

    #[test]
    fn init_feature_reports_starvation() {
        let params = small_params();
        let seed = FeatureState::seed(60.0, 60.0);
        let mut rng = StdRng::seed_from_u64(4);
        let events: Vec<Event> = (0..10)
            .map(|i| cross_event(&mut rng, (i + 1) * 100, 0.6))
            .collect();
        match Tracker::init_feature(0, seed, 0, events, &params, SolverMode::Incremental) {
            Err(InitError::Starved { accepted }) => assert_eq!(accepted, 10),
            other => panic!("expected starvation, got {other:?}"),
        }
    }

    #[test]
    fn finalize_marks_stream_end() {
        let params = small_params();
        let (mut tracker, _, _) = init_on_cross(&params, SolverMode::Incremental, 0.6);
        tracker.finalize();
        assert_eq!(tracker.record().reason, Some(TerminationReason::StreamEnd));
    }
}
