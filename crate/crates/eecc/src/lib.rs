//! Asynchronous event-camera feature tracking by per-event continuous
//! optimization.
//!
//! Each tracked feature maintains a persistent template density map and an
//! instantaneous model window built from a circular buffer of recent events.
//! Every accepted event triggers exactly one closed-form Gauss-Newton step of
//! a normalized-correlation alignment objective, nudging the feature's
//! Euclidean warp (translation + rotation). A lightweight solver path keeps
//! the step's normal-equation quantities up to date by add/subtract updates
//! over the handful of jacobian rows a single event can touch.
//!
//! The crate ships the tracker itself ([`tracker`]), the solver machinery
//! ([`ecc`]), plain-text stream/track/config I/O ([`io`]), a synthetic
//! event-stream generator with exact ground truth and evaluation metrics
//! ([`synth`]), and the `eecc` command-line interface ([`cli`]).

pub mod cli;
pub mod density;
pub mod ecc;
pub mod event;
pub mod io;
pub mod mat;
pub mod synth;
pub mod tracker;
pub mod warp;
pub mod window;

pub use density::{bilinear_weights, DensityMap, GradientField};
pub use ecc::{ecc_cost, ChangeSet, EccCache, SolverError, StepSolution};
pub use event::{Event, EventBuffer};
pub use tracker::{
    track_feature, SolverMode, StepOutcome, TerminationReason, TrackRecord, Tracker,
    TrackerParams, TrackerStatus,
};
pub use warp::FeatureState;
pub use window::ModelWindow;
