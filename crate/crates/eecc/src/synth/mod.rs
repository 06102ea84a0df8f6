//! Synthetic event streams with exact ground truth, and the evaluation
//! metrics computed against it.

mod generate;
mod metrics;
mod scene;

pub use generate::{generate_events, GroundTruth};
pub use metrics::{feature_age_cdf, lost_age_s, trajectory_error, EvalError, FeatureErrorReport};
pub use scene::{
    parse_scenario, MotionPhase, MotionProfile, Scenario, ScenarioError, Segment, SyntheticScene,
};
