//! Tracking-accuracy and feature-age metrics against ground truth.

use thiserror::Error;

use crate::tracker::{TerminationReason, TrackRecord, TrackState};
use crate::warp::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("track and ground truth share no time overlap")]
    EmptyOverlap,
    #[error("no reports to aggregate")]
    EmptyInput,
}

/// Per-feature comparison of a track against its ground-truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureErrorReport {
    pub feature_id: u32,
    /// Track states that fell inside the ground-truth time range.
    pub samples: usize,
    pub mean_pos_err: f64,
    pub max_pos_err: f64,
    /// Mean absolute wrapped orientation error, radians.
    pub mean_theta_err: f64,
    pub max_theta_err: f64,
    /// Track duration in seconds.
    pub age_s: f64,
    /// Age at which the position error first exceeded the outlier threshold.
    pub first_outlier_s: Option<f64>,
    /// Track ended for a reason other than the stream running out.
    pub terminated_early: bool,
    pub outlier: bool,
}

fn interpolate(gt: &[TrackState], t_us: i64) -> TrackState {
    debug_assert!(!gt.is_empty());
    let pos = gt.partition_point(|s| s.t_us <= t_us);
    if pos == 0 {
        return gt[0];
    }
    if pos == gt.len() {
        return gt[gt.len() - 1];
    }
    let a = &gt[pos - 1];
    let b = &gt[pos];
    if b.t_us == a.t_us {
        return *a;
    }
    let frac = (t_us - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
    TrackState {
        t_us,
        x: a.x + (b.x - a.x) * frac,
        y: a.y + (b.y - a.y) * frac,
        theta: wrap_angle(a.theta + wrap_angle(b.theta - a.theta) * frac),
    }
}

/// Compare a track to a ground-truth trajectory: at each track state inside
/// the ground-truth time range, linearly interpolate the truth and measure
/// the Euclidean position error and the wrapped orientation error.
pub fn trajectory_error(
    track: &TrackRecord,
    gt: &TrackRecord,
    outlier_px: f64,
) -> Result<FeatureErrorReport, EvalError> {
    let (Some(gt_first), Some(gt_last)) = (gt.states.first(), gt.states.last()) else {
        return Err(EvalError::EmptyOverlap);
    };
    let track_start = track.states.first().map(|s| s.t_us).unwrap_or(0);

    let mut samples = 0usize;
    let mut sum_pos = 0.0;
    let mut max_pos = 0.0f64;
    let mut sum_theta = 0.0;
    let mut max_theta = 0.0f64;
    let mut first_outlier_s = None;

    for state in &track.states {
        if state.t_us < gt_first.t_us || state.t_us > gt_last.t_us {
            continue;
        }
        let truth = interpolate(&gt.states, state.t_us);
        let pos_err = ((state.x - truth.x).powi(2) + (state.y - truth.y).powi(2)).sqrt();
        let theta_err = wrap_angle(state.theta - truth.theta).abs();
        samples += 1;
        sum_pos += pos_err;
        max_pos = max_pos.max(pos_err);
        sum_theta += theta_err;
        max_theta = max_theta.max(theta_err);
        if pos_err > outlier_px && first_outlier_s.is_none() {
            first_outlier_s = Some((state.t_us - track_start) as f64 * 1e-6);
        }
    }
    if samples == 0 {
        return Err(EvalError::EmptyOverlap);
    }

    let terminated_early = !matches!(
        track.reason,
        Some(TerminationReason::StreamEnd) | None
    );
    Ok(FeatureErrorReport {
        feature_id: track.feature_id,
        samples,
        mean_pos_err: sum_pos / samples as f64,
        max_pos_err: max_pos,
        mean_theta_err: sum_theta / samples as f64,
        max_theta_err: max_theta,
        age_s: track.age_secs(),
        first_outlier_s,
        terminated_early,
        outlier: first_outlier_s.is_some(),
    })
}

/// Age at which a feature was lost: the first outlier crossing or an early
/// termination, whichever came first. `None` means it survived the horizon.
pub fn lost_age_s(report: &FeatureErrorReport, horizon_s: f64) -> Option<f64> {
    let mut lost: Option<f64> = report.first_outlier_s;
    if report.terminated_early && report.age_s < horizon_s {
        lost = Some(match lost {
            Some(t) => t.min(report.age_s),
            None => report.age_s,
        });
    }
    lost.filter(|t| *t <= horizon_s)
}

/// Cumulative fraction of features lost by age, on a uniform grid over
/// `[0, horizon]`. Non-decreasing and bounded in `[0, 1]` by construction.
pub fn feature_age_cdf(
    reports: &[FeatureErrorReport],
    horizon_s: f64,
    grid_points: usize,
) -> Result<Vec<(f64, f64)>, EvalError> {
    if reports.is_empty() || grid_points < 2 {
        return Err(EvalError::EmptyInput);
    }
    let lost_ages: Vec<Option<f64>> = reports.iter().map(|r| lost_age_s(r, horizon_s)).collect();
    let n = reports.len() as f64;
    let samples = (0..grid_points)
        .map(|i| {
            let t = horizon_s * i as f64 / (grid_points - 1) as f64;
            let lost = lost_ages
                .iter()
                .filter(|age| matches!(age, Some(a) if *a <= t))
                .count();
            (t, lost as f64 / n)
        })
        .collect();
    Ok(samples)
}
