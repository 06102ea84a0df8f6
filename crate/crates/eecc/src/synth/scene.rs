//! Scene geometry (an edge pattern moving rigidly through the sensor) and
//! the scenario file describing it.

use std::io::BufRead;

use thiserror::Error;

use crate::io::{parse_kv_lines, KvError};
use crate::mat::Vec2;

/// One edge of the pattern, in pattern-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn length(&self) -> f64 {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn point_at(&self, frac: f64) -> Vec2 {
        [
            self.a[0] + (self.b[0] - self.a[0]) * frac,
            self.a[1] + (self.b[1] - self.a[1]) * frac,
        ]
    }
}

/// An edge pattern that fires events as it moves, plus background noise.
/// Seed anchors are pattern-frame points worth tracking (for the star
/// pattern, its vertices).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub segments: Vec<Segment>,
    pub seed_anchors: Vec<Vec2>,
    /// Events per pixel of edge length per second.
    pub events_per_edge_px: f64,
    /// Uniform background events per second over the whole sensor.
    pub noise_rate: f64,
    /// Gaussian position jitter applied to edge events, in pixels.
    pub jitter_px: f64,
    pub width: u32,
    pub height: u32,
}

impl SyntheticScene {
    /// Star polygon with `points` tips: `2 * points` vertices alternating
    /// between the outer and inner radius, joined by edges. Every vertex is a
    /// seed anchor.
    pub fn star(points: usize, inner_radius: f64, outer_radius: f64) -> Self {
        assert!(points >= 2, "a star needs at least two points");
        let n = 2 * points;
        let mut vertices = Vec::with_capacity(n);
        for k in 0..n {
            let angle = k as f64 * std::f64::consts::PI / points as f64;
            let r = if k % 2 == 0 { outer_radius } else { inner_radius };
            vertices.push([r * angle.cos(), r * angle.sin()]);
        }
        let segments = (0..n)
            .map(|k| Segment {
                a: vertices[k],
                b: vertices[(k + 1) % n],
            })
            .collect();
        Self {
            segments,
            seed_anchors: vertices,
            events_per_edge_px: 1500.0,
            noise_rate: 1000.0,
            jitter_px: 0.3,
            width: 240,
            height: 180,
        }
    }

    pub fn total_edge_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.segments.is_empty() {
            return Err(ScenarioError::Invalid("pattern has no segments".into()));
        }
        for segment in &self.segments {
            let coords = [segment.a[0], segment.a[1], segment.b[0], segment.b[1]];
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(ScenarioError::Invalid(format!("non-finite segment {segment:?}")));
            }
        }
        for anchor in &self.seed_anchors {
            if !anchor[0].is_finite() || !anchor[1].is_finite() {
                return Err(ScenarioError::Invalid(format!("non-finite seed anchor {anchor:?}")));
            }
        }
        if !(self.total_edge_length() > 0.0) {
            return Err(ScenarioError::Invalid("pattern has zero edge length".into()));
        }
        let rates = [self.events_per_edge_px, self.noise_rate, self.jitter_px];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(ScenarioError::Invalid(
                "rates and jitter must be finite and non-negative".into(),
            ));
        }
        if self.width < 2 || self.height < 2 {
            return Err(ScenarioError::Invalid(format!(
                "sensor {}x{} too small",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// One constant-velocity stretch of the pattern's rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPhase {
    pub vx: f64,
    pub vy: f64,
    /// Angular velocity in radians per second.
    pub omega: f64,
    pub duration_s: f64,
}

/// Piecewise-constant-velocity trajectory of the pattern center and
/// orientation; continuous by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    /// Pattern center at t = 0, in global pixels.
    pub start: Vec2,
    pub phases: Vec<MotionPhase>,
}

impl MotionProfile {
    pub fn duration_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    /// Pattern pose (center, orientation) at a time, clamped to the profile's
    /// span.
    pub fn pose_at(&self, t_s: f64) -> (Vec2, f64) {
        let mut center = self.start;
        let mut angle = 0.0;
        let mut remaining = t_s.max(0.0);
        for phase in &self.phases {
            let dt = remaining.min(phase.duration_s);
            center[0] += phase.vx * dt;
            center[1] += phase.vy * dt;
            angle += phase.omega * dt;
            remaining -= dt;
            if remaining <= 0.0 {
                break;
            }
        }
        (center, angle)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.phases.is_empty() || self.duration_s() <= 0.0 {
            return Err(ScenarioError::Invalid("motion profile has zero duration".into()));
        }
        for phase in &self.phases {
            if !(phase.duration_s > 0.0)
                || !phase.vx.is_finite()
                || !phase.vy.is_finite()
                || !phase.omega.is_finite()
            {
                return Err(ScenarioError::Invalid(format!("bad motion phase {phase:?}")));
            }
        }
        Ok(())
    }
}

/// A complete synthetic experiment: scene, motion and when features seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scene: SyntheticScene,
    pub motion: MotionProfile,
    pub seed_time_s: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.scene.validate()?;
        self.motion.validate()?;
        if !(self.seed_time_s >= 0.0 && self.seed_time_s < self.motion.duration_s()) {
            return Err(ScenarioError::Invalid(format!(
                "seed_time_s {} outside the motion span",
                self.seed_time_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Format(#[from] KvError),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: u64, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue {
        line: u64,
        key: String,
        value: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Parse a scenario description: the same `key = value` format as the
/// config, with repeatable `phase` (`vx vy omega_deg_s duration_s`) and
/// `segment` (`ax ay bx by`) keys.
pub fn parse_scenario<R: BufRead>(reader: R) -> Result<Scenario, ScenarioError> {
    let mut pattern = String::from("star");
    let mut star_points = 5usize;
    let mut star_inner = 10.0;
    let mut star_outer = 25.0;
    let mut center = [120.0, 90.0];
    let mut events_per_edge_px = 1500.0;
    let mut noise_rate = 1000.0;
    let mut jitter_px = 0.3;
    let mut width = 240u32;
    let mut height = 180u32;
    let mut seed_time_s = 0.0;
    let mut phases: Vec<MotionPhase> = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();

    for pair in parse_kv_lines(reader)? {
        let bad = || ScenarioError::BadValue {
            line: pair.line,
            key: pair.key.clone(),
            value: pair.value.clone(),
        };
        let numbers = |expected: usize| -> Result<Vec<f64>, ScenarioError> {
            let parsed: Result<Vec<f64>, _> =
                pair.value.split_whitespace().map(str::parse).collect();
            match parsed {
                Ok(v) if v.len() == expected => Ok(v),
                _ => Err(bad()),
            }
        };
        match pair.key.as_str() {
            "pattern" => pattern = pair.value.clone(),
            "star_points" => star_points = pair.value.parse().map_err(|_| bad())?,
            "star_inner_px" => star_inner = pair.value.parse().map_err(|_| bad())?,
            "star_outer_px" => star_outer = pair.value.parse().map_err(|_| bad())?,
            "center_x" => center[0] = pair.value.parse().map_err(|_| bad())?,
            "center_y" => center[1] = pair.value.parse().map_err(|_| bad())?,
            "events_per_edge_px_s" => events_per_edge_px = pair.value.parse().map_err(|_| bad())?,
            "noise_rate_ev_s" => noise_rate = pair.value.parse().map_err(|_| bad())?,
            "jitter_px" => jitter_px = pair.value.parse().map_err(|_| bad())?,
            "width" => width = pair.value.parse().map_err(|_| bad())?,
            "height" => height = pair.value.parse().map_err(|_| bad())?,
            "seed_time_s" => seed_time_s = pair.value.parse().map_err(|_| bad())?,
            "phase" => {
                let v = numbers(4)?;
                phases.push(MotionPhase {
                    vx: v[0],
                    vy: v[1],
                    omega: v[2].to_radians(),
                    duration_s: v[3],
                });
            }
            "segment" => {
                let v = numbers(4)?;
                segments.push(Segment {
                    a: [v[0], v[1]],
                    b: [v[2], v[3]],
                });
            }
            _ => {
                return Err(ScenarioError::UnknownKey {
                    line: pair.line,
                    key: pair.key,
                })
            }
        }
    }

    let mut scene = match pattern.as_str() {
        "star" => {
            if star_points < 2 {
                return Err(ScenarioError::Invalid(format!(
                    "star_points must be >= 2, got {star_points}"
                )));
            }
            SyntheticScene::star(star_points, star_inner, star_outer)
        }
        "segments" => {
            let mut anchors: Vec<Vec2> = Vec::new();
            for seg in &segments {
                for p in [seg.a, seg.b] {
                    if !anchors.iter().any(|q| q == &p) {
                        anchors.push(p);
                    }
                }
            }
            SyntheticScene {
                segments: segments.clone(),
                seed_anchors: anchors,
                ..SyntheticScene::star(2, 1.0, 2.0)
            }
        }
        other => {
            return Err(ScenarioError::Invalid(format!(
                "unknown pattern `{other}` (expected `star` or `segments`)"
            )))
        }
    };
    scene.events_per_edge_px = events_per_edge_px;
    scene.noise_rate = noise_rate;
    scene.jitter_px = jitter_px;
    scene.width = width;
    scene.height = height;

    let scenario = Scenario {
        scene,
        motion: MotionProfile {
            start: center,
            phases,
        },
        seed_time_s,
    };
    scenario.validate()?;
    Ok(scenario)
}
