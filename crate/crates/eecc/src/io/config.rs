//! Tracker configuration: `key = value` text with strict key validation.

use std::io::BufRead;

use thiserror::Error;

use crate::io::events::StreamHeader;
use crate::io::kv::{parse_kv_lines, KvError};
use crate::tracker::TrackerParams;

/// Runtime configuration with the reference defaults: a 31x31 patch, a
/// 193-event buffer and the 5-pixel outlier rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Patch radius `N`.
    pub patch_radius: i32,
    /// Circular buffer size `2M+1`; must be odd.
    pub buffer_events: usize,
    /// Per-event translation clamp in pixels; 0 disables.
    pub clamp_px: f64,
    /// Per-event rotation clamp in degrees; 0 disables.
    pub clamp_deg: f64,
    pub rho_floor: f64,
    pub idle_timeout_s: f64,
    /// Full solver-cache rebuild cadence in accepted events.
    pub refresh_every: u32,
    /// Evaluation outlier threshold in pixels.
    pub outlier_px: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            patch_radius: 15,
            buffer_events: 193,
            clamp_px: 1.0,
            clamp_deg: 2.0,
            rho_floor: 0.2,
            idle_timeout_s: 1.0,
            refresh_every: 1000,
            outlier_px: 5.0,
            width: 240,
            height: 180,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
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
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    /// Parse a config file; absent keys keep their defaults, unknown keys are
    /// rejected, and the result is validated.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, ConfigError> {
        let mut config = Config::default();
        for pair in parse_kv_lines(reader)? {
            let bad = || ConfigError::BadValue {
                line: pair.line,
                key: pair.key.clone(),
                value: pair.value.clone(),
            };
            match pair.key.as_str() {
                "patch_radius" => config.patch_radius = pair.value.parse().map_err(|_| bad())?,
                "buffer_events" => config.buffer_events = pair.value.parse().map_err(|_| bad())?,
                "clamp_px" => config.clamp_px = pair.value.parse().map_err(|_| bad())?,
                "clamp_deg" => config.clamp_deg = pair.value.parse().map_err(|_| bad())?,
                "rho_floor" => config.rho_floor = pair.value.parse().map_err(|_| bad())?,
                "idle_timeout_s" => config.idle_timeout_s = pair.value.parse().map_err(|_| bad())?,
                "refresh_every" => config.refresh_every = pair.value.parse().map_err(|_| bad())?,
                "outlier_px" => config.outlier_px = pair.value.parse().map_err(|_| bad())?,
                "width" => config.width = pair.value.parse().map_err(|_| bad())?,
                "height" => config.height = pair.value.parse().map_err(|_| bad())?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: pair.line,
                        key: pair.key,
                    })
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.patch_radius < 2 {
            return fail(format!("patch_radius must be >= 2, got {}", self.patch_radius));
        }
        if self.buffer_events < 9 || self.buffer_events % 2 == 0 {
            return fail(format!(
                "buffer_events must be odd and >= 9, got {}",
                self.buffer_events
            ));
        }
        if !(self.outlier_px > 0.0) {
            return fail(format!("outlier_px must be positive, got {}", self.outlier_px));
        }
        if self.clamp_px < 0.0 || !self.clamp_px.is_finite() {
            return fail(format!("clamp_px must be finite and >= 0, got {}", self.clamp_px));
        }
        if self.clamp_deg < 0.0 || !self.clamp_deg.is_finite() {
            return fail(format!("clamp_deg must be finite and >= 0, got {}", self.clamp_deg));
        }
        if !(0.0..1.0).contains(&self.rho_floor) {
            return fail(format!("rho_floor must be in [0, 1), got {}", self.rho_floor));
        }
        if !(self.idle_timeout_s > 0.0) {
            return fail(format!(
                "idle_timeout_s must be positive, got {}",
                self.idle_timeout_s
            ));
        }
        if self.refresh_every == 0 {
            return fail("refresh_every must be >= 1".to_string());
        }
        if self.width < 1 || self.height < 1 {
            return fail(format!("sensor size {}x{} invalid", self.width, self.height));
        }
        let window = 2 * self.patch_radius + 1;
        if u32::try_from(window).map_or(true, |w| w > self.width.min(self.height)) {
            return fail(format!(
                "window of side {} does not fit the {}x{} sensor",
                window, self.width, self.height
            ));
        }
        Ok(())
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(self.width, self.height)
    }

    pub fn tracker_params(&self) -> TrackerParams {
        TrackerParams {
            radius: self.patch_radius,
            buffer_capacity: self.buffer_events,
            clamp_px: self.clamp_px,
            clamp_rad: self.clamp_deg.to_radians(),
            rho_floor: self.rho_floor,
            idle_timeout_us: (self.idle_timeout_s * 1e6).round() as i64,
            refresh_every: self.refresh_every,
            width: self.width,
            height: self.height,
        }
    }
}
