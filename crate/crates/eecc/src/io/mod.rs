//! Plain-text formats: event streams, seed lists, tracker configuration,
//! track CSVs and evaluation metrics.

mod config;
mod events;
mod kv;
mod metrics;
mod seeds;
mod track;

pub use config::{Config, ConfigError};
pub use events::{EventParseError, EventReader, StreamHeader, TimestampPolicy};
pub use kv::{parse_kv_lines, KvError, KvPair};
pub use metrics::{write_cdf_csv, write_metrics_csv};
pub use seeds::{parse_seeds, SeedParseError, SeedRejection, SeedSpec, Seeds};
pub use track::{parse_tracks, TrackParseError, TrackWriter};
