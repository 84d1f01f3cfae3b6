//! Dataset ingestion, configuration files and artifact persistence.

pub mod config;
pub mod fsutil;
pub mod idx;
pub mod pipeline;

pub use config::RunConfig;
pub use fsutil::atomic_write;
pub use idx::{load_idx, Dataset, Split};
pub use pipeline::Pipeline;
