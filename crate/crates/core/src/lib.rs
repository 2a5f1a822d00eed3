//! Domain types, metric arithmetic and deterministic RNG contracts shared by
//! every crate of the visuo-motor control benchmark.
//!
//! Everything here is immutable after construction; the metric functions are
//! pure and can be called from any worker thread.

pub mod episode;
pub mod error;
pub mod metrics;
pub mod obs;
pub mod rng;
pub mod texture;

pub use episode::{DemoDataset, EpisodeRecord, Frame, FrameShape};
pub use error::CoreError;
pub use metrics::{aggregate_ci, normalize_return, top_k_mean, Aggregate, MetricKind, MetricSeries};
pub use obs::{ObservationBatch, ValueDomain};
pub use rng::RngPolicy;
