//! Streaming retargeting pipeline: configuration, motion-stream I/O, the
//! synthetic humanoid harness, reference smoothing and the frame-by-frame
//! runner that produces joint-trajectory CSVs.

pub mod config;
pub mod harness;
pub mod runner;
pub mod smoother;
pub mod stream;

pub use config::{load_model_ref, ConfigError, ModelRefError, StreamConfig};
pub use harness::{
    canonical_links, default_sinusoids, generate_synthetic_stream, preset_model, HarnessError,
    SinusoidSpec, StreamSpec, CANONICAL_LINKS, PRESET_NAMES,
};
pub use runner::{run_stream, RunError, RunSummary, StreamRunner};
pub use smoother::MinJerkSmoother;
pub use stream::{
    format_frame, parse_frame, read_stream, write_stream, FrameReader, StreamError,
};
