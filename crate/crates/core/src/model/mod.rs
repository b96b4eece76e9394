//! Transformer encoder-decoder with independently sized stacks.

mod checkpoint;
mod config;
mod forward;
mod inference;
mod params;

pub use checkpoint::{write_atomic, Checkpoint, MAGIC};
pub use config::ModelConfig;
pub use forward::{sinusoidal_positions, Mode, ParamVars};
pub use inference::{DecoderCache, EncodedSource};
pub use params::{init_student_from_teacher, param_count, param_shapes, Model};
