//! Drum-pattern latent spaces and beat-conditioned melody generation.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`midi`] reads and writes Standard MIDI Files.
//! * [`pattern`] turns percussion tracks into 14 x 32 drum patterns and
//!   deduplicates them under phase shifts; [`dataset`] stores them as TSV.
//! * [`nn`] is a small dense-network substrate with exact backprop and Adam.
//! * [`latent`] trains AE, VAE and ACAI autoencoders over flattened patterns.
//! * [`eval`] measures how many decoded random latent points survive the
//!   construction-time entropy filter.
//! * [`projection`] is an exact t-SNE used for the 2-d pattern map.
//! * [`melody`] extracts, generates, filters and key-detects melody loops.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod latent;
pub mod melody;
pub mod midi;
pub mod nn;
pub mod pattern;
pub mod projection;

pub use dataset::PatternRecord;
pub use latent::{AutoencoderModel, LatentPoint, ModelKind, TrainConfig};
pub use melody::{KeyId, MelodyContext, MelodyGenerator, MelodyRoll};
pub use midi::{MidiFile, NoteEvent};
pub use pattern::{Codes, DrumPattern};
