//! Symbolic music emotion recognition core.
//!
//! Everything here is allocation-only (`alloc`, no `std`): Standard MIDI File
//! parsing and writing, sub-beat quantization, compound-word and single-word
//! tokenizers, automatic key/velocity labeling, a small transformer encoder
//! with hand-written backpropagation, the adaptive multi-task loss, AdamW, and
//! the epoch loop with early stopping. File formats, the CLI and anything that
//! touches the filesystem live in the `smer` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostic;
pub mod labeling;
pub mod midi;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use diagnostic::Diagnostic;
pub use labeling::{EmotionClass, KeyClass, LabelSet, Mode, VelocityClass};
pub use midi::{NoteEvent, QuantizedNote, QuantizedScore, Score};
pub use model::{Model, ModelConfig, ParameterStore, PoolerKind, Task, TaskSet};
pub use tokenizer::{Representation, TokenSequence, Tokenizer, TokenizerConfig};
