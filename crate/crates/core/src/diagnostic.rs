//! Non-fatal warnings raised while parsing, tokenizing or labeling.

use alloc::string::String;
use core::fmt;

/// A recoverable oddity in the input. Operations that can produce these push
/// them into a caller-supplied `Vec<Diagnostic>` and keep going.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// A note-on never saw its note-off; it was closed at the end of its track.
    UnterminatedNote { track: usize, channel: u8, pitch: u8, onset: u64 },
    /// A note-off with no matching open note.
    OrphanNoteOff { track: usize, channel: u8, pitch: u8, tick: u64 },
    /// A note-off arrived on the same tick as its note-on; duration set to 1.
    ZeroLengthNote { channel: u8, pitch: u8, onset: u64 },
    /// A duration exceeded the tokenizer's table and was clamped.
    DurationClamped { note: usize, duration: u32, max: u32 },
    /// Key correlation was degenerate; the key came from the fallback rule.
    KeyFallback { reason: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnterminatedNote { track, channel, pitch, onset } => write!(
                f,
                "track {track}: note {pitch} on channel {channel} starting at tick {onset} has no note-off; closed at end of track"
            ),
            Self::OrphanNoteOff { track, channel, pitch, tick } => write!(
                f,
                "track {track}: note-off for pitch {pitch} on channel {channel} at tick {tick} has no open note"
            ),
            Self::ZeroLengthNote { channel, pitch, onset } => write!(
                f,
                "zero-length note {pitch} on channel {channel} at tick {onset}; duration set to 1"
            ),
            Self::DurationClamped { note, duration, max } => {
                write!(f, "note {note}: duration {duration} clamped to {max}")
            }
            Self::KeyFallback { reason } => write!(f, "key detection fallback: {reason}"),
        }
    }
}
