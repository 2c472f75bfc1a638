//! In-memory score model, Standard MIDI File codec, and grid quantization.

mod quantize;
mod smf;

pub use quantize::{dequantize, quantize, QuantizedNote, QuantizedScore, DEFAULT_SUBDIVISIONS};
pub use smf::{parse_midi, parse_midi_with_diagnostics, write_midi, MidiError};

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// One sounding note, in absolute ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset_ticks: u64,
    /// Always at least 1.
    pub duration_ticks: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
}

impl NoteEvent {
    fn sort_key(&self) -> (u64, u8, u8, u64, u8) {
        (self.onset_ticks, self.pitch, self.channel, self.duration_ticks, self.velocity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoEvent {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    /// The actual denominator (4 for x/4), not the SMF power-of-two exponent.
    pub denominator: u8,
}

impl TimeSignature {
    pub const COMMON: TimeSignature = TimeSignature { tick: 0, numerator: 4, denominator: 4 };
}

/// A parsed piece: notes merged across tracks, sorted by onset then pitch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub ppq: u16,
    pub notes: Vec<NoteEvent>,
    pub tempo_events: Vec<TempoEvent>,
    pub time_signatures: Vec<TimeSignature>,
}

impl Score {
    /// Builds a score and restores the note ordering invariant. Zero durations
    /// are raised to 1.
    pub fn new(
        ppq: u16,
        mut notes: Vec<NoteEvent>,
        tempo_events: Vec<TempoEvent>,
        time_signatures: Vec<TimeSignature>,
    ) -> Self {
        assert!(ppq > 0, "ppq must be positive");
        for n in &mut notes {
            n.duration_ticks = n.duration_ticks.max(1);
        }
        notes.sort_by_key(NoteEvent::sort_key);
        Self { ppq, notes, tempo_events, time_signatures }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// The meter used for bar arithmetic: the first time signature, or 4/4.
    pub fn meter(&self) -> TimeSignature {
        self.time_signatures.first().copied().unwrap_or(TimeSignature::COMMON)
    }

    pub fn total_duration_ticks(&self) -> u64 {
        self.notes.iter().map(|n| n.duration_ticks).sum()
    }

    /// Shifts every pitch by `semitones`, dropping notes pushed out of 0..=127.
    pub fn transposed(&self, semitones: i32) -> Score {
        let notes = self
            .notes
            .iter()
            .filter_map(|n| {
                let p = i32::from(n.pitch) + semitones;
                (0..=127).contains(&p).then(|| NoteEvent { pitch: p as u8, ..*n })
            })
            .collect();
        Score::new(self.ppq, notes, self.tempo_events.clone(), self.time_signatures.clone())
    }
}

/// Duration-weighted pitch-class histogram: entry `k` sums the tick durations
/// of all notes with `pitch % 12 == k`.
pub fn pitch_class_profile(score: &Score) -> [f64; 12] {
    let mut profile = [0.0; 12];
    for n in &score.notes {
        profile[usize::from(n.pitch % 12)] += n.duration_ticks as f64;
    }
    profile
}
