use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{NoteEvent, Score, TimeSignature};

/// Sixteenth-note grid under a quarter-note beat.
pub const DEFAULT_SUBDIVISIONS: u32 = 4;

/// Ticks per sub-beat used by [`dequantize`].
const DEQUANT_TICKS_PER_SUBBEAT: u64 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantizedNote {
    pub bar: u32,
    /// Position inside the bar, `< subdivisions_per_beat * beats_per_bar`.
    pub subbeat: u32,
    pub pitch: u8,
    pub velocity: u8,
    /// In sub-beats, at least 1.
    pub duration: u32,
}

impl QuantizedNote {
    fn sort_key(&self) -> (u32, u32, u8, u32, u8) {
        (self.bar, self.subbeat, self.pitch, self.duration, self.velocity)
    }
}

/// A score snapped to a sub-beat grid. A beat is one unit of the time
/// signature's denominator, so 4/4 has four quarter-note beats and 6/8 six
/// eighth-note beats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedScore {
    pub subdivisions_per_beat: u32,
    pub beats_per_bar: u32,
    /// Time-signature denominator.
    pub beat_unit: u32,
    pub notes: Vec<QuantizedNote>,
}

impl QuantizedScore {
    /// Sorts notes into canonical order (bar, sub-beat, pitch, duration,
    /// velocity).
    pub fn new(subdivisions_per_beat: u32, beats_per_bar: u32, beat_unit: u32, mut notes: Vec<QuantizedNote>) -> Self {
        assert!(subdivisions_per_beat > 0 && beats_per_bar > 0 && beat_unit > 0);
        notes.sort_by_key(QuantizedNote::sort_key);
        Self { subdivisions_per_beat, beats_per_bar, beat_unit, notes }
    }

    pub fn subbeats_per_bar(&self) -> u32 {
        self.subdivisions_per_beat * self.beats_per_bar
    }

    /// Absolute onset of a note in sub-beats from the start of bar 0.
    pub fn absolute_onset(&self, note: &QuantizedNote) -> u64 {
        u64::from(note.bar) * u64::from(self.subbeats_per_bar()) + u64::from(note.subbeat)
    }

    pub fn with_notes(&self, notes: Vec<QuantizedNote>) -> Self {
        Self::new(self.subdivisions_per_beat, self.beats_per_bar, self.beat_unit, notes)
    }
}

/// Round-half-up of `ticks / step` where `step = 4 * ppq / (den * subdivisions)`.
fn ticks_to_subbeats(ticks: u64, ppq: u64, den: u64, subdivisions: u64) -> u64 {
    (ticks * den * subdivisions + 2 * ppq) / (4 * ppq)
}

/// Snaps every onset and duration onto the sub-beat grid of the first time
/// signature (4/4 when there is none). Durations never drop below one sub-beat.
pub fn quantize(score: &Score, subdivisions_per_beat: u32) -> QuantizedScore {
    assert!(subdivisions_per_beat > 0, "subdivisions_per_beat must be positive");
    let meter = score.meter();
    let (num, den) = if meter.numerator == 0 || meter.denominator == 0 {
        (4, 4)
    } else {
        (u32::from(meter.numerator), u32::from(meter.denominator))
    };
    let ppq = u64::from(score.ppq);
    let bar_len = u64::from(num * subdivisions_per_beat);
    let sub = u64::from(subdivisions_per_beat);
    let notes = score
        .notes
        .iter()
        .map(|n| {
            let t = ticks_to_subbeats(n.onset_ticks, ppq, u64::from(den), sub);
            let d = ticks_to_subbeats(n.duration_ticks, ppq, u64::from(den), sub).max(1);
            QuantizedNote {
                bar: u32::try_from(t / bar_len).expect("bar index overflow"),
                subbeat: (t % bar_len) as u32,
                pitch: n.pitch,
                velocity: n.velocity,
                duration: u32::try_from(d).unwrap_or(u32::MAX),
            }
        })
        .collect();
    QuantizedScore::new(subdivisions_per_beat, num, den, notes)
}

/// Maps grid positions back to ticks at 120 ticks per sub-beat on channel 0.
pub fn dequantize(q: &QuantizedScore) -> Score {
    let ppq = DEQUANT_TICKS_PER_SUBBEAT as u32 * q.subdivisions_per_beat * q.beat_unit / 4;
    let ppq = u16::try_from(ppq).expect("grid too fine to dequantize");
    let notes = q
        .notes
        .iter()
        .map(|n| NoteEvent {
            onset_ticks: q.absolute_onset(n) * DEQUANT_TICKS_PER_SUBBEAT,
            duration_ticks: u64::from(n.duration) * DEQUANT_TICKS_PER_SUBBEAT,
            pitch: n.pitch,
            velocity: n.velocity,
            channel: 0,
        })
        .collect();
    let ts = TimeSignature {
        tick: 0,
        numerator: u8::try_from(q.beats_per_bar).expect("numerator overflow"),
        denominator: u8::try_from(q.beat_unit).expect("denominator overflow"),
    };
    Score::new(ppq, notes, Vec::new(), alloc::vec![ts])
}
