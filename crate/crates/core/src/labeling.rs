//! Label derivation: velocity dynamics classes, Krumhansl-Kessler key finding,
//! and valence/arousal to Russell-quadrant mapping.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::midi::{pitch_class_profile, QuantizedScore, Score};
use crate::Diagnostic;

/// Krumhansl-Kessler major probe-tone profile, tonic first.
pub const KK_MAJOR: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
/// Krumhansl-Kessler minor probe-tone profile, tonic first.
pub const KK_MINOR: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("velocity {0} is outside 0..=127")]
    VelocityOutOfRange(i32),
    #[error("no notes")]
    NoNotes,
    #[error("unmapped boundary label: valence {valence}, arousal {arousal}")]
    BoundaryLabel { valence: i32, arousal: i32 },
    #[error("unknown emotion label {0:?}")]
    UnknownEmotion(String),
    #[error("class id {id} out of range for {what}")]
    BadId { what: &'static str, id: u8 },
}

/// Six MIDI dynamics bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VelocityClass {
    Pp = 0,
    P = 1,
    Mp = 2,
    Mf = 3,
    F = 4,
    Ff = 5,
}

impl VelocityClass {
    pub const COUNT: usize = 6;
    pub const ALL: [VelocityClass; 6] = [Self::Pp, Self::P, Self::Mp, Self::Mf, Self::F, Self::Ff];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, LabelError> {
        Self::ALL.get(usize::from(id)).copied().ok_or(LabelError::BadId { what: "velocity class", id })
    }

    pub fn name(self) -> &'static str {
        ["pp", "p", "mp", "mf", "f", "ff"][self as usize]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Inclusive velocity range covered by this bin.
    pub fn range(self) -> (u8, u8) {
        match self {
            Self::Pp => (0, 31),
            Self::P => (32, 47),
            Self::Mp => (48, 63),
            Self::Mf => (64, 79),
            Self::F => (80, 95),
            Self::Ff => (96, 127),
        }
    }

    /// Midpoint of the bin; what the single-word decoder writes back.
    pub fn representative(self) -> u8 {
        let (lo, hi) = self.range();
        ((u16::from(lo) + u16::from(hi) + 1) / 2) as u8
    }
}

/// Bins a MIDI velocity: pp 0-31, p 32-47, mp 48-63, mf 64-79, f 80-95, ff 96-127.
pub fn quantize_velocity(velocity: i32) -> Result<VelocityClass, LabelError> {
    Ok(match velocity {
        0..=31 => VelocityClass::Pp,
        32..=47 => VelocityClass::P,
        48..=63 => VelocityClass::Mp,
        64..=79 => VelocityClass::Mf,
        80..=95 => VelocityClass::F,
        96..=127 => VelocityClass::Ff,
        _ => return Err(LabelError::VelocityOutOfRange(velocity)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Major = 0,
    Minor = 1,
}

/// One of the 24 major/minor keys. Its id is `tonic * 2 + mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyClass {
    pub tonic: u8,
    pub mode: Mode,
}

impl KeyClass {
    pub const COUNT: usize = 24;

    pub fn new(tonic: u8, mode: Mode) -> Self {
        assert!(tonic < 12, "tonic must be a pitch class");
        Self { tonic, mode }
    }

    pub fn id(self) -> u8 {
        self.tonic * 2 + self.mode as u8
    }

    pub fn from_id(id: u8) -> Result<Self, LabelError> {
        if usize::from(id) >= Self::COUNT {
            return Err(LabelError::BadId { what: "key", id });
        }
        Ok(Self { tonic: id / 2, mode: if id % 2 == 0 { Mode::Major } else { Mode::Minor } })
    }

    pub fn transposed(self, semitones: i32) -> Self {
        Self { tonic: (i32::from(self.tonic) + semitones).rem_euclid(12) as u8, mode: self.mode }
    }
}

impl fmt::Display for KeyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "major",
            Mode::Minor => "minor",
        };
        write!(f, "{} {}", PITCH_NAMES[usize::from(self.tonic)], mode)
    }
}

/// Russell circumplex quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionClass {
    /// High valence, high arousal.
    Q1 = 0,
    /// Low valence, high arousal.
    Q2 = 1,
    /// Low valence, low arousal.
    Q3 = 2,
    /// High valence, low arousal.
    Q4 = 3,
}

impl EmotionClass {
    pub const COUNT: usize = 4;
    pub const ALL: [EmotionClass; 4] = [Self::Q1, Self::Q2, Self::Q3, Self::Q4];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, LabelError> {
        Self::ALL.get(usize::from(id)).copied().ok_or(LabelError::BadId { what: "emotion", id })
    }

    pub fn name(self) -> &'static str {
        ["Q1", "Q2", "Q3", "Q4"][self as usize]
    }

    pub fn alias(self) -> &'static str {
        ["HVHA", "LVHA", "LVLA", "HVLA"][self as usize]
    }
}

impl fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionClass {
    type Err = LabelError;

    /// Accepts `Q1`..`Q4` (any case) or the HVHA/LVHA/LVLA/HVLA aliases.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|e| t.eq_ignore_ascii_case(e.name()) || t.eq_ignore_ascii_case(e.alias()))
            .ok_or_else(|| LabelError::UnknownEmotion(t.into()))
    }
}

/// Sign pair to quadrant: (+,+) Q1, (-,+) Q2, (-,-) Q3, (+,-) Q4.
pub fn map_va_to_quadrant(valence: i32, arousal: i32) -> Result<EmotionClass, LabelError> {
    match (valence.signum(), arousal.signum()) {
        (1, 1) => Ok(EmotionClass::Q1),
        (-1, 1) => Ok(EmotionClass::Q2),
        (-1, -1) => Ok(EmotionClass::Q3),
        (1, -1) => Ok(EmotionClass::Q4),
        _ => Err(LabelError::BoundaryLabel { valence, arousal }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyEstimate {
    pub key: KeyClass,
    /// Indexed by [`KeyClass::id`].
    pub correlations: [f64; 24],
}

/// Pearson correlation of the profile rotated to `tonic` against `template`.
/// Sums run in rotated order so a transposed profile reproduces the same bits.
fn rotated_pearson(profile: &[f64; 12], tonic: usize, template: &[f64; 12]) -> Option<f64> {
    let x = |i: usize| profile[(tonic + i) % 12];
    let mean_x = (0..12).map(x).sum::<f64>() / 12.0;
    let mean_y = template.iter().sum::<f64>() / 12.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, &y) in template.iter().enumerate() {
        let dx = x(i) - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = libm::sqrt(sxx * syy);
    (denom > 0.0).then(|| sxy / denom)
}

/// Krumhansl-Kessler key finding over the duration-weighted pitch-class
/// profile. Ties go to the lowest tonic, major before minor.
///
/// A profile with a single active pitch class takes that pitch class as a
/// major tonic; a flat profile (zero variance) reports all-zero correlations
/// and C major. Both cases push a [`Diagnostic::KeyFallback`].
pub fn detect_key(score: &Score, diagnostics: &mut Vec<Diagnostic>) -> Result<KeyEstimate, LabelError> {
    if score.is_empty() {
        return Err(LabelError::NoNotes);
    }
    let profile = pitch_class_profile(score);
    let mut correlations = [0.0; 24];
    let mut flat = false;
    for tonic in 0..12 {
        for (mode, template) in [(Mode::Major, &KK_MAJOR), (Mode::Minor, &KK_MINOR)] {
            match rotated_pearson(&profile, tonic, template) {
                Some(r) => correlations[tonic * 2 + mode as usize] = r,
                None => flat = true,
            }
        }
    }

    let active: Vec<usize> = (0..12).filter(|&k| profile[k] > 0.0).collect();
    if flat {
        diagnostics.push(Diagnostic::KeyFallback { reason: "pitch-class profile has zero variance".into() });
        return Ok(KeyEstimate { key: KeyClass::new(0, Mode::Major), correlations: [0.0; 24] });
    }
    if let [only] = active[..] {
        diagnostics.push(Diagnostic::KeyFallback {
            reason: alloc::format!("single pitch class {}", PITCH_NAMES[only]),
        });
        return Ok(KeyEstimate { key: KeyClass::new(only as u8, Mode::Major), correlations });
    }

    let mut best = 0usize;
    for id in 1..24 {
        if correlations[id] > correlations[best] {
            best = id;
        }
    }
    Ok(KeyEstimate { key: KeyClass::from_id(best as u8)?, correlations })
}

/// Emotion target plus the two automatically derived auxiliary targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub emotion: EmotionClass,
    pub key: KeyClass,
    /// One entry per note, in the order of the notes it was derived from.
    pub note_velocity: Vec<VelocityClass>,
}

/// Derives key and per-note velocity labels for a non-empty score.
pub fn derive_labels(
    score: &Score,
    emotion: EmotionClass,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<LabelSet, LabelError> {
    let key = detect_key(score, diagnostics)?.key;
    let note_velocity = score
        .notes
        .iter()
        .map(|n| quantize_velocity(i32::from(n.velocity)))
        .collect::<Result<_, _>>()?;
    Ok(LabelSet { emotion, key, note_velocity })
}

/// Velocity classes in quantized-note order, which is the order the
/// compound-word tokenizer emits tokens in.
pub fn velocity_labels(q: &QuantizedScore) -> Vec<VelocityClass> {
    q.notes
        .iter()
        .map(|n| quantize_velocity(i32::from(n.velocity)).expect("u8 velocity masked to 7 bits"))
        .collect()
}
