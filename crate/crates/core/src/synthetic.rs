//! Deterministic toy corpora with known ground truth, for tests and smoke runs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::diagnostic::Diagnostic;
use crate::labeling::{EmotionClass, KeyClass, Mode};
use crate::midi::{NoteEvent, Score};
use crate::model::TrainRng;
use crate::pipeline::{prepare_example, PrepareError};
use crate::tokenizer::{Representation, Tokenizer};
use crate::train::Example;

pub const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
pub const NATURAL_MINOR_STEPS: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

const PPQ: u16 = 480;
/// Ticks per sub-beat at four subdivisions of a quarter.
const STEP: u64 = 120;

pub fn scale_steps(mode: Mode) -> [u8; 7] {
    match mode {
        Mode::Major => MAJOR_STEPS,
        Mode::Minor => NATURAL_MINOR_STEPS,
    }
}

/// Ascending one-octave scale from the tonic above middle C to its octave,
/// eight quarter notes at velocity 80.
pub fn scale_clip(key: KeyClass) -> Score {
    let root = 60 + key.tonic;
    let notes = scale_steps(key.mode)
        .iter()
        .chain(&[12])
        .enumerate()
        .map(|(i, &s)| NoteEvent { onset_ticks: i as u64 * 480, duration_ticks: 480, pitch: root + s, velocity: 80, channel: 0 })
        .collect();
    Score::new(PPQ, notes, Vec::new(), Vec::new())
}

/// Major keys read as positive valence; loud clips as high arousal.
pub fn emotion_for(mode: Mode, loud: bool) -> EmotionClass {
    match (mode, loud) {
        (Mode::Major, true) => EmotionClass::Q1,
        (Mode::Minor, true) => EmotionClass::Q2,
        (Mode::Minor, false) => EmotionClass::Q3,
        (Mode::Major, false) => EmotionClass::Q4,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub clips: usize,
    pub seed: u64,
    /// Probability of replacing the emotion with a different random class.
    pub label_noise: f64,
    pub min_notes: usize,
    pub max_notes: usize,
    /// When set, loud clips favour short notes and each note's velocity
    /// follows its own duration, so loudness is visible without velocity
    /// tokens. Otherwise every note of a clip shares one loudness range and
    /// durations are one or two sub-beats.
    pub duration_cue: bool,
    /// Tonics are drawn from pitch classes `0..tonics`.
    pub tonics: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub id: String,
    pub song_id: String,
    pub score: Score,
    pub emotion: EmotionClass,
    /// Key the melody was drawn from.
    pub key: KeyClass,
    pub loud: bool,
}

/// Quadrants cycle Q1..Q4 so classes stay balanced; tonic, melody, rhythm
/// and dynamics are drawn from a ChaCha stream seeded by `spec.seed`.
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<SyntheticClip> {
    assert!(spec.min_notes >= 1 && spec.min_notes <= spec.max_notes, "note range must be non-empty");
    assert!((1..=12).contains(&spec.tonics), "tonic pool must be 1..=12");
    let mut rng = TrainRng::seed_from_u64(spec.seed);
    (0..spec.clips)
        .map(|i| {
            let quadrant = EmotionClass::ALL[i % 4];
            let (mode, loud) = match quadrant {
                EmotionClass::Q1 => (Mode::Major, true),
                EmotionClass::Q2 => (Mode::Minor, true),
                EmotionClass::Q3 => (Mode::Minor, false),
                EmotionClass::Q4 => (Mode::Major, false),
            };
            let key = KeyClass::new(rng.random_range(0..spec.tonics), mode);
            let steps = scale_steps(mode);
            let n = rng.random_range(spec.min_notes..=spec.max_notes);
            let mut onset = 0u64;
            let mut notes = Vec::with_capacity(n);
            for k in 0..n {
                // tonic, third and fifth dominate so the key is recoverable
                let degree = if k == 0 || k + 1 == n {
                    0
                } else {
                    match rng.random_range(0..14) {
                        0..=3 => 0,
                        4..=6 => 2,
                        7..=9 => 4,
                        10 => 1,
                        11 => 3,
                        12 => 5,
                        _ => 6,
                    }
                };
                let octave = if rng.random_bool(0.3) { 12 } else { 0 };
                let pitch = 60 + key.tonic + steps[degree] + octave;
                let (dur, velocity) = if spec.duration_cue {
                    let short = rng.random_bool(if loud { 0.8 } else { 0.2 });
                    let dur = if short { rng.random_range(1..=2) } else { [4, 6, 8][rng.random_range(0..3)] };
                    let vel = if short { rng.random_range(84..=120) } else { rng.random_range(24..=60) };
                    (dur, vel)
                } else {
                    let vel = if loud { rng.random_range(88..=120) } else { rng.random_range(20..=60) };
                    (rng.random_range(1..=2), vel)
                };
                notes.push(NoteEvent { onset_ticks: onset * STEP, duration_ticks: dur * STEP, pitch, velocity, channel: 0 });
                onset += dur;
            }
            let mut emotion = quadrant;
            if spec.label_noise > 0.0 && rng.random_bool(spec.label_noise) {
                let shift = rng.random_range(1..4);
                emotion = EmotionClass::ALL[(i + shift) % 4];
            }
            SyntheticClip {
                id: format!("clip{i:04}"),
                song_id: format!("song{i:04}"),
                score: Score::new(PPQ, notes, Vec::new(), Vec::new()),
                emotion,
                key,
                loud,
            }
        })
        .collect()
}

/// Runs every clip through [`prepare_example`].
pub fn build_examples(
    clips: &[SyntheticClip],
    representation: Representation,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<Vec<Example>, PrepareError> {
    let mut diagnostics: Vec<Diagnostic> = Vec::new();
    clips
        .iter()
        .map(|c| prepare_example(c.id.clone(), &c.score, c.emotion, representation, tokenizer, max_len, &mut diagnostics).map(|(e, _)| e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::detect_key;
    use crate::tokenizer::TokenizerConfig;

    fn spec(duration_cue: bool) -> CorpusSpec {
        CorpusSpec { clips: 64, seed: 3, label_noise: 0.0, min_notes: 8, max_notes: 12, duration_cue, tonics: 12 }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_corpus(&spec(false));
        assert_eq!(a, generate_corpus(&spec(false)));
        for q in EmotionClass::ALL {
            assert_eq!(a.iter().filter(|c| c.emotion == q).count(), 16);
        }
    }

    #[test]
    fn generated_keys_are_mostly_detected() {
        let clips = generate_corpus(&spec(true));
        let hits = clips.iter().filter(|c| detect_key(&c.score, &mut Vec::new()).unwrap().key == c.key).count();
        assert!(hits * 10 >= clips.len() * 7, "{hits}/{}", clips.len());
    }

    #[test]
    fn label_noise_flips_some() {
        let mut s = spec(false);
        s.label_noise = 0.25;
        s.clips = 400;
        let clips = generate_corpus(&s);
        let flipped = clips.iter().filter(|c| c.emotion != emotion_for(c.key.mode, c.loud)).count();
        assert!((60..140).contains(&flipped), "{flipped}");
    }

    #[test]
    fn examples_fit_tiny_length() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let ex = build_examples(&generate_corpus(&spec(false)), Representation::Sw, &tok, 64).unwrap();
        assert!(ex.iter().all(|e| e.tokens.true_length <= 64));
        let ex = build_examples(&generate_corpus(&spec(true)), Representation::Cp, &tok, 64).unwrap();
        assert!(ex.iter().all(|e| e.labels.note_velocity.len() == e.tokens.true_length));
    }
}
