//! Score → training example: quantize, label, tokenize, pad.

use alloc::string::String;
use alloc::vec::Vec;

use crate::diagnostic::Diagnostic;
use crate::labeling::{detect_key, velocity_labels, EmotionClass, LabelError, LabelSet};
use crate::midi::{quantize, Score};
use crate::tokenizer::{Representation, TokenizeError, Tokenizer};
use crate::train::Example;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrepareError {
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
}

/// Facts about one prepared clip worth reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareInfo {
    pub notes: usize,
    /// Token count before padding or truncation.
    pub full_length: usize,
    pub truncated: bool,
}

/// Runs the preprocessing chain for one clip. The key is detected on the
/// unquantized score; velocity labels follow token order and are cut to the
/// kept positions.
pub fn prepare_example(
    id: impl Into<String>,
    score: &Score,
    emotion: EmotionClass,
    representation: Representation,
    tokenizer: &Tokenizer,
    max_len: usize,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<(Example, PrepareInfo), PrepareError> {
    let key = detect_key(score, diagnostics)?.key;
    let q = quantize(score, tokenizer.config().subdivisions_per_beat);
    let tokens = tokenizer.encode(representation, &q, diagnostics)?;
    let full_length = tokens.len();
    let tokens = tokens.pad_or_truncate(max_len);
    let mut note_velocity = velocity_labels(&q);
    if representation == Representation::Cp {
        note_velocity.truncate(tokens.true_length);
    }
    let info = PrepareInfo { notes: q.notes.len(), full_length, truncated: full_length > max_len };
    let example = Example { id: id.into(), tokens, labels: LabelSet { emotion, key, note_velocity } };
    Ok((example, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{KeyClass, Mode, VelocityClass};
    use crate::midi::NoteEvent;
    use crate::tokenizer::TokenizerConfig;
    use alloc::vec;

    fn score() -> Score {
        let notes = [60u8, 64, 67, 72, 67, 64, 60]
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent { onset_ticks: i as u64 * 240, duration_ticks: 240, pitch: p, velocity: 20 + 15 * i as u8, channel: 0 })
            .collect();
        Score::new(480, notes, vec![], vec![])
    }

    #[test]
    fn cp_example_aligns_velocity_with_tokens() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let mut d = Vec::new();
        let (ex, info) = prepare_example("c", &score(), EmotionClass::Q1, Representation::Cp, &tok, 5, &mut d).unwrap();
        assert_eq!(ex.labels.key, KeyClass::new(0, Mode::Major));
        assert_eq!((info.notes, info.full_length, info.truncated), (7, 7, true));
        assert_eq!(ex.tokens.true_length, 5);
        assert_eq!(ex.labels.note_velocity.len(), 5);
        assert_eq!(ex.labels.note_velocity[0], VelocityClass::Pp);
        assert_eq!(ex.labels.note_velocity[4], VelocityClass::F);
    }

    #[test]
    fn sw_example_pads() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let mut d = Vec::new();
        let (ex, info) = prepare_example("s", &score(), EmotionClass::Q3, Representation::Sw, &tok, 64, &mut d).unwrap();
        assert!(!info.truncated);
        assert_eq!(ex.tokens.len(), 64);
        assert_eq!(ex.tokens.true_length, info.full_length);
    }

    #[test]
    fn empty_score_fails() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let empty = Score::new(480, vec![], vec![], vec![]);
        let r = prepare_example("e", &empty, EmotionClass::Q1, Representation::Cp, &tok, 8, &mut Vec::new());
        assert_eq!(r.unwrap_err(), PrepareError::Label(LabelError::NoNotes));
    }
}
