//! Compound-word (CP) and single-word (SW) token representations.
//!
//! CP emits one super-token per note with four sub-tokens: bar flag, sub-beat
//! position, pitch and duration. Velocity is deliberately absent so that it
//! stays a prediction target. SW emits `v_<dyn> d_<len> n_<pitch>` per note and
//! one `.` per elapsed sub-beat between onsets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::labeling::{quantize_velocity, VelocityClass};
use crate::midi::{QuantizedNote, QuantizedScore, DEFAULT_SUBDIVISIONS};
use crate::Diagnostic;

pub const PAD_ID: u32 = 0;
pub const PAD_TOKEN: &str = "<pad>";
pub const TIME_SHIFT_TOKEN: &str = ".";
/// Velocity written into notes decoded from CP, which carries no velocity.
pub const CP_VELOCITY_SENTINEL: u8 = 0;

const BAR_NEW: u32 = 1;
const BAR_CONTINUE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Cp,
    Sw,
}

impl Representation {
    /// Whether the input tokens already reveal note velocity, which rules out
    /// velocity as an auxiliary target.
    pub fn velocity_exposed(self) -> bool {
        matches!(self, Self::Sw)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cp => "cp",
            Self::Sw => "sw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizeError {
    #[error("score uses {found} subdivisions per beat but the tokenizer expects {expected}")]
    GridMismatch { expected: u32, found: u32 },
    #[error("note {note}: sub-beat {subbeat} exceeds the table of {size} positions")]
    SubbeatOutOfRange { note: usize, subbeat: u32, size: u32 },
    #[error("expected a {expected} token sequence")]
    WrongRepresentation { expected: &'static str },
    #[error("position {position}: id {id} is not in the {field} table")]
    OutOfVocabulary { position: usize, field: &'static str, id: u32 },
    #[error("position {position}: malformed sequence, {reason}")]
    Malformed { position: usize, reason: &'static str },
    #[error("first note of a compound-word sequence must start a new bar")]
    MissingFirstBar,
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub subdivisions_per_beat: u32,
    /// Sizes the CP sub-beat table: `subdivisions_per_beat * max_beats_per_bar` positions.
    pub max_beats_per_bar: u32,
    /// Longest duration, in sub-beats, with its own token; longer ones clamp.
    pub max_duration: u32,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { subdivisions_per_beat: DEFAULT_SUBDIVISIONS, max_beats_per_bar: 12, max_duration: 64 }
    }
}

/// Bidirectional string/id table. Ids are dense, `<pad>` is always 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTable {
    name: String,
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl TokenTable {
    pub fn new(name: impl Into<String>, tokens: Vec<String>) -> Result<Self, TokenizeError> {
        let name = name.into();
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) {
            return Err(TokenizeError::VocabularyMismatch(format!("table {name} must start with {PAD_TOKEN}")));
        }
        let mut index = BTreeMap::new();
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id as u32).is_some() {
                return Err(TokenizeError::VocabularyMismatch(format!("duplicate token {t:?} in {name}")));
            }
        }
        Ok(Self { name, tokens, index })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Token tables for one representation: four for CP (bar, subbeat, pitch,
/// duration), one for SW.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub representation: Representation,
    pub config: TokenizerConfig,
    pub tables: Vec<TokenTable>,
}

fn numbered<'a>(prefix: &'a str, range: impl Iterator<Item = u32> + 'a) -> impl Iterator<Item = String> + 'a {
    range.map(move |i| format!("{prefix}{i}"))
}

impl Vocabulary {
    pub fn build(representation: Representation, config: TokenizerConfig) -> Self {
        let pad = || core::iter::once(PAD_TOKEN.to_string());
        let tables = match representation {
            Representation::Cp => {
                let positions = config.subdivisions_per_beat * config.max_beats_per_bar;
                alloc::vec![
                    ("bar", pad().chain(["new-bar".to_string(), "continue".to_string()]).collect()),
                    ("subbeat", pad().chain(numbered("", 0..positions)).collect()),
                    ("pitch", pad().chain(numbered("", 0..128)).collect()),
                    ("duration", pad().chain(numbered("", 1..config.max_duration + 1)).collect()),
                ]
            }
            Representation::Sw => {
                let tokens = pad()
                    .chain(core::iter::once(TIME_SHIFT_TOKEN.to_string()))
                    .chain(VelocityClass::ALL.iter().map(|c| format!("v_{}", c.name())))
                    .chain(numbered("d_", 1..config.max_duration + 1))
                    .chain(numbered("n_", 0..128))
                    .collect();
                alloc::vec![("token", tokens)]
            }
        };
        let tables = tables
            .into_iter()
            .map(|(name, tokens)| TokenTable::new(name, tokens).expect("generated tables are well-formed"))
            .collect();
        Self { representation, config, tables }
    }

    /// Rebuilds a vocabulary from stored tables, checking they match what
    /// `build` would produce for the same configuration.
    pub fn from_tables(
        representation: Representation,
        config: TokenizerConfig,
        tables: Vec<TokenTable>,
    ) -> Result<Self, TokenizeError> {
        let expected = Self::build(representation, config);
        if expected.tables != tables {
            return Err(TokenizeError::VocabularyMismatch(
                "stored tables differ from the tables implied by the tokenizer config".into(),
            ));
        }
        Ok(expected)
    }

    pub fn field_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(TokenTable::len).collect()
    }
}

/// CP sub-token ids for one note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuperToken {
    pub bar: u32,
    pub subbeat: u32,
    pub pitch: u32,
    pub duration: u32,
}

impl SuperToken {
    pub const PAD: SuperToken = SuperToken { bar: PAD_ID, subbeat: PAD_ID, pitch: PAD_ID, duration: PAD_ID };

    pub fn fields(&self) -> [u32; 4] {
        [self.bar, self.subbeat, self.pitch, self.duration]
    }

    pub fn from_fields(f: [u32; 4]) -> Self {
        Self { bar: f[0], subbeat: f[1], pitch: f[2], duration: f[3] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tokens {
    Cp(Vec<SuperToken>),
    Sw(Vec<u32>),
}

impl Tokens {
    pub fn len(&self) -> usize {
        match self {
            Self::Cp(t) => t.len(),
            Self::Sw(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Token ids plus attention mask. The mask is 1 for the first `true_length`
/// positions and 0 for padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Tokens,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenSequence {
    fn unpadded(tokens: Tokens) -> Self {
        let n = tokens.len();
        Self { tokens, attention_mask: alloc::vec![1; n], true_length: n }
    }

    pub fn representation(&self) -> Representation {
        match self.tokens {
            Tokens::Cp(_) => Representation::Cp,
            Tokens::Sw(_) => Representation::Sw,
        }
    }

    pub fn velocity_exposed(&self) -> bool {
        self.representation().velocity_exposed()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps the prefix or appends PAD (mask 0) until the length is `max_len`.
    pub fn pad_or_truncate(&self, max_len: usize) -> Self {
        assert!(max_len > 0, "max_len must be positive");
        let true_length = self.true_length.min(max_len);
        let tokens = match &self.tokens {
            Tokens::Cp(t) => {
                let mut t: Vec<_> = t.iter().copied().take(max_len).collect();
                t.resize(max_len, SuperToken::PAD);
                Tokens::Cp(t)
            }
            Tokens::Sw(t) => {
                let mut t: Vec<_> = t.iter().copied().take(max_len).collect();
                t.resize(max_len, PAD_ID);
                Tokens::Sw(t)
            }
        };
        let mut attention_mask = alloc::vec![0u8; max_len];
        attention_mask[..true_length].fill(1);
        Self { tokens, attention_mask, true_length }
    }

    /// Drops padding.
    pub fn trimmed(&self) -> Self {
        let n = self.true_length;
        let tokens = match &self.tokens {
            Tokens::Cp(t) => Tokens::Cp(t[..n].to_vec()),
            Tokens::Sw(t) => Tokens::Sw(t[..n].to_vec()),
        };
        Self::unpadded(tokens)
    }
}

/// Free-function form of [`TokenSequence::pad_or_truncate`].
pub fn pad_or_truncate(t: &TokenSequence, max_len: usize) -> TokenSequence {
    t.pad_or_truncate(max_len)
}

/// Meter information a decoder needs to rebuild bar/sub-beat positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meter {
    pub beats_per_bar: u32,
    pub beat_unit: u32,
}

impl Meter {
    pub fn of(q: &QuantizedScore) -> Self {
        Self { beats_per_bar: q.beats_per_bar, beat_unit: q.beat_unit }
    }
}

/// Encoder/decoder for both representations over a fixed grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    config: TokenizerConfig,
    // SW id layout: 0 pad, 1 ".", 2..8 velocity, then durations, then pitches.
    sw_duration_base: u32,
    sw_pitch_base: u32,
}

const SW_TIME_SHIFT: u32 = 1;
const SW_VELOCITY_BASE: u32 = 2;

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Self {
        assert!(config.subdivisions_per_beat > 0 && config.max_beats_per_bar > 0 && config.max_duration > 0);
        let sw_duration_base = SW_VELOCITY_BASE + VelocityClass::COUNT as u32;
        Self { config, sw_duration_base, sw_pitch_base: sw_duration_base + config.max_duration }
    }

    pub fn config(&self) -> TokenizerConfig {
        self.config
    }

    pub fn vocabulary(&self, representation: Representation) -> Vocabulary {
        Vocabulary::build(representation, self.config)
    }

    fn subbeat_positions(&self) -> u32 {
        self.config.subdivisions_per_beat * self.config.max_beats_per_bar
    }

    fn check_grid(&self, q: &QuantizedScore) -> Result<(), TokenizeError> {
        if q.subdivisions_per_beat != self.config.subdivisions_per_beat {
            return Err(TokenizeError::GridMismatch {
                expected: self.config.subdivisions_per_beat,
                found: q.subdivisions_per_beat,
            });
        }
        Ok(())
    }

    fn clamp_duration(&self, note: usize, duration: u32, diagnostics: &mut Vec<Diagnostic>) -> u32 {
        if duration > self.config.max_duration {
            diagnostics.push(Diagnostic::DurationClamped { note, duration, max: self.config.max_duration });
            self.config.max_duration
        } else {
            duration
        }
    }

    /// One super-token per note, in score order. The bar flag is `new-bar` on
    /// the first note of every bar that has notes, `continue` otherwise.
    pub fn encode_cp(&self, q: &QuantizedScore, diagnostics: &mut Vec<Diagnostic>) -> Result<TokenSequence, TokenizeError> {
        self.check_grid(q)?;
        let positions = self.subbeat_positions();
        let mut current_bar: Option<u32> = None;
        let mut out = Vec::with_capacity(q.notes.len());
        for (i, n) in q.notes.iter().enumerate() {
            if n.subbeat >= positions {
                return Err(TokenizeError::SubbeatOutOfRange { note: i, subbeat: n.subbeat, size: positions });
            }
            let bar = if current_bar == Some(n.bar) { BAR_CONTINUE } else { BAR_NEW };
            current_bar = Some(n.bar);
            out.push(SuperToken {
                bar,
                subbeat: n.subbeat + 1,
                pitch: u32::from(n.pitch & 0x7f) + 1,
                duration: self.clamp_duration(i, n.duration, diagnostics),
            });
        }
        Ok(TokenSequence::unpadded(Tokens::Cp(out)))
    }

    /// `v_<dyn> d_<len> n_<pitch>` per note, preceded by one `.` for each
    /// sub-beat elapsed since the previous onset (or since time zero).
    pub fn encode_sw(&self, q: &QuantizedScore, diagnostics: &mut Vec<Diagnostic>) -> Result<TokenSequence, TokenizeError> {
        self.check_grid(q)?;
        let mut out = Vec::with_capacity(q.notes.len() * 3);
        let mut now = 0u64;
        for (i, n) in q.notes.iter().enumerate() {
            let onset = q.absolute_onset(n);
            debug_assert!(onset >= now, "quantized notes are onset-sorted");
            for _ in now..onset {
                out.push(SW_TIME_SHIFT);
            }
            now = onset;
            let dynamic = quantize_velocity(i32::from(n.velocity & 0x7f)).expect("7-bit velocity");
            out.push(SW_VELOCITY_BASE + dynamic as u32);
            out.push(self.sw_duration_base + self.clamp_duration(i, n.duration, diagnostics) - 1);
            out.push(self.sw_pitch_base + u32::from(n.pitch & 0x7f));
        }
        Ok(TokenSequence::unpadded(Tokens::Sw(out)))
    }

    pub fn encode(
        &self,
        representation: Representation,
        q: &QuantizedScore,
        diagnostics: &mut Vec<Diagnostic>,
    ) -> Result<TokenSequence, TokenizeError> {
        match representation {
            Representation::Cp => self.encode_cp(q, diagnostics),
            Representation::Sw => self.encode_sw(q, diagnostics),
        }
    }

    /// Inverse of [`encode_cp`](Self::encode_cp). Velocities come back as
    /// [`CP_VELOCITY_SENTINEL`]; bars without notes are not recoverable, so
    /// bar indices count only bars that contain notes.
    pub fn decode_cp(&self, t: &TokenSequence, meter: Meter) -> Result<QuantizedScore, TokenizeError> {
        let Tokens::Cp(tokens) = &t.tokens else {
            return Err(TokenizeError::WrongRepresentation { expected: "compound-word" });
        };
        let positions = self.subbeat_positions();
        let bar_len = self.config.subdivisions_per_beat * meter.beats_per_bar;
        let mut bar: Option<u32> = None;
        let mut notes = Vec::with_capacity(t.true_length);
        for (position, tok) in tokens[..t.true_length].iter().enumerate() {
            let oov = |field, id| TokenizeError::OutOfVocabulary { position, field, id };
            bar = match tok.bar {
                BAR_NEW => Some(bar.map_or(0, |b| b + 1)),
                BAR_CONTINUE => Some(bar.ok_or(TokenizeError::MissingFirstBar)?),
                id => return Err(oov("bar", id)),
            };
            if tok.subbeat == PAD_ID || tok.subbeat > positions {
                return Err(oov("subbeat", tok.subbeat));
            }
            let subbeat = tok.subbeat - 1;
            if subbeat >= bar_len {
                return Err(TokenizeError::Malformed { position, reason: "sub-beat lies outside the bar" });
            }
            if tok.pitch == PAD_ID || tok.pitch > 128 {
                return Err(oov("pitch", tok.pitch));
            }
            if tok.duration == PAD_ID || tok.duration > self.config.max_duration {
                return Err(oov("duration", tok.duration));
            }
            notes.push(QuantizedNote {
                bar: bar.expect("set above"),
                subbeat,
                pitch: (tok.pitch - 1) as u8,
                velocity: CP_VELOCITY_SENTINEL,
                duration: tok.duration,
            });
        }
        Ok(QuantizedScore::new(self.config.subdivisions_per_beat, meter.beats_per_bar, meter.beat_unit, notes))
    }

    /// Inverse of [`encode_sw`](Self::encode_sw). Velocities come back as the
    /// midpoint of their dynamics bin.
    pub fn decode_sw(&self, t: &TokenSequence, meter: Meter) -> Result<QuantizedScore, TokenizeError> {
        let Tokens::Sw(tokens) = &t.tokens else {
            return Err(TokenizeError::WrongRepresentation { expected: "single-word" });
        };
        let bar_len = u64::from(self.config.subdivisions_per_beat * meter.beats_per_bar);
        let vocab_size = self.sw_pitch_base + 128;
        let mut now = 0u64;
        let mut notes = Vec::new();
        let body = &tokens[..t.true_length];
        let mut i = 0;
        while i < body.len() {
            let id = body[i];
            if id == PAD_ID || id >= vocab_size {
                return Err(TokenizeError::OutOfVocabulary { position: i, field: "token", id });
            }
            if id == SW_TIME_SHIFT {
                now += 1;
                i += 1;
                continue;
            }
            if !(SW_VELOCITY_BASE..self.sw_duration_base).contains(&id) {
                return Err(TokenizeError::Malformed { position: i, reason: "note must start with a velocity token" });
            }
            if i + 2 >= body.len() {
                return Err(TokenizeError::Malformed { position: i, reason: "incomplete note" });
            }
            let (d, p) = (body[i + 1], body[i + 2]);
            if !(self.sw_duration_base..self.sw_pitch_base).contains(&d) {
                return Err(TokenizeError::Malformed { position: i + 1, reason: "expected a duration token" });
            }
            if !(self.sw_pitch_base..vocab_size).contains(&p) {
                return Err(TokenizeError::Malformed { position: i + 2, reason: "expected a pitch token" });
            }
            let dynamic = VelocityClass::ALL[(id - SW_VELOCITY_BASE) as usize];
            notes.push(QuantizedNote {
                bar: u32::try_from(now / bar_len).expect("bar overflow"),
                subbeat: (now % bar_len) as u32,
                pitch: (p - self.sw_pitch_base) as u8,
                velocity: dynamic.representative(),
                duration: d - self.sw_duration_base + 1,
            });
            i += 3;
        }
        Ok(QuantizedScore::new(self.config.subdivisions_per_beat, meter.beats_per_bar, meter.beat_unit, notes))
    }

    /// Human-readable tokens for a sequence, e.g. `["v_mf", "d_4", "n_60"]`
    /// for SW or `"new-bar/2/60/4"` per super-token for CP.
    pub fn render(&self, t: &TokenSequence) -> Vec<String> {
        let vocab = self.vocabulary(t.representation());
        let name = |table: usize, id: u32| vocab.tables[table].token(id).unwrap_or("<oov>").to_string();
        match &t.tokens {
            Tokens::Sw(ids) => ids.iter().map(|&id| name(0, id)).collect(),
            Tokens::Cp(toks) => toks
                .iter()
                .map(|s| {
                    let f = s.fields();
                    format!("{}/{}/{}/{}", name(0, f[0]), name(1, f[1]), name(2, f[2]), name(3, f[3]))
                })
                .collect(),
        }
    }
}

/// What a CP round trip can preserve: velocities set to the sentinel, empty
/// bars squeezed out, durations clamped.
pub fn cp_normal_form(q: &QuantizedScore, max_duration: u32) -> QuantizedScore {
    let mut bar_map = BTreeMap::new();
    for n in &q.notes {
        let next = bar_map.len() as u32;
        bar_map.entry(n.bar).or_insert(next);
    }
    q.with_notes(
        q.notes
            .iter()
            .map(|n| QuantizedNote {
                bar: bar_map[&n.bar],
                velocity: CP_VELOCITY_SENTINEL,
                duration: n.duration.min(max_duration),
                ..*n
            })
            .collect(),
    )
}

/// What an SW round trip can preserve: velocities snapped to their bin
/// midpoints, durations clamped.
pub fn sw_normal_form(q: &QuantizedScore, max_duration: u32) -> QuantizedScore {
    q.with_notes(
        q.notes
            .iter()
            .map(|n| QuantizedNote {
                velocity: quantize_velocity(i32::from(n.velocity & 0x7f)).expect("7-bit").representative(),
                duration: n.duration.min(max_duration),
                ..*n
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn tk() -> Tokenizer {
        Tokenizer::new(TokenizerConfig::default())
    }

    fn qs(notes: Vec<QuantizedNote>) -> QuantizedScore {
        QuantizedScore::new(4, 4, 4, notes)
    }

    fn qn(bar: u32, subbeat: u32, pitch: u8, velocity: u8, duration: u32) -> QuantizedNote {
        QuantizedNote { bar, subbeat, pitch, velocity, duration }
    }

    const M44: Meter = Meter { beats_per_bar: 4, beat_unit: 4 };

    #[test]
    fn cp_new_bar_flags() {
        let q = qs(vec![qn(0, 0, 60, 70, 4), qn(1, 0, 62, 70, 4)]);
        let t = tk().encode_cp(&q, &mut Vec::new()).unwrap();
        let Tokens::Cp(toks) = &t.tokens else { unreachable!() };
        assert_eq!(toks[0].bar, BAR_NEW);
        assert_eq!(toks[1].bar, BAR_NEW);
    }

    #[test]
    fn cp_continue_within_bar() {
        let q = qs(vec![qn(0, 0, 60, 70, 4), qn(0, 4, 62, 70, 4)]);
        let t = tk().encode_cp(&q, &mut Vec::new()).unwrap();
        let Tokens::Cp(toks) = &t.tokens else { unreachable!() };
        assert_eq!(toks[1].bar, BAR_CONTINUE);
    }

    #[test]
    fn cp_single_note_fields() {
        let q = qs(vec![qn(0, 2, 60, 70, 4)]);
        let tokenizer = tk();
        let t = tokenizer.encode_cp(&q, &mut Vec::new()).unwrap();
        assert_eq!(tokenizer.render(&t), vec!["new-bar/2/60/4".to_string()]);
    }

    #[test]
    fn empty_scores() {
        let q = qs(vec![]);
        let cp = tk().encode_cp(&q, &mut Vec::new()).unwrap();
        assert_eq!((cp.len(), cp.true_length), (0, 0));
        assert!(tk().encode_sw(&q, &mut Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn sw_single_note() {
        let tokenizer = tk();
        let t = tokenizer.encode_sw(&qs(vec![qn(0, 0, 60, 70, 4)]), &mut Vec::new()).unwrap();
        assert_eq!(tokenizer.render(&t), vec!["v_mf", "d_4", "n_60"]);
    }

    #[test]
    fn sw_time_shifts() {
        let tokenizer = tk();
        let q = qs(vec![qn(0, 0, 60, 70, 4), qn(0, 2, 64, 100, 1)]);
        let t = tokenizer.encode_sw(&q, &mut Vec::new()).unwrap();
        assert_eq!(tokenizer.render(&t), vec!["v_mf", "d_4", "n_60", ".", ".", "v_ff", "d_1", "n_64"]);
    }

    #[test]
    fn sw_chord_has_no_shift() {
        let tokenizer = tk();
        let q = qs(vec![qn(0, 1, 60, 40, 2), qn(0, 1, 64, 40, 2)]);
        let t = tokenizer.encode_sw(&q, &mut Vec::new()).unwrap();
        assert_eq!(tokenizer.render(&t), vec![".", "v_p", "d_2", "n_60", "v_p", "d_2", "n_64"]);
    }

    #[test]
    fn duration_clamps_with_diagnostic() {
        let mut diags = Vec::new();
        let t = tk().encode_cp(&qs(vec![qn(0, 0, 60, 70, 100)]), &mut diags).unwrap();
        let Tokens::Cp(toks) = &t.tokens else { unreachable!() };
        assert_eq!(toks[0].duration, 64);
        assert_eq!(diags, vec![Diagnostic::DurationClamped { note: 0, duration: 100, max: 64 }]);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let q = QuantizedScore::new(8, 4, 4, vec![]);
        assert!(matches!(tk().encode_cp(&q, &mut Vec::new()), Err(TokenizeError::GridMismatch { .. })));
    }

    #[test]
    fn decode_sw_only_time_shifts() {
        let t = TokenSequence::unpadded(Tokens::Sw(vec![SW_TIME_SHIFT; 5]));
        assert!(tk().decode_sw(&t, M44).unwrap().notes.is_empty());
    }

    #[test]
    fn decode_rejects_out_of_vocabulary() {
        let t = TokenSequence::unpadded(Tokens::Sw(vec![SW_TIME_SHIFT, 9999]));
        assert_eq!(
            tk().decode_sw(&t, M44),
            Err(TokenizeError::OutOfVocabulary { position: 1, field: "token", id: 9999 })
        );
        let t = TokenSequence::unpadded(Tokens::Cp(vec![SuperToken { bar: 1, subbeat: 1, pitch: 500, duration: 1 }]));
        assert!(matches!(tk().decode_cp(&t, M44), Err(TokenizeError::OutOfVocabulary { position: 0, field: "pitch", .. })));
    }

    #[test]
    fn decode_sw_incomplete_note() {
        let t = TokenSequence::unpadded(Tokens::Sw(vec![SW_VELOCITY_BASE, 10]));
        assert!(matches!(tk().decode_sw(&t, M44), Err(TokenizeError::Malformed { .. })));
    }

    #[test]
    fn pad_and_truncate() {
        let t = TokenSequence::unpadded(Tokens::Sw(vec![1, 1, 1]));
        let p = t.pad_or_truncate(5);
        assert_eq!(p.attention_mask, vec![1, 1, 1, 0, 0]);
        assert_eq!(p.tokens, Tokens::Sw(vec![1, 1, 1, 0, 0]));
        assert_eq!(p.true_length, 3);

        let t = TokenSequence::unpadded(Tokens::Sw(vec![1; 10]));
        assert_eq!(t.pad_or_truncate(10), t);

        let long = TokenSequence::unpadded(Tokens::Cp((0..700).map(|i| SuperToken { bar: 2, subbeat: 1, pitch: i % 128 + 1, duration: 1 }).collect()));
        let cut = long.pad_or_truncate(512);
        assert_eq!(cut.len(), 512);
        assert_eq!(cut.true_length, 512);
        let Tokens::Cp(c) = &cut.tokens else { unreachable!() };
        let Tokens::Cp(l) = &long.tokens else { unreachable!() };
        assert_eq!(&c[..], &l[..512]);
    }

    #[test]
    fn velocity_exposure_flag() {
        assert!(TokenSequence::unpadded(Tokens::Sw(vec![])).velocity_exposed());
        assert!(!TokenSequence::unpadded(Tokens::Cp(vec![])).velocity_exposed());
    }

    #[test]
    fn vocab_layout_matches_tokenizer_ids() {
        let tokenizer = tk();
        let v = tokenizer.vocabulary(Representation::Sw);
        let t = &v.tables[0];
        assert_eq!(t.id(PAD_TOKEN), Some(0));
        assert_eq!(t.id("."), Some(SW_TIME_SHIFT));
        assert_eq!(t.id("v_pp"), Some(SW_VELOCITY_BASE));
        assert_eq!(t.id("d_1"), Some(tokenizer.sw_duration_base));
        assert_eq!(t.id("n_0"), Some(tokenizer.sw_pitch_base));
        assert_eq!(t.len() as u32, tokenizer.sw_pitch_base + 128);
        let cp = tokenizer.vocabulary(Representation::Cp);
        assert_eq!(cp.field_sizes(), vec![3, 49, 129, 65]);
        for table in &cp.tables {
            assert_eq!(table.id(PAD_TOKEN), Some(0));
        }
    }

    pub(crate) fn arb_score(max_notes: usize) -> impl Strategy<Value = QuantizedScore> {
        prop::sample::select(vec![(2u32, 4u32), (3, 4), (4, 4), (6, 8)]).prop_flat_map(move |(bpb, unit)| {
            let note = (0u32..8, 0..4 * bpb, 0u8..128, 0u8..128, 1u32..80)
                .prop_map(|(bar, subbeat, pitch, velocity, duration)| qn(bar, subbeat, pitch, velocity, duration));
            prop::collection::vec(note, 0..max_notes).prop_map(move |notes| QuantizedScore::new(4, bpb, unit, notes))
        })
    }

    proptest! {
        #[test]
        fn sw_round_trip(q in arb_score(40)) {
            let t = tk();
            let enc = t.encode_sw(&q, &mut Vec::new()).unwrap();
            prop_assert_eq!(t.decode_sw(&enc, Meter::of(&q)).unwrap(), sw_normal_form(&q, 64));
        }

        #[test]
        fn cp_round_trip(q in arb_score(40)) {
            let t = tk();
            let enc = t.encode_cp(&q, &mut Vec::new()).unwrap();
            prop_assert_eq!(enc.len(), q.notes.len());
            prop_assert_eq!(t.decode_cp(&enc, Meter::of(&q)).unwrap(), cp_normal_form(&q, 64));
        }
    }
}
