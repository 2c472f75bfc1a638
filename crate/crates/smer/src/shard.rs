//! Binary dataset shards: fixed-width token arrays plus labels.
//!
//! Header: `SMERSHRD`, u32 version, u8 representation (0 CP, 1 SW), u32
//! max_len, u8 fields per position, u32 record count. Each record holds
//! u16-prefixed id and song id, u32 true length, u32 untruncated length, u8
//! emotion, u8 key, u32-prefixed velocity class ids, `max_len * fields` u16
//! token ids (position-major) and `max_len` mask bytes.

use std::path::Path;

use smer_core::labeling::{EmotionClass, KeyClass, LabelSet, VelocityClass};
use smer_core::tokenizer::{Representation, SuperToken, TokenSequence, Tokens};
use smer_core::train::Example;

use crate::bin::{Reader, Writer};
use crate::error::{read, write_atomic, Error, Result};

pub const MAGIC: &[u8; 8] = b"SMERSHRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ShardRecord {
    pub example: Example,
    pub song_id: String,
    /// Token count before truncation.
    pub full_length: usize,
}

impl ShardRecord {
    pub fn truncated(&self) -> bool {
        self.full_length > self.example.tokens.true_length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub representation: Representation,
    pub max_len: usize,
    pub records: Vec<ShardRecord>,
}

fn fields(r: Representation) -> usize {
    match r {
        Representation::Cp => 4,
        Representation::Sw => 1,
    }
}

fn id16(v: u32) -> Result<u16, String> {
    u16::try_from(v).map_err(|_| format!("token id {v} does not fit the shard's 16-bit ids"))
}

impl Shard {
    pub fn examples(&self) -> Vec<Example> {
        self.records.iter().map(|r| r.example.clone()).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>, String> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(match self.representation {
            Representation::Cp => 0,
            Representation::Sw => 1,
        });
        w.u32(self.max_len as u32);
        w.u8(fields(self.representation) as u8);
        w.u32(self.records.len() as u32);
        for rec in &self.records {
            let ex = &rec.example;
            let t = &ex.tokens;
            if t.len() != self.max_len || t.representation() != self.representation {
                return Err(format!("{}: expected a padded {} sequence of length {}", ex.id, self.representation.name(), self.max_len));
            }
            w.short_str(&ex.id)?;
            w.short_str(&rec.song_id)?;
            w.u32(t.true_length as u32);
            w.u32(rec.full_length as u32);
            w.u8(ex.labels.emotion.id());
            w.u8(ex.labels.key.id());
            w.u32(ex.labels.note_velocity.len() as u32);
            for v in &ex.labels.note_velocity {
                w.u8(v.id());
            }
            match &t.tokens {
                Tokens::Cp(ts) => {
                    for s in ts {
                        for f in s.fields() {
                            w.u16(id16(f)?);
                        }
                    }
                }
                Tokens::Sw(ts) => {
                    for &id in ts {
                        w.u16(id16(id)?);
                    }
                }
            }
            w.bytes(&t.attention_mask);
        }
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC, "shard")?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported shard version {version} (expected {VERSION})"));
        }
        let representation = match r.u8()? {
            0 => Representation::Cp,
            1 => Representation::Sw,
            x => return Err(format!("unknown representation code {x}")),
        };
        let max_len = r.u32()? as usize;
        let nf = r.u8()? as usize;
        if nf != fields(representation) || max_len == 0 {
            return Err(format!("header: {nf} fields and max_len {max_len} do not fit {}", representation.name()));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let bad = |m: String| format!("record {i}: {m}");
            let id = r.short_str()?;
            let song_id = r.short_str()?;
            let true_length = r.u32()? as usize;
            let full_length = r.u32()? as usize;
            if true_length > max_len || full_length < true_length {
                return Err(bad(format!("lengths {true_length}/{full_length} inconsistent with max_len {max_len}")));
            }
            let emotion = EmotionClass::from_id(r.u8()?).map_err(|e| bad(e.to_string()))?;
            let key = KeyClass::from_id(r.u8()?).map_err(|e| bad(e.to_string()))?;
            let nv = r.u32()? as usize;
            let note_velocity = r
                .take(nv)?
                .iter()
                .map(|&b| VelocityClass::from_id(b))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            let mut ids = Vec::with_capacity(max_len * nf);
            for _ in 0..max_len * nf {
                ids.push(u32::from(r.u16()?));
            }
            let tokens = match representation {
                Representation::Cp => {
                    Tokens::Cp(ids.chunks_exact(4).map(|c| SuperToken::from_fields([c[0], c[1], c[2], c[3]])).collect())
                }
                Representation::Sw => Tokens::Sw(ids),
            };
            let attention_mask = r.take(max_len)?.to_vec();
            let expected_mask = (0..max_len).map(|p| u8::from(p < true_length));
            if !attention_mask.iter().copied().eq(expected_mask) {
                return Err(bad("attention mask does not match the true length".into()));
            }
            let example = Example {
                id,
                tokens: TokenSequence { tokens, attention_mask, true_length },
                labels: LabelSet { emotion, key, note_velocity },
            };
            records.push(ShardRecord { example, song_id, full_length });
        }
        if !r.at_end() {
            return Err(format!("trailing bytes after offset {}", r.offset()));
        }
        Ok(Shard { representation, max_len, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode().map_err(|m| Error::format(path, m))?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path).map_err(|e| match e {
            Error::Missing { path, .. } => Error::Missing { what: "shard", path },
            e => e,
        })?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }
}
