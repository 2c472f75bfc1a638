//! Manifest → shards. Files are processed in parallel; output order follows
//! the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use smer_core::labeling::{EmotionClass, KeyClass, VelocityClass};
use smer_core::midi::parse_midi_with_diagnostics;
use smer_core::pipeline::prepare_example;
use smer_core::tokenizer::{Representation, Tokenizer, TokenizerConfig};

use crate::error::{read, write_atomic, Result};
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::shard::{Shard, ShardRecord};
use crate::vocab;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    pub representation: Representation,
    pub tokenizer: TokenizerConfig,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SplitSummary {
    pub clips: usize,
    pub emotion: BTreeMap<String, usize>,
    pub key: BTreeMap<String, usize>,
    pub velocity: BTreeMap<String, usize>,
    /// Ids of clips cut to `max_len`.
    pub truncated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Summary {
    pub representation: String,
    pub max_len: usize,
    pub splits: BTreeMap<String, SplitSummary>,
    pub failures: Vec<Failure>,
    /// Parser and tokenizer warnings, prefixed by the clip path.
    pub warnings: Vec<String>,
}

pub struct PreprocessOutput {
    pub shards: BTreeMap<Split, Shard>,
    pub summary: Summary,
}

fn clip_id(row: &ManifestRow) -> String {
    Path::new(&row.midi_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| row.midi_path.clone())
}

fn process_one(path: &Path, row: &ManifestRow, tok: &Tokenizer, opts: &PreprocessOptions) -> Result<(ShardRecord, Vec<String>), String> {
    let bytes = read(path).map_err(|e| e.to_string())?;
    let mut diags = Vec::new();
    let score = parse_midi_with_diagnostics(&bytes, &mut diags).map_err(|e| e.to_string())?;
    let (example, info) =
        prepare_example(clip_id(row), &score, row.emotion, opts.representation, tok, opts.max_len, &mut diags).map_err(|e| e.to_string())?;
    let warnings = diags.iter().map(|d| format!("{}: {d}", path.display())).collect();
    Ok((ShardRecord { example, song_id: row.song_id.clone(), full_length: info.full_length }, warnings))
}

/// Runs the pipeline over every manifest row. A failing file is recorded and
/// skipped; the rest are still processed.
pub fn preprocess(manifest: &Manifest, manifest_path: &Path, opts: &PreprocessOptions) -> PreprocessOutput {
    let tok = Tokenizer::new(opts.tokenizer);
    let results: Vec<_> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let path = Manifest::resolve(manifest_path, row);
            (row, process_one(&path, row, &tok, opts))
        })
        .collect();
    let mut shards: BTreeMap<Split, Shard> = Split::ALL
        .into_iter()
        .map(|s| (s, Shard { representation: opts.representation, max_len: opts.max_len, records: Vec::new() }))
        .collect();
    let mut summary = Summary {
        representation: opts.representation.name().into(),
        max_len: opts.max_len,
        splits: Split::ALL.iter().map(|s| (s.name().to_string(), SplitSummary::default())).collect(),
        ..Summary::default()
    };
    for (row, res) in results {
        match res {
            Ok((rec, warnings)) => {
                summary.warnings.extend(warnings);
                let s = summary.splits.get_mut(row.split.name()).expect("all splits listed");
                s.clips += 1;
                let labels = &rec.example.labels;
                *s.emotion.entry(labels.emotion.name().into()).or_default() += 1;
                *s.key.entry(labels.key.to_string()).or_default() += 1;
                for v in &labels.note_velocity {
                    *s.velocity.entry(v.name().into()).or_default() += 1;
                }
                if rec.truncated() {
                    s.truncated.push(rec.example.id.clone());
                }
                shards.get_mut(&row.split).expect("all splits listed").records.push(rec);
            }
            Err(error) => summary.failures.push(Failure { path: row.midi_path.clone(), error }),
        }
    }
    PreprocessOutput { shards, summary }
}

pub fn shard_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.shard", split.name()))
}

pub fn vocab_path(dir: &Path) -> PathBuf {
    dir.join("vocab.toml")
}

/// Writes `{split}.shard`, `vocab.toml` and `summary.json`.
pub fn write_outputs(out: &PreprocessOutput, dir: &Path, opts: &PreprocessOptions) -> Result<()> {
    for (split, shard) in &out.shards {
        shard.save(&shard_path(dir, *split))?;
    }
    vocab::save(&smer_core::tokenizer::Vocabulary::build(opts.representation, opts.tokenizer), &vocab_path(dir))?;
    let json = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
    write_atomic(&dir.join("summary.json"), json.as_bytes())
}

fn histogram_line<'a>(names: impl Iterator<Item = &'a str>, counts: &BTreeMap<String, usize>) -> String {
    names.map(|n| format!("{n}:{}", counts.get(n).copied().unwrap_or(0))).collect::<Vec<_>>().join(" ")
}

pub fn render_summary(s: &Summary) -> String {
    let mut out = format!("representation {} max_len {}\n", s.representation, s.max_len);
    for split in Split::ALL {
        let Some(x) = s.splits.get(split.name()) else { continue };
        out += &format!("{split}: {} clips, {} truncated\n", x.clips, x.truncated.len());
        out += &format!("  emotion  {}\n", histogram_line(EmotionClass::ALL.iter().map(|e| e.name()), &x.emotion));
        let keys: Vec<String> = (0..KeyClass::COUNT as u8).map(|i| KeyClass::from_id(i).expect("valid").to_string()).collect();
        let present: Vec<String> = keys.into_iter().filter(|k| x.key.contains_key(k)).collect();
        out += &format!("  key      {}\n", histogram_line(present.iter().map(String::as_str), &x.key));
        out += &format!("  velocity {}\n", histogram_line(VelocityClass::ALL.iter().map(|v| v.name()), &x.velocity));
        for id in &x.truncated {
            out += &format!("  truncated: {id}\n");
        }
    }
    for f in &s.failures {
        out += &format!("FAILED {}: {}\n", f.path, f.error);
    }
    out
}
