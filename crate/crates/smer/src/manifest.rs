//! Dataset manifests and the ingest adapters that produce them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use smer_core::labeling::{map_va_to_quadrant, EmotionClass};
use smer_core::model::TrainRng;

use crate::error::{read, write_atomic, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL.into_iter().find(|x| x.name() == s.trim()).ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub midi_path: String,
    pub emotion: EmotionClass,
    pub split: Split,
    pub song_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Unique paths and no song shared between splits.
    pub fn validate(&self) -> Result<(), String> {
        let mut paths = BTreeSet::new();
        let mut song_split: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.rows {
            if !paths.insert(r.midi_path.as_str()) {
                return Err(format!("duplicate path {}", r.midi_path));
            }
            if let Some(&s) = song_split.get(r.song_id.as_str()) {
                if s != r.split {
                    return Err(format!("song {:?} appears in both {s} and {}", r.song_id, r.split));
                }
            }
            song_split.insert(&r.song_id, r.split);
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, String> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let rows = rd
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e: csv::Error| format!("row {}: {e}", i + 1)))
            .collect::<Result<Vec<ManifestRow>, _>>()?;
        let m = Manifest { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path).map_err(|e| match e {
            Error::Missing { path, .. } => Error::Missing { what: "manifest", path },
            e => e,
        })?;
        Self::from_csv(&bytes).map_err(|m| Error::Validation(format!("{}: {m}", path.display())))
    }

    /// Resolves a row's path against the manifest's directory.
    pub fn resolve(manifest_path: &Path, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.midi_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new("")).join(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Adapter {
    Emopia,
    Vgmidi,
    GenericCsv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    /// Fraction of songs held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining songs moved to validation.
    pub valid_fraction: f64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self { seed: 0, test_fraction: 0.1, valid_fraction: 0.15 }
    }
}

/// An ingested clip before a split is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    pub midi_path: String,
    pub emotion: EmotionClass,
    pub song_id: String,
    pub split: Option<Split>,
}

fn fraction_count(n: usize, f: f64) -> usize {
    let k = (n as f64 * f).round() as usize;
    if f > 0.0 && n >= 3 { k.max(1) } else { k }
}

/// Song-level split. Songs are sorted, shuffled with the seed, and cut into
/// test, valid and train in that order, so the result depends only on the
/// seed and the set of song ids.
pub fn assign_splits(clips: Vec<Clip>, plan: &SplitPlan) -> Result<Manifest, String> {
    for f in [plan.test_fraction, plan.valid_fraction] {
        if !(0.0..1.0).contains(&f) {
            return Err(format!("split fraction {f} must lie in [0, 1)"));
        }
    }
    let given = clips.iter().filter(|c| c.split.is_some()).count();
    if given != 0 && given != clips.len() {
        return Err("either every row or no row may specify a split".into());
    }
    let rows: Vec<ManifestRow> = if given == clips.len() {
        clips
            .into_iter()
            .map(|c| ManifestRow { midi_path: c.midi_path, emotion: c.emotion, split: c.split.expect("checked"), song_id: c.song_id })
            .collect()
    } else {
        let mut songs: Vec<&str> = clips.iter().map(|c| c.song_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
        songs.shuffle(&mut TrainRng::seed_from_u64(plan.seed));
        let n_test = fraction_count(songs.len(), plan.test_fraction);
        let n_valid = fraction_count(songs.len() - n_test, plan.valid_fraction);
        let split_of: BTreeMap<&str, Split> = songs
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let split = if i < n_test {
                    Split::Test
                } else if i < n_test + n_valid {
                    Split::Valid
                } else {
                    Split::Train
                };
                (s, split)
            })
            .collect();
        let split_of: BTreeMap<String, Split> = split_of.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        clips
            .into_iter()
            .map(|c| ManifestRow { split: split_of[&c.song_id], midi_path: c.midi_path, emotion: c.emotion, song_id: c.song_id })
            .collect()
    };
    let mut m = Manifest { rows };
    m.rows.sort_by(|a, b| a.midi_path.cmp(&b.midi_path));
    m.validate()?;
    Ok(m)
}

/// Parses `Q<n>_<song>_<clip>.mid`; the song id is everything between the
/// first and last underscore.
pub fn parse_emopia_name(file_name: &str) -> Result<(EmotionClass, String), String> {
    let stem = file_name.rsplit_once('.').map_or(file_name, |(s, _)| s);
    let bad = || format!("{file_name}: expected a name like Q1_<song>_<clip>.mid");
    let (head, rest) = stem.split_once('_').ok_or_else(bad)?;
    let emotion = match head.as_bytes() {
        [b'Q', d @ b'1'..=b'4'] => EmotionClass::ALL[usize::from(d - b'1')],
        _ => return Err(bad()),
    };
    let song = rest.rsplit_once('_').map_or(rest, |(s, _)| s);
    if song.is_empty() {
        return Err(bad());
    }
    Ok((emotion, song.to_string()))
}

fn is_midi(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(Error::io(p))
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn ingest_emopia(source: &Path) -> Result<Vec<Clip>> {
    let root = absolute(source)?;
    let mut clips = Vec::new();
    for entry in walkdir::WalkDir::new(&root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Runtime(format!("{}: {e}", root.display())))?;
        if !entry.file_type().is_file() || !is_midi(entry.path()) {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        let (emotion, song_id) = parse_emopia_name(&name).map_err(Error::Validation)?;
        clips.push(Clip { midi_path: path_string(entry.path()), emotion, song_id, split: None });
    }
    Ok(clips)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>> {
    let bytes = read(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(std::io::Cursor::new(bytes)))
}

fn resolve_against(base: &Path, p: &str) -> Result<String> {
    let p = Path::new(p);
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    Ok(path_string(&absolute(&full)?))
}

#[derive(Deserialize)]
struct VgmidiRow {
    path: String,
    valence: i32,
    arousal: i32,
    #[serde(default)]
    song_id: Option<String>,
}

fn ingest_vgmidi(labels: &Path) -> Result<Vec<Clip>> {
    let base = absolute(labels)?.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut clips = Vec::new();
    for (i, row) in csv_reader(labels)?.deserialize::<VgmidiRow>().enumerate() {
        let row = row.map_err(|e| Error::Validation(format!("{} row {}: {e}", labels.display(), i + 1)))?;
        let emotion = map_va_to_quadrant(row.valence, row.arousal)
            .map_err(|e| Error::Validation(format!("{} row {} ({}): {e}", labels.display(), i + 1, row.path)))?;
        let song_id = row
            .song_id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| Path::new(&row.path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        clips.push(Clip { midi_path: resolve_against(&base, &row.path)?, emotion, song_id, split: None });
    }
    Ok(clips)
}

#[derive(Deserialize)]
struct GenericRow {
    #[serde(alias = "path")]
    midi_path: String,
    emotion: String,
    #[serde(default)]
    split: Option<String>,
    song_id: String,
}

fn ingest_generic(csv_path: &Path) -> Result<Vec<Clip>> {
    let base = absolute(csv_path)?.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut clips = Vec::new();
    for (i, row) in csv_reader(csv_path)?.deserialize::<GenericRow>().enumerate() {
        let at = |m: String| Error::Validation(format!("{} row {}: {m}", csv_path.display(), i + 1));
        let row = row.map_err(|e| at(e.to_string()))?;
        let emotion = row.emotion.parse::<EmotionClass>().map_err(|e| at(e.to_string()))?;
        let split = match row.split.as_deref() {
            None | Some("") => None,
            Some(s) => Some(s.parse::<Split>().map_err(at)?),
        };
        clips.push(Clip { midi_path: resolve_against(&base, &row.midi_path)?, emotion, song_id: row.song_id, split });
    }
    Ok(clips)
}

/// Builds a manifest from a dataset layout. `source` is a directory for
/// EMOPIA, and a label CSV for the other adapters (a directory is taken to
/// hold `labels.csv`).
pub fn ingest(source: &Path, adapter: Adapter, plan: &SplitPlan) -> Result<Manifest> {
    let csv_path = || if source.is_dir() { source.join("labels.csv") } else { source.to_path_buf() };
    let clips = match adapter {
        Adapter::Emopia => ingest_emopia(source)?,
        Adapter::Vgmidi => ingest_vgmidi(&csv_path())?,
        Adapter::GenericCsv => ingest_generic(&csv_path())?,
    };
    if clips.is_empty() {
        return Err(Error::Validation(format!("{}: no clips found", source.display())));
    }
    assign_splits(clips, plan).map_err(Error::Validation)
}
