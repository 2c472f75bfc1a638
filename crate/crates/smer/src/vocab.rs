//! Vocabulary files: human-readable TOML with a version header and one
//! `[[tables]]` entry per field, tokens listed in id order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smer_core::tokenizer::{Representation, TokenTable, TokenizerConfig, Vocabulary};

use crate::error::{read_string, write_atomic, Error, Result};

pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    version: u32,
    representation: Representation,
    tokenizer: TokenizerConfig,
    tables: Vec<TableFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    name: String,
    tokens: Vec<String>,
}

pub fn to_toml(v: &Vocabulary) -> String {
    let file = VocabFile {
        version: VERSION,
        representation: v.representation,
        tokenizer: v.config,
        tables: v.tables.iter().map(|t| TableFile { name: t.name().to_string(), tokens: t.tokens().to_vec() }).collect(),
    };
    toml::to_string(&file).expect("vocabulary serializes")
}

pub fn from_toml(s: &str) -> Result<Vocabulary, String> {
    let file: VocabFile = toml::from_str(s).map_err(|e| e.to_string())?;
    if file.version != VERSION {
        return Err(format!("unsupported vocabulary version {} (expected {VERSION})", file.version));
    }
    let tables = file
        .tables
        .into_iter()
        .map(|t| TokenTable::new(t.name, t.tokens))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Vocabulary::from_tables(file.representation, file.tokenizer, tables).map_err(|e| e.to_string())
}

pub fn save(v: &Vocabulary, path: &Path) -> Result<()> {
    write_atomic(path, to_toml(v).as_bytes())
}

pub fn load(path: &Path) -> Result<Vocabulary> {
    let s = read_string(path).map_err(|e| match e {
        Error::Missing { path, .. } => Error::Missing { what: "vocabulary", path },
        e => e,
    })?;
    from_toml(&s).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_representations() {
        for r in [Representation::Cp, Representation::Sw] {
            let v = Vocabulary::build(r, TokenizerConfig::default());
            let text = to_toml(&v);
            assert!(text.starts_with("version = 1"));
            assert_eq!(from_toml(&text).unwrap(), v);
        }
    }

    #[test]
    fn edited_tables_are_rejected() {
        let v = Vocabulary::build(Representation::Sw, TokenizerConfig::default());
        let text = to_toml(&v).replace("\"n_60\"", "\"n_sixty\"");
        assert!(from_toml(&text).unwrap_err().contains("differ"));
    }
}
