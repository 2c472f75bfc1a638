#![allow(dead_code)]

use std::path::{Path, PathBuf};

use smer_core::midi::{write_midi, Score};
use smer_core::synthetic::{generate_corpus, CorpusSpec};

pub fn spec(clips: usize, seed: u64) -> CorpusSpec {
    CorpusSpec { clips, seed, label_noise: 0.0, min_notes: 8, max_notes: 14, duration_cue: true, tonics: 12 }
}

/// Writes clips as `Q<n>_<song>_<k>.mid`, two clips per song.
pub fn write_emopia_corpus(dir: &Path, clips: usize, seed: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    generate_corpus(&spec(clips, seed))
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let path = dir.join(format!("{}_song{:03}_{}.mid", c.emotion, i / 2, i % 2));
            std::fs::write(&path, write_midi(&c.score)).unwrap();
            path
        })
        .collect()
}

pub fn write_empty_midi(path: &Path) {
    std::fs::write(path, write_midi(&Score::new(480, vec![], vec![], vec![]))).unwrap();
}

/// Overrides that shrink the example config to a seconds-long run.
pub fn tiny_overrides(manifest: &Path) -> Vec<String> {
    [
        format!("data.manifest=\"{}\"", manifest.display()),
        "model.hidden_dim=16".into(),
        "model.pooled_dim=16".into(),
        "model.n_layers=1".into(),
        "model.n_heads=2".into(),
        "model.ffn_dim=32".into(),
        "model.head_hidden_dim=16".into(),
        "model.sub_embed_dim=8".into(),
        "model.max_len=32".into(),
        "model.dropout=0.1".into(),
        "optimizer.max_epochs=3".into(),
        "optimizer.warmup_steps=2".into(),
        "optimizer.base_lr=0.001".into(),
        "optimizer.batch_size=8".into(),
        "training.seeds=[0, 1]".into(),
    ]
    .into()
}
