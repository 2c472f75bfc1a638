mod common;

use proptest::prelude::*;
use smer::checkpoint::Checkpoint;
use smer::manifest::{ingest, Adapter, Split, SplitPlan};
use smer::preprocess::{preprocess, PreprocessOptions};
use smer::shard::Shard;
use smer::Rayon;
use smer_core::model::{Model, ModelConfig, Task, TaskSet};
use smer_core::synthetic::{build_examples, generate_corpus};
use smer_core::tokenizer::{Representation, Tokenizer, TokenizerConfig};
use smer_core::train::{train, Sequential, TrainConfig};

fn opts(representation: Representation, max_len: usize) -> PreprocessOptions {
    PreprocessOptions { representation, tokenizer: TokenizerConfig::default(), max_len }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shard_reload_is_bit_identical(seed in 0u64..1000, sw in any::<bool>(), max_len in 4usize..80) {
        let repr = if sw { Representation::Sw } else { Representation::Cp };
        let tok = Tokenizer::new(TokenizerConfig::default());
        let clips = generate_corpus(&common::spec(10, seed));
        let examples = build_examples(&clips, repr, &tok, max_len).unwrap();
        let records = examples
            .into_iter()
            .zip(&clips)
            .map(|(example, c)| smer::shard::ShardRecord { full_length: example.tokens.true_length + (seed as usize % 3), example, song_id: c.song_id.clone() })
            .collect();
        let shard = Shard { representation: repr, max_len, records };
        let bytes = shard.encode().unwrap();
        let back = Shard::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &shard);
        prop_assert_eq!(back.encode().unwrap(), bytes);
    }
}

#[test]
fn preprocess_output_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    common::write_emopia_corpus(&dir.path().join("midi"), 40, 5);
    let m = ingest(&dir.path().join("midi"), Adapter::Emopia, &SplitPlan::default()).unwrap();
    let mpath = dir.path().join("manifest.csv");
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| preprocess(&m, &mpath, &opts(Representation::Cp, 12)))
    };
    let (a, b) = (run(1), run(4));
    assert!(a.summary.failures.is_empty());
    assert_eq!(a.summary, b.summary);
    for s in Split::ALL {
        assert_eq!(a.shards[&s].encode().unwrap(), b.shards[&s].encode().unwrap());
    }
    let truncated: usize = a.summary.splits.values().map(|s| s.truncated.len()).sum();
    assert!(truncated > 0, "max_len 12 should cut some clips");
}

#[test]
fn parallel_training_matches_sequential() {
    let tok = TokenizerConfig::default();
    let clips = generate_corpus(&common::spec(24, 2));
    let ex = build_examples(&clips, Representation::Cp, &Tokenizer::new(tok), 24).unwrap();
    let mut mc = ModelConfig::tiny(Representation::Cp, tok, TaskSet::of(&Task::ALL));
    mc.max_len = 24;
    mc.n_layers = 1;
    mc.dropout = 0.1;
    let model = Model::new(mc).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.optimizer.max_epochs = 2;
    cfg.optimizer.batch_size = 5;
    cfg.optimizer.base_lr = 1e-3;
    cfg.optimizer.warmup_steps = 2;
    let a = train(&model, model.init(4), &ex[..16], &ex[16..], &cfg, &Sequential, &mut |_| {}).unwrap();
    let b = train(&model, model.init(4), &ex[..16], &ex[16..], &cfg, &Rayon, &mut |_| {}).unwrap();
    assert_eq!(a.best_params, b.best_params);
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tok = TokenizerConfig::default();
    let mc = ModelConfig::tiny(Representation::Sw, tok, TaskSet::of(&[Task::Emotion, Task::Key]));
    let model = Model::new(mc.clone()).unwrap();
    let ckpt = Checkpoint { model: mc, tokenizer: tok, seed: 7, params: model.init(7) };
    let p = dir.path().join("nested/m.ckpt");
    ckpt.save(&p).unwrap();
    assert_eq!(Checkpoint::load(&p).unwrap(), ckpt);
    let err = Checkpoint::load(&dir.path().join("absent.ckpt")).unwrap_err();
    assert!(err.to_string().contains("absent.ckpt"), "{err}");
    assert_eq!(err.exit_code(), smer::error::EXIT_RUNTIME);
}
