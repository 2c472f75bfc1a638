//! Implementations behind each CLI subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use smer_core::labeling::EmotionClass;
use smer_core::midi::{parse_midi, quantize};
use smer_core::model::{softmax, Model, Task};
use smer_core::tokenizer::Tokenizer;
use smer_core::train::{evaluate, run_ablation, train, AblationRow, EvalReport, RunResult};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{read, write_atomic, Error, Result};
use crate::exec::Rayon;
use crate::manifest::{ingest, Adapter, Manifest, Split, SplitPlan};
use crate::preprocess::{preprocess, render_summary, shard_path, vocab_path, write_outputs, PreprocessOptions, Summary};
use crate::report;
use crate::shard::Shard;
use crate::vocab;

pub fn cmd_ingest(source: &Path, adapter: Adapter, plan: &SplitPlan, out: &Path) -> Result<Manifest> {
    let m = ingest(source, adapter, plan)?;
    m.save(out)?;
    Ok(m)
}

pub fn preprocess_options(cfg: &RunConfig) -> PreprocessOptions {
    PreprocessOptions { representation: cfg.model.representation, tokenizer: cfg.tokenizer, max_len: cfg.model.max_len }
}

/// Writes shards and the summary even when some files fail; the failure is
/// then reported as an error so the process exits nonzero.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Summary> {
    let manifest = Manifest::load(&cfg.data.manifest)?;
    let opts = preprocess_options(cfg);
    let out = preprocess(&manifest, &cfg.data.manifest, &opts);
    write_outputs(&out, &cfg.data.shard_dir, &opts)?;
    eprint!("{}", render_summary(&out.summary));
    if !out.summary.failures.is_empty() {
        return Err(Error::Runtime(format!(
            "{} of {} files failed; see {}",
            out.summary.failures.len(),
            manifest.rows.len(),
            cfg.data.shard_dir.join("summary.json").display()
        )));
    }
    Ok(out.summary)
}

/// Loads a split's shard and checks it was produced with this config.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Shard> {
    let vp = vocab_path(&cfg.data.shard_dir);
    let v = vocab::load(&vp)?;
    if v != cfg.vocabulary() {
        return Err(Error::Validation(format!(
            "{} was built with a different tokenizer or representation; rerun preprocess",
            vp.display()
        )));
    }
    let path = shard_path(&cfg.data.shard_dir, split);
    let shard = Shard::load(&path)?;
    if shard.representation != cfg.model.representation || shard.max_len != cfg.model.max_len {
        return Err(Error::Validation(format!(
            "{} holds {} sequences of length {}, config expects {} of length {}",
            path.display(),
            shard.representation.name(),
            shard.max_len,
            cfg.model.representation.name(),
            cfg.model.max_len
        )));
    }
    Ok(shard)
}

pub fn seed_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.data.output_dir.join(format!("seed-{seed}"))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub scored_split: Split,
    pub runs: Vec<RunResult>,
    pub report: String,
}

fn write_eval(dir: &Path, split: Split, r: &EvalReport) -> Result<()> {
    let em = r.emotion().expect("emotion is always enabled");
    let names = report::emotion_names();
    write_atomic(&dir.join(format!("confusion_{split}.csv")), report::confusion_csv(em, &names).as_bytes())?;
    let json = serde_json::to_string_pretty(&report::eval_summary(r)).expect("serializes");
    write_atomic(&dir.join(format!("eval_{split}.json")), json.as_bytes())
}

/// One run per configured seed: `seed-<n>/{metrics.jsonl, model.ckpt,
/// eval_*.json, confusion_*.csv}` plus an aggregate `report.txt`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let train_set = load_split(cfg, Split::Train)?.examples();
    let valid_set = load_split(cfg, Split::Valid)?.examples();
    let test_set = load_split(cfg, Split::Test)?.examples();
    let model = Model::new(cfg.model_config())?;
    let scored_split = if test_set.is_empty() { Split::Valid } else { Split::Test };
    let mut runs = Vec::new();
    for &seed in &cfg.training.seeds {
        let dir = seed_dir(cfg, seed);
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let metrics_path = dir.join("metrics.jsonl");
        let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(Error::io(&metrics_path))?);
        let mut io_err = None;
        let outcome = train(&model, model.init(seed), &train_set, &valid_set, &cfg.train_config(seed), &Rayon, &mut |e| {
            let em = e.valid.emotion().expect("emotion enabled");
            eprintln!(
                "seed {seed} epoch {:>3} loss {:.4} valid acc {:.4} f1 {:.4}{}",
                e.epoch,
                e.train_loss,
                em.accuracy,
                em.macro_f1,
                if e.improved { " *" } else { "" }
            );
            if let Err(err) = writeln!(metrics, "{}", report::epoch_line(seed, e)) {
                io_err.get_or_insert(err);
            }
        })?;
        if let Some(e) = io_err.or_else(|| metrics.flush().err()) {
            return Err(Error::Io { path: metrics_path, source: e });
        }
        for d in &outcome.diagnostics {
            eprintln!("seed {seed}: {d}");
        }
        let ckpt = Checkpoint { model: cfg.model_config(), tokenizer: cfg.tokenizer, seed, params: outcome.best_params };
        ckpt.save(&dir.join("model.ckpt"))?;
        let valid = evaluate(&model, &ckpt.params, &valid_set, &Rayon)?;
        write_eval(&dir, Split::Valid, &valid)?;
        let scored = if test_set.is_empty() {
            valid
        } else {
            let t = evaluate(&model, &ckpt.params, &test_set, &Rayon)?;
            write_eval(&dir, Split::Test, &t)?;
            t
        };
        let em = scored.emotion().expect("emotion enabled");
        runs.push(RunResult { seed, best_epoch: outcome.best_epoch, accuracy: em.accuracy, macro_f1: em.macro_f1 });
    }
    let text = report::seeds_table(scored_split.name(), &runs);
    write_atomic(&cfg.data.output_dir.join("report.txt"), text.as_bytes())?;
    Ok(TrainSummary { scored_split, runs, report: text })
}

pub fn cmd_evaluate(checkpoint: &Path, shard: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.build_model().map_err(|e| Error::format(checkpoint, e))?;
    let shard_data = Shard::load(shard)?;
    if shard_data.representation != ckpt.model.representation || shard_data.max_len != ckpt.model.max_len {
        return Err(Error::Validation(format!(
            "{} ({} / {}) does not match the checkpoint ({} / {})",
            shard.display(),
            shard_data.representation.name(),
            shard_data.max_len,
            ckpt.model.representation.name(),
            ckpt.model.max_len
        )));
    }
    Ok(evaluate(&model, &ckpt.params, &shard_data.examples(), &Rayon)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub path: PathBuf,
    pub emotion: EmotionClass,
    pub probabilities: [f64; 4],
}

pub fn cmd_predict(checkpoint: &Path, clips: &[PathBuf]) -> Result<Vec<Prediction>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.build_model().map_err(|e| Error::format(checkpoint, e))?;
    let tok = Tokenizer::new(ckpt.tokenizer);
    let cfg = model.config();
    clips
        .iter()
        .map(|path| {
            let score = parse_midi(&read(path)?).map_err(|e| Error::format(path, e))?;
            let q = quantize(&score, ckpt.tokenizer.subdivisions_per_beat);
            let tokens = tok
                .encode(cfg.representation, &q, &mut Vec::new())
                .map_err(|e| Error::format(path, e))?
                .pad_or_truncate(cfg.max_len);
            if tokens.true_length == 0 {
                return Err(Error::format(path, "no notes to classify"));
            }
            let out = model.forward(&ckpt.params, &tokens).map_err(|e| Error::format(path, e))?;
            let p = softmax(out.logits(Task::Emotion).expect("emotion enabled"));
            let probabilities: [f64; 4] = p.try_into().expect("four emotion classes");
            let best = smer_core::train::argmax(&probabilities);
            Ok(Prediction { path: path.clone(), emotion: EmotionClass::ALL[best], probabilities })
        })
        .collect()
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<(Vec<AblationRow>, String)> {
    let grid = cfg.ablation_grid().map_err(Error::Validation)?;
    let train_set = load_split(cfg, Split::Train)?.examples();
    let valid_set = load_split(cfg, Split::Valid)?.examples();
    let test_set = load_split(cfg, Split::Test)?.examples();
    let path = cfg.data.output_dir.join("ablation_runs.jsonl");
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut runs = BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
    let mut io_err = None;
    let rows = run_ablation(
        &cfg.model_config(),
        &grid,
        &cfg.training.seeds,
        &train_set,
        &valid_set,
        &test_set,
        &cfg.train_config(0),
        &Rayon,
        &mut |aux, r| {
            eprintln!("aux {aux} seed {} accuracy {:.4} macro-F1 {:.4}", r.seed, r.accuracy, r.macro_f1);
            let line = serde_json::json!({
                "aux_tasks": aux.iter().map(Task::name).collect::<Vec<_>>(),
                "seed": r.seed,
                "best_epoch": r.best_epoch,
                "accuracy": r.accuracy,
                "macro_f1": r.macro_f1,
            });
            if let Err(e) = writeln!(runs, "{line}") {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err.or_else(|| runs.flush().err()) {
        return Err(Error::Io { path, source: e });
    }
    let text = report::ablation_table(&rows);
    write_atomic(&cfg.data.output_dir.join("ablation.txt"), text.as_bytes())?;
    Ok((rows, text))
}
