mod common;

use std::path::Path;
use std::process::{Command, Output};

use smer::manifest::{Manifest, Split};

fn smer(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smer"));
    c.args(args).env_remove(smer::config::OUTPUT_ROOT_ENV);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config_args<'a>(cmd: &'a str, cfg: &'a str, overrides: &'a [String]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--config", cfg];
    for o in overrides {
        v.push("--set");
        v.push(o);
    }
    v
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let midi = root.join("midi");
    common::write_emopia_corpus(&midi, 48, 1);
    common::write_empty_midi(&midi.join("Q2_silent_0.mid"));

    let manifest = root.join("manifest.csv");
    let o = smer(&["ingest", "--adapter", "emopia", "--source", midi.to_str().unwrap(), "--out", manifest.to_str().unwrap(), "--seed", "3"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = Manifest::load(&manifest).unwrap();
    assert_eq!(m.rows.len(), 49);
    assert!(m.split(Split::Valid).count() > 0 && m.split(Split::Test).count() > 0);

    let cfg = root.join("run.toml");
    let o = smer(&["init-config", "--representation", "cp", "--out", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg_s = cfg.to_str().unwrap();
    let ov = common::tiny_overrides(&manifest);

    // the silent clip fails, the others still land in the shards
    let o = smer(&config_args("preprocess", cfg_s, &ov), &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("Q2_silent_0.mid"));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("shards/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
    let clips: u64 = ["train", "valid", "test"].iter().map(|s| summary["splits"][s]["clips"].as_u64().unwrap()).sum();
    assert_eq!(clips, 48);

    let o = smer(&config_args("train", cfg_s, &ov), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.contains("mean±std accuracy"), "{report}");
    for seed in [0, 1] {
        let d = root.join(format!("runs/seed-{seed}"));
        assert!(d.join("model.ckpt").is_file());
        assert!(d.join("confusion_test.csv").is_file());
        let lines = std::fs::read_to_string(d.join("metrics.jsonl")).unwrap();
        assert!((1..=3).contains(&lines.lines().count()));
    }

    // same seed under a different output root gives the same bytes
    let other = root.join("elsewhere");
    let one_seed: Vec<String> = ov.iter().cloned().chain(["training.seeds=[1]".to_string()]).collect();
    let o = smer(&config_args("train", cfg_s, &one_seed), &[(smer::config::OUTPUT_ROOT_ENV, &other)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read(root.join("runs/seed-1/model.ckpt")).unwrap(),
        std::fs::read(other.join("runs/seed-1/model.ckpt")).unwrap()
    );

    let ckpt = root.join("runs/seed-0/model.ckpt");
    let confusion = root.join("conf.csv");
    let o = smer(
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--shard", root.join("shards/valid.shard").to_str().unwrap(), "--confusion", confusion.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("macro-F1"));
    assert!(std::fs::read_to_string(&confusion).unwrap().starts_with("true\\pred,Q1,Q2,Q3,Q4"));

    let clip = std::fs::read_dir(&midi).unwrap().map(|e| e.unwrap().path()).find(|p| !p.ends_with("Q2_silent_0.mid")).unwrap();
    let o = smer(&["predict", "--checkpoint", ckpt.to_str().unwrap(), clip.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let fields: Vec<&str> = out.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 6);
    assert!(["Q1", "Q2", "Q3", "Q4"].contains(&fields[1]));
    let total: f64 = fields[2..].iter().map(|x| x.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5, "{total}");

    let mut ab = ov.clone();
    ab.push("training.seeds=[0]".into());
    ab.push("optimizer.max_epochs=1".into());
    let o = smer(&config_args("ablate", cfg_s, &ab), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(root.join("runs/ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.contains("emotion only") && table.contains("+key+velocity"));
}

#[test]
fn exit_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    assert_eq!(code(&smer(&["init-config", "--representation", "sw", "--out", cfg.to_str().unwrap()], &[])), 0);
    let cfg_s = cfg.to_str().unwrap();

    let o = smer(&["train", "--config", cfg_s, "--set", "model.n_heads=3"], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = smer(&["train", "--config", cfg_s, "--set", "tasks.velocity=true"], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert_eq!(code(&smer(&["train", "--bogus"], &[])), 1);

    let o = smer(&["train", "--config", cfg_s], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(&root.join("shards/vocab.toml").display().to_string()), "{}", stderr(&o));

    let missing = root.join("nope.ckpt");
    let o = smer(&["evaluate", "--checkpoint", missing.to_str().unwrap(), "--shard", "x.shard"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checkpoint not found") && stderr(&o).contains("nope.ckpt"), "{}", stderr(&o));
}

#[test]
fn vgmidi_and_generic_adapters() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let paths = common::write_emopia_corpus(&root.join("midi"), 8, 4);
    let names: Vec<String> = paths.iter().map(|p| format!("midi/{}", p.file_name().unwrap().to_string_lossy())).collect();

    let labels = root.join("labels.csv");
    let signs = [(1, 1), (-1, 1), (-1, -1), (1, -1)];
    let mut text = String::from("path,valence,arousal\n");
    for (i, n) in names.iter().enumerate() {
        let (v, a) = signs[i % 4];
        text += &format!("{n},{v},{a}\n");
    }
    std::fs::write(&labels, &text).unwrap();
    let out = root.join("vg.csv");
    let o = smer(&["ingest", "--adapter", "vgmidi", "--source", root.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = Manifest::load(&out).unwrap();
    let row = m.rows.iter().find(|r| r.midi_path.ends_with(&names[3][5..])).unwrap();
    assert_eq!(row.emotion, smer_core::EmotionClass::Q4);

    std::fs::write(&labels, text + &format!("{},0,1\n", names[0])).unwrap();
    let o = smer(&["ingest", "--adapter", "vgmidi", "--source", labels.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    let generic = root.join("generic.csv");
    let mut g = String::from("midi_path,emotion,split,song_id\n");
    for (i, n) in names.iter().enumerate() {
        g += &format!("{n},Q{},{},s{}\n", i % 4 + 1, if i < 6 { "train" } else { "valid" }, i / 2);
    }
    std::fs::write(&generic, &g).unwrap();
    let o = smer(&["ingest", "--adapter", "generic-csv", "--source", generic.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(Manifest::load(&out).unwrap().split(Split::Valid).count(), 2);

    // one song on both sides of the split
    std::fs::write(&generic, g.replace(",valid,s3", ",valid,s2")).unwrap();
    let o = smer(&["ingest", "--adapter", "generic-csv", "--source", generic.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("s2"));

    let bad = root.join("bad");
    std::fs::create_dir_all(&bad).unwrap();
    common::write_empty_midi(&bad.join("happy_tune.mid"));
    let o = smer(&["ingest", "--adapter", "emopia", "--source", bad.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("happy_tune.mid"));
}
