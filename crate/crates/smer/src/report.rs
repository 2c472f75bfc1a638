//! Text, CSV and JSON renderings of training and evaluation results.

use serde_json::{json, Value};
use smer_core::labeling::EmotionClass;
use smer_core::model::Task;
use smer_core::train::{AblationRow, ClassificationReport, EpochRecord, EvalReport, RunResult};

/// Percentages with two decimals, `mean±std`.
pub fn mean_std_pct((mean, std): (f64, f64)) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

fn task_map(it: impl Iterator<Item = (Task, f64)>) -> Value {
    Value::Object(it.map(|(t, x)| (t.name().to_string(), json!(x))).collect())
}

fn eval_json(r: &EvalReport) -> Value {
    let reports: serde_json::Map<String, Value> = r
        .reports
        .iter_ref()
        .map(|(t, c)| (t.name().to_string(), json!({ "accuracy": c.accuracy, "macro_f1": c.macro_f1 })))
        .collect();
    json!({ "examples": r.n_examples, "losses": task_map(r.losses.iter()), "metrics": reports })
}

/// One JSON line per epoch.
pub fn epoch_line(seed: u64, e: &EpochRecord) -> String {
    json!({
        "seed": seed,
        "epoch": e.epoch,
        "lr": e.lr,
        "steps": e.steps,
        "skipped_steps": e.skipped_steps,
        "train_loss": e.train_loss,
        "train_task_losses": task_map(e.train_task_losses.iter()),
        "sigma": task_map(e.sigma.iter()),
        "valid": eval_json(&e.valid),
        "improved": e.improved,
    })
    .to_string()
}

pub fn eval_summary(r: &EvalReport) -> Value {
    eval_json(r)
}

/// Rows are true classes, columns predictions.
pub fn confusion_csv(r: &ClassificationReport, names: &[&str]) -> String {
    let mut out = String::from("true\\pred");
    for n in names {
        out += &format!(",{n}");
    }
    out.push('\n');
    for (i, row) in r.confusion.iter().enumerate() {
        out += names.get(i).copied().unwrap_or("?");
        for c in row {
            out += &format!(",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn emotion_names() -> Vec<&'static str> {
    EmotionClass::ALL.iter().map(|e| e.name()).collect()
}

pub fn classification_text(r: &ClassificationReport, names: &[&str]) -> String {
    let mut out = format!("accuracy {:.4}  macro-F1 {:.4}\n", r.accuracy, r.macro_f1);
    out += "class  precision  recall  f1      support\n";
    for (i, c) in r.per_class.iter().enumerate() {
        out += &format!("{:<6} {:<10.4} {:<7.4} {:<7.4} {}\n", names.get(i).copied().unwrap_or("?"), c.precision, c.recall, c.f1, c.support);
    }
    out
}

/// Per-seed results followed by the aggregate line.
pub fn seeds_table(split: &str, runs: &[RunResult]) -> String {
    let mut out = format!("emotion on {split}\nseed  best_epoch  accuracy  macro-F1\n");
    for r in runs {
        out += &format!("{:<5} {:<11} {:<9.2} {:.2}\n", r.seed, r.best_epoch, 100.0 * r.accuracy, 100.0 * r.macro_f1);
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
    out += &format!(
        "mean±std accuracy {}  macro-F1 {}\n",
        mean_std_pct(smer_core::train::mean_std(&acc)),
        mean_std_pct(smer_core::train::mean_std(&f1))
    );
    out
}

fn row_label(r: &AblationRow) -> String {
    if r.aux_tasks.is_empty() { "emotion only".into() } else { format!("+{}", r.aux_tasks.iter().map(Task::name).collect::<Vec<_>>().join("+")) }
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<24} {:<14} {}\n", "tasks", "accuracy", "macro-F1");
    for r in rows {
        out += &format!("{:<24} {:<14} {}\n", row_label(r), mean_std_pct(r.accuracy), mean_std_pct(r.macro_f1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use smer_core::model::TaskSet;

    #[test]
    fn formats() {
        assert_eq!(mean_std_pct((0.6758, 0.0123)), "67.58±1.23");
        let r = ClassificationReport::from_predictions(&[0, 1, 2, 3], &[0, 1, 2, 2], 4);
        let csv = confusion_csv(&r, &emotion_names());
        assert_eq!(csv.lines().nth(4).unwrap(), "Q4,0,0,1,0");
        let rows = vec![
            AblationRow { aux_tasks: TaskSet::empty(), runs: vec![], accuracy: (0.5, 0.0), macro_f1: (0.4, 0.1) },
            AblationRow { aux_tasks: TaskSet::of(&[Task::Key, Task::Velocity]), runs: vec![], accuracy: (0.5, 0.0), macro_f1: (0.4, 0.1) },
        ];
        let t = ablation_table(&rows);
        assert!(t.contains("emotion only") && t.contains("+key+velocity") && t.contains("40.00±10.00"));
    }
}
