//! Acceptance criteria, one line each. Runs as a plain binary so that every
//! line is printed whether or not the criterion passes; exits nonzero if any
//! criterion fails. A name filter may be given as the first free argument.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracle;
use common::synthetic::{self, small_config, write_corpus};
use mtss::harness::{cmd_prepare, cmd_train, read_metrics, ExperimentConfig, RunResult};
use mtss::model::Pass;
use mtss::train::{SplitName, TrainPlan, Trainer};
use mtss::verify::{run_suite, standard_cases, tiny_embedding_batch, tiny_model, tiny_token_batch};
use mtss::{EmbeddingKind, Mode, Model, ModelConfig, Tape, Task};

const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_SEED: u64 = 0;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

const ORACLE_TOLERANCE: f64 = 1e-10;

const SPLIT_CORPUS: usize = 10_000;
const SPLIT_SIZES: (usize, usize, usize) = (7200, 800, 2000);

const CONVERGENCE_SENTENCES: usize = 2000;
const CONVERGENCE_VOCAB: usize = 50;
const CONVERGENCE_LEN: usize = 10;
const CONVERGENCE_ACCURACY: f64 = 0.95;
const CONVERGENCE_EPOCHS: usize = 20;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(300);

const MAJORITY_BASELINE: f64 = 0.50;
const DESK_MARGIN: f64 = 0.20;
const DESK_PER_TASK: usize = 2000;
const DESK_GLOVE_DIM: usize = 50;

const FULL_GLOVE_DIM: usize = 300;
const FULL_EPOCHS: usize = 20;
/// Published GloVe multitask test accuracies.
const FULL_REFERENCE: [(Task, f64); 2] = [(Task::Subj, 0.923), (Task::Pol, 0.921)];
/// Published GloVe single-task test accuracies.
const SINGLE_REFERENCE: [(Task, f64); 2] = [(Task::Subj, 0.907), (Task::Pol, 0.759)];
const FULL_SOFT_WINDOW: f64 = 0.05;

/// Directory holding the four corpus files under their default names.
const DATA_ENV: &str = "MTSS_DATA_DIR";
const GLOVE_50_ENV: &str = "MTSS_GLOVE_50D";
const GLOVE_300_ENV: &str = "MTSS_GLOVE_300D";

type Outcome = Result<String, String>;

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let rows = run_suite(standard_cases(GRADIENT_SEED).map_err(|e| e.to_string())?);
    let elapsed = start.elapsed();
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| r.error.is_some() || !(r.max_rel_error < GRADIENT_TOLERANCE))
        .map(|r| format!("{} {:.3e}", r.name, r.max_rel_error))
        .collect();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let detail = format!("{} rows, worst {worst:.3e}, {elapsed:.1?}", rows.len());
    if failing.is_empty() && elapsed < GRADIENT_BUDGET {
        Ok(detail)
    } else {
        Err(format!("{detail}; over {GRADIENT_TOLERANCE:e}: {}", failing.join(", ")))
    }
}

fn forward_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for embedding in [EmbeddingKind::Glove, EmbeddingKind::BertFile] {
        for seed in 0..3 {
            let mut model = tiny_model(embedding, seed).map_err(|e| e.to_string())?;
            model.config.attention_mask = seed != 2;
            let batch = |task: Task| {
                let c = &model.config;
                match embedding {
                    EmbeddingKind::Glove => tiny_token_batch(task, 4, c.max_len(task), c.vocab(task), seed + 10),
                    EmbeddingKind::BertFile => tiny_embedding_batch(task, 4, c.max_len(task), c.d_emb, seed + 10),
                }
            };
            let (pb, sb) = (batch(Task::Pol), batch(Task::Subj));
            for mode in [Mode::Mtl, Mode::SinglePol, Mode::SingleSubj] {
                let mut tape = Tape::new();
                let out = model
                    .forward(&mut tape, mode, Some(&pb), Some(&sb), Pass::Eval)
                    .map_err(|e| e.to_string())?;
                let want = oracle::forward(&model, mode, Some(&pb), Some(&sb));
                worst = worst.max((tape.value(out.loss).item() - want.loss).abs());
                for (task, probs) in [(Task::Pol, &want.pol), (Task::Subj, &want.subj)] {
                    let (Some(tf), Some(probs)) = (out.task(task), probs) else { continue };
                    let got = tape.value(tf.probs).data();
                    for (g, w) in got.iter().zip(probs.iter().flatten()) {
                        worst = worst.max((g - w).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    let detail = format!("{cases} forward passes, max abs diff {worst:.2e}");
    if worst < ORACLE_TOLERANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn split_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    write_corpus(&data, SPLIT_CORPUS / 2, 12, 1);
    let manifests = |out: &str, seed: u64| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let mut cfg = small_config(&data, &dir.path().join(out));
        cfg.plan.seed = seed;
        let prepared = cmd_prepare(&cfg).map_err(|e| e.to_string())?;
        for (task, p) in &prepared {
            let s = &p.splits;
            if (s.train.len(), s.dev.len(), s.test.len()) != SPLIT_SIZES || p.set.len() != SPLIT_CORPUS {
                return Err(format!("{task}: {}/{}/{}", s.train.len(), s.dev.len(), s.test.len()));
            }
            let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
            all.sort_unstable();
            all.dedup();
            if all.len() != SPLIT_CORPUS {
                return Err(format!("{task}: splits overlap or miss records"));
            }
        }
        let mut files = BTreeMap::new();
        for task in Task::ALL {
            for split in SplitName::ALL {
                let name = format!("{task}.{split}.txt");
                let bytes = fs::read(cfg.prepared_dir().join(&name)).map_err(|e| e.to_string())?;
                files.insert(name, bytes);
            }
        }
        Ok(files)
    };
    let a = manifests("a", 1)?;
    let b = manifests("b", 1)?;
    let c = manifests("c", 2)?;
    if a != b {
        return Err("same seed gave different manifests".into());
    }
    if a == c {
        return Err("different seeds gave identical manifests".into());
    }
    Ok(format!("{}/{}/{} per task, disjoint, seed-deterministic", SPLIT_SIZES.0, SPLIT_SIZES.1, SPLIT_SIZES.2))
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let (data, vp, vs) = synthetic::datasets(CONVERGENCE_SENTENCES, CONVERGENCE_LEN, 7);
    let words = vp.max(vs) - 2;
    if words > CONVERGENCE_VOCAB {
        return Err(format!("synthetic vocabulary has {words} words"));
    }
    let config = ModelConfig {
        d_emb: 32,
        vocab_pol: vp,
        vocab_subj: vs,
        max_len_pol: CONVERGENCE_LEN,
        max_len_subj: CONVERGENCE_LEN,
        hidden: 32,
        d_f: 32,
        d_a: 32,
        d_t: 32,
        d_ntn: 8,
        ..ModelConfig::default()
    };
    let plan = TrainPlan { epochs: CONVERGENCE_EPOCHS, seed: 7, ..TrainPlan::default() };
    let model = Model::<f32>::new(config, plan.seed).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(plan, model, &data).map_err(|e| e.to_string())?;
    let mut last = (0.0, 0.0);
    while trainer.epoch < CONVERGENCE_EPOCHS {
        let rows = trainer.train_epoch().map_err(|e| e.to_string())?;
        let dev = |task| rows.iter().find(|r| r.split == SplitName::Dev && r.task == task).map_or(0.0, |r| r.accuracy);
        last = (dev(Task::Pol), dev(Task::Subj));
        if last.0 >= CONVERGENCE_ACCURACY && last.1 >= CONVERGENCE_ACCURACY {
            break;
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "dev pol {:.4} subj {:.4} after {} epochs, {elapsed:.1?}",
        last.0, last.1, trainer.epoch
    );
    if last.0 >= CONVERGENCE_ACCURACY && last.1 >= CONVERGENCE_ACCURACY && elapsed < CONVERGENCE_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn env_path(name: &str) -> Result<PathBuf, String> {
    match std::env::var_os(name) {
        Some(v) if PathBuf::from(&v).exists() => Ok(PathBuf::from(v)),
        Some(v) => Err(format!("{name}={} does not exist", PathBuf::from(v).display())),
        None => Err(format!("{name} is not set")),
    }
}

fn real_data_config(glove_env: &str, dim: usize) -> Result<(ExperimentConfig, tempfile::TempDir), String> {
    let data = env_path(DATA_ENV).map_err(|e| format!("corpus unavailable: {e}"))?;
    let glove = env_path(glove_env).map_err(|e| format!("GloVe vectors unavailable: {e}"))?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::default();
    cfg.data_dir = data;
    cfg.glove = Some(glove);
    cfg.model.d_emb = dim;
    cfg.out = out.path().to_path_buf();
    Ok((cfg, out))
}

fn test_accuracy(r: &RunResult, task: Task) -> f64 {
    r.test[task.name()].accuracy
}

fn desk_scale() -> Outcome {
    let (mut cfg, _out) = real_data_config(GLOVE_50_ENV, DESK_GLOVE_DIM)?;
    cfg.pol_per_class = Some(DESK_PER_TASK / 2);
    cfg.subj_per_class = Some(DESK_PER_TASK / 2);
    let mut results = BTreeMap::new();
    for mode in [Mode::SinglePol, Mode::SingleSubj, Mode::Mtl] {
        cfg.plan.mode = mode;
        let report = cmd_train(&cfg, None).map_err(|e| format!("{mode}: {e}"))?;
        results.insert(mode.name(), report.result);
    }
    let floor = MAJORITY_BASELINE + DESK_MARGIN;
    let mut parts = Vec::new();
    let mut ok = true;
    for task in Task::ALL {
        let single = test_accuracy(&results[Mode::single(task).name()], task);
        let mtl = test_accuracy(&results["mtl"], task);
        ok &= single >= floor && mtl >= floor;
        parts.push(format!("{task} single {single:.4} mtl {mtl:.4} delta {:+.4}", mtl - single));
    }
    let detail = format!("{} (floor {floor:.2})", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn full_data() -> Outcome {
    let (mut cfg, _out) = real_data_config(GLOVE_300_ENV, FULL_GLOVE_DIM)?;
    cfg.plan.epochs = FULL_EPOCHS;
    cfg.plan.mode = Mode::Mtl;
    let report = cmd_train(&cfg, None).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (task, reference) in FULL_REFERENCE {
        let acc = test_accuracy(&report.result, task);
        if !acc.is_finite() {
            return Err(format!("{task} accuracy is not finite"));
        }
        let near = (acc - reference).abs() <= FULL_SOFT_WINDOW;
        parts.push(format!(
            "{task} {acc:.4} (reference {reference:.3}, {} the {FULL_SOFT_WINDOW} soft window)",
            if near { "within" } else { "outside" }
        ));
    }
    let single: Vec<String> = SINGLE_REFERENCE.iter().map(|(t, a)| format!("{t} {a:.3}")).collect();
    Ok(format!("{}; single-task references {}", parts.join("; "), single.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_corpus(&dir.path().join("data"), 150, 10, 11);
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("runs"));
    cfg.set("dropout", "0.3").map_err(|e| e.to_string())?;
    cfg.set("epochs", "3").map_err(|e| e.to_string())?;
    let run = || cmd_train(&cfg, None).map_err(|e| e.to_string());
    let (a, b) = (run()?, run()?);
    let eval_rows = |dir: &std::path::Path| -> Result<Vec<String>, String> {
        Ok(read_metrics(&dir.join("metrics.csv"))
            .map_err(|e| e.to_string())?
            .iter()
            .filter(|r| r.split != SplitName::Train)
            .map(|r| r.csv_row())
            .collect())
    };
    if eval_rows(&a.run_dir)? != eval_rows(&b.run_dir)? {
        return Err("dev rows differ between identical runs".into());
    }
    if a.result.test != b.result.test {
        return Err("test accuracies differ between identical runs".into());
    }
    let accs: Vec<String> = a.result.test.iter().map(|(t, s)| format!("{t} {:.4}", s.accuracy)).collect();
    Ok(format!("identical dev rows and test accuracies ({})", accs.join(", ")))
}

const CRITERIA: &[(&str, fn() -> Outcome)] = &[
    ("gradient_suite", gradient_suite),
    ("forward_oracle", forward_oracle),
    ("split_protocol", split_protocol),
    ("convergence", convergence),
    ("desk_scale_glove", desk_scale),
    ("full_data_glove", full_data),
    ("determinism", determinism),
];

fn main() -> ExitCode {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in CRITERIA {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("acceptance {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("acceptance {name}: FAIL ({detail})");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
