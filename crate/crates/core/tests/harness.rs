mod common;

use std::fs;
use std::path::Path;

use common::synthetic::{small_config, write_corpus};
use mtss::harness::{
    cmd_eval, cmd_prepare, cmd_train, export_report, read_metrics, Checkpoint, CheckpointMeta, DevMetric,
    ExperimentConfig,
};
use mtss::train::{Adam, AdamConfig, SplitName};
use mtss::{Error, Mode, Model, ModelConfig, Task};

fn tiny_checkpoint() -> (Checkpoint, Model<f32>) {
    let mut model = mtss::verify::tiny_model(mtss::EmbeddingKind::Glove, 3).unwrap().cast::<f32>();
    let ids = model.trainable(Mode::Mtl);
    let mut adam = Adam::new(AdamConfig::default(), &model.store);
    for &id in &ids {
        let g = model.store.value(id).clone();
        model.store.param_mut(id).grad = g;
    }
    adam.step(&mut model.store, &ids).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig::tiny(mtss::EmbeddingKind::Glove);
    let meta = CheckpointMeta {
        epoch: 4,
        step: 17,
        dev: vec![DevMetric { task: Task::Pol, loss: 0.25, accuracy: 0.875 }],
    };
    (Checkpoint::capture(&cfg, &model.store, Some(&adam), Some(meta)), model)
}

#[test]
fn config_file_round_trip_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("glove", "/data/glove.6B.50d.txt"),
        ("pol_per_class", "none"),
        ("lr", "0.00003"),
        ("eps", "0.00000001"),
        ("clip_norm", "5"),
        ("patience", "3"),
        ("mode", "single-subj"),
        ("activation", "relu"),
        ("data_dir", "some dir/with spaces"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let path = dir.path().join("exp.txt");
    cfg.save(&path).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_text(), cfg.to_text());
    assert_eq!(back.plan.adam.lr, 3e-5);
}

#[test]
fn checkpoint_round_trip_is_bit_exact_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, model) = tiny_checkpoint();
    let path = dir.path().join("a.mtsk");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let mut fresh = Model::<f32>::new(loaded.config.model.clone(), 99).unwrap();
    loaded.load_into(&mut fresh.store).unwrap();
    for (id, p) in model.store.iter() {
        let got = fresh.store.value(id).data();
        assert!(
            p.value.data().iter().zip(got).all(|(a, b)| a.to_bits() == b.to_bits()),
            "{} differs",
            p.name
        );
    }
    let again = dir.path().join("b.mtsk");
    loaded.save(&again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn checkpoint_header_layout() {
    let (ckpt, model) = tiny_checkpoint();
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[0..4], b"MTSK");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, model.store.len());
    let first = &model.store.iter().next().unwrap().1.name;
    let len = u16::from_le_bytes(bytes[12..14].try_into().unwrap()) as usize;
    assert_eq!(&bytes[14..14 + len], first.as_bytes());
}

#[test]
fn mismatched_config_names_the_tensor() {
    let (ckpt, _) = tiny_checkpoint();
    let mut other = ModelConfig::tiny(mtss::EmbeddingKind::Glove);
    other.hidden = 3;
    let mut model = Model::<f32>::new(other, 0).unwrap();
    let err = ckpt.load_into(&mut model.store).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("pol.lstm.fwd.w_xi"), "{err}");
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let (ckpt, _) = tiny_checkpoint();
    let bytes = ckpt.to_bytes();
    let p = Path::new("x.mtsk");
    for cut in [3, 11, 40, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut], p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad, p).unwrap_err().to_string().contains("magic"));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(Checkpoint::from_bytes(&bad, p).unwrap_err().to_string().contains("version"));
}

#[test]
fn unknown_tensor_name_is_rejected() {
    let (mut ckpt, _) = tiny_checkpoint();
    ckpt.tensors[0].0 = "pol.mystery".into();
    let mut model = Model::<f32>::new(ckpt.config.model.clone(), 0).unwrap();
    let err = ckpt.load_into(&mut model.store).unwrap_err();
    assert!(err.to_string().contains("pol.mystery") || err.to_string().contains("pol.embedding"), "{err}");
}

#[test]
fn unknown_trailing_section_is_skipped() {
    let (ckpt, _) = tiny_checkpoint();
    let mut bytes = ckpt.to_bytes();
    bytes.extend_from_slice(b"XTRA");
    bytes.extend_from_slice(&3u64.to_le_bytes());
    bytes.extend_from_slice(&[1, 2, 3]);
    assert_eq!(Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap(), ckpt);
}

#[test]
fn missing_optimizer_state_gives_fresh_adam() {
    let (mut ckpt, model) = tiny_checkpoint();
    let restored: Adam<f32> = ckpt.optimizer(AdamConfig::default(), &model.store).unwrap();
    assert_eq!(restored.t, 1);
    ckpt.optimizer = None;
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
    let fresh: Adam<f32> = back.optimizer(AdamConfig::default(), &model.store).unwrap();
    assert_eq!(fresh.t, 0);
    assert!(fresh.moments().0.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn prepare_splits_ten_thousand_records_per_task() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 5000, 10, 1);
    let cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    let prepared = cmd_prepare(&cfg).unwrap();
    assert_eq!(prepared.len(), 2);
    for (task, p) in &prepared {
        let sizes = (p.splits.train.len(), p.splits.dev.len(), p.splits.test.len());
        assert_eq!(sizes, (7200, 800, 2000), "{task}");
        let manifest = fs::read_to_string(cfg.prepared_dir().join(format!("{task}.dev.txt"))).unwrap();
        assert_eq!(manifest.lines().count(), 800);
    }
}

#[test]
fn prepare_is_idempotent_and_repairs_corruption() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 100, 10, 2);
    let cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    let first = cmd_prepare(&cfg).unwrap();
    assert!(first.iter().all(|(_, p)| p.regenerated));
    let pd = cfg.prepared_dir();
    let snapshot = |name: &str| fs::read(pd.join(name)).unwrap();
    let manifests: Vec<_> = ["pol.train.txt", "pol.test.txt", "subj.dev.txt"].iter().map(|n| snapshot(n)).collect();

    let second = cmd_prepare(&cfg).unwrap();
    assert!(second.iter().all(|(_, p)| !p.regenerated));
    for ((_, a), (_, b)) in first.iter().zip(&second) {
        assert_eq!(a.set, b.set);
        assert_eq!(a.splits, b.splits);
    }

    let cache = pd.join("pol.mtsc");
    let mut bytes = fs::read(&cache).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&cache, bytes).unwrap();
    let third = cmd_prepare(&cfg).unwrap();
    assert!(third[0].1.regenerated && !third[1].1.regenerated);
    assert_eq!(third[0].1.set, first[0].1.set);

    fs::remove_dir_all(&pd).unwrap();
    cmd_prepare(&cfg).unwrap();
    let again: Vec<_> = ["pol.train.txt", "pol.test.txt", "subj.dev.txt"].iter().map(|n| snapshot(n)).collect();
    assert_eq!(again, manifests);
}

#[test]
fn prepare_writes_exporter_input_in_record_order() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 20, 6, 3);
    let cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    let prepared = cmd_prepare(&cfg).unwrap();
    let (_, pol) = &prepared[0];
    let text = fs::read_to_string(cfg.prepared_dir().join("pol.sentences.txt")).unwrap();
    assert_eq!(text.lines().count(), pol.set.len());
    let neg = fs::read_to_string(dir.path().join("data/rt-polarity.neg")).unwrap();
    assert_eq!(text.lines().next(), neg.lines().next());
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("nowhere"), &dir.path().join("out"));
    let err = cmd_prepare(&cfg).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("rt-polarity"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn single_task_run_writes_only_its_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 60, 8, 4);
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    cfg.set("mode", "single-pol").unwrap();
    cfg.set("epochs", "3").unwrap();
    let report = cmd_train(&cfg, None).unwrap();
    let rows = read_metrics(&report.run_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.task == Task::Pol));
    for split in [SplitName::Train, SplitName::Dev] {
        assert_eq!(rows.iter().filter(|r| r.split == split).count(), 3);
    }
    assert!(rows.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
    assert!(!cfg.prepared_dir().join("subj.mtsc").exists());
    let header = fs::read_to_string(report.run_dir.join("metrics.csv")).unwrap();
    assert!(header.starts_with("epoch,split,task,loss,accuracy\n"));
}

#[test]
fn mtl_run_then_eval_reproduces_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 60, 8, 5);
    let cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    let report = cmd_train(&cfg, None).unwrap();
    let rows = read_metrics(&report.run_dir.join("metrics.csv")).unwrap();
    for task in Task::ALL {
        for split in [SplitName::Train, SplitName::Dev] {
            assert_eq!(rows.iter().filter(|r| r.task == task && r.split == split).count(), 2);
        }
    }
    let ckpt = report.run_dir.join("best.mtsk");
    let (eval, mode) = cmd_eval(&ckpt, None, None, SplitName::Test).unwrap();
    assert_eq!(mode, Mode::Mtl);
    assert_eq!(eval, report.test);
    assert_eq!(eval.tasks.len(), 2);
    let (again, _) = cmd_eval(&ckpt, None, None, SplitName::Test).unwrap();
    assert_eq!(again, eval);
    assert_eq!(report.result.test["pol"].accuracy, eval.task(Task::Pol).unwrap().accuracy());
    for name in ["config.txt", "result.json"] {
        assert!(report.run_dir.join(name).is_file(), "{name}");
    }
}

#[test]
fn eval_with_mismatched_config_names_tensor() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 40, 8, 6);
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    cfg.set("epochs", "1").unwrap();
    let report = cmd_train(&cfg, None).unwrap();
    cfg.set("d_t", "5").unwrap();
    let err = cmd_eval(&report.run_dir.join("best.mtsk"), Some(cfg), None, SplitName::Dev).unwrap_err();
    assert!(err.to_string().contains("tensor pol.out.w"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn resume_continues_from_saved_epoch() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 40, 8, 7);
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    cfg.set("epochs", "1").unwrap();
    let first = cmd_train(&cfg, None).unwrap();
    cfg.set("epochs", "3").unwrap();
    let second = cmd_train(&cfg, Some(&first.run_dir.join("best.mtsk"))).unwrap();
    let epochs: Vec<usize> = second.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs.first(), Some(&2));
    assert_eq!(second.result.epochs_run, 3);
    assert_ne!(first.run_dir, second.run_dir);
}

#[test]
fn identical_configs_give_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 40, 8, 8);
    let cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    let a = cmd_train(&cfg, None).unwrap();
    let b = cmd_train(&cfg, None).unwrap();
    assert_eq!(
        fs::read(a.run_dir.join("metrics.csv")).unwrap(),
        fs::read(b.run_dir.join("metrics.csv")).unwrap()
    );
    assert_eq!(a.result, b.result);
}

#[test]
fn report_compares_single_and_multitask_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 40, 8, 9);
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("runs"));
    cfg.set("epochs", "1").unwrap();
    for mode in ["single-pol", "single-subj", "mtl"] {
        cfg.set("mode", mode).unwrap();
        cmd_train(&cfg, None).unwrap();
    }
    let out = dir.path().join("report");
    let report = export_report(&[dir.path().join("runs")], &out).unwrap();
    assert_eq!(report.runs, 3);
    for task in Task::ALL {
        let row = &report.comparison[&task];
        assert_eq!((row.single_runs, row.mtl_runs), (1, 1));
        assert!(row.delta().is_some());
    }
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 + 2 + 4);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("task,single_accuracy,mtl_accuracy,delta"));
}

#[test]
fn glove_file_seeds_the_embedding_table() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 30, 8, 12);
    let glove = dir.path().join("vectors.txt");
    let body: String = (0..60)
        .map(|w| {
            let v: Vec<String> = (0..8).map(|k| format!("{}", (w * 8 + k) as f64 / 1000.0)).collect();
            format!("w{w} {}\n", v.join(" "))
        })
        .collect();
    fs::write(&glove, body).unwrap();
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    cfg.glove = Some(glove);
    cfg.set("epochs", "1").unwrap();
    cfg.set("lr", "0.000000001").unwrap();
    let report = cmd_train(&cfg, None).unwrap();
    let ckpt = Checkpoint::load(&report.run_dir.join("best.mtsk")).unwrap();
    let vocab = mtss::data::Vocabulary::load(&cfg.prepared_dir().join("pol.vocab.txt")).unwrap();
    let id = vocab.id("w5").unwrap();
    let table = &ckpt.tensors.iter().find(|(n, _)| n == "pol.embedding").unwrap().1;
    for k in 0..8 {
        let want = (5 * 8 + k) as f64 / 1000.0;
        assert!((table.data()[id * 8 + k] as f64 - want).abs() < 1e-6);
    }
    assert!(table.data()[..8].iter().all(|&v| v == 0.0), "pad row");
}

#[test]
fn bert_file_mode_trains_from_embedding_files() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), 30, 8, 13);
    let mut cfg = small_config(&dir.path().join("data"), &dir.path().join("out"));
    let prepared = cmd_prepare(&cfg).unwrap();
    let dim = 6;
    for (task, p) in &prepared {
        let path = dir.path().join(format!("{task}.mtss"));
        let mut w = mtss::data::MtssWriter::create(&path, 10, dim as u32).unwrap();
        for i in 0..p.set.len() {
            let mask = p.set.row_mask(i).to_vec();
            let label = p.set.labels[i] as f32;
            let emb: Vec<f32> = (0..10 * dim)
                .map(|j| if mask[j / dim] == 1 { label - 0.5 + (j % dim) as f32 * 0.01 } else { 0.0 })
                .collect();
            w.push(&emb, &mask).unwrap();
        }
        w.finish().unwrap();
        cfg.set(&format!("bert_{task}"), path.to_str().unwrap()).unwrap();
    }
    cfg.set("embedding", "bert-file").unwrap();
    cfg.set("d_emb", &dim.to_string()).unwrap();
    cfg.set("epochs", "1").unwrap();
    let report = cmd_train(&cfg, None).unwrap();
    assert_eq!(report.test.tasks.len(), 2);
    let ckpt = Checkpoint::load(&report.run_dir.join("best.mtsk")).unwrap();
    assert!(ckpt.tensors.iter().all(|(n, _)| !n.ends_with("embedding")));

    cfg.set("d_emb", "7").unwrap();
    let err = cmd_train(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("dimension 6"), "{err}");
}
