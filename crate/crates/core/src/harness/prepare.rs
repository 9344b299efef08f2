//! Encodes corpora into split manifests, vocabularies, and caches.
//!
//! Per task, the prepared directory holds:
//!
//! - `{task}.{train,dev,test}.txt`: record ids, one per line
//! - `{task}.vocab.txt`: `token<TAB>count` in id order from 2
//! - `{task}.mtsc` and `{task}.mtsc.sha256`: encoded cache and its hash
//! - `{task}.sentences.txt`: sentence text in record order (embedding export input)
//! - `{task}.key`: fingerprint of the inputs; written last
//!
//! A rerun with an unchanged fingerprint reuses the files as they are.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::data::{encode_pad, load_task, split_dataset, EncodedSet, MtssReader, Splits, Task, Vocabulary};
use crate::error::{Error, Result};
use crate::train::{Datasets, SplitName, TaskData};

#[derive(Clone, Debug)]
pub struct PreparedTask {
    pub set: EncodedSet,
    pub splits: Splits,
    pub vocab: Vocabulary,
    /// False when the files on disk were reused.
    pub regenerated: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn task_file(dir: &Path, task: Task, suffix: &str) -> PathBuf {
    dir.join(format!("{task}.{suffix}"))
}

pub fn manifest_path(dir: &Path, task: Task, split: SplitName) -> PathBuf {
    task_file(dir, task, &format!("{split}.txt"))
}

/// Everything that determines the prepared files, including the corpus bytes.
fn fingerprint(cfg: &ExperimentConfig, task: Task) -> Result<String> {
    let paths = cfg.corpus_paths();
    let (files, per_class) = match task {
        Task::Pol => ([&paths.pol_neg, &paths.pol_pos], cfg.pol_per_class),
        Task::Subj => ([&paths.obj, &paths.subj], cfg.subj_per_class),
    };
    let spec = cfg.split_spec();
    let mut key = format!(
        "task = {task}\nmax_len = {}\nseed = {}\nper_class = {per_class:?}\nsplit = {} {} {} stratified={}\n",
        cfg.model.max_len(task),
        cfg.plan.seed,
        spec.train,
        spec.dev,
        spec.test,
        spec.stratified
    );
    for path in files {
        key.push_str(&format!("file {} {}\n", path.display(), sha256_hex(&read(path)?)));
    }
    Ok(key)
}

fn load_manifest(path: &Path, index: &HashMap<&str, usize>) -> Result<Vec<usize>> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::format(path, "byte 0", "not UTF-8"))?;
    text.lines()
        .enumerate()
        .map(|(n, id)| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::format(path, format!("line {}", n + 1), format!("unknown record id {id:?}")))
        })
        .collect()
}

/// `Ok(None)` when the files are stale or the cache fails its hash.
fn try_reuse(dir: &Path, task: Task, key: &str) -> Result<Option<PreparedTask>> {
    let key_path = task_file(dir, task, "key");
    if fs::read_to_string(&key_path).ok().as_deref() != Some(key) || !task_file(dir, task, "sentences.txt").is_file() {
        return Ok(None);
    }
    let cache_path = task_file(dir, task, "mtsc");
    let bytes = read(&cache_path)?;
    let recorded = fs::read_to_string(task_file(dir, task, "mtsc.sha256")).unwrap_or_default();
    if recorded.trim() != sha256_hex(&bytes) {
        warn!("{}: content hash mismatch, regenerating", cache_path.display());
        return Ok(None);
    }
    let set = EncodedSet::from_bytes(&bytes, &cache_path)?;
    let vocab = Vocabulary::load(&task_file(dir, task, "vocab.txt"))?;
    let index: HashMap<&str, usize> = set.record_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let splits = Splits {
        train: load_manifest(&manifest_path(dir, task, SplitName::Train), &index)?,
        dev: load_manifest(&manifest_path(dir, task, SplitName::Dev), &index)?,
        test: load_manifest(&manifest_path(dir, task, SplitName::Test), &index)?,
    };
    Ok(Some(PreparedTask { set, splits, vocab, regenerated: false }))
}

fn regenerate(cfg: &ExperimentConfig, task: Task, dir: &Path, key: &str) -> Result<PreparedTask> {
    let records = load_task(&cfg.corpus_paths(), &cfg.corpus_options(), task)?;
    let vocab = Vocabulary::build(records.iter().map(|r| r.text.as_str()));
    let set = encode_pad(&records, &vocab, cfg.model.max_len(task))?;
    let splits = split_dataset(&set.labels, &cfg.split_spec())?;

    for (split, rows) in [
        (SplitName::Train, &splits.train),
        (SplitName::Dev, &splits.dev),
        (SplitName::Test, &splits.test),
    ] {
        let body: String = rows.iter().map(|&i| format!("{}\n", set.record_ids[i])).collect();
        write(&manifest_path(dir, task, split), body)?;
    }
    vocab.save(&task_file(dir, task, "vocab.txt"))?;
    let sentences: String = records.iter().map(|r| format!("{}\n", r.text)).collect();
    write(&task_file(dir, task, "sentences.txt"), sentences)?;
    let bytes = set.to_bytes();
    write(&task_file(dir, task, "mtsc"), &bytes)?;
    write(&task_file(dir, task, "mtsc.sha256"), format!("{}\n", sha256_hex(&bytes)))?;
    write(&task_file(dir, task, "key"), key)?;
    info!(
        "{task}: {} records, vocabulary {}, splits {}/{}/{}",
        set.len(),
        vocab.len(),
        splits.train.len(),
        splits.dev.len(),
        splits.test.len()
    );
    Ok(PreparedTask { set, splits, vocab, regenerated: true })
}

/// Prepares one task, reusing up-to-date files.
pub fn prepare_task(cfg: &ExperimentConfig, task: Task) -> Result<PreparedTask> {
    let dir = cfg.prepared_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let key = fingerprint(cfg, task)?;
    match try_reuse(&dir, task, &key) {
        Ok(Some(p)) => return Ok(p),
        Ok(None) => {}
        Err(e) => warn!("{task}: prepared files unusable ({e}), regenerating"),
    }
    regenerate(cfg, task, &dir, &key)
}

/// Prepares every task the configured mode uses.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<Vec<(Task, PreparedTask)>> {
    cfg.plan
        .mode
        .tasks()
        .iter()
        .map(|&task| prepare_task(cfg, task).map(|p| (task, p)))
        .collect()
}

/// Training data for the configured mode, with embedding files attached in
/// bert-file mode.
pub fn datasets(cfg: &ExperimentConfig, prepared: Vec<(Task, PreparedTask)>) -> Result<Datasets> {
    let mut data = Datasets::default();
    for (task, p) in prepared {
        let mut td = TaskData::new(p.set, p.splits);
        if let Some(path) = cfg.bert_file(task).filter(|_| cfg.model.embedding == crate::model::EmbeddingKind::BertFile) {
            td = td.with_embeddings(MtssReader::open(path)?)?;
        }
        match task {
            Task::Pol => data.pol = Some(td),
            Task::Subj => data.subj = Some(td),
        }
    }
    Ok(data)
}
