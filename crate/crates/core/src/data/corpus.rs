use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;

use super::Task;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceRecord {
    /// `<source>:<line>`, e.g. `pos:17`; stable across runs.
    pub id: String,
    pub text: String,
    pub label: u8,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusPaths {
    pub pol_pos: PathBuf,
    pub pol_neg: PathBuf,
    pub subj: PathBuf,
    pub obj: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusOptions {
    pub seed: u64,
    /// Sentences drawn per polarity class; `None` keeps every line.
    pub pol_per_class: Option<usize>,
    pub subj_per_class: Option<usize>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            pol_per_class: Some(5000),
            subj_per_class: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadedCorpus {
    pub pol: Vec<SentenceRecord>,
    pub subj: Vec<SentenceRecord>,
}

impl LoadedCorpus {
    pub fn task(&self, task: Task) -> &[SentenceRecord] {
        match task {
            Task::Pol => &self.pol,
            Task::Subj => &self.subj,
        }
    }
}

/// Reads one sentence per line. Lines that are not valid UTF-8 are decoded as
/// Latin-1 (total, so nothing is dropped); the second value counts them.
pub fn read_lines(path: &Path) -> Result<(Vec<String>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    let mut transcoded = 0;
    for chunk in BufReader::new(file).split(b'\n') {
        let mut bytes = chunk.map_err(|e| Error::io(path, e))?;
        if bytes.last() == Some(&b'\r') {
            bytes.pop();
        }
        let line = match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => {
                transcoded += 1;
                e.into_bytes().iter().map(|&b| b as char).collect()
            }
        };
        lines.push(line);
    }
    Ok((lines, transcoded))
}

fn load_class(
    path: &Path,
    source: &str,
    label: u8,
    task: Task,
    per_class: Option<usize>,
    seed: u64,
    out: &mut Vec<SentenceRecord>,
) -> Result<usize> {
    let (lines, transcoded) = read_lines(path)?;
    let chosen: Vec<usize> = match per_class {
        None => (0..lines.len()).collect(),
        Some(k) if k > lines.len() => {
            return Err(Error::Data(format!(
                "{}: requested {k} sentences but file has {}",
                path.display(),
                lines.len()
            )))
        }
        Some(k) => {
            let mut rng = rng::stream(seed, "corpus-sample", label as u64 + 2 * task as u64);
            let mut idx = sample(&mut rng, lines.len(), k).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    out.extend(chosen.into_iter().map(|i| SentenceRecord {
        id: format!("{source}:{i}"),
        text: lines[i].clone(),
        label,
        task,
    }));
    Ok(transcoded)
}

/// Loads one task's two class files (label 0 first); classes are subsampled by seed.
pub fn load_task(paths: &CorpusPaths, opts: &CorpusOptions, task: Task) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    let s = opts.seed;
    let transcoded = match task {
        Task::Pol => {
            load_class(&paths.pol_neg, "neg", 0, task, opts.pol_per_class, s, &mut out)?
                + load_class(&paths.pol_pos, "pos", 1, task, opts.pol_per_class, s, &mut out)?
        }
        Task::Subj => {
            load_class(&paths.obj, "obj", 0, task, opts.subj_per_class, s, &mut out)?
                + load_class(&paths.subj, "subj", 1, task, opts.subj_per_class, s, &mut out)?
        }
    };
    if transcoded > 0 {
        log::warn!("{transcoded} {task} corpus lines were not UTF-8 and were decoded as Latin-1");
    }
    Ok(out)
}

/// Loads both corpora.
pub fn load_corpus(paths: &CorpusPaths, opts: &CorpusOptions) -> Result<LoadedCorpus> {
    Ok(LoadedCorpus {
        pol: load_task(paths, opts, Task::Pol)?,
        subj: load_task(paths, opts, Task::Subj)?,
    })
}
