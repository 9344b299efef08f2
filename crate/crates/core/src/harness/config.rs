//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so a config file only needs the keys it changes. `none` disables
//! an optional value.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{CorpusOptions, CorpusPaths, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::model::{EmbeddingKind, ModelConfig};
use crate::train::TrainPlan;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub pol_pos: PathBuf,
    pub pol_neg: PathBuf,
    pub subj_file: PathBuf,
    pub obj_file: PathBuf,
    pub glove: Option<PathBuf>,
    pub bert_pol: Option<PathBuf>,
    pub bert_subj: Option<PathBuf>,
    pub pol_per_class: Option<usize>,
    pub subj_per_class: Option<usize>,
    pub split_train: f64,
    pub split_dev: f64,
    pub split_test: f64,
    pub stratified: bool,
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub f64: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let split = SplitSpec::default();
        let corpus = CorpusOptions::default();
        Self {
            data_dir: PathBuf::from("data"),
            pol_pos: PathBuf::from("rt-polarity.pos"),
            pol_neg: PathBuf::from("rt-polarity.neg"),
            subj_file: PathBuf::from("quote.tok.gt9.5000"),
            obj_file: PathBuf::from("plot.tok.gt9.5000"),
            glove: None,
            bert_pol: None,
            bert_subj: None,
            pol_per_class: corpus.pol_per_class,
            subj_per_class: corpus.subj_per_class,
            split_train: split.train,
            split_dev: split.dev,
            split_test: split.test,
            stratified: split.stratified,
            model: ModelConfig::default(),
            plan: TrainPlan::default(),
            f64: false,
            out: PathBuf::from("runs"),
        }
    }
}

/// Every key in file order, with its description.
pub const KEYS: &[(&str, &str)] = &[
    ("data_dir", "directory holding the corpus files; relative file keys resolve against it"),
    ("pol_pos", "positive polarity sentences, one per line"),
    ("pol_neg", "negative polarity sentences, one per line"),
    ("subj_file", "subjective sentences, one per line"),
    ("obj_file", "objective sentences, one per line"),
    ("glove", "GloVe text vectors of width d_emb; none leaves the table randomly initialized"),
    ("bert_pol", "MTSS embedding file for the polarity corpus (bert-file mode)"),
    ("bert_subj", "MTSS embedding file for the subjectivity corpus (bert-file mode)"),
    ("pol_per_class", "polarity sentences sampled per class; none keeps all"),
    ("subj_per_class", "subjectivity sentences sampled per class; none keeps all"),
    ("split_train", "train fraction"),
    ("split_dev", "dev fraction"),
    ("split_test", "test fraction"),
    ("stratified", "keep the class ratio in every split"),
    ("embedding", "glove | bert-file"),
    ("d_emb", "embedding width (768 for bert-file)"),
    ("vocab_pol", "polarity vocabulary size incl. pad and unk; set from the prepared vocabulary"),
    ("vocab_subj", "subjectivity vocabulary size incl. pad and unk; set from the prepared vocabulary"),
    ("max_len_pol", "polarity sequence length"),
    ("max_len_subj", "subjectivity sequence length"),
    ("hidden", "LSTM units per direction"),
    ("d_f", "time-distributed layer width"),
    ("d_a", "sentence vector width"),
    ("d_t", "task feature width"),
    ("d_ntn", "fusion slices"),
    ("dropout", "dropout rate in [0, 1)"),
    ("activation", "tanh | relu | identity"),
    ("attention_mask", "exclude padded positions from attention"),
    ("ntn_ablate", "replace the fusion output with zeros"),
    ("w_pol", "polarity loss weight"),
    ("w_subj", "subjectivity loss weight"),
    ("mode", "single-pol | single-subj | mtl"),
    ("epochs", "training epochs"),
    ("batch_size", "training batch size"),
    ("eval_batch_size", "evaluation batch size"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam denominator epsilon"),
    ("clip_norm", "global gradient-norm clip; none disables"),
    ("patience", "epochs without dev improvement before stopping; none disables"),
    ("seed", "seed for sampling, splits, init, dropout and batch order"),
    ("f64", "train in 64-bit floats"),
    ("out", "output directory for prepared data and runs"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn show_path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

impl ExperimentConfig {
    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model;
        let p = &self.plan;
        Ok(match key {
            "data_dir" => show_path(&self.data_dir),
            "pol_pos" => show_path(&self.pol_pos),
            "pol_neg" => show_path(&self.pol_neg),
            "subj_file" => show_path(&self.subj_file),
            "obj_file" => show_path(&self.obj_file),
            "glove" => show_opt(&self.glove.as_deref().map(show_path)),
            "bert_pol" => show_opt(&self.bert_pol.as_deref().map(show_path)),
            "bert_subj" => show_opt(&self.bert_subj.as_deref().map(show_path)),
            "pol_per_class" => show_opt(&self.pol_per_class),
            "subj_per_class" => show_opt(&self.subj_per_class),
            "split_train" => self.split_train.to_string(),
            "split_dev" => self.split_dev.to_string(),
            "split_test" => self.split_test.to_string(),
            "stratified" => self.stratified.to_string(),
            "embedding" => m.embedding.to_string(),
            "d_emb" => m.d_emb.to_string(),
            "vocab_pol" => m.vocab_pol.to_string(),
            "vocab_subj" => m.vocab_subj.to_string(),
            "max_len_pol" => m.max_len_pol.to_string(),
            "max_len_subj" => m.max_len_subj.to_string(),
            "hidden" => m.hidden.to_string(),
            "d_f" => m.d_f.to_string(),
            "d_a" => m.d_a.to_string(),
            "d_t" => m.d_t.to_string(),
            "d_ntn" => m.d_ntn.to_string(),
            "dropout" => m.dropout.to_string(),
            "activation" => m.activation.to_string(),
            "attention_mask" => m.attention_mask.to_string(),
            "ntn_ablate" => m.ntn_ablate.to_string(),
            "w_pol" => m.w_pol.to_string(),
            "w_subj" => m.w_subj.to_string(),
            "mode" => p.mode.to_string(),
            "epochs" => p.epochs.to_string(),
            "batch_size" => p.batch_size.to_string(),
            "eval_batch_size" => p.eval_batch_size.to_string(),
            "lr" => p.adam.lr.to_string(),
            "beta1" => p.adam.beta1.to_string(),
            "beta2" => p.adam.beta2.to_string(),
            "eps" => p.adam.eps.to_string(),
            "clip_norm" => show_opt(&p.adam.clip_norm),
            "patience" => show_opt(&p.patience),
            "seed" => p.seed.to_string(),
            "f64" => self.f64.to_string(),
            "out" => show_path(&self.out),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let p = &mut self.plan;
        match key {
            "data_dir" => self.data_dir = v.into(),
            "pol_pos" => self.pol_pos = v.into(),
            "pol_neg" => self.pol_neg = v.into(),
            "subj_file" => self.subj_file = v.into(),
            "obj_file" => self.obj_file = v.into(),
            "glove" => self.glove = parse_opt(key, v)?,
            "bert_pol" => self.bert_pol = parse_opt(key, v)?,
            "bert_subj" => self.bert_subj = parse_opt(key, v)?,
            "pol_per_class" => self.pol_per_class = parse_opt(key, v)?,
            "subj_per_class" => self.subj_per_class = parse_opt(key, v)?,
            "split_train" => self.split_train = parse(key, v)?,
            "split_dev" => self.split_dev = parse(key, v)?,
            "split_test" => self.split_test = parse(key, v)?,
            "stratified" => self.stratified = parse(key, v)?,
            "embedding" => m.embedding = v.parse()?,
            "d_emb" => m.d_emb = parse(key, v)?,
            "vocab_pol" => m.vocab_pol = parse(key, v)?,
            "vocab_subj" => m.vocab_subj = parse(key, v)?,
            "max_len_pol" => m.max_len_pol = parse(key, v)?,
            "max_len_subj" => m.max_len_subj = parse(key, v)?,
            "hidden" => m.hidden = parse(key, v)?,
            "d_f" => m.d_f = parse(key, v)?,
            "d_a" => m.d_a = parse(key, v)?,
            "d_t" => m.d_t = parse(key, v)?,
            "d_ntn" => m.d_ntn = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "activation" => m.activation = v.parse()?,
            "attention_mask" => m.attention_mask = parse(key, v)?,
            "ntn_ablate" => m.ntn_ablate = parse(key, v)?,
            "w_pol" => m.w_pol = parse(key, v)?,
            "w_subj" => m.w_subj = parse(key, v)?,
            "mode" => p.mode = v.parse()?,
            "epochs" => p.epochs = parse(key, v)?,
            "batch_size" => p.batch_size = parse(key, v)?,
            "eval_batch_size" => p.eval_batch_size = parse(key, v)?,
            "lr" => p.adam.lr = parse(key, v)?,
            "beta1" => p.adam.beta1 = parse(key, v)?,
            "beta2" => p.adam.beta2 = parse(key, v)?,
            "eps" => p.adam.eps = parse(key, v)?,
            "clip_norm" => p.adam.clip_norm = parse_opt(key, v)?,
            "patience" => p.patience = parse_opt(key, v)?,
            "seed" => p.seed = parse(key, v)?,
            "f64" => self.f64 = parse(key, v)?,
            "out" => self.out = v.into(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its description and default as a comment.
    pub fn to_text(&self) -> String {
        let defaults = Self::default();
        let mut out = String::new();
        for (key, doc) in KEYS {
            let default = defaults.get(key).expect("listed key");
            out.push_str(&format!("# {doc} (default: {default})\n{key} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("line {}", n + 1), "expected key = value"))?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{} line {}: {msg}", origin.display(), n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn corpus_paths(&self) -> CorpusPaths {
        CorpusPaths {
            pol_pos: self.data_dir.join(&self.pol_pos),
            pol_neg: self.data_dir.join(&self.pol_neg),
            subj: self.data_dir.join(&self.subj_file),
            obj: self.data_dir.join(&self.obj_file),
        }
    }

    pub fn corpus_options(&self) -> CorpusOptions {
        CorpusOptions {
            seed: self.plan.seed,
            pol_per_class: self.pol_per_class,
            subj_per_class: self.subj_per_class,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.plan.seed,
            train: self.split_train,
            dev: self.split_dev,
            test: self.split_test,
            stratified: self.stratified,
        }
    }

    pub fn bert_file(&self, task: Task) -> Option<&Path> {
        match task {
            Task::Pol => self.bert_pol.as_deref(),
            Task::Subj => self.bert_subj.as_deref(),
        }
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.out.join("prepared")
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.plan.validate()?;
        let fractions = [self.split_train, self.split_dev, self.split_test];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be in [0,1] and sum to 1, got {fractions:?}")));
        }
        if self.model.embedding == EmbeddingKind::BertFile {
            if self.glove.is_some() {
                return Err(Error::Config("glove vectors cannot be used with embedding = bert-file".into()));
            }
            for &task in self.plan.mode.tasks() {
                if self.bert_file(task).is_none() {
                    return Err(Error::Config(format!("embedding = bert-file needs bert_{task}")));
                }
            }
        }
        Ok(())
    }
}
