//! Corpus ingestion, tokenization, padding, splits, and embedding inputs.

pub mod corpus;
pub mod encode;
pub mod glove;
pub mod mtss;
pub mod split;
pub mod tokenize;

use std::fmt;
use std::str::FromStr;

pub use corpus::{load_corpus, load_task, CorpusOptions, CorpusPaths, LoadedCorpus, SentenceRecord};
pub use encode::{encode_pad, encode_text, BatchInputs, EncodedBatch, EncodedSet};
pub use glove::load_glove;
pub use mtss::{MtssHeader, MtssReader, MtssWriter};
pub use split::{split_dataset, SplitSpec, Splits};
pub use tokenize::{tokenize, Vocabulary, PAD_ID, UNK_ID};

use crate::error::Error;

/// Number of classes for both tasks.
pub const NUM_CLASSES: usize = 2;

/// Polarity: 0 negative, 1 positive. Subjectivity: 0 objective, 1 subjective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Pol,
    Subj,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Pol, Task::Subj];

    pub fn name(self) -> &'static str {
        match self {
            Task::Pol => "pol",
            Task::Subj => "subj",
        }
    }

    pub fn other(self) -> Task {
        match self {
            Task::Pol => Task::Subj,
            Task::Subj => Task::Pol,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pol" => Ok(Task::Pol),
            "subj" => Ok(Task::Subj),
            other => Err(Error::Config(format!("unknown task {other:?} (pol|subj)"))),
        }
    }
}
