use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use crate::data::{BatchInputs, EncodedBatch, EncodedSet, MtssReader, Splits, Task};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|dev|test)"))),
        }
    }
}

/// One task's encoded corpus with its split, optionally backed by an
/// embedding file whose record `i` belongs to corpus record `i`.
pub struct TaskData {
    pub set: EncodedSet,
    pub splits: Splits,
    embeddings: Option<RefCell<MtssReader>>,
}

impl TaskData {
    pub fn new(set: EncodedSet, splits: Splits) -> Self {
        Self { set, splits, embeddings: None }
    }

    /// Switches batches to precomputed vectors and masks from `reader`.
    pub fn with_embeddings(mut self, reader: MtssReader) -> Result<Self> {
        let h = reader.header();
        if h.n as usize != self.set.len() {
            return Err(Error::Data(format!(
                "{} embedding file has {} records, corpus has {}",
                self.task(),
                h.n,
                self.set.len()
            )));
        }
        self.embeddings = Some(RefCell::new(reader));
        Ok(self)
    }

    pub fn task(&self) -> Task {
        self.set.task
    }

    /// `(max_len, dim)` of the embedding file, if any.
    pub fn embedding_shape(&self) -> Option<(usize, usize)> {
        self.embeddings.as_ref().map(|r| {
            let h = r.borrow().header();
            (h.max_len as usize, h.dim as usize)
        })
    }

    pub fn split(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.splits.train,
            SplitName::Dev => &self.splits.dev,
            SplitName::Test => &self.splits.test,
        }
    }

    pub fn batch<T: Float>(&self, indices: &[usize]) -> Result<EncodedBatch<T>> {
        let Some(reader) = &self.embeddings else {
            return Ok(self.set.batch(indices));
        };
        let mut reader = reader.borrow_mut();
        let h = reader.header();
        let (l, d) = (h.max_len as usize, h.dim as usize);
        let mut data = Vec::with_capacity(indices.len() * l * d);
        let mut mask = Vec::with_capacity(indices.len() * l);
        for &i in indices {
            let rec = reader.read_record(i as u32)?;
            data.extend(rec.embedding.iter().map(|&v| T::lit(v as f64)));
            let start = mask.len();
            mask.extend_from_slice(&rec.mask);
            // a sentence with no subwords attends to its first (zero) row
            if rec.mask.iter().all(|&m| m == 0) {
                mask[start] = 1;
            }
        }
        Ok(EncodedBatch {
            task: self.task(),
            batch: indices.len(),
            max_len: l,
            inputs: BatchInputs::Embeddings(Tensor::new(&[indices.len(), l, d], data)?),
            mask,
            labels: indices.iter().map(|&i| self.set.labels[i] as usize).collect(),
        })
    }
}

/// The data a run sees: one or both tasks.
#[derive(Default)]
pub struct Datasets {
    pub pol: Option<TaskData>,
    pub subj: Option<TaskData>,
}

impl Datasets {
    pub fn get(&self, task: Task) -> Option<&TaskData> {
        match task {
            Task::Pol => self.pol.as_ref(),
            Task::Subj => self.subj.as_ref(),
        }
    }

    pub fn require(&self, task: Task) -> Result<&TaskData> {
        self.get(task).ok_or_else(|| Error::Usage(format!("no {task} data loaded")))
    }
}
