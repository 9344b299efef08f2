use std::fmt;

use crate::data::Task;

use super::SplitName;

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: SplitName,
    pub task: Task,
    pub loss: f64,
    pub accuracy: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "epoch,split,task,loss,accuracy";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.split, self.task, self.loss, self.accuracy)
    }
}

/// `counts[true][predicted]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "            pred 0  pred 1")?;
        writeln!(f, "  true 0  {:>7} {:>7}", c[0][0], c[0][1])?;
        write!(f, "  true 1  {:>7} {:>7}", c[1][0], c[1][1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskEvaluation {
    pub task: Task,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

impl TaskEvaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub split: SplitName,
    pub tasks: Vec<TaskEvaluation>,
}

impl Evaluation {
    pub fn task(&self, task: Task) -> Option<&TaskEvaluation> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Accuracy averaged over the evaluated tasks.
    pub fn mean_accuracy(&self) -> f64 {
        self.tasks.iter().map(TaskEvaluation::accuracy).sum::<f64>() / self.tasks.len() as f64
    }
}
