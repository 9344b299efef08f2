//! Per-epoch shuffling and batch construction.
//!
//! Each task's order for epoch `e` comes from its own stream keyed by
//! `(seed, task, e)`, so single-task and multitask runs with the same seed see
//! the same sequence of batches for a task. Batches are always full; the
//! remainder of an epoch's shuffle is left out (it is reshuffled next epoch).

use rand::seq::SliceRandom;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::rng;

/// `split` permuted for `epoch`.
pub fn epoch_order(split: &[usize], seed: u64, task: Task, epoch: u64) -> Vec<usize> {
    let label = match task {
        Task::Pol => "batches.pol",
        Task::Subj => "batches.subj",
    };
    let mut order = split.to_vec();
    order.shuffle(&mut rng::stream(seed, label, epoch));
    order
}

fn check(batch_size: usize, split: &[usize], task: Task) -> Result<()> {
    if batch_size < 1 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if split.is_empty() {
        return Err(Error::Data(format!("{task} training split is empty")));
    }
    Ok(())
}

/// Full batches of one task. A split smaller than `batch_size` forms a single batch.
pub fn make_batches(split: &[usize], batch_size: usize, seed: u64, task: Task, epoch: u64) -> Result<Vec<Vec<usize>>> {
    check(batch_size, split, task)?;
    let size = batch_size.min(split.len());
    let order = epoch_order(split, seed, task, epoch);
    Ok(order.chunks_exact(size).map(<[usize]>::to_vec).collect())
}

/// Batch `i` of polarity paired with batch `i` of subjectivity. Unpaired
/// batches of the longer split are dropped.
pub fn make_mtl_batches(
    pol: &[usize],
    subj: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    check(batch_size, pol, Task::Pol)?;
    check(batch_size, subj, Task::Subj)?;
    let size = batch_size.min(pol.len()).min(subj.len());
    let p = make_batches(pol, size, seed, Task::Pol, epoch)?;
    let s = make_batches(subj, size, seed, Task::Subj, epoch)?;
    Ok(p.into_iter().zip(s).collect())
}
