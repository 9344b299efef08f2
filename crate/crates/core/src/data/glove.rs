use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::tokenize::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Float, Tensor};

/// Half-width of the uniform init for rows without a pretrained vector.
pub const OOV_INIT: f64 = 0.05;

/// Embedding table with rows drawn from `uniform(-0.05, 0.05)` and the pad row zeroed.
pub fn random_table<T: Float>(vocab_size: usize, dim: usize, seed: u64) -> Tensor<T> {
    let mut rng = rng::stream(seed, "embedding-init", 0);
    let mut t = Tensor::from_fn(&[vocab_size, dim], |_| T::lit(rng.gen_range(-OOV_INIT..OOV_INIT)));
    t.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(T::zero());
    t
}

/// Builds a `|V|×dim` table from a GloVe text file (`word v1 … vD` per line).
///
/// Returns the table and the number of vocabulary words found in the file.
/// Every line is checked for `dim` values, even for words not in `vocab`.
pub fn load_glove<T: Float>(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<(Tensor<T>, usize)> {
    let mut table = random_table::<T>(vocab.len(), dim, seed);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found = 0;
    let mut buf = Vec::new();
    let mut reader = BufReader::new(file);
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = String::from_utf8_lossy(&buf);
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::format(
                path,
                format!("line {line_no}"),
                format!("expected {dim} values after {word:?}, found {}", values.len()),
            ));
        }
        if let Some(id) = vocab.id(word) {
            let row = &mut table.data_mut()[id * dim..(id + 1) * dim];
            for (slot, v) in row.iter_mut().zip(&values) {
                let parsed: f64 = v
                    .parse()
                    .map_err(|_| Error::format(path, format!("line {line_no}"), format!("bad number {v:?}")))?;
                *slot = T::lit(parsed);
            }
            found += 1;
        }
    }
    Ok((table, found))
}
