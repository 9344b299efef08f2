use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Train/dev/test fractions plus the shuffle seed.
///
/// The default 0.72/0.08/0.20 is an 80:20 train/test split followed by a
/// 90:10 train/dev split of the training part.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    /// Shuffle and cut each class separately so every split keeps the class ratio.
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            train: 0.72,
            dev: 0.08,
            test: 0.20,
            stratified: true,
        }
    }
}

/// Indices into the corpus, each list sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Largest-remainder apportionment of `total` across `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Partitions `labels.len()` records into train/dev/test.
pub fn split_dataset(labels: &[u8], spec: &SplitSpec) -> Result<Splits> {
    let n = labels.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::Data(format!("need at least {MIN_SPLIT_RECORDS} records to split, got {n}")));
    }
    let fractions = [spec.train, spec.dev, spec.test];
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be in [0,1] and sum to 1, got {fractions:?}")));
    }
    let test_n = (n as f64 * spec.test).round() as usize;
    let dev_n = ((n as f64 * spec.dev).round() as usize).min(n - test_n);

    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut classes: Vec<u8> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        classes
            .iter()
            .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let test_q = apportion(test_n, &sizes);
    let remaining: Vec<usize> = sizes.iter().zip(&test_q).map(|(s, t)| s - t).collect();
    let dev_q = apportion(dev_n, &remaining);

    let mut splits = Splits {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (g, mut members) in groups.into_iter().enumerate() {
        let mut rng = rng::stream(spec.seed, "split", g as u64);
        members.shuffle(&mut rng);
        let (t, d) = (test_q[g], dev_q[g].min(members.len() - test_q[g]));
        splits.test.extend_from_slice(&members[..t]);
        splits.dev.extend_from_slice(&members[t..t + d]);
        splits.train.extend_from_slice(&members[t + d..]);
    }
    splits.train.sort_unstable();
    splits.dev.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}
