//! Marker-token corpora: a sentence is positive iff it contains its task's
//! marker word. Everything else is uniform filler from a fixed word list.

use mtss::data::{encode_pad, split_dataset, SentenceRecord, SplitSpec, Vocabulary};
use mtss::train::{Datasets, TaskData};
use mtss::Task;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub const WORDS: usize = 50;

pub fn marker(task: Task) -> String {
    match task {
        Task::Pol => "w0".into(),
        Task::Subj => "w1".into(),
    }
}

pub fn sentences(task: Task, n: usize, max_len: usize, seed: u64) -> Vec<SentenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task as u64 + 1) * 0x9e37);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let len = rng.gen_range(3..=max_len);
            let mut words: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(2..WORDS))).collect();
            if label == 1 {
                let at = rng.gen_range(0..len);
                words[at] = marker(task);
            }
            SentenceRecord {
                id: format!("synthetic-{}:{}", task, i + 1),
                text: words.join(" "),
                label,
                task,
            }
        })
        .collect()
}

pub fn task_data(task: Task, n: usize, max_len: usize, seed: u64) -> (TaskData, usize) {
    let records = sentences(task, n, max_len, seed);
    let vocab = Vocabulary::build(records.iter().map(|r| r.text.as_str()));
    let set = encode_pad(&records, &vocab, max_len).unwrap();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let splits = split_dataset(&labels, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
    (TaskData::new(set, splits), vocab.len())
}

/// Both tasks, `n` sentences each. Returns the data and the vocabulary sizes.
pub fn datasets(n: usize, max_len: usize, seed: u64) -> (Datasets, usize, usize) {
    let (pol, vp) = task_data(Task::Pol, n, max_len, seed);
    let (subj, vs) = task_data(Task::Subj, n, max_len, seed + 1);
    (Datasets { pol: Some(pol), subj: Some(subj) }, vp, vs)
}

/// Writes the four corpus files under their default names, `per_class`
/// sentences each.
pub fn write_corpus(dir: &std::path::Path, per_class: usize, max_len: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let files = [(Task::Pol, "rt-polarity.neg", "rt-polarity.pos"), (Task::Subj, "plot.tok.gt9.5000", "quote.tok.gt9.5000")];
    for (task, neg, pos) in files {
        let records = sentences(task, 2 * per_class, max_len, seed);
        for (label, name) in [(0u8, neg), (1, pos)] {
            let body: String = records
                .iter()
                .filter(|r| r.label == label)
                .map(|r| format!("{}\n", r.text))
                .collect();
            std::fs::write(dir.join(name), body).unwrap();
        }
    }
}

/// A small, fast configuration over a corpus written by [`write_corpus`].
pub fn small_config(data_dir: &std::path::Path, out: &std::path::Path) -> mtss::harness::ExperimentConfig {
    let mut cfg = mtss::harness::ExperimentConfig::default();
    let text = format!(
        "data_dir = {}\nout = {}\npol_per_class = none\nmax_len_pol = 10\nmax_len_subj = 10\n\
         d_emb = 8\nhidden = 8\nd_f = 8\nd_a = 8\nd_t = 8\nd_ntn = 4\ndropout = 0\n\
         epochs = 2\nbatch_size = 32\nlr = 0.01\n",
        data_dir.display(),
        out.display()
    );
    cfg.apply_text(&text, std::path::Path::new("small")).unwrap();
    cfg
}
