use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Characters replaced by a space before splitting (the Keras `Tokenizer` default filter set).
pub const FILTERS: &str = "!\"#$%&()*+,-./:;<=>?@[\\]^_`{|}~\t\n";

/// Lowercases, maps every filter character to a space, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if FILTERS.contains(c) { ' ' } else { c })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Frequency-ranked token ids; 0 is padding, 1 is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ranks tokens by descending count, ties broken by first occurrence.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut first_seen: HashMap<String, (usize, u64)> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                let next = first_seen.len();
                first_seen.entry(tok).or_insert((next, 0)).1 += 1;
            }
        }
        let mut ranked: Vec<(String, usize, u64)> = first_seen
            .into_iter()
            .map(|(t, (order, count))| (t, order, count))
            .collect();
        ranked.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)));
        Self::from_ranked(ranked.into_iter().map(|(t, _, c)| (t, c)))
    }

    fn from_ranked(ranked: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, 0];
        for (t, c) in ranked {
            tokens.push(t);
            counts.push(c);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, counts, index }
    }

    /// Size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i > UNK_ID)
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// Real tokens (ids ≥ 2) in id order.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().enumerate().skip(2).map(|(i, t)| (i, t.as_str()))
    }

    /// One `token\tcount` line per id ≥ 2, in id order.
    pub fn to_text(&self) -> String {
        self.words()
            .map(|(i, t)| format!("{t}\t{}\n", self.counts[i]))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ranked = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}", n + 1), "expected token<TAB>count"))?;
            let count = count
                .parse()
                .map_err(|_| Error::format(path, format!("line {}", n + 1), "bad count"))?;
            ranked.push((tok.to_string(), count));
        }
        Ok(Self::from_ranked(ranked))
    }
}
