use std::path::Path;

use super::tokenize::{tokenize, Vocabulary, PAD_ID, UNK_ID};
use super::{SentenceRecord, Task, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Head-keeping truncation to `max_len`, post-padding with [`PAD_ID`].
///
/// A sentence with no tokens is encoded as a single unknown token so that
/// every row has at least one attendable position.
pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> (Vec<u32>, Vec<u8>) {
    let mut ids: Vec<u32> = tokenize(text)
        .iter()
        .take(max_len)
        .map(|t| vocab.id_or_unk(t) as u32)
        .collect();
    if ids.is_empty() {
        ids.push(UNK_ID as u32);
    }
    let real = ids.len();
    ids.resize(max_len, PAD_ID as u32);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    (ids, mask)
}

/// A whole task corpus, encoded and padded to one length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSet {
    pub task: Task,
    pub max_len: usize,
    pub record_ids: Vec<String>,
    /// `len() × max_len`, row-major.
    pub ids: Vec<u32>,
    pub masks: Vec<u8>,
    pub labels: Vec<u8>,
}

pub fn encode_pad(records: &[SentenceRecord], vocab: &Vocabulary, max_len: usize) -> Result<EncodedSet> {
    if max_len == 0 {
        return Err(Error::Config("max length must be at least 1".into()));
    }
    let task = records
        .first()
        .map(|r| r.task)
        .ok_or_else(|| Error::Data("cannot encode an empty corpus".into()))?;
    let mut set = EncodedSet {
        task,
        max_len,
        record_ids: Vec::with_capacity(records.len()),
        ids: Vec::with_capacity(records.len() * max_len),
        masks: Vec::with_capacity(records.len() * max_len),
        labels: Vec::with_capacity(records.len()),
    };
    for r in records {
        if r.task != task {
            return Err(Error::Data(format!("record {} belongs to {}, expected {task}", r.id, r.task)));
        }
        let (ids, mask) = encode_text(&r.text, vocab, max_len);
        set.record_ids.push(r.id.clone());
        set.ids.extend(ids);
        set.masks.extend(mask);
        set.labels.push(r.label);
    }
    Ok(set)
}

const CACHE_MAGIC: &[u8; 4] = b"MTSC";
const CACHE_VERSION: u32 = 1;

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row_ids(&self, i: usize) -> &[u32] {
        &self.ids[i * self.max_len..(i + 1) * self.max_len]
    }

    pub fn row_mask(&self, i: usize) -> &[u8] {
        &self.masks[i * self.max_len..(i + 1) * self.max_len]
    }

    /// Mean number of real (unmasked) tokens per row.
    pub fn mean_length(&self) -> f64 {
        self.masks.iter().map(|&m| m as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// Token-id batch over `indices`.
    pub fn batch<T: Float>(&self, indices: &[usize]) -> EncodedBatch<T> {
        let l = self.max_len;
        let mut ids = Vec::with_capacity(indices.len() * l);
        let mut mask = Vec::with_capacity(indices.len() * l);
        for &i in indices {
            ids.extend(self.row_ids(i).iter().map(|&v| v as usize));
            mask.extend_from_slice(self.row_mask(i));
        }
        EncodedBatch {
            task: self.task,
            batch: indices.len(),
            max_len: l,
            inputs: BatchInputs::Tokens(ids),
            mask,
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (self.max_len * 5 + 16));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.push(match self.task {
            Task::Pol => 0,
            Task::Subj => 1,
        });
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.max_len as u32).to_le_bytes());
        for i in 0..self.len() {
            let id = self.record_ids[i].as_bytes();
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id);
            out.push(self.labels[i]);
            for &v in self.row_ids(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(self.row_mask(i));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0, path };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::format(path, "byte 0", "bad magic"));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::format(path, "byte 4", format!("unsupported version {version}")));
        }
        let task = match r.u8()? {
            0 => Task::Pol,
            1 => Task::Subj,
            t => return Err(Error::format(path, "byte 8", format!("bad task tag {t}"))),
        };
        let n = r.u32()? as usize;
        let l = r.u32()? as usize;
        let mut set = EncodedSet {
            task,
            max_len: l,
            record_ids: Vec::with_capacity(n),
            ids: Vec::with_capacity(n * l),
            masks: Vec::with_capacity(n * l),
            labels: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, format!("byte {}", r.pos), "record id not UTF-8"))?;
            set.record_ids.push(id.to_string());
            set.labels.push(r.u8()?);
            for _ in 0..l {
                set.ids.push(r.u32()?);
            }
            set.masks.extend_from_slice(r.take(l)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, format!("byte {}", r.pos), "trailing bytes"));
        }
        Ok(set)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("byte {}", self.pos),
                format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Either token ids (`B×L`, looked up in a trainable table) or precomputed
/// embeddings (`[B, L, D]`).
#[derive(Clone, Debug, PartialEq)]
pub enum BatchInputs<T> {
    Tokens(Vec<usize>),
    Embeddings(Tensor<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch<T> {
    pub task: Task,
    pub batch: usize,
    pub max_len: usize,
    pub inputs: BatchInputs<T>,
    /// `B×L`; 1 for real tokens, 0 for padding.
    pub mask: Vec<u8>,
    pub labels: Vec<usize>,
}

impl<T: Float> EncodedBatch<T> {
    /// One-hot labels, `B×C`.
    pub fn one_hot(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(&[self.batch, NUM_CLASSES]);
        for (row, &label) in self.labels.iter().enumerate() {
            t.data_mut()[row * NUM_CLASSES + label] = T::one();
        }
        t
    }

    pub fn mask_row(&self, b: usize) -> &[u8] {
        &self.mask[b * self.max_len..(b + 1) * self.max_len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["a b c d e f g"])
    }

    #[test]
    fn short_sentence_is_post_padded() {
        let (ids, mask) = encode_text("a b c", &vocab(), 5);
        assert_eq!(ids, vec![2, 3, 4, 0, 0]);
        assert_eq!(mask, vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn long_sentence_keeps_head() {
        let (ids, mask) = encode_text("a b c d e f g", &vocab(), 5);
        assert_eq!(ids, vec![2, 3, 4, 5, 6]);
        assert_eq!(mask, vec![1; 5]);
    }

    #[test]
    fn unknown_and_empty() {
        let (ids, mask) = encode_text("a zzz", &vocab(), 3);
        assert_eq!(ids, vec![2, UNK_ID as u32, 0]);
        assert_eq!(mask, vec![1, 1, 0]);
        let (ids, mask) = encode_text("", &vocab(), 3);
        assert_eq!(ids, vec![UNK_ID as u32, 0, 0]);
        assert_eq!(mask, vec![1, 0, 0]);
    }

    #[test]
    fn one_hot_labels() {
        let rec = |id: &str, text: &str, label| SentenceRecord {
            id: id.into(),
            text: text.into(),
            label,
            task: Task::Subj,
        };
        let set = encode_pad(&[rec("a:0", "a b", 1), rec("a:1", "c", 0)], &vocab(), 4).unwrap();
        let b: EncodedBatch<f32> = set.batch(&[1, 0]);
        assert_eq!(b.one_hot().data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b.mask_row(1), &[1, 1, 0, 0]);
    }

    #[test]
    fn cache_bytes_round_trip_and_truncation() {
        let rec = |i: usize| SentenceRecord {
            id: format!("pos:{i}"),
            text: "a b c".repeat(i % 3 + 1),
            label: (i % 2) as u8,
            task: Task::Pol,
        };
        let records: Vec<_> = (0..5).map(rec).collect();
        let set = encode_pad(&records, &vocab(), 6).unwrap();
        let bytes = set.to_bytes();
        let p = Path::new("cache");
        assert_eq!(EncodedSet::from_bytes(&bytes, p).unwrap(), set);
        assert!(EncodedSet::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
    }
}
