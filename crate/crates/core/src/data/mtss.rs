//! Precomputed per-token sentence embeddings.
//!
//! Little-endian layout: `"MTSS"`, u32 version (1), u32 N, u32 L, u32 D, then
//! N records of `L·D` f32 values (time-major) followed by `L` mask bytes.
//! A valid file is exactly `20 + N·(4·L·D + L)` bytes long.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTSS";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MtssHeader {
    pub n: u32,
    pub max_len: u32,
    pub dim: u32,
}

impl MtssHeader {
    pub fn record_bytes(&self) -> u64 {
        4 * self.max_len as u64 * self.dim as u64 + self.max_len as u64
    }

    pub fn file_bytes(&self) -> u64 {
        HEADER_BYTES + self.n as u64 * self.record_bytes()
    }
}

/// One sentence: `L×D` embeddings (row-major, time-major) and `L` mask bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct MtssRecord {
    pub embedding: Vec<f32>,
    pub mask: Vec<u8>,
}

/// Validated reader supporting both streaming and random access.
pub struct MtssReader {
    path: PathBuf,
    file: BufReader<File>,
    header: MtssHeader,
    next: u32,
}

impl MtssReader {
    /// Opens and validates magic, version, and total length before any record is read.
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut file = BufReader::new(file);
        let mut head = [0u8; HEADER_BYTES as usize];
        if actual < HEADER_BYTES {
            return Err(Error::format(path, format!("byte {actual}"), "truncated header"));
        }
        file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
        if &head[0..4] != MAGIC {
            return Err(Error::format(path, "byte 0", format!("bad magic {:?}", &head[0..4])));
        }
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
        if word(4) != VERSION {
            return Err(Error::format(path, "byte 4", format!("unsupported version {}", word(4))));
        }
        let header = MtssHeader {
            n: word(8),
            max_len: word(12),
            dim: word(16),
        };
        if header.n > 0 && (header.max_len == 0 || header.dim == 0) {
            return Err(Error::format(path, "byte 12", "zero length or dimension"));
        }
        let expected = header.file_bytes();
        if actual != expected {
            let at = actual.min(expected);
            let record = at.saturating_sub(HEADER_BYTES) / header.record_bytes().max(1);
            return Err(Error::format(
                path,
                format!("byte {at}"),
                format!("header implies {expected} bytes but file has {actual} (record {record})"),
            ));
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            header,
            next: 0,
        })
    }

    pub fn header(&self) -> MtssHeader {
        self.header
    }

    fn read_current(&mut self) -> Result<MtssRecord> {
        let h = self.header;
        let mut raw = vec![0u8; 4 * (h.max_len * h.dim) as usize];
        self.file.read_exact(&mut raw).map_err(|e| Error::io(&self.path, e))?;
        let embedding = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut mask = vec![0u8; h.max_len as usize];
        self.file.read_exact(&mut mask).map_err(|e| Error::io(&self.path, e))?;
        Ok(MtssRecord { embedding, mask })
    }

    /// Random access to record `i`.
    pub fn read_record(&mut self, i: u32) -> Result<MtssRecord> {
        if i >= self.header.n {
            return Err(Error::Usage(format!("record {i} out of range (N = {})", self.header.n)));
        }
        let offset = HEADER_BYTES + i as u64 * self.header.record_bytes();
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let rec = self.read_current()?;
        self.next = i + 1;
        Ok(rec)
    }
}

impl Iterator for MtssReader {
    type Item = Result<MtssRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.n {
            return None;
        }
        let i = self.next;
        Some(self.read_record(i))
    }
}

/// Writes an MTSS file; N is patched into the header on [`MtssWriter::finish`].
pub struct MtssWriter {
    path: PathBuf,
    file: BufWriter<File>,
    max_len: u32,
    dim: u32,
    n: u32,
}

impl MtssWriter {
    pub fn create(path: &Path, max_len: u32, dim: u32) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
            max_len,
            dim,
            n: 0,
        };
        w.write_header()?;
        Ok(w)
    }

    fn write_header(&mut self) -> Result<()> {
        let mut head = Vec::with_capacity(HEADER_BYTES as usize);
        head.extend_from_slice(MAGIC);
        for v in [VERSION, self.n, self.max_len, self.dim] {
            head.extend_from_slice(&v.to_le_bytes());
        }
        self.file.write_all(&head).map_err(|e| Error::io(&self.path, e))
    }

    pub fn push(&mut self, embedding: &[f32], mask: &[u8]) -> Result<()> {
        let (l, d) = (self.max_len as usize, self.dim as usize);
        if embedding.len() != l * d || mask.len() != l {
            return Err(Error::dim("mtss record", &[embedding.len(), mask.len()], &[l * d, l]));
        }
        let mut buf = Vec::with_capacity(4 * l * d + l);
        for v in embedding {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(mask);
        self.file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.n += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<MtssHeader> {
        self.file
            .seek(SeekFrom::Start(0))
            .map_err(|e| Error::io(&self.path, e))?;
        self.write_header()?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(MtssHeader {
            n: self.n,
            max_len: self.max_len,
            dim: self.dim,
        })
    }
}
