//! Binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "MTSK" | u32 version | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims… | f32 data
//! u32 config length | config text
//! sections until end of file: 4-byte tag | u64 payload length | payload
//! ```
//!
//! Known sections are `META` (epoch, step, dev metrics) and `ADAM` (step
//! count and both moments, one per tensor in tensor order). Readers skip
//! unknown sections with a warning.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;

use super::config::ExperimentConfig;
use crate::data::encode::ByteReader;
use crate::data::Task;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Float, ParamStore, Tensor};
use crate::train::{Adam, AdamConfig};

pub const MAGIC: &[u8; 4] = b"MTSK";
pub const VERSION: u32 = 1;

const META: &[u8; 4] = b"META";
const ADAM: &[u8; 4] = b"ADAM";

#[derive(Clone, Debug, PartialEq)]
pub struct DevMetric {
    pub task: Task,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub step: u64,
    pub dev: Vec<DevMetric>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: Option<CheckpointMeta>,
    pub optimizer: Option<OptimizerState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.push(t.rank() as u8);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_tensor(r: &mut ByteReader<'_>, what: &str) -> Result<Tensor<f32>> {
    let at = r.pos;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let path = r.path;
    let bad = |msg: String| Error::format(path, format!("byte {at}"), format!("{what}: {msg}"));
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad(format!("shape {shape:?} overflows")))?;
    if count > r.remaining() {
        return Err(bad(format!("shape {shape:?} needs {count} bytes, {} remain", r.remaining())));
    }
    let data = r
        .take(count)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))
}

fn task_tag(task: Task) -> u8 {
    match task {
        Task::Pol => 0,
        Task::Subj => 1,
    }
}

impl Checkpoint {
    /// Snapshot of `store` (cast to f32) with optional optimizer state.
    pub fn capture<T: Float>(
        config: &ExperimentConfig,
        store: &ParamStore<T>,
        adam: Option<&Adam<T>>,
        meta: Option<CheckpointMeta>,
    ) -> Self {
        let tensors = store.iter().map(|(_, p)| (p.name.clone(), p.value.cast())).collect();
        let optimizer = adam.map(|a| {
            let (m, v) = a.moments();
            OptimizerState {
                t: a.t,
                m: m.iter().map(Tensor::cast).collect(),
                v: v.iter().map(Tensor::cast).collect(),
            }
        });
        Self { config: config.clone(), tensors, meta, optimizer }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_tensor(&mut out, t);
        }
        let text = self.config.to_text();
        put_u32(&mut out, text.len() as u32);
        out.extend_from_slice(text.as_bytes());

        if let Some(meta) = &self.meta {
            let mut body = Vec::new();
            put_u32(&mut body, meta.epoch);
            put_u64(&mut body, meta.step);
            body.push(meta.dev.len() as u8);
            for d in &meta.dev {
                body.push(task_tag(d.task));
                put_u64(&mut body, d.loss.to_bits());
                put_u64(&mut body, d.accuracy.to_bits());
            }
            section(&mut out, META, &body);
        }
        if let Some(opt) = &self.optimizer {
            let mut body = Vec::new();
            put_u64(&mut body, opt.t);
            put_u32(&mut body, opt.m.len() as u32);
            for t in opt.m.iter().chain(&opt.v) {
                put_tensor(&mut body, t);
            }
            section(&mut out, ADAM, &body);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "byte 0", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, "byte 4", format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors: Vec<(String, Tensor<f32>)> = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, format!("byte {at}"), "tensor name is not UTF-8"))?
                .to_string();
            if tensors.iter().any(|(n, _)| *n == name) {
                return Err(Error::format(path, format!("byte {at}"), format!("duplicate tensor {name}")));
            }
            let t = get_tensor(&mut r, &name)?;
            tensors.push((name, t));
        }
        let at = r.pos;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, format!("byte {at}"), "config text is not UTF-8"))?;
        let config = ExperimentConfig::from_text(text, path)
            .map_err(|e| Error::format(path, format!("byte {at}"), format!("config snapshot: {e}")))?;

        let mut ckpt = Self { config, tensors, meta: None, optimizer: None };
        while r.remaining() > 0 {
            let at = r.pos;
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.u64()?;
            if len > r.remaining() as u64 {
                return Err(Error::format(path, format!("byte {at}"), "truncated section"));
            }
            let body = r.take(len as usize)?;
            let mut s = ByteReader { bytes: body, pos: 0, path };
            match &tag {
                META => ckpt.meta = Some(read_meta(&mut s)?),
                ADAM => ckpt.optimizer = Some(read_adam(&mut s, ckpt.tensors.len())?),
                other => {
                    warn!(
                        "{}: skipping unknown section {:?} ({len} bytes)",
                        path.display(),
                        String::from_utf8_lossy(other)
                    );
                    continue;
                }
            }
            if s.remaining() != 0 {
                return Err(Error::format(path, format!("byte {}", at + 12 + s.pos), "section has trailing bytes"));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Copies every tensor into `store`, which must hold exactly the same
    /// names and shapes.
    pub fn load_into<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let index: HashMap<&str, usize> = self.tensors.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            let name = store.get(id).name.clone();
            let Some(&i) = index.get(name.as_str()) else {
                return Err(Error::Config(format!("checkpoint has no tensor {name}")));
            };
            let saved = &self.tensors[i].1;
            if saved.shape() != store.value(id).shape() {
                return Err(Error::Config(format!(
                    "tensor {name}: checkpoint shape {:?} does not match model shape {:?}",
                    saved.shape(),
                    store.value(id).shape()
                )));
            }
        }
        if let Some((name, _)) = self.tensors.iter().find(|(n, _)| store.id(n).is_none()) {
            return Err(Error::Config(format!("checkpoint tensor {name} is not a parameter of this model")));
        }
        for id in ids {
            let i = index[store.get(id).name.as_str()];
            *store.value_mut(id) = self.tensors[i].1.cast();
        }
        Ok(())
    }

    /// Builds the model described by the config snapshot and loads the tensors.
    pub fn model<T: Float>(&self) -> Result<Model<T>> {
        let mut model = Model::new(self.config.model.clone(), self.config.plan.seed)?;
        self.load_into(&mut model.store)?;
        Ok(model)
    }

    /// Adam for `store`, restored from the saved moments when present and
    /// fresh (with a warning) otherwise.
    pub fn optimizer<T: Float>(&self, config: AdamConfig, store: &ParamStore<T>) -> Result<Adam<T>> {
        let mut adam = Adam::new(config, store);
        let Some(opt) = &self.optimizer else {
            warn!("checkpoint has no optimizer state; starting from fresh Adam moments");
            return Ok(adam);
        };
        let index: HashMap<&str, usize> = self.tensors.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, p) in store.iter() {
            let i = *index
                .get(p.name.as_str())
                .ok_or_else(|| Error::Config(format!("checkpoint has no optimizer state for {}", p.name)))?;
            m.push(opt.m[i].cast());
            v.push(opt.v[i].cast());
        }
        adam.restore(opt.t, m, v)?;
        Ok(adam)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(tag);
    put_u64(out, body.len() as u64);
    out.extend_from_slice(body);
}

fn read_meta(r: &mut ByteReader<'_>) -> Result<CheckpointMeta> {
    let epoch = r.u32()?;
    let step = r.u64()?;
    let n = r.u8()?;
    let mut dev = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let at = r.pos;
        let task = match r.u8()? {
            0 => Task::Pol,
            1 => Task::Subj,
            t => return Err(Error::format(r.path, format!("META byte {at}"), format!("bad task tag {t}"))),
        };
        dev.push(DevMetric { task, loss: r.f64()?, accuracy: r.f64()? });
    }
    Ok(CheckpointMeta { epoch, step, dev })
}

fn read_adam(r: &mut ByteReader<'_>, tensors: usize) -> Result<OptimizerState> {
    let t = r.u64()?;
    let n = r.u32()? as usize;
    if n != tensors {
        return Err(Error::format(r.path, "ADAM", format!("{n} moment pairs for {tensors} tensors")));
    }
    let m = (0..n).map(|i| get_tensor(r, &format!("ADAM m[{i}]"))).collect::<Result<_>>()?;
    let v = (0..n).map(|i| get_tensor(r, &format!("ADAM v[{i}]"))).collect::<Result<_>>()?;
    Ok(OptimizerState { t, m, v })
}
