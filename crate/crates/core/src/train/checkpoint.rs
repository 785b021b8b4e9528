//! Binary checkpoint container.
//!
//! Layout: `CTMACKPT`, u32 version, u32 record count, then per record (in
//! key order) a u32-prefixed UTF-8 key, a dtype byte, a rank byte, u64 dims,
//! a u64 payload length and the little-endian payload. All integers are
//! little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use ctma_autograd::{DType, Float, Tensor};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Ctma;
use crate::nn::ParamStore;
use crate::train::optim::{Adam, AdamParams};

pub const MAGIC: &[u8; 8] = b"CTMACKPT";
pub const VERSION: u32 = 1;

const META_STEP: &str = "__meta__.step";
const META_CONFIG: &str = "__meta__.config";
const META_BEST: &str = "__meta__.best_val_f1";
const ADAM_T: &str = "__adam__.t";
const ADAM_M: &str = "__adam__.m.";
const ADAM_V: &str = "__adam__.v.";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::Bytes(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::Bytes(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn tensor<T: Float>(t: &Tensor<T>) -> Self {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => Payload::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self { shape: t.shape().to_vec(), payload }
    }

    fn bytes(b: Vec<u8>) -> Self {
        Self { shape: vec![b.len()], payload: Payload::Bytes(b) }
    }

    pub fn to_tensor<T: Float>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            Payload::Bytes(_) => return Err(Error::Checkpoint("byte record used as a tensor".into())),
        };
        Ok(Tensor::new(self.shape.clone(), data)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: BTreeMap<String, Record>,
}

impl Checkpoint {
    /// Snapshot parameters, buffers and (optionally) optimizer moments.
    pub fn capture<T: Float>(
        store: &ParamStore<T>,
        optimizer: Option<&Adam<T>>,
        step: u64,
        cfg: &TrainConfig,
        best_val_f1: f64,
    ) -> Self {
        let mut records = BTreeMap::new();
        for e in store.entries() {
            records.insert(e.name.clone(), Record::tensor(&e.value));
        }
        records.insert(META_STEP.into(), Record::bytes(step.to_le_bytes().to_vec()));
        records.insert(META_CONFIG.into(), Record::bytes(cfg.to_toml().into_bytes()));
        records.insert(META_BEST.into(), Record { shape: vec![], payload: Payload::F64(vec![best_val_f1]) });
        if let Some(adam) = optimizer {
            records.insert(ADAM_T.into(), Record::bytes(adam.t.to_le_bytes().to_vec()));
            for (id, e) in store.ids().zip(store.entries()) {
                if let Some(m) = &adam.m[id.index()] {
                    records.insert(format!("{ADAM_M}{}", e.name), Record::tensor(m));
                }
                if let Some(v) = &adam.v[id.index()] {
                    records.insert(format!("{ADAM_V}{}", e.name), Record::tensor(v));
                }
            }
        }
        Self { records }
    }

    fn meta_bytes(&self, key: &str) -> Result<&[u8]> {
        match self.records.get(key).map(|r| &r.payload) {
            Some(Payload::Bytes(b)) => Ok(b),
            _ => Err(Error::Checkpoint(format!("missing or malformed {}", key))),
        }
    }

    fn meta_u64(&self, key: &str) -> Result<u64> {
        let b = self.meta_bytes(key)?;
        let arr: [u8; 8] = b.try_into().map_err(|_| Error::Checkpoint(format!("{} is not 8 bytes", key)))?;
        Ok(u64::from_le_bytes(arr))
    }

    pub fn step(&self) -> Result<u64> {
        self.meta_u64(META_STEP)
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let text = std::str::from_utf8(self.meta_bytes(META_CONFIG)?)
            .map_err(|e| Error::Checkpoint(format!("config snapshot is not UTF-8: {}", e)))?;
        TrainConfig::from_toml(text)
    }

    pub fn best_val_f1(&self) -> Result<f64> {
        match self.records.get(META_BEST).map(|r| &r.payload) {
            Some(Payload::F64(v)) if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::Checkpoint(format!("missing or malformed {}", META_BEST))),
        }
    }

    /// Copy every tensor of `store` from the same-named record.
    pub fn load_into<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let n_params = self.records.keys().filter(|k| !k.starts_with("__")).count();
        if n_params != store.len() {
            return Err(Error::Checkpoint(format!("model has {} tensors, checkpoint holds {}", store.len(), n_params)));
        }
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let rec = self
                .records
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} missing from checkpoint", name)))?;
            if rec.shape != store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    name,
                    rec.shape,
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = rec.to_tensor()?;
        }
        Ok(())
    }

    /// Rebuild the network described by the snapshot config and load its
    /// tensors.
    pub fn restore<T: Float>(&self) -> Result<(Ctma, ParamStore<T>)> {
        let cfg = self.config()?;
        let (model, mut store) = Ctma::new::<T>(&cfg)?;
        self.load_into(&mut store)?;
        Ok((model, store))
    }

    /// Optimizer state for `store`, if the checkpoint carries one.
    pub fn restore_optimizer<T: Float>(&self, store: &ParamStore<T>, hyper: AdamParams) -> Result<Option<Adam<T>>> {
        if !self.records.contains_key(ADAM_T) {
            return Ok(None);
        }
        let mut adam = Adam::new(hyper, store.len());
        adam.t = self.meta_u64(ADAM_T)?;
        for (id, e) in store.ids().zip(store.entries()) {
            if let Some(r) = self.records.get(&format!("{ADAM_M}{}", e.name)) {
                adam.m[id.index()] = Some(r.to_tensor()?);
            }
            if let Some(r) = self.records.get(&format!("{ADAM_V}{}", e.name)) {
                adam.v[id.index()] = Some(r.to_tensor()?);
            }
        }
        Ok(Some(adam))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (key, rec) in &self.records {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.push(rec.payload.tag());
            out.push(rec.shape.len() as u8);
            for &d in &rec.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let raw: Vec<u8> = match &rec.payload {
                Payload::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
                Payload::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
                Payload::Bytes(v) => v.clone(),
            };
            out.extend_from_slice(&(raw.len() as u64).to_le_bytes());
            out.extend_from_slice(&raw);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: VERSION });
        }
        let count = r.u32()?;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let klen = r.u32()? as usize;
            let key = String::from_utf8(r.take(klen)?.to_vec())
                .map_err(|_| Error::Checkpoint("record key is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            let raw = r.take(len)?;
            let payload = match tag {
                0 if len % 4 == 0 => Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 if len % 8 == 0 => Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => Payload::Bytes(raw.to_vec()),
                _ => return Err(Error::Checkpoint(format!("record {} has bad dtype tag {} or length {}", key, tag, len))),
            };
            let numel: usize = shape.iter().product();
            if payload.len() != numel {
                return Err(Error::Checkpoint(format!("record {} holds {} values for shape {:?}", key, payload.len(), shape)));
            }
            if records.insert(key.clone(), Record { shape, payload }).is_some() {
                return Err(Error::Checkpoint(format!("duplicate record {}", key)));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Checkpoint("truncated checkpoint".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Ctx, Mode};
    use ctma_autograd::Graph;

    fn tiny() -> (Ctma, ParamStore<f32>, TrainConfig) {
        let cfg = TrainConfig { train: crate::config::TrainOptions { seed: 4, ..Default::default() }, ..TrainConfig::tiny() };
        let (m, s) = Ctma::new::<f32>(&cfg).unwrap();
        (m, s, cfg)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (_, store, cfg) = tiny();
        let mut adam = Adam::new(AdamParams::default(), store.len());
        let mut s2 = store.clone();
        let grads: Vec<_> = s2.trainable().take(3).map(|id| (id, s2.get(id).map(|x| x + 0.1))).collect();
        adam.step(&mut s2, &grads, 1e-3);
        let ck = Checkpoint::capture(&s2, Some(&adam), 7, &cfg, 0.25);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step().unwrap(), 7);
        assert_eq!(back.best_val_f1().unwrap(), 0.25);
        assert_eq!(back.config().unwrap(), cfg);
        let restored = back.restore_optimizer(&s2, AdamParams::default()).unwrap().unwrap();
        assert_eq!(restored, adam);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
    }

    #[test]
    fn restored_model_reproduces_forward_bitwise() {
        let (model, store, cfg) = tiny();
        let ck = Checkpoint::capture(&store, None, 0, &cfg, 0.0);
        let (m2, s2) = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().restore::<f32>().unwrap();
        let x1 = Tensor::<f32>::from_fn(&[1, 3, 16, 16], |i| (i % 13) as f32 / 13.0);
        let x2 = Tensor::<f32>::from_fn(&[1, 3, 16, 16], |i| (i % 7) as f32 / 7.0);
        let run = |m: &Ctma, s: &ParamStore<f32>| {
            let g = Graph::new();
            let ctx = Ctx::new(&g, s, Mode::Eval);
            m.forward(&ctx, &x1, &x2).unwrap().p2.value().data().to_vec()
        };
        assert_eq!(run(&model, &store), run(&m2, &s2));
    }

    #[test]
    fn version_and_corruption_errors() {
        let (_, store, cfg) = tiny();
        let mut bytes = Checkpoint::capture(&store, None, 0, &cfg, 0.0).to_bytes();
        let good = bytes.clone();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CheckpointVersion { found: 9, expected: 1 })));
        assert!(matches!(Checkpoint::from_bytes(&good[..good.len() - 3]), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let (_, store, cfg) = tiny();
        let ck = Checkpoint::capture(&store, None, 0, &cfg, 0.0);
        let other = TrainConfig { ablation: crate::config::AblationFlags { use_mask_augment: false, ..Default::default() }, ..cfg };
        let (_, mut s) = Ctma::new::<f32>(&other).unwrap();
        assert!(matches!(ck.load_into(&mut s), Err(Error::Checkpoint(_))));
    }
}
