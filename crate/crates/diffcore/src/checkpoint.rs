//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "DIFFCKPT"            8 bytes
//! version u32                  = 1
//! config_hash  str
//! meta   u32 count, (str key, str value)*
//! params u32 count, param*
//!   param: str name, u8 group tag, u32 group index, u8 trainable,
//!          u32 rank, u64 dims[rank], f64 data[prod(dims)]
//! optimizer u8 present, [f64 lr, beta1, beta2, eps, u64 step,
//!          f64 first[...], f64 second[...] in parameter order]
//! sha256  32 bytes over everything above
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Floats are stored as
//! their raw bit patterns so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{DiffError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{hex, ParamGroup, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DIFFCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>, params: ParamStore, optimizer: Option<Adam>) -> Self {
        Self {
            config_hash: config_hash.into(),
            meta: BTreeMap::new(),
            params,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(MAGIC);
        w.u32(VERSION);
        w.str(&self.config_hash);
        w.u32(self.meta.len() as u32);
        for (k, v) in &self.meta {
            w.str(k);
            w.str(v);
        }
        w.u32(self.params.len() as u32);
        for (_, p) in self.params.iter() {
            w.str(&p.name);
            let (tag, index) = match p.group {
                ParamGroup::Encoder => (0u8, 0u32),
                ParamGroup::Decoder(i) => (1, i as u32),
                ParamGroup::Head => (2, 0),
            };
            w.u8(tag);
            w.u32(index);
            w.u8(p.trainable as u8);
            w.tensor(&p.value);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.f64(opt.config.lr);
                w.f64(opt.config.beta1);
                w.f64(opt.config.beta2);
                w.f64(opt.config.eps);
                w.u64(opt.step);
                for t in opt.first.iter().chain(&opt.second) {
                    for v in t.data() {
                        w.f64(*v);
                    }
                }
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.raw(&digest);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(DiffError::Format("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(DiffError::Format("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DiffError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DiffError::Format(format!("unsupported version {version}")));
        }
        let config_hash = r.str()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            meta.insert(k, v);
        }
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let tag = r.u8()?;
            let index = r.u32()? as usize;
            let group = match tag {
                0 => ParamGroup::Encoder,
                1 => ParamGroup::Decoder(index),
                2 => ParamGroup::Head,
                t => return Err(DiffError::Format(format!("unknown group tag {t}"))),
            };
            let trainable = r.u8()? != 0;
            let value = r.tensor()?;
            let id = params.add(&name, group, value)?;
            params.set_trainable(id, trainable);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut opt = Adam::new(config, &params);
                opt.step = r.u64()?;
                for t in opt.first.iter_mut().chain(opt.second.iter_mut()) {
                    for v in t.data_mut() {
                        *v = r.f64()?;
                    }
                }
                Some(opt)
            }
            t => return Err(DiffError::Format(format!("bad optimizer flag {t}"))),
        };
        if r.pos != body.len() {
            return Err(DiffError::Format("trailing bytes".into()));
        }
        Ok(Self {
            config_hash,
            meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized form.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.raw(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.raw(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.raw(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.raw(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for d in t.shape() {
            self.u64(*d as u64);
        }
        for v in t.data() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DiffError::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| DiffError::Format(e.to_string()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n * 8 > self.buf.len() - self.pos {
            return Err(DiffError::Format("tensor extends past end of data".into()));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }
}
