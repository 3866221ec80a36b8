//! Disk-backed replay buffer: one immutable file per entry plus a JSON
//! manifest recording order, checksums and version tags.
//!
//! Entry layout (little-endian, floats as raw bits):
//!
//! ```text
//! magic "NAVBUFE1"
//! str version_tag, u64 scene_seed, u64 task, u64 step
//! observation (patch, frames, goal)
//! u64 G, then per candidate:
//!   u64 K, u64 digest, K+1 x f64s states, K x f64s noise_preds,
//!   K x f64s means, f64s log_probs, 7 raw terms, 7 weighted terms, total
//! sha256 over everything above
//! ```

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{NavError, Result};
use crate::policy::{ChainRecord, Observation};
use crate::pretrain::dataset::{read_observation, write_observation};
use crate::reward::{RewardBreakdown, RewardTerms};

const ENTRY_MAGIC: &[u8; 8] = b"NAVBUFE1";
const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "navgrpo-buffer";
const MANIFEST_VERSION: u32 = 1;

/// One observation's group of sampled chains with their rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub obs: Observation,
    pub records: Vec<ChainRecord>,
    pub rewards: Vec<RewardBreakdown>,
    pub scene_seed: u64,
    pub task: u32,
    pub step: u32,
    /// Identifies the sampling policy.
    pub version: String,
}

impl BufferEntry {
    pub fn totals(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.len() != self.rewards.len() || self.records.len() < 2 {
            return Err(NavError::Usage(format!(
                "entry holds {} records and {} rewards; need matching counts of at least 2",
                self.records.len(),
                self.rewards.len()
            )));
        }
        let digest = self.obs.digest();
        if self.records.iter().any(|r| r.obs_digest != digest) {
            return Err(NavError::Usage("every record in an entry must condition on the entry's observation".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.raw(ENTRY_MAGIC);
        w.str(&self.version);
        w.u64(self.scene_seed);
        w.u64(self.task as u64);
        w.u64(self.step as u64);
        write_observation(&mut w, &self.obs);
        w.u64(self.records.len() as u64);
        for (rec, rw) in self.records.iter().zip(&self.rewards) {
            w.u64(rec.k_total() as u64);
            w.u64(rec.obs_digest);
            for s in &rec.states {
                w.f64s(s);
            }
            for s in rec.noise_preds.iter().chain(&rec.means) {
                w.f64s(s);
            }
            w.f64s(&rec.log_probs);
            for v in rw.raw.to_array().into_iter().chain(rw.weighted.to_array()) {
                w.f64(v);
            }
            w.f64(rw.total);
        }
        let digest = Sha256::digest(&w.buf);
        w.raw(&digest);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < ENTRY_MAGIC.len() + 32 || &bytes[..8] != ENTRY_MAGIC {
            return Err(NavError::Format("not a buffer entry".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(NavError::Format("buffer entry checksum mismatch".into()));
        }
        let mut r = ByteReader::new(body, 8, "buffer entry");
        let version = r.str()?;
        let scene_seed = r.u64()?;
        let task = r.u64()? as u32;
        let step = r.u64()? as u32;
        let obs = read_observation(&mut r)?;
        let g = r.len(1 << 16)?;
        let mut records = Vec::with_capacity(g);
        let mut rewards = Vec::with_capacity(g);
        for _ in 0..g {
            let k = r.len(1 << 16)?;
            let obs_digest = r.u64()?;
            let states = (0..=k).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
            let noise_preds = (0..k).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
            let means = (0..k).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
            let log_probs = r.f64s()?;
            if log_probs.len() != k {
                return Err(NavError::Format("record log-prob count mismatch".into()));
            }
            let mut terms = [0.0; 14];
            for t in terms.iter_mut() {
                *t = r.f64()?;
            }
            let total = r.f64()?;
            records.push(ChainRecord {
                states,
                noise_preds,
                means,
                log_probs,
                obs_digest,
            });
            rewards.push(RewardBreakdown {
                raw: RewardTerms::from_array(terms[..7].try_into().expect("7 terms")),
                weighted: RewardTerms::from_array(terms[7..].try_into().expect("7 terms")),
                total,
            });
        }
        if !r.finished() {
            return Err(NavError::Format("trailing bytes in buffer entry".into()));
        }
        Ok(Self {
            obs,
            records,
            rewards,
            scene_seed,
            task,
            step,
            version,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seq: u64,
    pub file: String,
    pub sha256: String,
    pub version: String,
    pub scene_seed: u64,
    pub task: u32,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub capacity: usize,
    pub next_seq: u64,
    pub evicted: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Bounded FIFO of entries stored under one directory.
#[derive(Debug)]
pub struct DiskBuffer {
    dir: PathBuf,
    capacity: usize,
    config_hash: String,
    next_seq: u64,
    evicted: u64,
    entries: VecDeque<ManifestEntry>,
}

impl DiskBuffer {
    /// Creates an empty buffer in `dir`, deleting any previous contents.
    pub fn create(dir: &Path, capacity: usize, config_hash: &str) -> Result<Self> {
        if capacity == 0 {
            return Err(NavError::Config("buffer capacity must be positive".into()));
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::create_dir_all(dir)?;
        let buf = Self {
            dir: dir.to_path_buf(),
            capacity,
            config_hash: config_hash.to_string(),
            next_seq: 0,
            evicted: 0,
            entries: VecDeque::new(),
        };
        buf.write_manifest()?;
        Ok(buf)
    }

    /// Opens an existing buffer from its manifest.
    pub fn open(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| NavError::Format(format!("buffer manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(NavError::Format(format!("unsupported buffer manifest {} v{}", m.format, m.version)));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            capacity: m.capacity,
            config_hash: m.config_hash,
            next_seq: m.next_seq,
            evicted: m.evicted,
            entries: m.entries.into(),
        })
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config_hash: self.config_hash.clone(),
            capacity: self.capacity,
            next_seq: self.next_seq,
            evicted: self.evicted,
            entries: self.entries.iter().cloned().collect(),
        }
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest()).map_err(std::io::Error::from)?;
        let tmp = self.dir.join("manifest.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, self.dir.join(MANIFEST))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends an entry, evicting the oldest when full. Returns the evicted
    /// sequence number, if any.
    pub fn push(&mut self, entry: &BufferEntry) -> Result<Option<u64>> {
        entry.validate()?;
        let bytes = entry.encode();
        let seq = self.next_seq;
        let file = format!("entry-{seq:08}.bin");
        std::fs::write(self.dir.join(&file), &bytes)?;
        self.next_seq += 1;
        self.entries.push_back(ManifestEntry {
            seq,
            file,
            sha256: diffcore::hex(&Sha256::digest(&bytes)),
            version: entry.version.clone(),
            scene_seed: entry.scene_seed,
            task: entry.task,
            step: entry.step,
        });
        let mut evicted = None;
        if self.entries.len() > self.capacity {
            let old = self.entries.pop_front().expect("non-empty");
            std::fs::remove_file(self.dir.join(&old.file))?;
            self.evicted += 1;
            evicted = Some(old.seq);
        }
        self.write_manifest()?;
        Ok(evicted)
    }

    /// Loads entry `i` (oldest first), verifying the manifest checksum.
    pub fn load(&self, i: usize) -> Result<BufferEntry> {
        let m = self
            .entries
            .get(i)
            .ok_or_else(|| NavError::Usage(format!("buffer has {} entries, asked for {i}", self.entries.len())))?;
        let bytes = std::fs::read(self.dir.join(&m.file))?;
        if diffcore::hex(&Sha256::digest(&bytes)) != m.sha256 {
            return Err(NavError::Format(format!("{} does not match its manifest checksum", m.file)));
        }
        BufferEntry::decode(&bytes)
    }

    pub fn load_all(&self) -> Result<Vec<BufferEntry>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    /// Checksum over the manifest's entry checksums, in order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.sha256.as_bytes());
        }
        diffcore::hex(&h.finalize())
    }

    /// Removes every entry.
    pub fn clear(&mut self) -> Result<()> {
        for e in self.entries.drain(..) {
            std::fs::remove_file(self.dir.join(&e.file))?;
        }
        self.write_manifest()
    }
}
