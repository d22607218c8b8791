//! Persistent score store: a directory of sorted, checksummed segment files
//! plus a JSON manifest.
//!
//! Segment layout (little endian):
//!
//! ```text
//! version    u32   SEGMENT_VERSION
//! magic      4     "KRSG"
//! count      u64
//! records    count * 33 bytes, sorted by (item_id, keyphrase_id):
//!              item_id u64 | keyphrase_id u64 | score f64 | updated_at u64 | pass u8
//! crc32      u32   over every preceding byte of the file
//! ```
//!
//! `MANIFEST.json` carries the format version, model version, threshold,
//! record count, the segment list and a SHA-256 over the concatenated
//! record bytes. Saving writes a complete sibling directory and swaps it in,
//! so every save is also a full compaction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::PairKey;

pub const SEGMENT_VERSION: u32 = 1;
pub const SEGMENT_MAGIC: &[u8; 4] = b"KRSG";
pub const RECORD_BYTES: usize = 33;
pub const MANIFEST: &str = "MANIFEST.json";
/// Records per segment file.
pub const SEGMENT_RECORDS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub item_id: u64,
    pub keyphrase_id: u64,
    pub score: f64,
    pub pass: bool,
    pub model_version: String,
    /// UTC milliseconds.
    pub updated_at: u64,
}

impl ScoreRecord {
    pub fn key(&self) -> PairKey {
        (self.item_id, self.keyphrase_id)
    }
}

/// Last-write-wins order: later `updated_at`, then greater model version,
/// then greater score bits, then pass.
pub fn newer(a: &ScoreRecord, b: &ScoreRecord) -> bool {
    (a.updated_at, &a.model_version, a.score.to_bits(), a.pass) > (b.updated_at, &b.model_version, b.score.to_bits(), b.pass)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    score: f64,
    pass: bool,
    updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub file: String,
    pub count: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model_version: String,
    pub threshold: f64,
    pub count: u64,
    pub checksum: String,
    pub segments: Vec<SegmentInfo>,
}

/// Version-pure collection of score records, one per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStore {
    model_version: String,
    threshold: f64,
    records: BTreeMap<PairKey, Entry>,
}

impl ScoreStore {
    pub fn new(model_version: impl Into<String>, threshold: f64) -> Self {
        Self {
            model_version: model_version.into(),
            threshold,
            records: BTreeMap::new(),
        }
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, item_id: u64, keyphrase_id: u64) -> Option<ScoreRecord> {
        self.records
            .get(&(item_id, keyphrase_id))
            .map(|e| self.to_record((item_id, keyphrase_id), e))
    }

    fn to_record(&self, (item_id, keyphrase_id): PairKey, e: &Entry) -> ScoreRecord {
        ScoreRecord {
            item_id,
            keyphrase_id,
            score: e.score,
            pass: e.pass,
            model_version: self.model_version.clone(),
            updated_at: e.updated_at,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = ScoreRecord> + '_ {
        self.records.iter().map(|(&k, e)| self.to_record(k, e))
    }

    pub fn keys(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.records.keys().copied()
    }

    /// Keys whose item is `item_id`.
    pub fn keys_for_item(&self, item_id: u64) -> Vec<PairKey> {
        self.records
            .range((item_id, 0)..=(item_id, u64::MAX))
            .map(|(&k, _)| k)
            .collect()
    }

    fn check_record(&self, r: &ScoreRecord) -> Result<()> {
        if r.model_version != self.model_version {
            return Err(Error::VersionMismatch {
                store: self.model_version.clone(),
                model: r.model_version.clone(),
            });
        }
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::Data(format!("score {} outside [0, 1]", r.score)));
        }
        if r.pass != (r.score >= self.threshold) {
            return Err(Error::Data(format!(
                "pass flag disagrees with threshold {} for score {}",
                self.threshold, r.score
            )));
        }
        Ok(())
    }

    /// Last-write-wins merge. Returns how many records changed. The whole
    /// batch is validated before anything is applied.
    pub fn merge(&mut self, batch: impl IntoIterator<Item = ScoreRecord>) -> Result<usize> {
        let batch: Vec<ScoreRecord> = batch.into_iter().collect();
        for r in &batch {
            self.check_record(r)?;
        }
        let mut changed = 0;
        for r in batch {
            let key = r.key();
            let replace = match self.records.get(&key) {
                Some(e) => newer(&r, &self.to_record(key, e)),
                None => true,
            };
            if replace {
                self.records.insert(
                    key,
                    Entry {
                        score: r.score,
                        pass: r.pass,
                        updated_at: r.updated_at,
                    },
                );
                changed += 1;
            }
        }
        Ok(changed)
    }

    pub fn remove(&mut self, keys: &[PairKey]) -> usize {
        keys.iter().filter(|k| self.records.remove(k).is_some()).count()
    }

    fn encode_records<'a>(entries: impl Iterator<Item = (&'a PairKey, &'a Entry)>, out: &mut Vec<u8>) {
        for (&(i, k), e) in entries {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&k.to_le_bytes());
            out.extend_from_slice(&e.score.to_le_bytes());
            out.extend_from_slice(&e.updated_at.to_le_bytes());
            out.push(e.pass as u8);
        }
    }

    /// Concatenated record bytes in key order; the checksum input.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * RECORD_BYTES);
        Self::encode_records(self.records.iter(), &mut out);
        out
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }

    fn segments(&self) -> Vec<(String, Vec<u8>)> {
        let entries: Vec<(&PairKey, &Entry)> = self.records.iter().collect();
        let mut chunks: Vec<&[(&PairKey, &Entry)]> = entries.chunks(SEGMENT_RECORDS).collect();
        if chunks.is_empty() {
            chunks.push(&[]);
        }
        chunks
            .into_iter()
            .enumerate()
            .map(|(idx, chunk)| {
                let mut buf = Vec::with_capacity(16 + chunk.len() * RECORD_BYTES + 4);
                buf.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
                buf.extend_from_slice(SEGMENT_MAGIC);
                buf.extend_from_slice(&(chunk.len() as u64).to_le_bytes());
                Self::encode_records(chunk.iter().copied(), &mut buf);
                let crc = crc32fast::hash(&buf);
                buf.extend_from_slice(&crc.to_le_bytes());
                (format!("seg-{idx:05}.krs"), buf)
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        let segments = self
            .segments()
            .into_iter()
            .map(|(file, bytes)| {
                let n = bytes.len();
                SegmentInfo {
                    file,
                    count: ((n - 20) / RECORD_BYTES) as u64,
                    crc32: u32::from_le_bytes(bytes[n - 4..].try_into().unwrap()),
                }
            })
            .collect();
        Manifest {
            format_version: SEGMENT_VERSION,
            model_version: self.model_version.clone(),
            threshold: self.threshold,
            count: self.records.len() as u64,
            checksum: self.checksum(),
            segments,
        }
    }

    /// Writes the store to `dir`, replacing whatever was there. A crash
    /// leaves either the old or the new directory intact.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let staging = sibling(dir, ".staging");
        let retired = sibling(dir, ".retired");
        for p in [&staging, &retired] {
            if p.exists() {
                fs::remove_dir_all(p)?;
            }
        }
        fs::create_dir_all(&staging)?;
        let segments = self.segments();
        for (file, bytes) in &segments {
            fs::write(staging.join(file), bytes)?;
        }
        let manifest = serde_json::to_vec_pretty(&self.manifest())?;
        fs::write(staging.join(MANIFEST), manifest)?;
        if dir.exists() {
            fs::rename(dir, &retired)?;
        }
        fs::rename(&staging, dir)?;
        if retired.exists() {
            fs::remove_dir_all(&retired)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let store_err = |reason: String| Error::store(dir, reason);
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        if manifest.format_version != SEGMENT_VERSION {
            return Err(store_err(format!("unsupported format version {}", manifest.format_version)));
        }
        let mut store = ScoreStore::new(manifest.model_version.clone(), manifest.threshold);
        let mut last: Option<PairKey> = None;
        for seg in &manifest.segments {
            let bytes = fs::read(dir.join(&seg.file))?;
            let entries = decode_segment(&bytes).map_err(|r| store_err(format!("{}: {r}", seg.file)))?;
            if entries.len() as u64 != seg.count {
                return Err(store_err(format!("{}: count disagrees with manifest", seg.file)));
            }
            for (key, e) in entries {
                if last.is_some_and(|l| l >= key) {
                    return Err(store_err(format!("{}: keys not strictly increasing", seg.file)));
                }
                if e.pass != (e.score >= manifest.threshold) {
                    return Err(store_err(format!("{}: pass flag disagrees with threshold", seg.file)));
                }
                last = Some(key);
                store.records.insert(key, e);
            }
        }
        if store.len() as u64 != manifest.count {
            return Err(store_err("record count disagrees with manifest".into()));
        }
        if store.checksum() != manifest.checksum {
            return Err(store_err("checksum mismatch".into()));
        }
        Ok(store)
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

fn decode_segment(bytes: &[u8]) -> std::result::Result<Vec<(PairKey, Entry)>, String> {
    if bytes.len() < 20 {
        return Err("truncated segment".into());
    }
    let version = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if version != SEGMENT_VERSION {
        return Err(format!("unsupported segment version {version}"));
    }
    if &bytes[4..8] != SEGMENT_MAGIC {
        return Err("bad magic".into());
    }
    let body_end = bytes.len() - 4;
    let crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != crc {
        return Err("crc mismatch".into());
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..body_end];
    if body.len() != count * RECORD_BYTES {
        return Err("record count disagrees with segment length".into());
    }
    let u64_at = |r: &[u8], o: usize| u64::from_le_bytes(r[o..o + 8].try_into().unwrap());
    body.chunks_exact(RECORD_BYTES)
        .map(|r| {
            let pass = match r[32] {
                0 => false,
                1 => true,
                other => return Err(format!("bad pass byte {other}")),
            };
            Ok((
                (u64_at(r, 0), u64_at(r, 8)),
                Entry {
                    score: f64::from_bits(u64_at(r, 16)),
                    updated_at: u64_at(r, 24),
                    pass,
                },
            ))
        })
        .collect()
}
