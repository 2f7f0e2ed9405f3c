//! On-disk cache of extracted feature sets, one binary record per sample
//! and pipeline configuration.
//!
//! Record layout, all integers little-endian:
//!
//! ```text
//! magic "DMFC" | version u16 | flags u8 | k u32 | label u32 | config u64
//! | subject len u32 + bytes | sample len u32 + bytes
//! | k*6 feature f32 | k*2 pixel u32 | sha256 digest
//! ```
//!
//! `flags` bit 0 marks a present label; other bits must be zero. The digest
//! covers every preceding byte. A record that fails any structural or
//! integrity check is deleted on load so the slot reverts to a miss.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::{MotionFeatureSet, PipelineConfig};

const MAGIC: &[u8; 4] = b"DMFC";
const VERSION: u16 = 1;
const FLAG_HAS_LABEL: u8 = 0x01;
const DIGEST_LEN: usize = 32;

/// Stable fingerprint of a pipeline configuration.
///
/// Hashes a canonical byte encoding of every extraction parameter, so the
/// value survives process restarts and changes whenever any parameter does.
pub fn config_hash(cfg: &PipelineConfig) -> u64 {
    use crate::motion::{NormalizationMode, Selection};
    let mut h = Sha256::new();
    h.update((cfg.k as u64).to_le_bytes());
    h.update([match cfg.selection {
        Selection::Sorted => 0u8,
        Selection::Random => 1,
    }]);
    h.update(cfg.filter_factor.to_le_bytes());
    h.update([cfg.center_positions as u8]);
    match cfg.amplitude_cap_percentile {
        Some(p) => {
            h.update([1u8]);
            h.update(p.to_le_bytes());
        }
        None => h.update([0u8]),
    }
    h.update([match cfg.normalization {
        NormalizationMode::Observed => 0u8,
        NormalizationMode::FixedRange => 1,
    }]);
    h.update(cfg.rng_seed.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Serializes one feature set into a cache record.
pub fn encode_features(set: &MotionFeatureSet, sample_id: &str, config: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + set.k * 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(if set.label.is_some() { FLAG_HAS_LABEL } else { 0 });
    out.extend_from_slice(&(set.k as u32).to_le_bytes());
    out.extend_from_slice(&(set.label.unwrap_or(0) as u32).to_le_bytes());
    out.extend_from_slice(&config.to_le_bytes());
    for text in [&set.subject_id, sample_id] {
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    for row in &set.features {
        for &c in row {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for cell in &set.pixel_index {
        for &coord in cell {
            out.extend_from_slice(&coord.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parses a cache record, returning the feature set with the sample id and
/// configuration fingerprint it was stored under.
pub fn decode_features(bytes: &[u8]) -> Result<(MotionFeatureSet, String, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.err_at(0, "bad magic, not a feature cache record"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(r.err_at(4, format!("unsupported record version {version}")));
    }
    let flags = r.take(1, "flags")?[0];
    if flags & !FLAG_HAS_LABEL != 0 {
        return Err(r.err_at(6, format!("unknown flag bits {flags:#04x}")));
    }
    let k = r.u32("point count")? as usize;
    let label = r.u32("label")? as usize;
    let config = u64::from_le_bytes(r.take(8, "config fingerprint")?.try_into().unwrap());
    let subject_id = r.string("subject id")?;
    let sample_id = r.string("sample id")?;

    let mut features = Vec::with_capacity(k);
    for _ in 0..k {
        let mut row = [0.0f64; 6];
        for c in &mut row {
            let raw = r.take(4, "feature row")?;
            *c = f32::from_le_bytes(raw.try_into().unwrap()) as f64;
        }
        features.push(row);
    }
    let mut pixel_index = Vec::with_capacity(k);
    for _ in 0..k {
        pixel_index.push([r.u32("pixel index")?, r.u32("pixel index")?]);
    }

    let body_end = r.pos;
    let stored = r.take(DIGEST_LEN, "integrity digest")?;
    if r.pos != bytes.len() {
        return Err(r.err_at(r.pos, "trailing bytes after digest"));
    }
    let computed = Sha256::digest(&bytes[..body_end]);
    if stored != computed.as_slice() {
        return Err(r.err_at(body_end, "integrity digest mismatch"));
    }

    let set = MotionFeatureSet {
        k,
        features,
        pixel_index,
        label: (flags & FLAG_HAS_LABEL != 0).then_some(label),
        subject_id,
    };
    Ok((set, sample_id, config))
}

/// Directory of cache records keyed by sample id and configuration.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    /// Opens a cache rooted at `dir`, creating the directory if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(Error::file(&dir))?;
        Ok(FeatureCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Record path for one sample under one configuration. The id is
    /// sanitized for the filesystem; a digest of the raw id keeps sanitized
    /// collisions apart.
    pub fn record_path(&self, sample_id: &str, config: u64) -> PathBuf {
        let safe: String = sample_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        let id_digest = Sha256::digest(sample_id.as_bytes());
        let id_tag = u32::from_le_bytes(id_digest[..4].try_into().unwrap());
        self.dir.join(format!("{safe}-{id_tag:08x}-{config:016x}.dmfc"))
    }

    /// Returns the cached set, `None` on a miss. A record that exists but
    /// fails validation is deleted and reported as [`Error::CacheIntegrity`].
    pub fn load(&self, sample_id: &str, config: u64) -> Result<Option<MotionFeatureSet>> {
        let path = self.record_path(sample_id, config);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::file(&path)(e)),
        };
        match decode_features(&bytes) {
            Ok((set, stored_id, stored_config))
                if stored_id == sample_id && stored_config == config =>
            {
                Ok(Some(set))
            }
            _ => {
                let _ = std::fs::remove_file(&path);
                Err(Error::CacheIntegrity { path })
            }
        }
    }

    /// Writes a record atomically: a stray reader never sees a half-written
    /// file.
    pub fn store(
        &self,
        sample_id: &str,
        config: u64,
        set: &MotionFeatureSet,
    ) -> Result<PathBuf> {
        let path = self.record_path(sample_id, config);
        let bytes = encode_features(set, sample_id, config);
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(Error::file(&self.dir))?;
        std::io::Write::write_all(&mut tmp.as_file(), &bytes).map_err(Error::file(&path))?;
        tmp.persist(&path).map_err(|e| Error::file(&path)(e.error))?;
        Ok(path)
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err_at(self.bytes.len(), format!("record truncated in {what}")));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| self.err_at(self.pos - len, format!("{what} is not UTF-8")))
    }

    pub(crate) fn err_at(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::ContainerFormat {
            offset,
            msg: msg.into(),
        }
    }
}
