//! On-disk store of pooled segment embeddings, the handoff between `embed`
//! and the phenotype stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data_io::{ByteReader, Modality};
use crate::error::{Error, Result};
use crate::model::SegmentEmbedding;
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"PSGE";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    dim: usize,
    entries: Vec<SegmentEmbedding<T>>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dim: usize, entries: Vec<SegmentEmbedding<T>>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.vector.len() != dim) {
            return Err(Error::Shape(format!(
                "embedding of {} segment {} has {} components, store holds {dim}",
                e.subject_id,
                e.segment_index,
                e.vector.len()
            )));
        }
        Ok(EmbeddingStore { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[SegmentEmbedding<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends another store's entries; dimensions must agree.
    pub fn extend(&mut self, other: EmbeddingStore<T>) -> Result<()> {
        if other.dim != self.dim && !other.is_empty() {
            return Err(Error::Shape(format!(
                "cannot merge stores of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        self.entries.extend(other.entries);
        Ok(())
    }

    /// Embeddings of one modality grouped by subject, each group ordered by
    /// segment index.
    pub fn by_subject(&self, modality: Modality) -> BTreeMap<&str, Vec<&SegmentEmbedding<T>>> {
        let mut out: BTreeMap<&str, Vec<&SegmentEmbedding<T>>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.modality == modality) {
            out.entry(e.subject_id.as_str()).or_default().push(e);
        }
        for group in out.values_mut() {
            group.sort_by_key(|e| e.segment_index);
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.push(T::DTYPE);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            let id = e.subject_id.as_bytes();
            if id.len() > u16::MAX as usize {
                return Err(Error::InvalidArgument("subject id too long".into()));
            }
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id);
            out.push(e.modality.tag());
            out.extend_from_slice(&(e.segment_index as u64).to_le_bytes());
            for &v in &e.vector {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != EMBEDDING_MAGIC {
            return Err(Error::BadMagic {
                expected: EMBEDDING_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != EMBEDDING_VERSION {
            return Err(Error::VersionMismatch {
                expected: EMBEDDING_VERSION,
                found: version,
            });
        }
        let dtype = r.u8()?;
        if dtype != T::DTYPE {
            return Err(Error::Schema(format!(
                "embedding dtype {dtype}, loader expects {}",
                T::DTYPE
            )));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let subject_id = r.string_u16()?;
            let modality = Modality::from_tag(r.u8()?)?;
            let segment_index = r.u64()? as usize;
            let raw = r.take(dim * T::BYTES)?;
            let vector = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            entries.push(SegmentEmbedding {
                subject_id,
                modality,
                segment_index,
                vector,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::TrailingBytes(r.remaining()));
        }
        Ok(EmbeddingStore { dim, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
