//! Model persistence: a text (JSON) header describing every stored model
//! and its segment table, followed by packed little-endian `f64` payloads.
//!
//! Layout on disk:
//!
//! ```text
//! [8-byte magic "GEMCKPT1"] [u64 LE header length] [header JSON] [payload f64s]
//! ```
//!
//! Loading is strict: wrong magic, unknown version, truncated payloads and
//! segment tables that disagree with the expected model architecture are
//! all distinct errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::nn::{ParamLayout, Segment};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GEMCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named model inside a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    /// Model family tag (`"cgmm"`, `"mlp"`); consumers dispatch on it.
    pub kind: String,
    /// Family-specific architecture record.
    pub spec: serde_json::Value,
    pub segments: Vec<Segment>,
    /// Total number of stored `f64` values; must equal the segment sum.
    pub value_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub models: Vec<ModelEntry>,
    /// Run-level metadata (environment, normalization anchors, resolved
    /// training configuration).
    pub meta: serde_json::Value,
}

impl ModelEntry {
    pub fn new(name: &str, kind: &str, spec: serde_json::Value, layout: &ParamLayout) -> Self {
        ModelEntry {
            name: name.to_string(),
            kind: kind.to_string(),
            spec,
            segments: layout.segments().to_vec(),
            value_len: layout.total_len(),
        }
    }
}

/// Verifies a stored segment table against the layout implied by the model
/// spec; the first disagreeing segment is named in the error.
pub fn check_segments(model: &str, stored: &[Segment], expected: &ParamLayout) -> Result<()> {
    let exp = expected.segments();
    for (s, e) in stored.iter().zip(exp.iter()) {
        if s.name != e.name || s.shape != e.shape || s.offset != e.offset {
            return Err(GemError::ShapeMismatch {
                segment: format!("{model}.{}", s.name),
                stored: s.shape.clone(),
                expected: e.shape.clone(),
            });
        }
    }
    if stored.len() != exp.len() {
        let (name, shape) = if stored.len() > exp.len() {
            (&stored[exp.len()].name, stored[exp.len()].shape.clone())
        } else {
            (&exp[stored.len()].name, vec![])
        };
        return Err(GemError::ShapeMismatch {
            segment: format!("{model}.{name}"),
            stored: shape,
            expected: exp.last().map(|s| s.shape.clone()).unwrap_or_default(),
        });
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, payloads: &[&[f64]]) -> Result<()> {
    assert_eq!(header.models.len(), payloads.len(), "one payload per model entry");
    for (entry, payload) in header.models.iter().zip(payloads) {
        assert_eq!(
            entry.value_len,
            payload.len(),
            "payload length for '{}' does not match its entry",
            entry.name
        );
    }
    let header_bytes = serde_json::to_vec(header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for payload in payloads {
        for v in payload.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut magic, path, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GemError::BadFormat(format!(
            "{}: not a checkpoint (magic {:?})",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len_bytes = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut len_bytes, path, "header length")?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or_truncated(&mut r, &mut header_bytes, path, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| GemError::BadFormat(format!("{}: header parse: {e}", path.display())))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(GemError::VersionMismatch {
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut payloads = Vec::with_capacity(header.models.len());
    for entry in &header.models {
        let seg_total: usize = entry.segments.iter().map(|s| s.len()).sum();
        if seg_total != entry.value_len {
            return Err(GemError::BadFormat(format!(
                "model '{}': segment table covers {seg_total} values but entry declares {}",
                entry.name, entry.value_len
            )));
        }
        let mut values = vec![0.0f64; entry.value_len];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            read_exact_or_truncated(&mut r, &mut buf, path, &entry.name)?;
            *v = f64::from_le_bytes(buf);
        }
        payloads.push(values);
    }
    Ok((header, payloads))
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            GemError::Truncated(format!("{} while reading {what}", path.display()))
        } else {
            GemError::Io(e)
        }
    })
}
