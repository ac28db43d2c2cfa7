//! Patch shard files: a JSON header line, then for every record a JSON
//! metadata line followed by the patch as little-endian f32
//! (`2 × s³` values, channel-major, X fastest).

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::{BinaryLabel, SuspicionLevel};
use crate::cropping::{BoundingBox, Patch};
use crate::error::{Error, Result};

pub const SHARD_FORMAT: &str = "nodulenet-patches";
pub const SHARD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub format: String,
    pub version: u32,
    pub crop_size: usize,
    pub channels: usize,
    pub count: usize,
}

/// Metadata stored next to each canonical patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub patient_id: String,
    pub scan_id: String,
    pub nodule_id: String,
    /// Box in the prepared (resampled) volume's voxel grid.
    pub bbox: BoundingBox,
    /// Box as given in the manifest.
    pub source_bbox: BoundingBox,
    pub label: SuspicionLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_label: Option<BinaryLabel>,
    pub fold: usize,
    pub resize_needed: bool,
    /// Prepared volume payload, relative to the output directory.
    pub volume: String,
}

impl ShardRecord {
    pub fn key(&self) -> String {
        format!("{}/{}", self.scan_id, self.nodule_id)
    }
}

pub fn shard_bytes(crop_size: usize, entries: &[(ShardRecord, Patch)]) -> Result<Vec<u8>> {
    let header = ShardHeader {
        format: SHARD_FORMAT.into(),
        version: SHARD_VERSION,
        crop_size,
        channels: Patch::CHANNELS,
        count: entries.len(),
    };
    let mut out = json_line(&header)?;
    for (rec, patch) in entries {
        if patch.size() != crop_size {
            return Err(Error::ShapeMismatch(format!("patch {} is not {crop_size}³", rec.key())));
        }
        out.extend(json_line(rec)?);
        for v in patch.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn json_line<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec(value).map_err(|e| Error::json("shard line", e))?;
    v.push(b'\n');
    Ok(v)
}

/// Reads a shard. With `with_patches = false` payloads are skipped and the
/// returned patches are `None`.
pub fn read_shard(path: &Path, with_patches: bool) -> Result<(ShardHeader, Vec<(ShardRecord, Option<Patch>)>)> {
    let bad = |d: String| Error::Format { kind: "patch shard", detail: d };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let read_line = |r: &mut BufReader<File>, line: &mut String| -> Result<()> {
        line.clear();
        r.read_line(line).map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            return Err(bad(format!("{}: unexpected end of file", path.display())));
        }
        Ok(())
    };
    read_line(&mut r, &mut line)?;
    let header: ShardHeader = serde_json::from_str(&line).map_err(|e| Error::json("shard header", e))?;
    if header.format != SHARD_FORMAT || header.version != SHARD_VERSION || header.channels != Patch::CHANNELS {
        return Err(bad(format!("{}: unsupported header {header:?}", path.display())));
    }
    let n = Patch::CHANNELS * header.crop_size.pow(3);
    let mut buf = vec![0u8; 4 * n];
    let mut out = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        read_line(&mut r, &mut line)?;
        let rec: ShardRecord = serde_json::from_str(&line).map_err(|e| Error::json("shard record", e))?;
        r.read_exact(&mut buf)
            .map_err(|_| bad(format!("{}: truncated payload for {}", path.display(), rec.key())))?;
        let patch = if with_patches {
            let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            Some(Patch::from_data(header.crop_size, data)?.with_source(&rec.scan_id, &rec.nodule_id))
        } else {
            None
        };
        out.push((rec, patch));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad(format!("{}: trailing bytes", path.display())));
    }
    Ok((header, out))
}
