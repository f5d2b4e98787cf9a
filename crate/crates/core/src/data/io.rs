//! Bag files and JSON-lines manifests.
//!
//! Bag file layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "HMB1"
//!      4     2  version (u16, = 1)
//!      6     1  label (fine class code)
//!      7     1  subsite (0 Proximal, 1 Distal, 2 Unknown)
//!      8     4  n (u32, instances)
//!     12     4  d (u32, feature width)
//!     16  4·n·d features, f32, row-major
//! ```
//!
//! Features are held as `f64` in memory and narrowed to `f32` on write.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Bag, Dataset, Entry, Mixture, Split};
use crate::error::{Error, Result};
use crate::numkernel::Tensor2;
use crate::taxonomy::{FineClass, Subsite};

pub const BAG_MAGIC: &[u8; 4] = b"HMB1";
pub const BAG_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_bag(bag: &Bag) -> Result<Vec<u8>> {
    let n = u32::try_from(bag.len())
        .map_err(|_| Error::InvalidArgument(format!("bag {} is too large", bag.id)))?;
    let d = u32::try_from(bag.dim())
        .map_err(|_| Error::InvalidArgument(format!("bag {} is too wide", bag.id)))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * bag.features.len());
    buf.extend_from_slice(BAG_MAGIC);
    buf.extend_from_slice(&BAG_VERSION.to_le_bytes());
    buf.push(bag.label.code());
    buf.push(bag.subsite.code());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for &x in bag.features.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_bag(id: impl Into<String>, bytes: &[u8]) -> Result<Bag> {
    if bytes.len() < 4 || &bytes[..4] != BAG_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"HMB1\""));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BAG_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let label = FineClass::from_code(bytes[6])
        .ok_or_else(|| Error::format(6, format!("invalid label code {}", bytes[6])))?;
    let subsite = Subsite::from_code(bytes[7])
        .ok_or_else(|| Error::format(7, format!("invalid subsite code {}", bytes[7])))?;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(8, format!("empty bag shape {n}x{d}")));
    }
    let payload = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::format(8, format!("{n}x{d} payload size overflows")))?;
    let have = bytes.len() - HEADER_LEN;
    if have < payload {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {payload} bytes, found {have}"),
        ));
    }
    if have > payload {
        return Err(Error::format(
            (HEADER_LEN + payload) as u64,
            format!("{} trailing bytes", have - payload),
        ));
    }
    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(Error::format(
                (HEADER_LEN + 4 * i) as u64,
                "non-finite feature value",
            ));
        }
        data.push(x as f64);
    }
    let features = Tensor2::from_vec(n, d, data)?;
    Bag::new(id, features, label, subsite)
}

pub fn write_bag(bag: &Bag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bag(bag)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a bag; its id is the file stem.
pub fn read_bag(path: impl AsRef<Path>) -> Result<Bag> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_bag(id, &bytes)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: FineClass,
    pub subsite: Subsite,
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<Mixture>,
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Input(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Writes every bag under `dir/bags/` and the manifest to
/// `dir/manifest.jsonl`; returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
    let mut manifest = Vec::with_capacity(dataset.len());
    for e in &dataset.entries {
        let rel = format!("bags/{}.hmb", e.bag.id);
        write_bag(&e.bag, dir.join(&rel))?;
        manifest.push(ManifestEntry {
            id: e.bag.id.clone(),
            path: rel,
            label: e.bag.label,
            subsite: e.bag.subsite,
            split: e.split,
            mixture: e.mixture,
        });
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&manifest, &path)?;
    Ok(path)
}

/// Loads a dataset from a manifest, checking each bag file against its line.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let root = manifest.parent().unwrap_or(Path::new("."));
    let lines = read_manifest(manifest)?;
    let mut entries = Vec::with_capacity(lines.len());
    for line in lines {
        let bag_path = root.join(&line.path);
        let mut bag = read_bag(&bag_path)?;
        if bag.label != line.label || bag.subsite != line.subsite {
            return Err(Error::Input(format!(
                "{}: header disagrees with manifest entry {}",
                bag_path.display(),
                line.id
            )));
        }
        bag.id = line.id;
        entries.push(Entry {
            bag,
            split: line.split,
            mixture: line.mixture,
        });
    }
    let dim = entries
        .first()
        .map(|e| e.bag.dim())
        .ok_or_else(|| Error::Input(format!("{} lists no bags", manifest.display())))?;
    Dataset::new(dim, entries)
}
