//! `.grd` image files and atomic file output.
//!
//! Layout: the 8-byte magic `GRDIMG\0\x01`, little-endian `u32` values for
//! the dimension, the channel count and each axis length, then `f64` origin
//! and spacing per axis, then the row-major `f64` payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use jointrecon::grid::{Geometry, ImageGrid};

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 8] = *b"GRDIMG\x00\x01";

pub fn encode(img: &ImageGrid<f64>) -> Vec<u8> {
    let g = img.geometry();
    let d = g.dim();
    let mut out = Vec::with_capacity(8 + 4 * (2 + d) + 16 * d + 8 * img.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(img.channels() as u32).to_le_bytes());
    for &n in g.shape() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &o in g.origin() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    for &h in g.spacing() {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for &v in img.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }

    fn u32(&mut self) -> Option<usize> {
        self.take::<4>().map(|b| u32::from_le_bytes(b) as usize)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ImageGrid<f64>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take::<8>() != Some(MAGIC) {
        return Err("not a .grd file (bad magic)".into());
    }
    let truncated = || "truncated header".to_string();
    let d = r.u32().ok_or_else(truncated)?;
    let channels = r.u32().ok_or_else(truncated)?;
    if d == 0 || d > 8 || channels == 0 {
        return Err(format!("implausible header: dimension {d}, {channels} channels"));
    }
    let shape: Vec<usize> = (0..d).map(|_| r.u32()).collect::<Option<_>>().ok_or_else(truncated)?;
    let origin: Vec<f64> = (0..d).map(|_| r.f64()).collect::<Option<_>>().ok_or_else(truncated)?;
    let spacing: Vec<f64> = (0..d).map(|_| r.f64()).collect::<Option<_>>().ok_or_else(truncated)?;
    let count = shape.iter().product::<usize>() * channels;
    let payload = &bytes[r.pos..];
    if payload.len() != 8 * count {
        return Err(format!("payload has {} bytes, header implies {}", payload.len(), 8 * count));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let geometry = Geometry::new(shape, origin, spacing).map_err(|e| e.to_string())?;
    ImageGrid::new(geometry, channels, values).map_err(|e| e.to_string())
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io { path: path.to_path_buf(), source: e };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let mut tmp = PathBuf::from(path);
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(bytes).map_err(io)?;
    file.sync_all().map_err(io)?;
    drop(file);
    fs::rename(&tmp, path).map_err(io)
}

pub fn write(path: &Path, img: &ImageGrid<f64>) -> CliResult<()> {
    write_atomic(path, &encode(img))
}

pub fn read(path: &Path) -> CliResult<ImageGrid<f64>> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    decode(&bytes).map_err(|reason| CliError::Format { path: path.to_path_buf(), reason })
}
