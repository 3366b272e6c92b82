//! Raw little-endian binary buffers and `key=value` sidecar headers.
//!
//! Every file that ends up on disk is first written as `<name>.partial` and
//! renamed once complete, so a crashed run never leaves a truncated file under
//! its final name.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Path with `.partial` appended to the file name.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes through a `.partial` file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(contents)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_f32_le(path: &Path, values: &[f32]) -> Result<()> {
    write_atomic(path, &f32_to_le_bytes(values))
}

/// Reads exactly `expected` little-endian `f32` values.
pub fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::with_capacity(expected * 4);
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Ordered `key=value` lines. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_owned(),
                reason: format!("line {}: expected key=value", n + 1),
            })?;
            entries.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_string().as_bytes())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_owned(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn missing(&self, key: &str, path: &Path) -> Error {
        Error::Format {
            path: path.to_owned(),
            reason: format!("missing or malformed `{key}`"),
        }
    }

    /// Parses a whitespace-separated list of exactly `N` values.
    pub fn get_array<T: std::str::FromStr + Copy + Default, const N: usize>(
        &self,
        key: &str,
        path: &Path,
    ) -> Result<[T; N]> {
        let raw = self.get(key).ok_or_else(|| self.missing(key, path))?;
        let parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() != N {
            return Err(self.missing(key, path));
        }
        let mut out = [T::default(); N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| self.missing(key, path))?;
        }
        Ok(out)
    }

    pub fn get_value<T: std::str::FromStr + Copy + Default>(&self, key: &str, path: &Path) -> Result<T> {
        Ok(self.get_array::<T, 1>(key, path)?[0])
    }
}

impl std::fmt::Display for Header {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Sidecar header shared by reference volumes and reconstructed volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl VolumeHeader {
    pub fn to_header(&self) -> Header {
        let fmt3 = |a: [f64; 3]| format!("{} {} {}", a[0], a[1], a[2]);
        let mut h = Header::new();
        h.set(
            "dims",
            format!("{} {} {}", self.dims[0], self.dims[1], self.dims[2]),
        )
        .set("spacing_mm", fmt3(self.spacing_mm))
        .set("origin_mm", fmt3(self.origin_mm));
        h
    }

    pub fn from_header(h: &Header, path: &Path) -> Result<Self> {
        Ok(Self {
            dims: h.get_array("dims", path)?,
            spacing_mm: h.get_array("spacing_mm", path)?,
            origin_mm: h.get_array("origin_mm", path)?,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Sidecar path for a raw file: `volume.raw` → `volume.hdr`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("hdr")
}
