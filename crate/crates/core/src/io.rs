//! Flat binary array files with a JSON sidecar.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u32` dim,
//! `u64` n_paths, `u64` n_steps, `f64` horizon, `u64` seed, `u8` scheme,
//! `u8` has_increments, then the row-major values and, if flagged, the
//! row-major increments. The sidecar `<file>.json` carries the parameters
//! needed to rebuild the owning type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
/// Largest file this crate will write.
pub const MAX_FILE_BYTES: u64 = 2 * 1024 * 1024 * 1024;

const HEADER_BYTES: u64 = 8 + 4 + 4 + 8 + 8 + 8 + 8 + 1 + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub magic: [u8; 8],
    pub dim: u32,
    pub n_paths: u64,
    pub n_steps: u64,
    pub horizon: f64,
    pub seed: u64,
    pub scheme: u8,
    pub has_increments: bool,
}

impl Header {
    fn value_count(&self) -> u64 {
        self.n_paths.saturating_mul(self.n_steps.saturating_add(1)).saturating_mul(self.dim as u64)
    }

    fn increment_count(&self) -> u64 {
        if self.has_increments {
            self.n_paths.saturating_mul(self.n_steps).saturating_mul(self.dim as u64)
        } else {
            0
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_array_file<M: Serialize>(
    path: &Path,
    header: &Header,
    values: &[f64],
    increments: Option<&[f64]>,
    meta: &M,
) -> Result<()> {
    let bytes = header.value_count().saturating_add(header.increment_count()).saturating_mul(8).saturating_add(HEADER_BYTES);
    if bytes > MAX_FILE_BYTES {
        return Err(Error::Format(format!(
            "ensemble needs {bytes} bytes, above the {MAX_FILE_BYTES}-byte file limit"
        )));
    }
    if values.len() as u64 != header.value_count() {
        return Err(Error::DimensionMismatch {
            expected: header.value_count() as usize,
            found: values.len(),
        });
    }
    if let Some(inc) = increments {
        if inc.len() as u64 != header.increment_count() {
            return Err(Error::DimensionMismatch {
                expected: header.increment_count() as usize,
                found: inc.len(),
            });
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header.magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&header.dim.to_le_bytes())?;
    out.write_all(&header.n_paths.to_le_bytes())?;
    out.write_all(&header.n_steps.to_le_bytes())?;
    out.write_all(&header.horizon.to_le_bytes())?;
    out.write_all(&header.seed.to_le_bytes())?;
    out.write_all(&[header.scheme, header.has_increments as u8])?;
    for v in values.iter().chain(increments.unwrap_or(&[])) {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    let side = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(side, meta)?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64s(r: &mut impl Read, n: u64) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; (n * 8) as usize];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Reads a file written by [`write_array_file`], checking the magic.
pub fn read_array_file<M: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
) -> Result<(Header, Vec<f64>, Option<Vec<f64>>, M)> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let found: [u8; 8] = take(&mut r)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let dim = u32::from_le_bytes(take(&mut r)?);
    let n_paths = u64::from_le_bytes(take(&mut r)?);
    let n_steps = u64::from_le_bytes(take(&mut r)?);
    let horizon = f64::from_le_bytes(take(&mut r)?);
    let seed = u64::from_le_bytes(take(&mut r)?);
    let [scheme, has_inc] = take::<2>(&mut r)?;
    let header = Header {
        magic: *magic,
        dim,
        n_paths,
        n_steps,
        horizon,
        seed,
        scheme,
        has_increments: has_inc != 0,
    };
    let expected = header
        .value_count()
        .checked_add(header.increment_count())
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_BYTES));
    if expected != Some(len) {
        return Err(Error::Format(format!(
            "file is {len} bytes but the header implies {expected:?}"
        )));
    }
    let values = read_f64s(&mut r, header.value_count())?;
    let increments = if header.has_increments {
        Some(read_f64s(&mut r, header.increment_count())?)
    } else {
        None
    };
    let meta = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    Ok((header, values, increments, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let header = Header {
            magic: *b"TESTTEST",
            dim: 1,
            n_paths: 2,
            n_steps: 1,
            horizon: 1.0,
            seed: 9,
            scheme: 0,
            has_increments: true,
        };
        write_array_file(&path, &header, &[0.0, 1.0, 0.0, -2.5], Some(&[1.0, -2.5]), &"meta").unwrap();
        let (h, v, inc, meta): (_, _, _, String) = read_array_file(&path, b"TESTTEST").unwrap();
        assert_eq!(h, header);
        assert_eq!(v, vec![0.0, 1.0, 0.0, -2.5]);
        assert_eq!(inc, Some(vec![1.0, -2.5]));
        assert_eq!(meta, "meta");
        assert!(matches!(
            read_array_file::<String>(&path, b"OTHERMAG"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_oversized_output() {
        let header = Header {
            magic: *b"TESTTEST",
            dim: 1,
            n_paths: 1 << 30,
            n_steps: 1,
            horizon: 1.0,
            seed: 0,
            scheme: 0,
            has_increments: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let err = write_array_file(&dir.path().join("big.bin"), &header, &[], None, &()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
