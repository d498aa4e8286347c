//! Weight checkpoint serialization.
//!
//! A checkpoint is a flat container of named tensors plus a header that ties
//! the weights to an architecture id and the RNG seed they were trained from.
//! The byte layout (also documented in docs/checkpoint-format.md) is, with
//! every integer little-endian:
//!
//! ```text
//! magic      8  bytes  "GRNCKPT\0"
//! version    u32       currently 1
//! arch       u32 len + UTF-8 bytes
//! seed       u64
//! n_entries  u32
//! entry * n_entries:
//!   name     u32 len + UTF-8 bytes
//!   ndim     u32
//!   dims     ndim x u64
//!   values   product(dims) x f64, row-major
//! ```
//!
//! Loading validates the magic, version, and that every entry's payload fits
//! the remaining bytes; failures report the byte offset they were detected at.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRNCKPT\0";
const VERSION: u32 = 1;

/// Named weights plus provenance header. Entry order is preserved verbatim,
/// so saving and re-saving a loaded checkpoint is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: String,
    pub seed: u64,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::with_capacity(
        64 + ckpt
            .entries
            .iter()
            .map(|(n, t)| n.len() + 16 + t.numel() * 8)
            .sum::<usize>(),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut buf, &ckpt.architecture);
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    buf.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.entries {
        put_str(&mut buf, name);
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(path, 0, "bad magic, not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            8,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let architecture = r.string("architecture id")?;
    let seed = r.u64("seed")?;
    let n_entries = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(n_entries.min(1024));
    for i in 0..n_entries {
        let name = r.string("entry name")?;
        let ndim = r.u32("ndim")? as usize;
        if ndim > 8 {
            return Err(Error::format(
                path,
                (r.pos - 4) as u64,
                format!("entry {i} claims {ndim} dimensions"),
            ));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64("dimension")? as usize);
        }
        let numel: usize = dims.iter().product();
        let at = r.pos;
        let bytes = r.take(numel * 8, "tensor values")?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(dims, data)
            .map_err(|e| Error::format(path, at as u64, e.to_string()))?;
        entries.push((name, tensor));
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            path,
            r.pos as u64,
            format!("{} trailing bytes after last entry", buf.len() - r.pos),
        ));
    }
    Ok(Checkpoint {
        architecture,
        seed,
        entries,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                self.pos as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(self.path, at as u64, format!("{what} is not UTF-8")))
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            architecture: "lenet-mnist".into(),
            seed: 42,
            entries: vec![
                (
                    "conv1.weight".into(),
                    Tensor::new(vec![2, 1, 2, 2], (0..8).map(|i| i as f64 * 0.5).collect())
                        .unwrap(),
                ),
                ("conv1.bias".into(), Tensor::from_vec(vec![-1.0, 2.0])),
            ],
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ckpt");
        let ckpt = sample();
        save_checkpoint(&p, &ckpt).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &sample()).unwrap();
        let back = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ckpt");
        std::fs::write(&p, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_truncation_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 5]).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        match err {
            Error::Format { offset, what, .. } => {
                assert!(offset > 0);
                assert!(what.contains("truncated"), "{what}");
            }
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let mut full = std::fs::read(&p).unwrap();
        full.extend_from_slice(b"junk");
        std::fs::write(&p, &full).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/w.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn lookup_by_name() {
        let ckpt = sample();
        assert_eq!(ckpt.get("conv1.bias").unwrap().shape(), &[2]);
        assert!(ckpt.get("absent").is_none());
    }
}
