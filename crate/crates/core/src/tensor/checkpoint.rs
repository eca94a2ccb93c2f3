//! Flat binary parameter checkpoints.
//!
//! Layout: magic `NINO`, `u32` version, then for each tensor: `u32` name
//! length, UTF-8 name, `u32` rank, `u64` extents, raw little-endian `f64`
//! values. All integers little-endian. Tensors run to end of file.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NINO";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint_to<W: Write>(mut out: W, tensors: &[(String, &Tensor)]) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes the checkpoint and a JSON manifest (`<path>.json`) listing tensor
/// names and shapes plus caller metadata.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    tensors: &[(String, &Tensor)],
    metadata: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint_to(&mut buf, tensors)?;
    std::fs::write(path, buf)?;
    let manifest = serde_json::json!({
        "format": "NINO",
        "version": CHECKPOINT_VERSION,
        "tensors": tensors
            .iter()
            .map(|(n, t)| serde_json::json!({ "name": n, "shape": t.shape() }))
            .collect::<Vec<_>>(),
        "metadata": metadata,
    });
    let mut mpath = path.as_os_str().to_owned();
    mpath.push(".json");
    std::fs::write(mpath, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn truncated() -> Error {
    Error::Checkpoint("truncated file".into())
}

struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint_from<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while c.pos < buf.len() {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(8).ok_or_else(truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_checkpoint_from(std::io::BufReader::new(file))
}
