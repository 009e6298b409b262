//! NTC named-tensor container.
//!
//! ```text
//! "NTC1"
//! u32 LE  metadata length, metadata bytes (UTF-8)
//! u32 LE  tensor count
//! per tensor:
//!   u16 LE name length, name bytes (UTF-8)
//!   u8     rank
//!   u32 LE × rank  dims
//!   f64 LE × Π dims  values, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTC1";

#[derive(Clone, Debug, PartialEq)]
pub struct NtcFile {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl NtcFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode(metadata: &str, tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(16 + tensors.iter().map(|(_, t)| 8 * t.len() + 32).sum::<usize>());
    out.extend_from_slice(MAGIC);
    let meta_len = u32::try_from(metadata.len()).map_err(|_| Error::format("metadata too long"))?;
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::format("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::format(format!("duplicate tensor name {name:?}")));
        }
        let name_len = u16::try_from(name.len()).map_err(|_| Error::format(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::format("tensor rank exceeds 255"))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::format("tensor extent exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!(
                "truncated container: {what} needs {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NtcFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("bad magic: not an NTC1 container"));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let metadata = String::from_utf8(r.take(meta_len, "metadata")?.to_vec())
        .map_err(|_| Error::format("metadata is not UTF-8"))?;
    let count = r.u32("tensor count")?;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::format("tensor name is not UTF-8"))?;
        if !seen.insert(name.clone()) {
            return Err(Error::format(format!("duplicate tensor name {name:?}")));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format("tensor too large"))?;
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::format("tensor too large"))?, "payload")?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }
    Ok(NtcFile { metadata, tensors })
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path`.
pub fn write(path: &Path, metadata: &str, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(metadata, tensors)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<NtcFile> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn golden_single_scalar() {
        let bytes = encode("", &[("a".into(), Tensor::scalar(1.0))]).unwrap();
        let expect: Vec<u8> = vec![
            0x4E, 0x54, 0x43, 0x31, // magic
            0, 0, 0, 0, // metadata length
            1, 0, 0, 0, // tensor count
            1, 0, 0x61, // name
            0, // rank
            0, 0, 0, 0, 0, 0, 0xF0, 0x3F, // 1.0
        ];
        assert_eq!(bytes, expect);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.tensors, vec![("a".to_string(), Tensor::scalar(1.0))]);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = Rng::from_seed(3);
        let tensors: Vec<(String, Tensor)> = (0..5)
            .map(|i| {
                let shape: Vec<usize> = (0..i % 4).map(|_| 1 + rng.below(4)).collect();
                let n = shape.iter().product();
                (format!("t{i}"), Tensor::new(shape, rng.normals(n)).unwrap())
            })
            .collect();
        let bytes = encode("{\"k\":1}", &tensors).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.metadata, "{\"k\":1}");
        assert_eq!(back.tensors, tensors);
        assert_eq!(encode(&back.metadata, &back.tensors).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let good = encode("m", &[("a".into(), Tensor::vector(vec![1.0, 2.0]))]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("magic"));
        assert!(decode(&good[..good.len() - 3]).unwrap_err().to_string().contains("truncated"));
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let dup = vec![("a".to_string(), Tensor::scalar(1.0)), ("a".to_string(), Tensor::scalar(2.0))];
        assert!(encode("", &dup).is_err());
    }

    #[test]
    fn file_write_is_atomic_rename() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ntc");
        write(&path, "", &[("a".into(), Tensor::scalar(2.0))]).unwrap();
        write(&path, "", &[("b".into(), Tensor::scalar(3.0))]).unwrap();
        assert_eq!(read(&path).unwrap().get("b").unwrap().item(), 3.0);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
