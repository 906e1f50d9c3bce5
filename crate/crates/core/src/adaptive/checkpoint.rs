use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

const MAGIC: &[u8; 4] = b"ADNW";
const VERSION: u32 = 1;

/// Serialises every tensor of `store`, buffers included.
///
/// Layout, little-endian: `"ADNW"`, version `u32`, tensor count `u32`, then
/// per tensor its name length `u32`, UTF-8 name, rank `u32`, dims `u32` each
/// and the absolute byte offset `u64` of its data. Raw `f32` data follows
/// the manifest. Tensors appear in lexicographic name order.
pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let entries: Vec<_> = store.sorted().collect();
    let header: usize = 12
        + entries
            .iter()
            .map(|(name, e)| 4 + name.len() + 4 + 4 * e.value.rank() + 8)
            .sum::<usize>();
    let data: usize = entries.iter().map(|(_, e)| 4 * e.value.numel()).sum();
    let mut out = Vec::with_capacity(header + data);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = header as u64;
    for (name, e) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * e.value.numel() as u64;
    }
    for (_, e) in &entries {
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| "not an ADNW checkpoint".to_string())?;
    if magic != MAGIC {
        return Err(format!("bad magic {magic:?}, expected \"ADNW\""));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let offset = r.u64()?;
        manifest.push((name, shape, offset));
    }
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, shape, offset) in manifest {
        if shape.is_empty() || shape.contains(&0) {
            return Err(format!("tensor {name} has invalid shape {shape:?}"));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("tensor {name} is too large"))?;
        let start = usize::try_from(offset).map_err(|_| format!("tensor {name}: bad offset"))?;
        let mut data_reader = Reader { bytes, pos: start };
        let raw = data_reader
            .take(numel.checked_mul(4).ok_or("tensor too large")?)
            .map_err(|_| format!("tensor {name} runs past the end of the file"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        tensors.push((name, t));
    }
    Ok(tensors)
}

/// Parses checkpoint bytes into `(name, tensor)` pairs in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    decode(bytes).map_err(|m| Error::format("<checkpoint bytes>", m))
}

/// Writes through a temporary file and a rename, so an existing checkpoint
/// at `path` is never left half-written.
pub fn write_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let bytes = encode_checkpoint(store);
    let tmp = path.with_extension("adnw.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}
