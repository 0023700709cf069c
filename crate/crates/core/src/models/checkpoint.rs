// Binary checkpoint layout (all integers u32 little-endian):
//
//   "WXPM" | version | spec_len | spec text (canonical key=value)
//   | entry_count | entries...
//
// entry: name_len | name bytes | rank | extents[rank] | f32 LE values
//
// Entries are trainable parameters in traversal order followed by the
// batch-norm running statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchitectureSpec, Model};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WXPM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::data(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::data(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::data(format!("{what} too large for checkpoint")))
}

pub fn write_checkpoint(model: &Model<f32>, w: &mut impl Write) -> Result<()> {
    let io = |e: std::io::Error| Error::data(format!("writing checkpoint: {e}"));
    let spec = model.spec().to_canonical_text();
    let named = model.named_tensors();
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    put_u32(w, CHECKPOINT_VERSION).map_err(io)?;
    put_u32(w, len_u32(spec.len(), "spec")?).map_err(io)?;
    w.write_all(spec.as_bytes()).map_err(io)?;
    put_u32(w, len_u32(named.len(), "entry count")?).map_err(io)?;
    for (name, t) in &named {
        put_u32(w, len_u32(name.len(), "name")?).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        put_u32(w, len_u32(t.rank(), "rank")?).map_err(io)?;
        for &e in t.shape() {
            put_u32(w, len_u32(e, "extent")?).map_err(io)?;
        }
        let mut bytes = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Model<f32>> {
    let magic = get_bytes(r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::data("not a model checkpoint (bad magic)"));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let spec_len = get_u32(r)? as usize;
    let spec_text = String::from_utf8(get_bytes(r, spec_len)?)
        .map_err(|_| Error::data("checkpoint spec is not UTF-8"))?;
    let spec = ArchitectureSpec::from_canonical_text(&spec_text)?;
    let count = get_u32(r)? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = get_u32(r)? as usize;
        let name = String::from_utf8(get_bytes(r, name_len)?)
            .map_err(|_| Error::data("checkpoint tensor name is not UTF-8"))?;
        let rank = get_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = get_bytes(r, n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        named.push((name, Tensor::from_vec(&shape, data)?));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::data(e.to_string()))? != 0 {
        return Err(Error::data("trailing bytes after checkpoint"));
    }
    let mut model = Model::build(spec, &mut Rng::new(0))?;
    model.load_named(named)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
