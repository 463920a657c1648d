//! Binary checkpoint container: a JSON metadata string followed by named
//! network sections with their layer table and f32 little-endian weights.

use std::io::{Read, Write};
use std::path::Path;

use super::network::{Layer, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"EXPNET1";
const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug)]
pub struct Section {
    pub name: String,
    pub network: Network,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn encode_arch(shape: [usize; 3], layers: &[Layer]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in shape {
        out.extend((s as u32).to_le_bytes());
    }
    out.extend((layers.len() as u32).to_le_bytes());
    for layer in layers {
        let (tag, a, b) = match *layer {
            Layer::Conv { cin, cout } => (0u8, cin as u64, cout as u64),
            Layer::Dense { inputs, outputs } => (1, inputs as u64, outputs as u64),
            Layer::LeakyRelu => (2, 0, 0),
            Layer::Dropout { rate } => (3, rate.to_bits(), 0),
        };
        out.push(tag);
        out.extend(a.to_le_bytes());
        out.extend(b.to_le_bytes());
    }
    out
}

/// Architecture fingerprint; equal for networks that can share weights.
pub fn arch_hash(net: &Network) -> u64 {
    fnv1a(&encode_arch(net.input_shape(), net.layers()))
}

/// Writes `meta` and the sections to `path`.
pub fn save_sections(path: impl AsRef<Path>, meta: &str, sections: &[(&str, &Network)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend((meta.len() as u32).to_le_bytes());
    out.extend(meta.as_bytes());
    out.extend((sections.len() as u32).to_le_bytes());
    for (name, net) in sections {
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name.as_bytes());
        let arch = encode_arch(net.input_shape(), net.layers());
        out.extend(fnv1a(&arch).to_le_bytes());
        out.extend(net.seed().to_le_bytes());
        out.extend((arch.len() as u32).to_le_bytes());
        out.extend(&arch);
        out.extend((net.params().len() as u32).to_le_bytes());
        for p in net.params() {
            out.extend((p.len() as u32).to_le_bytes());
            for &v in p {
                out.extend((v as f32).to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_arch(bytes: &[u8]) -> Result<([usize; 3], Vec<Layer>)> {
    let mut c = Cursor { data: bytes, pos: 0 };
    let shape = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    let n = c.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let tag = c.u8()?;
        let a = c.u64()?;
        let b = c.u64()?;
        layers.push(match tag {
            0 => Layer::Conv { cin: a as usize, cout: b as usize },
            1 => Layer::Dense { inputs: a as usize, outputs: b as usize },
            2 => Layer::LeakyRelu,
            3 => Layer::Dropout { rate: f64::from_bits(a) },
            t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
        });
    }
    Ok((shape, layers))
}

/// Reads a checkpoint written by [`save_sections`].
pub fn load_sections(path: impl AsRef<Path>) -> Result<(String, Vec<Section>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { data: &bytes, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = c.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta = String::from_utf8(c.take(meta_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let count = c.u32()? as usize;
    let mut sections = Vec::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
        let hash = c.u64()?;
        let seed = c.u64()?;
        let arch_len = c.u32()? as usize;
        let arch = c.take(arch_len)?;
        if fnv1a(arch) != hash {
            return Err(Error::Checkpoint(format!("architecture hash mismatch in section {name:?}")));
        }
        let (shape, layers) = decode_arch(arch)?;
        let mut net = Network::zeroed(shape, layers, seed)
            .map_err(|e| Error::Checkpoint(format!("section {name:?}: {e}")))?;
        let tensors = c.u32()? as usize;
        if tensors != net.params().len() {
            return Err(Error::Checkpoint(format!("section {name:?}: wrong tensor count")));
        }
        let params = net.params_mut();
        for p in params.iter_mut() {
            let len = c.u32()? as usize;
            if len != p.len() {
                return Err(Error::Checkpoint(format!("section {name:?}: wrong tensor size")));
            }
            let raw = c.take(4 * len)?;
            for (v, b) in p.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
        }
        sections.push(Section { name, network: net });
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((meta, sections))
}
