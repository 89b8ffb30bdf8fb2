//! Binary checkpoints: `TSKP`, a format version, the architecture as JSON,
//! the network seed, every named parameter and the BNTT running statistics.
//! Integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::engine::{BnttStats, Tensor};
use crate::error::{io_err, Error, Result};
use crate::graph::{ArchSpec, Network};

const MAGIC: &[u8; 4] = b"TSKP";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(bad("truncated file"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.0.len() {
            return Err(bad("length field runs past the end of the file"));
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("bad length"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(serde_json::to_string(net.spec()).expect("spec serializes").as_bytes());
    w.u64(net.seed());
    w.u32(net.params().len() as u32);
    for p in net.params().iter() {
        w.bytes(p.name.as_bytes());
        w.u32(p.value.ndim() as u32);
        for &d in p.value.shape() {
            w.u64(d as u64);
        }
        w.floats(p.value.data());
    }
    w.u32(net.bntt_stats().len() as u32);
    for s in net.bntt_stats() {
        match s {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.steps() as u64);
                for (m, v) in s.mean.iter().zip(&s.var) {
                    w.floats(m);
                    w.floats(v);
                }
            }
        }
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let spec_json = String::from_utf8(r.bytes()?).map_err(|_| bad("spec is not UTF-8"))?;
    let spec = ArchSpec::from_json(&spec_json)?;
    let seed = r.u64()?;
    let mut net = Network::new(spec, seed)?;
    let n = r.u32()? as usize;
    if n != net.params().len() {
        return Err(bad(format!(
            "{n} parameters stored, architecture has {}",
            net.params().len()
        )));
    }
    for i in 0..n {
        let name = String::from_utf8(r.bytes()?).map_err(|_| bad("parameter name"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let data = r.floats()?;
        let slot = net.params_mut().get_mut(i);
        if slot.name != name || slot.value.shape() != shape.as_slice() {
            return Err(bad(format!(
                "parameter {i}: stored {name} {shape:?}, expected {} {:?}",
                slot.name,
                slot.value.shape()
            )));
        }
        slot.value = Tensor::new(shape, data)?;
    }
    let layers = r.u32()? as usize;
    if layers != net.bntt_stats().len() {
        return Err(bad("layer count mismatch in normalization statistics"));
    }
    for l in 0..layers {
        let present = r.u8()? == 1;
        let slot = &mut net.bntt_stats_mut()[l];
        match (present, slot) {
            (false, None) => {}
            (true, Some(stats)) => {
                let steps = r.u64()? as usize;
                let mut fresh = BnttStats::new(steps, 0);
                for t in 0..steps {
                    fresh.mean[t] = r.floats()?;
                    fresh.var[t] = r.floats()?;
                }
                if fresh.steps() != stats.steps() || fresh.mean[0].len() != stats.mean[0].len() {
                    return Err(bad(format!("layer {}: statistics shape mismatch", l + 1)));
                }
                *stats = fresh;
            }
            _ => return Err(bad(format!("layer {}: normalization mismatch", l + 1))),
        }
    }
    if !r.0.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(net)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&to_bytes(net)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Network> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(io_err(path))?;
    from_bytes(&buf)
}
