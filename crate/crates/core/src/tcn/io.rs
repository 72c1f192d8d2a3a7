//! Model files, little-endian throughout:
//!
//! ```text
//! magic "RESPTCN\0" | version u32
//! depth u32 | channels u32 | kernel u32 | input_channels u32 | classes u32
//! causal u8 | dropout f64 | dilation u32 x depth | rng_seed u64
//! flags u8 (bit0 rate, bit1 channel, bit2 gate) | rate f64 | channel u8 | gate f64
//! tensor count u32, then per tensor:
//!   name length u16 | name utf-8 | rank u8 | dim u32 x rank | value f64 x prod(dims)
//! ```

use std::fs;
use std::path::Path;

use super::{ModelInfo, TcnConfig, TcnModel, CLASSES};
use crate::audio::ChannelSel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RESPTCN\0";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Model(format!("file truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn channel_code(c: ChannelSel) -> u8 {
    match c {
        ChannelSel::C1 => 1,
        ChannelSel::C2 => 2,
        ChannelSel::Both => 3,
    }
}

pub fn encode(model: &TcnModel) -> Vec<u8> {
    let cfg = model.config();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(cfg.depth as u32);
    w.u32(cfg.channels as u32);
    w.u32(cfg.kernel_size as u32);
    w.u32(cfg.input_channels as u32);
    w.u32(CLASSES as u32);
    w.u8(u8::from(cfg.causal));
    w.f64(cfg.dropout);
    for &d in &cfg.dilations {
        w.u32(d as u32);
    }
    w.u64(model.rng_seed);
    let info = &model.info;
    let flags = u8::from(info.sample_rate.is_some())
        | u8::from(info.channel.is_some()) << 1
        | u8::from(info.gate_threshold.is_some()) << 2;
    w.u8(flags);
    w.f64(info.sample_rate.unwrap_or(0.0));
    w.u8(info.channel.map_or(0, channel_code));
    w.f64(info.gate_threshold.unwrap_or(0.0));
    let tensors: Vec<_> = model.tensors().collect();
    w.u32(tensors.len() as u32);
    for (name, shape, values) in tensors {
        w.u16(name.len() as u16);
        w.0.extend_from_slice(name.as_bytes());
        w.u8(shape.len() as u8);
        for &d in shape {
            w.u32(d as u32);
        }
        for &v in values {
            w.f64(v);
        }
    }
    w.0
}

pub fn decode(buf: &[u8]) -> Result<TcnModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Model(format!("unsupported model version {version}")));
    }
    let depth = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let kernel_size = r.u32()? as usize;
    let input_channels = r.u32()? as usize;
    let classes = r.u32()? as usize;
    if classes != CLASSES {
        return Err(Error::Model(format!("{classes} classes; expected {CLASSES}")));
    }
    if depth > 4096 {
        return Err(Error::Model(format!("implausible depth {depth}")));
    }
    let causal = r.u8()? != 0;
    let dropout = r.f64()?;
    let dilations = (0..depth).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let rng_seed = r.u64()?;
    let flags = r.u8()?;
    let rate = r.f64()?;
    let ch = r.u8()?;
    let gate = r.f64()?;
    let channel = match (flags & 2 != 0, ch) {
        (false, _) => None,
        (true, 1) => Some(ChannelSel::C1),
        (true, 2) => Some(ChannelSel::C2),
        (true, 3) => Some(ChannelSel::Both),
        (true, other) => return Err(Error::Model(format!("unknown channel code {other}"))),
    };
    let info = ModelInfo {
        sample_rate: (flags & 1 != 0).then_some(rate),
        channel,
        gate_threshold: (flags & 4 != 0).then_some(gate),
    };
    let config = TcnConfig {
        depth,
        channels,
        kernel_size,
        dilations,
        dropout,
        input_channels,
        causal,
    };
    config
        .validate()
        .map_err(|e| Error::Model(format!("invalid configuration: {e}")))?;
    let expected = super::Layout::new(&config);
    let count = r.u32()? as usize;
    if count != expected.tensors.len() {
        return Err(Error::Model(format!(
            "{count} tensors; configuration needs {}",
            expected.tensors.len()
        )));
    }
    let mut params = vec![0.0; expected.total];
    for spec in &expected.tensors {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Model("tensor name is not utf-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        if name != spec.name || shape != spec.shape {
            return Err(Error::Model(format!(
                "tensor {name} {shape:?} does not match expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        for p in &mut params[spec.range()] {
            *p = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Model(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    TcnModel::from_parts(config, params, rng_seed, info)
}

pub fn save_model(model: &TcnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TcnModel> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
