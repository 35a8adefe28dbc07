//! The `.wvcm` wire message.
//!
//! Field order, all little-endian:
//!
//! | bytes | field |
//! |------:|-------|
//! | 4 | magic `WVCM` |
//! | 2 | version (`1`) |
//! | 2 | agent id |
//! | 4 | frame id |
//! | 1 | DWT levels |
//! | 1 | dtype (`0` = f32, `1` = f16) |
//! | 2, 2, 2 | C, H, W of the LL band |
//! | 24 | pose, 6 x f32 (row-major 2x3 affine, sender -> ego) |
//! | C*H*W*(bits/8) | coefficients, channel-major, row-major |
//! | 4 | CRC-32 (IEEE) of header and payload |

use super::f16::{f16_decode, f16_encode};
use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

pub const MAGIC: &[u8; 4] = b"WVCM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 1 + 1 + 6 + 24;
pub const TRAILER_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WireDtype {
    F32 = 0,
    F16 = 1,
}

impl WireDtype {
    pub fn bits(self) -> u64 {
        match self {
            WireDtype::F32 => 32,
            WireDtype::F16 => 16,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(WireDtype::F32),
            1 => Ok(WireDtype::F16),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    /// Value as seen by the receiver after a trip through this dtype.
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            WireDtype::F32 => v as f32 as f64,
            WireDtype::F16 => f16_decode(f16_encode(v)),
        }
    }
}

impl std::str::FromStr for WireDtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f16" => Ok(WireDtype::F16),
            "f32" => Ok(WireDtype::F32),
            other => Err(Error::config(format!("dtype must be f16 or f32, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for WireDtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WireDtype::F32 => "f32",
            WireDtype::F16 => "f16",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MessageMeta {
    pub agent_id: u16,
    pub frame_id: u32,
    pub levels: u8,
    pub dtype: WireDtype,
    pub pose: [f32; 6],
}

/// Header fields plus the payload byte count, decoded without touching the payload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MessageHeader {
    pub meta: MessageMeta,
    pub channels: u16,
    pub height: u16,
    pub width: u16,
}

impl MessageHeader {
    pub fn payload_len(&self) -> usize {
        self.channels as usize * self.height as usize * self.width as usize * self.meta.dtype.bits() as usize / 8
    }

    pub fn total_len(&self) -> usize {
        HEADER_LEN + self.payload_len() + TRAILER_LEN
    }
}

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::shape(format!("{what} = {v} does not fit u16")))
}

pub fn pack_message(ll: &Tensor, meta: &MessageMeta) -> Result<Vec<u8>> {
    let (c, h, w) = ll.dims3()?;
    let (c, h, w) = (dim_u16(c, "channels")?, dim_u16(h, "height")?, dim_u16(w, "width")?);
    let header = MessageHeader { meta: *meta, channels: c, height: h, width: w };
    let mut out = Vec::with_capacity(header.total_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&meta.agent_id.to_le_bytes());
    out.extend_from_slice(&meta.frame_id.to_le_bytes());
    out.push(meta.levels);
    out.push(meta.dtype as u8);
    for d in [c, h, w] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for p in meta.pose {
        out.extend_from_slice(&p.to_le_bytes());
    }
    match meta.dtype {
        WireDtype::F32 => ll.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        WireDtype::F16 => ll.data().iter().for_each(|&v| out.extend_from_slice(&f16_encode(v).to_le_bytes())),
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn read_header(bytes: &[u8]) -> Result<MessageHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length { expected: HEADER_LEN + TRAILER_LEN, actual: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad message magic".into()));
    }
    let version = le_u16(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported message version {version}")));
    }
    let mut pose = [0f32; 6];
    for (i, p) in pose.iter_mut().enumerate() {
        *p = f32::from_le_bytes(bytes[20 + 4 * i..24 + 4 * i].try_into().unwrap());
    }
    Ok(MessageHeader {
        meta: MessageMeta {
            agent_id: le_u16(bytes, 6),
            frame_id: le_u32(bytes, 8),
            levels: bytes[12],
            dtype: WireDtype::from_code(bytes[13])?,
            pose,
        },
        channels: le_u16(bytes, 14),
        height: le_u16(bytes, 16),
        width: le_u16(bytes, 18),
    })
}

pub fn unpack_message(bytes: &[u8]) -> Result<(Tensor, MessageMeta)> {
    let header = read_header(bytes)?;
    let expected = header.total_len();
    if bytes.len() != expected {
        return Err(Error::Length { expected, actual: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..expected - TRAILER_LEN];
    let stored = le_u32(bytes, expected - TRAILER_LEN);
    let actual = crc32fast::hash(&bytes[..expected - TRAILER_LEN]);
    if stored != actual {
        return Err(Error::Corruption { expected: stored, actual });
    }
    let data: Vec<f64> = match header.meta.dtype {
        WireDtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        WireDtype::F16 => payload.chunks_exact(2).map(|b| f16_decode(u16::from_le_bytes([b[0], b[1]]))).collect(),
    };
    let shape = vec![header.channels as usize, header.height as usize, header.width as usize];
    Ok((Tensor::new(shape, data)?, header.meta))
}
