//! Frame = u32 big-endian payload length | u8 type | payload.
//! Payload integers and floats are big-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Upper bound on a payload, well above any model this crate builds.
pub const MAX_FRAME_LEN: u32 = 256 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameType {
    Hello = 0x01,
    Config = 0x02,
    GlobalWeights = 0x03,
    LocalUpdate = 0x04,
    Skip = 0x05,
    RoundAck = 0x06,
    Shutdown = 0x07,
    Error = 0x7F,
}

impl FrameType {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0x01 => Self::Hello,
            0x02 => Self::Config,
            0x03 => Self::GlobalWeights,
            0x04 => Self::LocalUpdate,
            0x05 => Self::Skip,
            0x06 => Self::RoundAck,
            0x07 => Self::Shutdown,
            0x7F => Self::Error,
            other => return Err(Error::Protocol(format!("unknown frame type 0x{other:02x}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireConfig {
    pub history: u32,
    pub horizon: u32,
    pub sigma: f64,
    pub epochs: u32,
    pub round: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Hello {
        client_id: String,
    },
    Config(WireConfig),
    /// `FPW1` blob holding only the shared layers.
    GlobalWeights(Vec<u8>),
    LocalUpdate {
        blob: Vec<u8>,
        sample_count: u64,
        train_loss: f64,
        test_r2: f64,
        test_mae: f64,
    },
    Skip {
        reason: String,
    },
    RoundAck,
    Shutdown,
    Error {
        message: String,
    },
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let bytes = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
}

impl Frame {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Frame::Hello { .. } => FrameType::Hello,
            Frame::Config(_) => FrameType::Config,
            Frame::GlobalWeights(_) => FrameType::GlobalWeights,
            Frame::LocalUpdate { .. } => FrameType::LocalUpdate,
            Frame::Skip { .. } => FrameType::Skip,
            Frame::RoundAck => FrameType::RoundAck,
            Frame::Shutdown => FrameType::Shutdown,
            Frame::Error { .. } => FrameType::Error,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Frame::Hello { client_id } => put_str(&mut p, client_id),
            Frame::Config(c) => {
                p.extend_from_slice(&c.history.to_be_bytes());
                p.extend_from_slice(&c.horizon.to_be_bytes());
                p.extend_from_slice(&c.sigma.to_be_bytes());
                p.extend_from_slice(&c.epochs.to_be_bytes());
                p.extend_from_slice(&c.round.to_be_bytes());
                p.extend_from_slice(&c.seed.to_be_bytes());
            }
            Frame::GlobalWeights(blob) => p.extend_from_slice(blob),
            Frame::LocalUpdate { blob, sample_count, train_loss, test_r2, test_mae } => {
                p.extend_from_slice(blob);
                p.extend_from_slice(&sample_count.to_be_bytes());
                p.extend_from_slice(&train_loss.to_be_bytes());
                p.extend_from_slice(&test_r2.to_be_bytes());
                p.extend_from_slice(&test_mae.to_be_bytes());
            }
            Frame::Skip { reason } => put_str(&mut p, reason),
            Frame::RoundAck | Frame::Shutdown => {}
            Frame::Error { message } => put_str(&mut p, message),
        }
        p
    }

    /// Full frame bytes including the header.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(payload.len() + 5);
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        out.push(self.frame_type() as u8);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(kind: FrameType, payload: &[u8]) -> Result<Frame> {
        let bad = |what: &str| Error::Protocol(format!("malformed {what} frame"));
        let get_str = |what: &str| -> Result<String> {
            if payload.len() < 2 {
                return Err(bad(what));
            }
            let n = u16::from_be_bytes([payload[0], payload[1]]) as usize;
            if payload.len() != 2 + n {
                return Err(bad(what));
            }
            String::from_utf8(payload[2..].to_vec()).map_err(|_| bad(what))
        };
        let be64 = |b: &[u8]| -> [u8; 8] { b.try_into().unwrap() };
        Ok(match kind {
            FrameType::Hello => Frame::Hello { client_id: get_str("HELLO")? },
            FrameType::Config => {
                if payload.len() != 32 {
                    return Err(bad("CONFIG"));
                }
                let u32_at = |i: usize| u32::from_be_bytes(payload[i..i + 4].try_into().unwrap());
                Frame::Config(WireConfig {
                    history: u32_at(0),
                    horizon: u32_at(4),
                    sigma: f64::from_be_bytes(be64(&payload[8..16])),
                    epochs: u32_at(16),
                    round: u32_at(20),
                    seed: u64::from_be_bytes(be64(&payload[24..32])),
                })
            }
            FrameType::GlobalWeights => Frame::GlobalWeights(payload.to_vec()),
            FrameType::LocalUpdate => {
                if payload.len() < 32 {
                    return Err(bad("LOCAL_UPDATE"));
                }
                let t = payload.len() - 32;
                Frame::LocalUpdate {
                    blob: payload[..t].to_vec(),
                    sample_count: u64::from_be_bytes(be64(&payload[t..t + 8])),
                    train_loss: f64::from_be_bytes(be64(&payload[t + 8..t + 16])),
                    test_r2: f64::from_be_bytes(be64(&payload[t + 16..t + 24])),
                    test_mae: f64::from_be_bytes(be64(&payload[t + 24..t + 32])),
                }
            }
            FrameType::Skip => Frame::Skip { reason: get_str("SKIP")? },
            FrameType::RoundAck | FrameType::Shutdown if !payload.is_empty() => return Err(bad("empty-bodied")),
            FrameType::RoundAck => Frame::RoundAck,
            FrameType::Shutdown => Frame::Shutdown,
            FrameType::Error => Frame::Error { message: get_str("ERROR")? },
        })
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<Vec<u8>> {
    let bytes = frame.encode();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes)
}

/// Reads one frame; also returns its raw bytes for logging.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(Frame, Vec<u8>)> {
    let mut header = [0u8; 5];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header[..4].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds the limit")));
    }
    let kind = FrameType::from_code(header[4])?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    let frame = Frame::decode(kind, &payload)?;
    let mut raw = header.to_vec();
    raw.extend_from_slice(&payload);
    Ok((frame, raw))
}
