//! Framed binary packets between cockpit and robot.
//!
//! ```text
//! offset  size  field
//! 0       2     magic 0x48 0x4D
//! 2       1     version
//! 3       1     type (1 command, 2 state, 3 heartbeat)
//! 4       4     seq, u32 little-endian
//! 8       2     payload_len, u16 little-endian
//! 10      n     payload
//! 10+n    4     CRC-32 (IEEE) of bytes [0, 10+n), little-endian
//! ```
//!
//! Version 1 command/state payloads are 32 little-endian f32 values:
//! `[v_x, ω_yaw, h, arm × 14, hand × 14, reserved]`. Version 2 carries a
//! length-prefixed joint list for robots that do not fit that layout:
//! `v_x, ω_yaw, h` as f32, then `n_arm: u16`, `n_hand: u16`, then
//! `n_arm + n_hand` f32 targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x48, 0x4D];
pub const HEADER_LEN: usize = 10;
pub const CRC_LEN: usize = 4;
pub const PAYLOAD_FLOATS: usize = 32;
pub const PAYLOAD_LEN: usize = PAYLOAD_FLOATS * 4;
pub const ARM_SLOTS: usize = 14;
pub const HAND_SLOTS: usize = 14;
/// Encoded size of a version 1 command or state packet.
pub const PACKET_LEN: usize = HEADER_LEN + PAYLOAD_LEN + CRC_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown packet type {0}")]
    BadType(u8),
    #[error("bad length: {0}")]
    BadLength(String),
    #[error("CRC mismatch: computed {computed:08x}, stored {stored:08x}")]
    BadCrc { computed: u32, stored: u32 },
    #[error("truncated packet: {0} bytes")]
    Truncated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketType {
    Command = 1,
    State = 2,
    Heartbeat = 3,
}

impl PacketType {
    pub fn from_byte(b: u8) -> Result<Self, PacketError> {
        match b {
            1 => Ok(PacketType::Command),
            2 => Ok(PacketType::State),
            3 => Ok(PacketType::Heartbeat),
            other => Err(PacketError::BadType(other)),
        }
    }
}

/// Decoded payload of a command or state packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPayload {
    pub v_x: f32,
    pub omega_yaw: f32,
    pub h: f32,
    pub arm: Vec<f32>,
    pub hand: Vec<f32>,
    /// Version 1 only; zero otherwise.
    pub reserved: f32,
}

impl CommandPayload {
    pub fn zeros() -> Self {
        CommandPayload {
            v_x: 0.0,
            omega_yaw: 0.0,
            h: 0.0,
            arm: vec![0.0; ARM_SLOTS],
            hand: vec![0.0; HAND_SLOTS],
            reserved: 0.0,
        }
    }

    /// The 32 floats of the version 1 layout.
    pub fn to_floats(&self) -> Result<[f32; PAYLOAD_FLOATS], PacketError> {
        if self.arm.len() != ARM_SLOTS || self.hand.len() != HAND_SLOTS {
            return Err(PacketError::BadLength(format!(
                "version 1 needs {ARM_SLOTS} arm and {HAND_SLOTS} hand slots, got {} and {}",
                self.arm.len(),
                self.hand.len()
            )));
        }
        let mut out = [0f32; PAYLOAD_FLOATS];
        out[0] = self.v_x;
        out[1] = self.omega_yaw;
        out[2] = self.h;
        out[3..3 + ARM_SLOTS].copy_from_slice(&self.arm);
        out[3 + ARM_SLOTS..3 + ARM_SLOTS + HAND_SLOTS].copy_from_slice(&self.hand);
        out[PAYLOAD_FLOATS - 1] = self.reserved;
        Ok(out)
    }

    pub fn from_floats(f: &[f32; PAYLOAD_FLOATS]) -> Self {
        CommandPayload {
            v_x: f[0],
            omega_yaw: f[1],
            h: f[2],
            arm: f[3..3 + ARM_SLOTS].to_vec(),
            hand: f[3 + ARM_SLOTS..3 + ARM_SLOTS + HAND_SLOTS].to_vec(),
            reserved: f[PAYLOAD_FLOATS - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub version: u8,
    pub kind: PacketType,
    pub seq: u32,
    /// `None` for heartbeats.
    pub payload: Option<CommandPayload>,
}

impl Packet {
    pub fn command(seq: u32, payload: CommandPayload) -> Self {
        Packet {
            version: 1,
            kind: PacketType::Command,
            seq,
            payload: Some(payload),
        }
    }

    pub fn state(seq: u32, payload: CommandPayload) -> Self {
        Packet {
            version: 1,
            kind: PacketType::State,
            seq,
            payload: Some(payload),
        }
    }

    pub fn heartbeat(seq: u32) -> Self {
        Packet {
            version: 1,
            kind: PacketType::Heartbeat,
            seq,
            payload: None,
        }
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

fn payload_bytes(p: &Packet) -> Result<Vec<u8>, PacketError> {
    let payload = match (p.kind, &p.payload) {
        (PacketType::Heartbeat, None) => return Ok(Vec::new()),
        (PacketType::Heartbeat, Some(_)) => {
            return Err(PacketError::BadLength("heartbeat carries no payload".into()))
        }
        (_, None) => return Err(PacketError::BadLength("missing payload".into())),
        (_, Some(pl)) => pl,
    };
    match p.version {
        1 => Ok(payload.to_floats()?.iter().flat_map(|x| x.to_le_bytes()).collect()),
        2 => {
            let n_arm = u16::try_from(payload.arm.len())
                .map_err(|_| PacketError::BadLength("too many arm targets".into()))?;
            let n_hand = u16::try_from(payload.hand.len())
                .map_err(|_| PacketError::BadLength("too many hand targets".into()))?;
            let mut out = Vec::with_capacity(16 + 4 * (payload.arm.len() + payload.hand.len()));
            for x in [payload.v_x, payload.omega_yaw, payload.h] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&n_arm.to_le_bytes());
            out.extend_from_slice(&n_hand.to_le_bytes());
            for x in payload.arm.iter().chain(&payload.hand) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            Ok(out)
        }
        v => Err(PacketError::BadVersion(v)),
    }
}

pub fn encode(p: &Packet) -> Result<Vec<u8>, PacketError> {
    let payload = payload_bytes(p)?;
    let len = u16::try_from(payload.len()).map_err(|_| PacketError::BadLength("payload over 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(p.version);
    out.push(p.kind as u8);
    out.extend_from_slice(&p.seq.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Decodes one packet occupying the whole of `bytes`.
///
/// The CRC is checked before any header field, so corruption anywhere in the
/// frame reports as [`PacketError::BadCrc`].
pub fn decode(bytes: &[u8]) -> Result<Packet, PacketError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(PacketError::Truncated(bytes.len()));
    }
    let body = &bytes[..bytes.len() - CRC_LEN];
    let tail = &bytes[bytes.len() - CRC_LEN..];
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32(body);
    if stored != computed {
        return Err(PacketError::BadCrc { computed, stored });
    }
    if body[0..2] != MAGIC {
        return Err(PacketError::BadMagic([body[0], body[1]]));
    }
    let version = body[2];
    if version != 1 && version != 2 {
        return Err(PacketError::BadVersion(version));
    }
    let kind = PacketType::from_byte(body[3])?;
    let seq = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
    let declared = usize::from(u16::from_le_bytes([body[8], body[9]]));
    let payload = &body[HEADER_LEN..];
    if payload.len() != declared {
        return Err(PacketError::BadLength(format!(
            "header declares {declared} payload bytes, frame carries {}",
            payload.len()
        )));
    }
    let payload = match (kind, version) {
        (PacketType::Heartbeat, _) => {
            if declared != 0 {
                return Err(PacketError::BadLength(format!("heartbeat payload of {declared} bytes")));
            }
            None
        }
        (_, 1) => {
            if declared != PAYLOAD_LEN {
                return Err(PacketError::BadLength(format!(
                    "version 1 payload must be {PAYLOAD_LEN} bytes, got {declared}"
                )));
            }
            let mut f = [0f32; PAYLOAD_FLOATS];
            for (i, x) in f.iter_mut().enumerate() {
                *x = f32_at(payload, 4 * i);
            }
            Some(CommandPayload::from_floats(&f))
        }
        _ => {
            if declared < 16 {
                return Err(PacketError::BadLength(format!("version 2 payload of {declared} bytes")));
            }
            let n_arm = usize::from(u16::from_le_bytes([payload[12], payload[13]]));
            let n_hand = usize::from(u16::from_le_bytes([payload[14], payload[15]]));
            if declared != 16 + 4 * (n_arm + n_hand) {
                return Err(PacketError::BadLength(format!(
                    "version 2 lists {n_arm} + {n_hand} targets in {declared} bytes"
                )));
            }
            let floats: Vec<f32> = (0..n_arm + n_hand).map(|k| f32_at(payload, 16 + 4 * k)).collect();
            Some(CommandPayload {
                v_x: f32_at(payload, 0),
                omega_yaw: f32_at(payload, 4),
                h: f32_at(payload, 8),
                arm: floats[..n_arm].to_vec(),
                hand: floats[n_arm..].to_vec(),
                reserved: 0.0,
            })
        }
    };
    Ok(Packet {
        version,
        kind,
        seq,
        payload,
    })
}

/// Text mirror of a packet for browser clients: the same fields as the
/// binary frame, with the payload spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketJson {
    pub version: u8,
    #[serde(rename = "type")]
    pub kind: PacketType,
    pub seq: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<CommandPayload>,
}

impl From<&Packet> for PacketJson {
    fn from(p: &Packet) -> Self {
        PacketJson {
            version: p.version,
            kind: p.kind,
            seq: p.seq,
            payload: p.payload.clone(),
        }
    }
}

impl From<PacketJson> for Packet {
    fn from(p: PacketJson) -> Self {
        Packet {
            version: p.version,
            kind: p.kind,
            seq: p.seq,
            payload: p.payload,
        }
    }
}

/// Parses whitespace-separated hex, as written by `xxd -p` and similar.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, PacketError> {
    let digits: String = text.split_whitespace().collect();
    let digits = digits.strip_prefix("0x").unwrap_or(&digits);
    hex::decode(digits).map_err(|e| PacketError::BadLength(format!("hex: {e}")))
}
