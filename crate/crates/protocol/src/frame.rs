//! Length-prefixed, checksummed frames.
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `XRL1`                            |
//! | 1     | message type                            |
//! | 4     | payload length, `u32` little-endian     |
//! | n     | payload                                 |
//! | 4     | CRC-32 over type, length and payload    |

use std::io::{self, Read, Write};

use crate::error::ProtocolError;

pub const MAGIC: [u8; 4] = *b"XRL1";
pub const HEADER_LEN: usize = 9;
pub const TRAILER_LEN: usize = 4;
/// Largest accepted payload; guards against hostile length fields.
pub const MAX_PAYLOAD: u32 = 64 << 20;

fn checksum(msg_type: u8, len: [u8; 4], payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&[msg_type]);
    h.update(&len);
    h.update(payload);
    h.finalize()
}

pub fn encode_frame(msg_type: u8, payload: &[u8]) -> Vec<u8> {
    assert!(payload.len() <= MAX_PAYLOAD as usize, "payload exceeds frame limit");
    let len = (payload.len() as u32).to_le_bytes();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(msg_type);
    out.extend_from_slice(&len);
    out.extend_from_slice(payload);
    out.extend_from_slice(&checksum(msg_type, len, payload).to_le_bytes());
    out
}

/// Parses one frame from the front of `bytes`; returns the message type, the
/// payload and the number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(u8, &[u8], usize), ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let msg_type = bytes[4];
    let len_bytes: [u8; 4] = bytes[5..9].try_into().unwrap();
    let len = u32::from_le_bytes(len_bytes);
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge(len));
    }
    let total = HEADER_LEN + len as usize + TRAILER_LEN;
    if bytes.len() < total {
        return Err(ProtocolError::Truncated {
            needed: total,
            have: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len as usize];
    let stored = u32::from_le_bytes(bytes[total - 4..total].try_into().unwrap());
    let computed = checksum(msg_type, len_bytes, payload);
    if stored != computed {
        return Err(ProtocolError::Checksum { stored, computed });
    }
    Ok((msg_type, payload, total))
}

/// Reads one frame. `Ok(None)` on a clean end of stream before the first
/// byte of a frame.
pub fn read_frame<R: Read + ?Sized>(reader: &mut R) -> Result<Option<(u8, Vec<u8>)>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(ProtocolError::Truncated {
                    needed: HEADER_LEN,
                    have: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let msg_type = header[4];
    let len_bytes: [u8; 4] = header[5..9].try_into().unwrap();
    let len = u32::from_le_bytes(len_bytes);
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge(len));
    }
    let mut rest = vec![0u8; len as usize + TRAILER_LEN];
    reader.read_exact(&mut rest).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated {
            needed: HEADER_LEN + rest.len(),
            have: HEADER_LEN,
        },
        _ => e.into(),
    })?;
    let stored = u32::from_le_bytes(rest[len as usize..].try_into().unwrap());
    rest.truncate(len as usize);
    let computed = checksum(msg_type, len_bytes, &rest);
    if stored != computed {
        return Err(ProtocolError::Checksum { stored, computed });
    }
    Ok(Some((msg_type, rest)))
}

pub fn write_frame<W: Write + ?Sized>(writer: &mut W, msg_type: u8, payload: &[u8]) -> io::Result<()> {
    writer.write_all(&encode_frame(msg_type, payload))?;
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_frame_is_thirteen_bytes() {
        let f = encode_frame(6, &[]);
        assert_eq!(f.len(), 13);
        assert_eq!(&f[..4], b"XRL1");
        assert_eq!(decode_frame(&f).unwrap(), (6, &[][..], 13));
    }

    #[test]
    fn corrupted_payload_is_checksum_error() {
        let mut f = encode_frame(2, b"payload");
        f[HEADER_LEN + 3] ^= 0x40;
        assert!(matches!(decode_frame(&f), Err(ProtocolError::Checksum { .. })));
        assert!(matches!(read_frame(&mut &f[..]), Err(ProtocolError::Checksum { .. })));
    }

    #[test]
    fn oversized_length_rejected_before_allocation() {
        let mut f = encode_frame(4, &[]);
        f[5..9].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_frame(&f), Err(ProtocolError::PayloadTooLarge(_))));
        assert!(matches!(read_frame(&mut &f[..]), Err(ProtocolError::PayloadTooLarge(_))));
    }

    #[test]
    fn truncation_and_magic() {
        let f = encode_frame(1, b"abc");
        assert!(matches!(decode_frame(&f[..f.len() - 1]), Err(ProtocolError::Truncated { .. })));
        assert!(matches!(read_frame(&mut &f[..f.len() - 1]), Err(ProtocolError::Truncated { .. })));
        let mut g = f.clone();
        g[0] = b'Y';
        assert!(matches!(decode_frame(&g), Err(ProtocolError::BadMagic(_))));
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
    }
}
