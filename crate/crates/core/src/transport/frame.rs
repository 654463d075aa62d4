use std::io::Read;

use super::TransportError;

pub const FRAME_MAGIC: [u8; 4] = *b"TGW1";
/// magic + msg_id + chunk_seq + n_chunks + payload_len + crc32
pub const FRAME_HEADER_LEN: usize = 4 + 8 + 4 + 4 + 4 + 4;
const MAX_PAYLOAD: usize = 64 << 20;

/// One chunk of a message on the wire, little-endian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_id: u64,
    pub chunk_seq: u32,
    pub n_chunks: u32,
    pub crc32: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_id: u64, chunk_seq: u32, n_chunks: u32, payload: Vec<u8>) -> Self {
        let crc32 = crc32fast::hash(&payload);
        Frame { msg_id, chunk_seq, n_chunks, crc32, payload }
    }

    pub fn checksum_ok(&self) -> bool {
        crc32fast::hash(&self.payload) == self.crc32
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_with_crc(self.msg_id, self.chunk_seq, self.n_chunks, self.crc32, &self.payload)
    }

    /// Wire bytes of a chunk without building an intermediate `Frame`.
    pub fn encode_chunk(msg_id: u64, chunk_seq: u32, n_chunks: u32, payload: &[u8]) -> Vec<u8> {
        encode_with_crc(msg_id, chunk_seq, n_chunks, crc32fast::hash(payload), payload)
    }

    /// Header fields of a complete frame plus the payload's offset in
    /// `bytes`; the payload itself is not copied.
    pub fn decode_header(bytes: &[u8]) -> Result<(Frame, std::ops::Range<usize>), TransportError> {
        let (header, payload) = parse_header(bytes)?;
        if bytes.len() != FRAME_HEADER_LEN + payload {
            return Err(TransportError::BadFrame(format!(
                "payload_len {payload} but {} bytes follow the header",
                bytes.len().saturating_sub(FRAME_HEADER_LEN)
            )));
        }
        Ok((header, FRAME_HEADER_LEN..bytes.len()))
    }

    /// Parses a complete frame. The checksum is not checked here so the
    /// caller can report which stream and chunk failed.
    pub fn decode(bytes: &[u8]) -> Result<Frame, TransportError> {
        let (header, range) = Frame::decode_header(bytes)?;
        Ok(Frame { payload: bytes[range].to_vec(), ..header })
    }

    /// Reads one frame's raw bytes from a byte stream. `Ok(None)` on a clean
    /// end of stream before any header byte.
    pub fn read_raw(r: &mut impl Read) -> Result<Option<Vec<u8>>, TransportError> {
        let mut head = vec![0u8; FRAME_HEADER_LEN];
        let mut got = 0;
        while got < FRAME_HEADER_LEN {
            match r.read(&mut head[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into()),
                Ok(k) => got += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (_, len) = parse_header(&head)?;
        head.resize(FRAME_HEADER_LEN + len, 0);
        r.read_exact(&mut head[FRAME_HEADER_LEN..])?;
        Ok(Some(head))
    }
}

fn encode_with_crc(msg_id: u64, chunk_seq: u32, n_chunks: u32, crc32: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&msg_id.to_le_bytes());
    out.extend_from_slice(&chunk_seq.to_le_bytes());
    out.extend_from_slice(&n_chunks.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn parse_header(bytes: &[u8]) -> Result<(Frame, usize), TransportError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(TransportError::BadFrame(format!("{} bytes is shorter than a header", bytes.len())));
    }
    if bytes[0..4] != FRAME_MAGIC {
        return Err(TransportError::BadFrame(format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let msg_id = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let (chunk_seq, n_chunks, len, crc32) = (u32_at(12), u32_at(16), u32_at(20) as usize, u32_at(24));
    if n_chunks == 0 || chunk_seq >= n_chunks {
        return Err(TransportError::BadFrame(format!("chunk {chunk_seq} of {n_chunks}")));
    }
    if len > MAX_PAYLOAD {
        return Err(TransportError::BadFrame(format!("payload_len {len} too large")));
    }
    Ok((Frame { msg_id, chunk_seq, n_chunks, crc32, payload: Vec::new() }, len))
}
