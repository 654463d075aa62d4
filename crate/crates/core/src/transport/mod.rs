//! Wide-area message channel: many parallel streams per path, per-stream
//! pacing, chunk framing with checksums and in-order reassembly. The same
//! `Channel` runs over loopback/remote TCP or over an in-process network
//! emulator with latency, bandwidth and jitter.

mod channel;
mod emu;
mod frame;
mod pacer;
mod probe;
mod tcp;

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

pub use channel::{Channel, SendReport};
pub use emu::{EmuHook, EmuListener, EmuNetwork};
pub use frame::{Frame, FRAME_HEADER_LEN, FRAME_MAGIC};
pub use pacer::TokenBucket;
pub use probe::{measure_path, serve_probes, PathEstimate};
pub use tcp::{default_port_base, tcp_connect, tcp_listen, TcpAcceptor, DEFAULT_PORT_BASE, PORT_RANGE};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("only {connected} of {requested} streams connected: {reason}")]
    PartialConnect { connected: usize, requested: usize, reason: String },
    #[error("checksum mismatch on stream {stream}, message {msg_id}, chunk {chunk}")]
    Integrity { stream: usize, msg_id: u64, chunk: u32 },
    #[error("peer closed during message {msg_id}: {received} of {expected} chunks")]
    Truncated { msg_id: u64, received: u32, expected: u32 },
    #[error("channel closed")]
    Closed,
    #[error("malformed frame: {0}")]
    BadFrame(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-path stream settings.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub n_streams: usize,
    /// Socket buffer size; the emulator uses it as the per-stream window.
    pub buffer_bytes: usize,
    /// Per-stream pacing rate; 0 disables pacing.
    pub pace_bytes_per_s: u64,
    /// Optional cap on the sum over streams; 0 disables it.
    pub aggregate_pace_bytes_per_s: u64,
    pub connect_timeout_ms: u64,
    pub chunk_bytes: usize,
    /// How long `recv_message` waits for the next chunk.
    pub recv_timeout_ms: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_streams: 64,
            buffer_bytes: 786_432,
            pace_bytes_per_s: 10_000_000,
            aggregate_pace_bytes_per_s: 0,
            connect_timeout_ms: 5_000,
            chunk_bytes: 64 * 1024,
            recv_timeout_ms: 120_000,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if self.n_streams == 0 {
            return Err(TransportError::Config("n_streams must be at least 1".into()));
        }
        if self.chunk_bytes < 1024 {
            return Err(TransportError::Config(format!("chunk_bytes {} below 1 KiB", self.chunk_bytes)));
        }
        if self.chunk_bytes > u32::MAX as usize {
            return Err(TransportError::Config("chunk_bytes exceeds u32".into()));
        }
        if self.buffer_bytes == 0 {
            return Err(TransportError::Config("buffer_bytes must be positive".into()));
        }
        Ok(())
    }

    pub fn connect_timeout(&self) -> Duration {
        Duration::from_millis(self.connect_timeout_ms)
    }

    pub fn recv_timeout(&self) -> Duration {
        Duration::from_millis(self.recv_timeout_ms)
    }
}

/// Emulated path characteristics. The link is reliable: no loss.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct EmuNetConfig {
    pub one_way_latency_ms: f64,
    pub bandwidth_bytes_per_s: f64,
    /// Uniform extra delay in `[0, jitter_ms]` per frame.
    pub jitter_ms: f64,
    pub seed: u64,
}

impl Default for EmuNetConfig {
    fn default() -> Self {
        EmuNetConfig { one_way_latency_ms: 0.0, bandwidth_bytes_per_s: 125e6, jitter_ms: 0.0, seed: 0 }
    }
}

impl EmuNetConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.one_way_latency_ms >= 0.0) || !(self.jitter_ms >= 0.0) {
            return Err(TransportError::Config("latency and jitter must be non-negative".into()));
        }
        if !(self.bandwidth_bytes_per_s > 0.0) {
            return Err(TransportError::Config("bandwidth must be positive".into()));
        }
        Ok(())
    }
}
