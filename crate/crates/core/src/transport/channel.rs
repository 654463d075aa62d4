use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::emu::EmuHook;
use super::frame::{Frame, FRAME_HEADER_LEN};
use super::pacer::TokenBucket;
use super::{ChannelConfig, TransportError};

/// Outgoing half of one stream.
pub(crate) trait FrameSink: Send {
    fn send(&mut self, frame: Vec<u8>) -> Result<(), TransportError>;
}

/// What the receive side of a stream reports.
pub(crate) enum Incoming {
    Frame(usize, Vec<u8>),
    Closed,
    Failed(TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendReport {
    pub bytes: usize,
    pub elapsed: Duration,
    pub throughput_bytes_per_s: f64,
}

struct Job {
    frame: Vec<u8>,
}

/// Chunks are kept as whole frames, header included.
struct Partial {
    chunks: Vec<Option<Vec<u8>>>,
    received: u32,
}

/// A bidirectional message channel over `n_streams` parallel streams.
/// One sender and one receiver may use it; messages arrive whole and in
/// the order they were sent.
pub struct Channel {
    config: ChannelConfig,
    jobs: Vec<Sender<Job>>,
    done: Receiver<Result<(), TransportError>>,
    workers: Vec<JoinHandle<()>>,
    incoming: Receiver<Incoming>,
    next_send_id: u64,
    next_recv_id: u64,
    round_robin: usize,
    pending: HashMap<u64, Partial>,
    closed: usize,
    hook: Option<Arc<EmuHook>>,
}

impl Channel {
    pub(crate) fn from_parts(
        config: ChannelConfig,
        sinks: Vec<Box<dyn FrameSink>>,
        incoming: Receiver<Incoming>,
        hook: Option<Arc<EmuHook>>,
    ) -> Channel {
        let aggregate = Arc::new(TokenBucket::new(config.aggregate_pace_bytes_per_s));
        let (done_tx, done) = mpsc::channel();
        let mut jobs = Vec::with_capacity(sinks.len());
        let mut workers = Vec::with_capacity(sinks.len());
        for (i, mut sink) in sinks.into_iter().enumerate() {
            let (tx, rx) = mpsc::channel::<Job>();
            let done_tx = done_tx.clone();
            let pacer = TokenBucket::new(config.pace_bytes_per_s);
            let aggregate = Arc::clone(&aggregate);
            let handle = std::thread::Builder::new()
                .name(format!("tg-stream-{i}"))
                .spawn(move || {
                    for job in rx {
                        let len = job.frame.len();
                        pacer.acquire(len);
                        aggregate.acquire(len);
                        let r = sink.send(job.frame);
                        if done_tx.send(r).is_err() {
                            break;
                        }
                    }
                })
                .expect("spawn stream thread");
            jobs.push(tx);
            workers.push(handle);
        }
        Channel {
            config,
            jobs,
            done,
            workers,
            incoming,
            next_send_id: 0,
            next_recv_id: 0,
            round_robin: 0,
            pending: HashMap::new(),
            closed: 0,
            hook,
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn n_streams(&self) -> usize {
        self.jobs.len()
    }

    /// Test hook of the emulated backend; `None` on real sockets.
    pub fn emu_hook(&self) -> Option<&EmuHook> {
        self.hook.as_deref()
    }

    /// Splits `bytes` into chunks, spreads them round-robin over the streams
    /// and returns once every chunk has been handed to its stream.
    pub fn send_message(&mut self, bytes: &[u8]) -> Result<SendReport, TransportError> {
        self.send_chunks(bytes, usize::MAX)
    }

    /// Sends only the first `max_chunks` chunks of a message, for exercising
    /// the receiver's truncation handling.
    #[doc(hidden)]
    pub fn send_partial(&mut self, bytes: &[u8], max_chunks: usize) -> Result<SendReport, TransportError> {
        self.send_chunks(bytes, max_chunks)
    }

    fn send_chunks(&mut self, bytes: &[u8], max_chunks: usize) -> Result<SendReport, TransportError> {
        let start = Instant::now();
        let chunk = self.config.chunk_bytes;
        let n_chunks = bytes.len().div_ceil(chunk).max(1);
        if n_chunks > u32::MAX as usize {
            return Err(TransportError::Config("message needs too many chunks".into()));
        }
        let msg_id = self.next_send_id;
        self.next_send_id += 1;
        let mut queued = 0;
        for seq in 0..n_chunks.min(max_chunks) {
            let part = &bytes[(seq * chunk).min(bytes.len())..((seq + 1) * chunk).min(bytes.len())];
            let frame = Frame::encode_chunk(msg_id, seq as u32, n_chunks as u32, part);
            let stream = self.round_robin % self.jobs.len();
            self.round_robin += 1;
            self.jobs[stream].send(Job { frame }).map_err(|_| TransportError::Closed)?;
            queued += 1;
        }
        let mut first_err = None;
        for _ in 0..queued {
            match self.done.recv() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(TransportError::Closed);
                    break;
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let elapsed = start.elapsed();
        let secs = elapsed.as_secs_f64().max(1e-9);
        Ok(SendReport { bytes: bytes.len(), elapsed, throughput_bytes_per_s: bytes.len() as f64 / secs })
    }

    /// Blocks until the next message in send order is complete.
    pub fn recv_message(&mut self) -> Result<Vec<u8>, TransportError> {
        let timeout = self.config.recv_timeout();
        loop {
            let id = self.next_recv_id;
            if self.pending.get(&id).is_some_and(|p| p.received as usize == p.chunks.len()) {
                let p = self.pending.remove(&id).unwrap();
                self.next_recv_id += 1;
                let total = p.chunks.iter().map(|c| c.as_ref().map_or(0, |f| f.len() - FRAME_HEADER_LEN)).sum();
                let mut out = Vec::with_capacity(total);
                for c in p.chunks.into_iter().flatten() {
                    out.extend_from_slice(&c[FRAME_HEADER_LEN..]);
                }
                return Ok(out);
            }
            if self.closed >= self.n_streams() {
                return Err(match self.pending.get(&id) {
                    Some(p) => TransportError::Truncated {
                        msg_id: id,
                        received: p.received,
                        expected: p.chunks.len() as u32,
                    },
                    None => TransportError::Closed,
                });
            }
            match self.incoming.recv_timeout(timeout) {
                Ok(Incoming::Frame(stream, bytes)) => self.accept_frame(stream, bytes)?,
                Ok(Incoming::Closed) => self.closed += 1,
                Ok(Incoming::Failed(e)) => return Err(e),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(TransportError::Timeout(format!("no data for message {id} within {timeout:?}")))
                }
                Err(RecvTimeoutError::Disconnected) => self.closed = self.n_streams(),
            }
        }
    }

    fn accept_frame(&mut self, stream: usize, bytes: Vec<u8>) -> Result<(), TransportError> {
        let (f, payload) = Frame::decode_header(&bytes)?;
        if crc32fast::hash(&bytes[payload]) != f.crc32 {
            return Err(TransportError::Integrity { stream, msg_id: f.msg_id, chunk: f.chunk_seq });
        }
        if f.msg_id < self.next_recv_id {
            return Err(TransportError::BadFrame(format!("message {} already delivered", f.msg_id)));
        }
        let p = self
            .pending
            .entry(f.msg_id)
            .or_insert_with(|| Partial { chunks: vec![None; f.n_chunks as usize], received: 0 });
        if p.chunks.len() != f.n_chunks as usize {
            return Err(TransportError::BadFrame(format!("message {} chunk count changed", f.msg_id)));
        }
        let slot = &mut p.chunks[f.chunk_seq as usize];
        if slot.is_some() {
            return Err(TransportError::BadFrame(format!("duplicate chunk {} of {}", f.chunk_seq, f.msg_id)));
        }
        *slot = Some(bytes);
        p.received += 1;
        Ok(())
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        self.jobs.clear();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
