use std::io::{Read, Write};
use std::net::{Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use socket2::SockRef;

use super::channel::{Channel, FrameSink, Incoming};
use super::frame::Frame;
use super::{ChannelConfig, TransportError};

pub const DEFAULT_PORT_BASE: u16 = 4256;
/// Ports 4256..=4511 by default: one per stream, base + stream index.
pub const PORT_RANGE: u16 = 256;
const HELLO: [u8; 4] = *b"TGH1";

/// Port base from `TREEGRID_PORT_BASE`, else the default.
pub fn default_port_base() -> u16 {
    std::env::var("TREEGRID_PORT_BASE")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_PORT_BASE)
}

fn port(base: u16, stream: usize) -> Result<u16, TransportError> {
    u16::try_from(base as usize + stream).map_err(|_| TransportError::Config(format!("port {base}+{stream} overflows")))
}

fn tune(s: &TcpStream, cfg: &ChannelConfig) -> Result<(), TransportError> {
    s.set_nodelay(true)?;
    let r = SockRef::from(s);
    r.set_send_buffer_size(cfg.buffer_bytes)?;
    r.set_recv_buffer_size(cfg.buffer_bytes)?;
    Ok(())
}

struct TcpSink(TcpStream);

impl FrameSink for TcpSink {
    fn send(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        self.0.write_all(&frame)?;
        Ok(())
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        let _ = self.0.shutdown(Shutdown::Write);
    }
}

fn assemble(streams: Vec<TcpStream>, cfg: &ChannelConfig) -> Result<Channel, TransportError> {
    let (tx, rx) = mpsc::channel();
    let mut sinks: Vec<Box<dyn FrameSink>> = Vec::with_capacity(streams.len());
    for (i, s) in streams.into_iter().enumerate() {
        let mut reader = s.try_clone()?;
        let tx = tx.clone();
        std::thread::Builder::new()
            .name(format!("tg-tcp-rx-{i}"))
            .spawn(move || loop {
                match Frame::read_raw(&mut reader) {
                    Ok(Some(f)) => {
                        if tx.send(Incoming::Frame(i, f)).is_err() {
                            return;
                        }
                    }
                    Ok(None) | Err(TransportError::Io(_)) => {
                        let _ = tx.send(Incoming::Closed);
                        return;
                    }
                    Err(e) => {
                        let _ = tx.send(Incoming::Failed(e));
                        return;
                    }
                }
            })?;
        sinks.push(Box::new(TcpSink(s)));
    }
    Ok(Channel::from_parts(cfg.clone(), sinks, rx, None))
}

/// Listening side: one port per stream.
pub struct TcpAcceptor {
    listeners: Vec<TcpListener>,
    config: ChannelConfig,
}

pub fn tcp_listen(bind: Ipv4Addr, port_base: u16, config: &ChannelConfig) -> Result<TcpAcceptor, TransportError> {
    config.validate()?;
    let mut listeners = Vec::with_capacity(config.n_streams);
    for i in 0..config.n_streams {
        let l = TcpListener::bind((bind, port(port_base, i)?))?;
        l.set_nonblocking(true)?;
        listeners.push(l);
    }
    Ok(TcpAcceptor { listeners, config: config.clone() })
}

impl TcpAcceptor {
    pub fn local_ports(&self) -> Vec<u16> {
        self.listeners.iter().filter_map(|l| l.local_addr().ok().map(|a| a.port())).collect()
    }

    /// Waits for every stream of one peer; all-or-nothing.
    pub fn accept(&self) -> Result<Channel, TransportError> {
        let deadline = Instant::now() + self.config.connect_timeout();
        let n = self.listeners.len();
        let mut streams = Vec::with_capacity(n);
        for (i, l) in self.listeners.iter().enumerate() {
            let s = loop {
                match l.accept() {
                    Ok((s, _)) => break s,
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        if Instant::now() >= deadline {
                            return Err(TransportError::PartialConnect {
                                connected: streams.len(),
                                requested: n,
                                reason: "accept timed out".into(),
                            });
                        }
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            s.set_nonblocking(false)?;
            s.set_read_timeout(Some(self.config.connect_timeout()))?;
            let mut hello = [0u8; 12];
            s.try_clone()?.read_exact(&mut hello)?;
            let idx = u32::from_le_bytes(hello[4..8].try_into().unwrap()) as usize;
            let count = u32::from_le_bytes(hello[8..12].try_into().unwrap()) as usize;
            if hello[0..4] != HELLO || idx != i || count != n {
                return Err(TransportError::BadFrame(format!("bad stream greeting on stream {i}")));
            }
            s.set_read_timeout(None)?;
            tune(&s, &self.config)?;
            streams.push(s);
        }
        assemble(streams, &self.config)
    }
}

/// Opens every stream to `host` at `port_base + i`, retrying refused
/// connections until the connect timeout. Partial success is rolled back.
pub fn tcp_connect(host: &str, port_base: u16, config: &ChannelConfig) -> Result<Channel, TransportError> {
    config.validate()?;
    let deadline = Instant::now() + config.connect_timeout();
    let n = config.n_streams;
    let mut streams = Vec::with_capacity(n);
    for i in 0..n {
        let addr: SocketAddr = (host, port(port_base, i)?)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| TransportError::Config(format!("cannot resolve {host}")))?;
        let s = loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::PartialConnect {
                    connected: streams.len(),
                    requested: n,
                    reason: format!("connect to {addr} timed out"),
                });
            }
            match TcpStream::connect_timeout(&addr, left) {
                Ok(s) => break s,
                Err(e) if e.kind() == std::io::ErrorKind::TimedOut => continue,
                Err(_) => std::thread::sleep(Duration::from_millis(10).min(left)),
            }
        };
        let mut hello = Vec::with_capacity(12);
        hello.extend_from_slice(&HELLO);
        hello.extend_from_slice(&(i as u32).to_le_bytes());
        hello.extend_from_slice(&(n as u32).to_le_bytes());
        (&s).write_all(&hello)?;
        tune(&s, config)?;
        streams.push(s);
    }
    assemble(streams, config)
}
