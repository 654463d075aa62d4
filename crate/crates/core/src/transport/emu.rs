use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::channel::{Channel, FrameSink, Incoming};
use super::{ChannelConfig, EmuNetConfig, TransportError};

/// Test hooks of an emulated channel's outgoing direction.
#[derive(Debug, Default)]
pub struct EmuHook {
    sent: AtomicU64,
    corrupt_at: Mutex<Option<u64>>,
}

impl EmuHook {
    /// Flips one payload bit of the `n`-th frame (0-based, counted from now).
    pub fn corrupt_nth_frame(&self, n: u64) {
        *self.corrupt_at.lock().unwrap() = Some(self.sent.load(Ordering::SeqCst) + n);
    }

    fn should_corrupt(&self) -> bool {
        let idx = self.sent.fetch_add(1, Ordering::SeqCst);
        let mut at = self.corrupt_at.lock().unwrap();
        if *at == Some(idx) {
            *at = None;
            return true;
        }
        false
    }
}

type Pending = Reverse<(Instant, u64, usize, Option<Vec<u8>>)>;

struct LinkState {
    free_at: Instant,
    rng: ChaCha8Rng,
    last_arrival: Vec<Instant>,
    in_flight: Vec<VecDeque<(Instant, usize)>>,
    queue: BinaryHeap<Pending>,
    seq: u64,
    open_sinks: usize,
}

/// One direction of an emulated path: a shared serialising link followed
/// by a fixed latency plus seeded jitter. Each stream may have at most
/// `window` unacknowledged bytes; acknowledgements return one latency after
/// arrival.
struct Link {
    latency: Duration,
    jitter_s: f64,
    bandwidth: f64,
    window: usize,
    state: Mutex<LinkState>,
    wake: Condvar,
    hook: Arc<EmuHook>,
}

impl Link {
    fn new(net: &EmuNetConfig, n_streams: usize, window: usize, seed: u64) -> Arc<Link> {
        let now = Instant::now();
        Arc::new(Link {
            latency: Duration::from_secs_f64(net.one_way_latency_ms / 1e3),
            jitter_s: net.jitter_ms / 1e3,
            bandwidth: net.bandwidth_bytes_per_s,
            window,
            state: Mutex::new(LinkState {
                free_at: now,
                rng: ChaCha8Rng::seed_from_u64(seed),
                last_arrival: vec![now; n_streams],
                in_flight: vec![VecDeque::new(); n_streams],
                queue: BinaryHeap::new(),
                seq: 0,
                open_sinks: n_streams,
            }),
            wake: Condvar::new(),
            hook: Arc::new(EmuHook::default()),
        })
    }

    fn deliver_loop(self: Arc<Self>, tx: Sender<Incoming>) {
        let mut st = self.state.lock().unwrap();
        loop {
            let Some(Reverse((at, _, _, _))) = st.queue.peek() else {
                if st.open_sinks == 0 {
                    return;
                }
                st = self.wake.wait(st).unwrap();
                continue;
            };
            let now = Instant::now();
            if *at > now {
                let wait = *at - now;
                st = self.wake.wait_timeout(st, wait).unwrap().0;
                continue;
            }
            let Reverse((_, _, stream, frame)) = st.queue.pop().unwrap();
            drop(st);
            let msg = match frame {
                Some(f) => Incoming::Frame(stream, f),
                None => Incoming::Closed,
            };
            // a dropped receiver just discards traffic
            let _ = tx.send(msg);
            st = self.state.lock().unwrap();
        }
    }
}

struct EmuSink {
    link: Arc<Link>,
    stream: usize,
}

impl FrameSink for EmuSink {
    fn send(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        let link = &self.link;
        let len = frame.len();
        let mut st = link.state.lock().unwrap();
        loop {
            let now = Instant::now();
            let q = &mut st.in_flight[self.stream];
            while q.front().is_some_and(|(ack, _)| *ack <= now) {
                q.pop_front();
            }
            let used: usize = q.iter().map(|(_, b)| b).sum();
            if used == 0 || used + len <= link.window {
                break;
            }
            let wait = q.front().unwrap().0 - now;
            drop(st);
            std::thread::sleep(wait);
            st = link.state.lock().unwrap();
        }
        let now = Instant::now();
        let start = st.free_at.max(now);
        let depart = start + Duration::from_secs_f64(len as f64 / link.bandwidth);
        st.free_at = depart;
        let jitter = if link.jitter_s > 0.0 { st.rng.gen_range(0.0..=link.jitter_s) } else { 0.0 };
        let arrive = (depart + link.latency + Duration::from_secs_f64(jitter)).max(st.last_arrival[self.stream]);
        st.last_arrival[self.stream] = arrive;
        st.in_flight[self.stream].push_back((arrive + link.latency, len));
        let mut bytes = frame;
        if link.hook.should_corrupt() {
            let last = bytes.len() - 1;
            bytes[last] ^= 0x01;
        }
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse((arrive, seq, self.stream, Some(bytes))));
        drop(st);
        link.wake.notify_all();
        let now = Instant::now();
        if depart > now {
            std::thread::sleep(depart - now);
        }
        Ok(())
    }
}

impl Drop for EmuSink {
    fn drop(&mut self) {
        let mut st = self.link.state.lock().unwrap();
        let at = st.last_arrival[self.stream].max(Instant::now());
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse((at, seq, self.stream, None)));
        st.open_sinks -= 1;
        drop(st);
        self.link.wake.notify_all();
    }
}

/// In-process network: named endpoints and emulated paths between them.
pub struct EmuNetwork {
    config: EmuNetConfig,
    links_made: AtomicU64,
    listeners: Mutex<HashMap<String, Sender<Channel>>>,
}

pub struct EmuListener {
    rx: Receiver<Channel>,
}

impl EmuListener {
    pub fn accept(&self, timeout: Duration) -> Result<Channel, TransportError> {
        self.rx
            .recv_timeout(timeout)
            .map_err(|_| TransportError::Timeout(format!("no emulated connection within {timeout:?}")))
    }
}

impl EmuNetwork {
    pub fn new(config: EmuNetConfig) -> Result<Arc<EmuNetwork>, TransportError> {
        config.validate()?;
        Ok(Arc::new(EmuNetwork { config, links_made: AtomicU64::new(0), listeners: Mutex::new(HashMap::new()) }))
    }

    pub fn config(&self) -> &EmuNetConfig {
        &self.config
    }

    /// Two connected channel ends.
    pub fn pair(&self, config: &ChannelConfig) -> Result<(Channel, Channel), TransportError> {
        config.validate()?;
        let (a, a_rx) = self.direction(config);
        let (b, b_rx) = self.direction(config);
        let ab_hook = Arc::clone(&a.hook);
        let ba_hook = Arc::clone(&b.hook);
        let sinks = |link: &Arc<Link>| -> Vec<Box<dyn FrameSink>> {
            (0..config.n_streams)
                .map(|s| Box::new(EmuSink { link: Arc::clone(link), stream: s }) as Box<dyn FrameSink>)
                .collect()
        };
        let left = Channel::from_parts(config.clone(), sinks(&a), b_rx, Some(ab_hook));
        let right = Channel::from_parts(config.clone(), sinks(&b), a_rx, Some(ba_hook));
        Ok((left, right))
    }

    fn direction(&self, config: &ChannelConfig) -> (Arc<Link>, Receiver<Incoming>) {
        let k = self.links_made.fetch_add(1, Ordering::SeqCst);
        let seed = self.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        let link = Link::new(&self.config, config.n_streams, config.buffer_bytes, seed);
        let (tx, rx) = mpsc::channel();
        let l = Arc::clone(&link);
        std::thread::Builder::new()
            .name("tg-emu-link".into())
            .spawn(move || l.deliver_loop(tx))
            .expect("spawn link thread");
        (link, rx)
    }

    pub fn listen(&self, name: &str) -> EmuListener {
        let (tx, rx) = mpsc::channel();
        self.listeners.lock().unwrap().insert(name.to_string(), tx);
        EmuListener { rx }
    }

    /// Connects to a listening endpoint; an unknown name fails after the
    /// configured connect timeout.
    pub fn connect(&self, name: &str, config: &ChannelConfig) -> Result<Channel, TransportError> {
        let deadline = Instant::now() + config.connect_timeout();
        loop {
            let target = self.listeners.lock().unwrap().get(name).cloned();
            if let Some(tx) = target {
                let (mine, theirs) = self.pair(config)?;
                tx.send(theirs).map_err(|_| TransportError::Closed)?;
                return Ok(mine);
            }
            if Instant::now() >= deadline {
                return Err(TransportError::Timeout(format!("no emulated endpoint {name:?}")));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}
