use std::time::{Duration, Instant};

use super::{Channel, TransportError};

const PING: &[u8] = b"tg-ping!";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEstimate {
    pub rtt: Duration,
    pub throughput_bytes_per_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median round-trip time of a tiny echo and median one-way throughput of a
/// `probe_bytes` message (its acknowledged transfer time minus one RTT).
/// The peer must run `serve_probes` with the same repetition count.
pub fn measure_path(ch: &mut Channel, probe_bytes: usize, repetitions: usize) -> Result<PathEstimate, TransportError> {
    if repetitions == 0 {
        return Err(TransportError::Config("measure_path needs at least one repetition".into()));
    }
    let probe = vec![0x5au8; probe_bytes];
    let (mut rtts, mut rates) = (Vec::new(), Vec::new());
    for _ in 0..repetitions {
        let t = Instant::now();
        ch.send_message(PING)?;
        ch.recv_message()?;
        let rtt = t.elapsed().as_secs_f64();
        let t = Instant::now();
        ch.send_message(&probe)?;
        ch.recv_message()?;
        let transfer = (t.elapsed().as_secs_f64() - rtt).max(1e-9);
        rtts.push(rtt);
        rates.push(probe_bytes as f64 / transfer);
    }
    Ok(PathEstimate { rtt: Duration::from_secs_f64(median(rtts)), throughput_bytes_per_s: median(rates) })
}

/// Peer side of `measure_path`.
pub fn serve_probes(ch: &mut Channel, repetitions: usize) -> Result<(), TransportError> {
    for _ in 0..repetitions {
        let ping = ch.recv_message()?;
        ch.send_message(&ping)?;
        ch.recv_message()?;
        ch.send_message(PING)?;
    }
    Ok(())
}
