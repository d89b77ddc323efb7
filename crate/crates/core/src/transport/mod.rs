//! Message passing between workers.
//!
//! An [`Endpoint`] is one worker's view of the cluster: an outgoing link and
//! an incoming FIFO queue per peer. Both backends deliver into the same
//! per-source queues, so the collectives and the offset-addressed exchange
//! are written once on top of them.

mod exchange;
pub mod frame;
mod inproc;
mod tcp;

use std::io::{BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exchange::{ExchangeStats, SizeMatrix};
pub use frame::ExchangeHeader;
pub use inproc::inproc_cluster;
pub use tcp::{connect_mesh, tcp_loopback_cluster};

use crate::memory::{Charge, MemoryMeter};
use frame::FrameKind;

/// Worker 0 gathers samples and broadcasts splitters.
pub const MASTER: usize = 0;

const TAG_GATHER: u32 = 1;
const TAG_BROADCAST: u32 = 2;
const TAG_SIZES: u32 = 3;
const TAG_HELLO: u32 = 4;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("worker {worker} disconnected")]
    PeerGone { worker: usize },
    #[error("timed out after {after:?} waiting for worker(s) {waiting_for:?}")]
    Timeout {
        waiting_for: Vec<usize>,
        after: Duration,
    },
    #[error("protocol error on link from worker {worker}: {detail}")]
    Protocol { worker: usize, detail: String },
    #[error("exchange plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

impl TransportError {
    /// True for errors that are a consequence of some other worker failing.
    pub fn is_secondary(&self) -> bool {
        matches!(self, TransportError::PeerGone { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    InProc,
    Tcp,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "inproc" | "in-proc" | "local" => Ok(Backend::InProc),
            "tcp" => Ok(Backend::Tcp),
            other => Err(format!(
                "unknown backend `{other}` (expected inproc or tcp)"
            )),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::InProc => "inproc",
            Backend::Tcp => "tcp",
        })
    }
}

/// Test hooks for the in-process backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chaos {
    /// Randomizes destination order, frame sizes and pacing of sends.
    pub jitter_seed: Option<u64>,
    /// Holds every data frame until all workers have issued all their sends.
    pub delay_delivery: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub backend: Backend,
    /// Frames queued per (source, dest) link.
    pub queue_capacity: usize,
    /// Data frames a sender may have in flight at once.
    pub send_credits: usize,
    pub timeout: Duration,
    pub chaos: Chaos,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            backend: Backend::InProc,
            queue_capacity: 1,
            send_credits: 2,
            timeout: Duration::from_secs(120),
            chaos: Chaos::default(),
        }
    }
}

/// Builds `p` connected endpoints for a single-process cluster.
pub fn local_cluster(p: usize, cfg: &TransportConfig) -> Result<Vec<Endpoint>, TransportError> {
    match cfg.backend {
        Backend::InProc => Ok(inproc_cluster(p, cfg)),
        Backend::Tcp => tcp_loopback_cluster(p, cfg),
    }
}

/// Encoded bytes in flight, charged to a worker's meter and holding one send
/// credit until dropped.
#[derive(Debug)]
pub struct Staged {
    bytes: Vec<u8>,
    _charge: Charge,
    _credit: Option<Credit>,
}

impl Staged {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug)]
struct Credit(Sender<()>);

impl Drop for Credit {
    fn drop(&mut self) {
        let _ = self.0.try_send(());
    }
}

#[derive(Debug)]
pub enum Packet {
    Control {
        tag: u32,
        bytes: Vec<u8>,
    },
    Data {
        header: ExchangeHeader,
        payload: Staged,
    },
}

type Delivery = Result<Packet, TransportError>;

enum Link {
    Local(Sender<Delivery>),
    Tcp(BufWriter<TcpStream>),
}

impl Link {
    fn send(&mut self, me: usize, dest: usize, packet: Packet) -> Result<(), TransportError> {
        match self {
            Link::Local(tx) => tx
                .send(Ok(packet))
                .map_err(|_| TransportError::PeerGone { worker: dest }),
            Link::Tcp(w) => {
                let res = match &packet {
                    Packet::Control { tag, bytes } => frame::write_frame(
                        w,
                        FrameKind::Control,
                        &ExchangeHeader {
                            source: me as u32,
                            dest: dest as u32,
                            dest_offset: u64::from(*tag),
                            count: bytes.len() as u64,
                        },
                        bytes,
                    )
                    .and_then(|_| w.flush()),
                    Packet::Data { header, payload } => {
                        frame::write_frame(w, FrameKind::Data, header, payload.bytes())
                    }
                };
                res.map_err(|e| match e.kind() {
                    std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => {
                        TransportError::PeerGone { worker: dest }
                    }
                    _ => TransportError::Io(e),
                })
            }
        }
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        if let Link::Tcp(w) = self {
            w.flush()?;
        }
        Ok(())
    }
}

/// Releases held data frames once every worker has finished sending.
struct DeliveryGate {
    workers: usize,
    state: Mutex<GateState>,
}

struct GateState {
    arrived: usize,
    held: Vec<(Sender<Delivery>, Packet)>,
}

impl DeliveryGate {
    fn new(workers: usize) -> Self {
        Self {
            workers,
            state: Mutex::new(GateState {
                arrived: 0,
                held: Vec::new(),
            }),
        }
    }

    fn hold(&self, tx: Sender<Delivery>, packet: Packet) {
        self.state.lock().unwrap().held.push((tx, packet));
    }

    fn arrive(&self) {
        let mut st = self.state.lock().unwrap();
        st.arrived += 1;
        if st.arrived.is_multiple_of(self.workers) {
            for (tx, packet) in st.held.drain(..) {
                // Receiver gone means that worker already failed; it reports why.
                let _ = tx.send(Ok(packet));
            }
        }
    }
}

/// Collected payloads on the master, stored back to back in one buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gathered {
    pub buffer: Vec<u8>,
    /// `p + 1` byte offsets; source `i` is `buffer[offsets[i]..offsets[i + 1]]`.
    pub offsets: Vec<usize>,
}

impl Gathered {
    pub fn part(&self, source: usize) -> &[u8] {
        &self.buffer[self.offsets[source]..self.offsets[source + 1]]
    }

    pub fn sources(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// One worker's connection to the cluster.
pub struct Endpoint {
    id: usize,
    workers: usize,
    links: Vec<Option<Link>>,
    inbox: Vec<Option<Receiver<Delivery>>>,
    timeout: Duration,
    meter: Arc<MemoryMeter>,
    credits: Option<(Sender<()>, Receiver<()>)>,
    jitter: Option<ChaCha8Rng>,
    gate: Option<Arc<DeliveryGate>>,
    element_size: Arc<tcp::ElementSize>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("id", &self.id)
            .field("workers", &self.workers)
            .finish_non_exhaustive()
    }
}

impl Endpoint {
    fn new(id: usize, workers: usize, cfg: &TransportConfig) -> Self {
        let credits = (cfg.send_credits > 0 && !cfg.chaos.delay_delivery).then(|| {
            let (tx, rx) = crossbeam_channel::bounded(cfg.send_credits);
            for _ in 0..cfg.send_credits {
                tx.send(()).unwrap();
            }
            (tx, rx)
        });
        Self {
            id,
            workers,
            links: (0..workers).map(|_| None).collect(),
            inbox: (0..workers).map(|_| None).collect(),
            timeout: cfg.timeout,
            meter: MemoryMeter::new(),
            credits,
            jitter: cfg.chaos.jitter_seed.map(|seed| {
                ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            }),
            gate: None,
            element_size: Arc::new(tcp::ElementSize::default()),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_master(&self) -> bool {
        self.id == MASTER
    }

    /// Auxiliary memory charged by this worker, including staged frames.
    pub fn meter(&self) -> &Arc<MemoryMeter> {
        &self.meter
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn send_control(
        &mut self,
        dest: usize,
        tag: u32,
        bytes: Vec<u8>,
    ) -> Result<(), TransportError> {
        let link = self.links[dest].as_mut().expect("no link to self");
        link.send(self.id, dest, Packet::Control { tag, bytes })
    }

    fn recv_control(&mut self, source: usize, tag: u32) -> Result<Vec<u8>, TransportError> {
        let rx = self.inbox[source].as_ref().expect("no inbox from self");
        let packet = match rx.recv_timeout(self.timeout) {
            Ok(delivery) => delivery?,
            Err(RecvTimeoutError::Timeout) => {
                return Err(TransportError::Timeout {
                    waiting_for: vec![source],
                    after: self.timeout,
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(TransportError::PeerGone { worker: source })
            }
        };
        match packet {
            Packet::Control { tag: got, bytes } if got == tag => Ok(bytes),
            Packet::Control { tag: got, .. } => Err(TransportError::Protocol {
                worker: source,
                detail: format!("expected control tag {tag}, got {got}"),
            }),
            Packet::Data { .. } => Err(TransportError::Protocol {
                worker: source,
                detail: format!("expected control tag {tag}, got a data frame"),
            }),
        }
    }

    /// Every worker sends `payload` to the master. The master gets all `p`
    /// payloads, indexed by source, in one contiguous buffer; others get `None`.
    pub fn gather_to_master(&mut self, payload: &[u8]) -> Result<Option<Gathered>, TransportError> {
        if !self.is_master() {
            self.send_control(MASTER, TAG_GATHER, payload.to_vec())?;
            return Ok(None);
        }
        let mut parts = Vec::with_capacity(self.workers);
        for source in 0..self.workers {
            if source == self.id {
                parts.push(payload.to_vec());
            } else {
                parts.push(self.recv_control(source, TAG_GATHER)?);
            }
        }
        let total = parts.iter().map(Vec::len).sum();
        let mut buffer = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(self.workers + 1);
        offsets.push(0);
        for part in parts {
            buffer.extend_from_slice(&part);
            offsets.push(buffer.len());
        }
        Ok(Some(Gathered { buffer, offsets }))
    }

    /// The master's `payload` ends up on every worker; non-master arguments
    /// are ignored.
    pub fn broadcast_from_master(&mut self, payload: &[u8]) -> Result<Vec<u8>, TransportError> {
        if self.is_master() {
            for dest in 0..self.workers {
                if dest != self.id {
                    self.send_control(dest, TAG_BROADCAST, payload.to_vec())?;
                }
            }
            Ok(payload.to_vec())
        } else {
            self.recv_control(MASTER, TAG_BROADCAST)
        }
    }

    /// Shares every worker's outgoing counts with everyone, producing the full
    /// `p x p` size matrix. Also fixes the element size for the data frames
    /// of the following [`Endpoint::exchange`]; this must happen before any
    /// peer learns our row.
    pub fn exchange_sizes(
        &mut self,
        element_size: usize,
        row: &[usize],
    ) -> Result<SizeMatrix, TransportError> {
        if row.len() != self.workers {
            return Err(TransportError::PlanMismatch(format!(
                "row has {} entries for {} workers",
                row.len(),
                self.workers
            )));
        }
        self.element_size.set(element_size);
        let encoded: Vec<u8> = row.iter().flat_map(|&c| (c as u64).to_le_bytes()).collect();
        for dest in 0..self.workers {
            if dest != self.id {
                self.send_control(dest, TAG_SIZES, encoded.clone())?;
            }
        }
        let mut counts = vec![0usize; self.workers * self.workers];
        for source in 0..self.workers {
            let bytes = if source == self.id {
                encoded.clone()
            } else {
                self.recv_control(source, TAG_SIZES)?
            };
            if bytes.len() != 8 * self.workers {
                return Err(TransportError::Protocol {
                    worker: source,
                    detail: format!("size row of {} bytes", bytes.len()),
                });
            }
            for (dest, chunk) in bytes.chunks_exact(8).enumerate() {
                counts[source * self.workers + dest] =
                    u64::from_le_bytes(chunk.try_into().unwrap()) as usize;
            }
        }
        Ok(SizeMatrix::new(self.workers, counts))
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        for link in self.links.iter_mut().flatten() {
            if let Link::Tcp(w) = link {
                let _ = w.flush();
                let _ = w.get_ref().shutdown(Shutdown::Write);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn run_all<F, R>(endpoints: Vec<Endpoint>, f: F) -> Vec<R>
    where
        F: Fn(Endpoint) -> R + Sync,
        R: Send,
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = endpoints.into_iter().map(|ep| s.spawn(|| f(ep))).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    fn both_backends() -> [TransportConfig; 2] {
        [
            TransportConfig::default(),
            TransportConfig {
                backend: Backend::Tcp,
                ..Default::default()
            },
        ]
    }

    #[test]
    fn gather_single_worker() {
        let mut eps = local_cluster(1, &TransportConfig::default()).unwrap();
        let g = eps[0].gather_to_master(b"hi").unwrap().unwrap();
        assert_eq!(g.part(0), b"hi");
    }

    #[test]
    fn gather_identity_routing() {
        for cfg in both_backends() {
            let eps = local_cluster(4, &cfg).unwrap();
            let out = run_all(eps, |mut ep| ep.gather_to_master(&[ep.id() as u8]).unwrap());
            let g = out[0].clone().unwrap();
            assert_eq!(g.buffer, vec![0, 1, 2, 3]);
            assert_eq!(g.offsets, vec![0, 1, 2, 3, 4]);
            assert!(out[1..].iter().all(Option::is_none));
        }
    }

    #[test]
    fn gather_fills_one_master_buffer() {
        let eps = local_cluster(8, &TransportConfig::default()).unwrap();
        let out = run_all(eps, |mut ep| {
            ep.gather_to_master(&vec![ep.id() as u8; 32 * 1024])
                .unwrap()
        });
        let g = out[0].as_ref().unwrap();
        assert_eq!(g.buffer.len(), 256 * 1024);
        for i in 0..8 {
            assert!(g.part(i).iter().all(|&b| b == i as u8));
        }
    }

    #[test]
    fn broadcast_reaches_everyone() {
        for cfg in both_backends() {
            let eps = local_cluster(8, &cfg).unwrap();
            let splitters: Vec<u8> = crate::key::encode_all(&[1i64, 5, 9, 13, 17, 21, 25]);
            let out = run_all(eps, |mut ep| {
                let mine = if ep.is_master() {
                    splitters.clone()
                } else {
                    Vec::new()
                };
                ep.broadcast_from_master(&mine).unwrap()
            });
            assert!(out.iter().all(|b| *b == splitters));
        }
    }

    #[test]
    fn broadcast_random_payloads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let len = rng.random_range(0..512);
            let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let eps = local_cluster(16, &TransportConfig::default()).unwrap();
            let out = run_all(eps, |mut ep| {
                let mine = if ep.is_master() {
                    payload.clone()
                } else {
                    vec![0xAA]
                };
                ep.broadcast_from_master(&mine).unwrap()
            });
            assert!(out.iter().all(|b| *b == payload));
        }
    }

    #[test]
    fn size_matrix_is_shared() {
        for cfg in both_backends() {
            let eps = local_cluster(3, &cfg).unwrap();
            let out = run_all(eps, |mut ep| {
                let row: Vec<usize> = (0..3).map(|d| ep.id() * 10 + d).collect();
                ep.exchange_sizes(8, &row).unwrap()
            });
            for m in &out {
                assert_eq!(m, &out[0]);
                assert_eq!(m.get(2, 1), 21);
            }
        }
    }

    #[test]
    fn dead_peer_is_reported() {
        let mut eps = local_cluster(2, &TransportConfig::default()).unwrap();
        let gone = eps.pop().unwrap();
        drop(gone);
        match eps[0].gather_to_master(b"x") {
            Err(TransportError::PeerGone { worker: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn silent_peer_times_out() {
        let mut eps = local_cluster(2, &TransportConfig::default()).unwrap();
        eps[0].set_timeout(Duration::from_millis(50));
        match eps[0].gather_to_master(b"x") {
            Err(TransportError::Timeout { waiting_for, .. }) => assert_eq!(waiting_for, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
