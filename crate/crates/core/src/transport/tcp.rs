use std::io::{BufReader, BufWriter, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Sender};

use super::frame::{self, ExchangeHeader, FrameKind};
use super::{Delivery, Endpoint, Link, Packet, Staged, TransportConfig, TransportError, TAG_HELLO};
use crate::memory::MemoryMeter;

const MAX_FRAME_BYTES: u64 = 1 << 31;
const IO_BUFFER: usize = 1 << 16;

/// Element size of the data frames of the current exchange, shared with the
/// reader threads. Zero until set.
#[derive(Debug, Default)]
pub(crate) struct ElementSize(AtomicUsize);

impl ElementSize {
    pub(crate) fn set(&self, bytes: usize) {
        self.0.store(bytes, Ordering::SeqCst);
    }

    fn get(&self) -> Option<usize> {
        match self.0.load(Ordering::SeqCst) {
            0 => None,
            n => Some(n),
        }
    }
}

/// Joins a full mesh as worker `id`. Worker `i` dials every lower-numbered
/// peer in `peers` and accepts connections from the higher-numbered ones on
/// `listener`.
pub fn connect_mesh(
    id: usize,
    listener: TcpListener,
    peers: &[SocketAddr],
    cfg: &TransportConfig,
) -> Result<Endpoint, TransportError> {
    let p = peers.len();
    if id >= p {
        return Err(TransportError::PlanMismatch(format!(
            "worker id {id} with {p} peers"
        )));
    }
    let mut ep = Endpoint::new(id, p, cfg);
    let deadline = Instant::now() + cfg.timeout;
    let mut streams: Vec<Option<TcpStream>> = (0..p).map(|_| None).collect();

    for (j, addr) in peers.iter().enumerate().take(id) {
        let stream = dial(*addr, deadline)?;
        let mut w = BufWriter::new(stream.try_clone()?);
        frame::write_frame(
            &mut w,
            FrameKind::Control,
            &ExchangeHeader {
                source: id as u32,
                dest: j as u32,
                dest_offset: u64::from(TAG_HELLO),
                count: 0,
            },
            &[],
        )?;
        w.into_inner().map_err(|e| e.into_error())?;
        streams[j] = Some(stream);
    }

    listener.set_nonblocking(true)?;
    let mut waiting = p - id - 1;
    while waiting > 0 {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(cfg.timeout))?;
                let source = read_hello(&stream, id, p)?;
                stream.set_read_timeout(None)?;
                if source <= id || streams[source].is_some() {
                    return Err(TransportError::Protocol {
                        worker: source,
                        detail: "unexpected or duplicate connection".into(),
                    });
                }
                streams[source] = Some(stream);
                waiting -= 1;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing = (id + 1..p).filter(|&j| streams[j].is_none()).collect();
                    return Err(TransportError::Timeout {
                        waiting_for: missing,
                        after: cfg.timeout,
                    });
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }

    for (peer, stream) in streams.into_iter().enumerate() {
        let Some(stream) = stream else { continue };
        stream.set_nodelay(true)?;
        let (tx, rx) = bounded(cfg.queue_capacity.max(1));
        let reader = stream.try_clone()?;
        let (element_size, meter) = (ep.element_size.clone(), ep.meter.clone());
        thread::Builder::new()
            .name(format!("lbsort-rx-{id}-{peer}"))
            .spawn(move || read_loop(reader, id, peer, tx, element_size, meter))?;
        ep.links[peer] = Some(Link::Tcp(BufWriter::with_capacity(IO_BUFFER, stream)));
        ep.inbox[peer] = Some(rx);
    }
    Ok(ep)
}

fn dial(addr: SocketAddr, deadline: Instant) -> Result<TcpStream, TransportError> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(_) if Instant::now() < deadline => {
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn read_hello(mut stream: &TcpStream, me: usize, p: usize) -> Result<usize, TransportError> {
    let bad = |detail: &str| TransportError::Protocol {
        worker: usize::MAX,
        detail: detail.into(),
    };
    match frame::read_header(&mut stream)? {
        Some((FrameKind::Control, h)) if h.dest_offset == u64::from(TAG_HELLO) && h.count == 0 => {
            if h.dest as usize != me || h.source as usize >= p {
                return Err(bad("hello addressed to the wrong worker"));
            }
            Ok(h.source as usize)
        }
        Some(_) => Err(bad("connection did not open with a hello frame")),
        None => Err(bad("connection closed before hello")),
    }
}

/// Turns one socket into a stream of packets on `tx`. Received data frames
/// are charged to the receiving worker's meter until consumed.
fn read_loop(
    stream: TcpStream,
    me: usize,
    peer: usize,
    tx: Sender<Delivery>,
    element_size: Arc<ElementSize>,
    meter: Arc<MemoryMeter>,
) {
    let mut r = BufReader::with_capacity(IO_BUFFER, stream);
    loop {
        let delivery = match read_packet(&mut r, me, peer, &element_size, &meter) {
            Ok(Some(packet)) => Ok(packet),
            // Clean EOF: dropping `tx` tells the consumer the peer is gone.
            Ok(None) => return,
            Err(e) => Err(e),
        };
        let failed = delivery.is_err();
        if tx.send(delivery).is_err() || failed {
            return;
        }
    }
}

fn read_packet<R: Read>(
    r: &mut R,
    me: usize,
    peer: usize,
    element_size: &ElementSize,
    meter: &Arc<MemoryMeter>,
) -> Result<Option<Packet>, TransportError> {
    let protocol = |detail: String| TransportError::Protocol {
        worker: peer,
        detail,
    };
    let (kind, header) = match frame::read_header(r) {
        Ok(Some(h)) => h,
        Ok(None) => return Ok(None),
        Err(e) if e.kind() == std::io::ErrorKind::ConnectionReset => return Ok(None),
        Err(e) => return Err(protocol(e.to_string())),
    };
    if header.source as usize != peer || header.dest as usize != me {
        return Err(protocol(format!(
            "frame routed {} -> {} on link {peer} -> {me}",
            header.source, header.dest
        )));
    }
    let len = match kind {
        FrameKind::Control => header.count,
        FrameKind::Data => {
            let es = element_size
                .get()
                .ok_or_else(|| protocol("data frame before the size exchange".into()))?;
            header.count.saturating_mul(es as u64)
        }
    };
    if len > MAX_FRAME_BYTES {
        return Err(protocol(format!("frame of {len} bytes")));
    }
    let charge = matches!(kind, FrameKind::Data).then(|| meter.charge(len as usize));
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes)
        .map_err(|e| protocol(e.to_string()))?;
    Ok(Some(match kind {
        FrameKind::Control => Packet::Control {
            tag: header.dest_offset as u32,
            bytes,
        },
        FrameKind::Data => Packet::Data {
            header,
            payload: Staged {
                bytes,
                _charge: charge.expect("data frames are charged"),
                _credit: None,
            },
        },
    }))
}

/// `p` workers meshed over loopback sockets within this process.
pub fn tcp_loopback_cluster(
    p: usize,
    cfg: &TransportConfig,
) -> Result<Vec<Endpoint>, TransportError> {
    let p = p.max(1);
    let listeners = (0..p)
        .map(|_| TcpListener::bind(("127.0.0.1", 0)))
        .collect::<Result<Vec<_>, _>>()?;
    let addrs = listeners
        .iter()
        .map(TcpListener::local_addr)
        .collect::<Result<Vec<_>, _>>()?;
    thread::scope(|scope| {
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let addrs = &addrs;
                scope.spawn(move || connect_mesh(i, l, addrs, cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("mesh setup panicked"))
            .collect()
    })
}
