use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, Select, Sender};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    Credit, Delivery, DeliveryGate, Endpoint, ExchangeHeader, Link, Packet, Staged, TransportError,
};
use crate::key::{encode_all, Wire};
use crate::memory::MemoryMeter;

/// All-to-all element counts: `get(s, d)` is what worker `s` sends to `d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SizeMatrix {
    workers: usize,
    counts: Vec<usize>,
}

impl SizeMatrix {
    /// `counts` is row-major, `workers * workers` long.
    pub fn new(workers: usize, counts: Vec<usize>) -> Self {
        assert_eq!(
            counts.len(),
            workers * workers,
            "size matrix must be square"
        );
        Self { workers, counts }
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Self {
        let workers = rows.len();
        assert!(
            rows.iter().all(|r| r.len() == workers),
            "size matrix must be square"
        );
        Self::new(workers, rows.concat())
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn get(&self, source: usize, dest: usize) -> usize {
        self.counts[source * self.workers + dest]
    }

    pub fn row(&self, source: usize) -> &[usize] {
        &self.counts[source * self.workers..(source + 1) * self.workers]
    }

    /// Elements worker `dest` receives in total, its own share included.
    pub fn incoming(&self, dest: usize) -> usize {
        (0..self.workers).map(|s| self.get(s, dest)).sum()
    }

    /// Where data from `source` starts in `dest`'s landing region: the
    /// column prefix sum over lower-numbered sources.
    pub fn offset(&self, source: usize, dest: usize) -> usize {
        (0..source).map(|s| self.get(s, dest)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExchangeStats {
    pub frames_sent: usize,
    pub elements_sent: usize,
    pub bytes_sent: usize,
}

impl Endpoint {
    /// Sends `local[cuts[d]..cuts[d + 1]]` to every worker `d` and fills
    /// `landing` with what the others send here, each source at its offset
    /// from `sizes`. The local share is copied directly.
    ///
    /// Sending runs on a helper thread while this thread receives, so a
    /// full queue in one direction never blocks the other.
    pub fn exchange<T: Wire>(
        &mut self,
        sizes: &SizeMatrix,
        local: &[T],
        cuts: &[usize],
        landing: &mut [T],
        frame_bytes: usize,
    ) -> Result<ExchangeStats, TransportError> {
        let (me, p) = (self.id, self.workers);
        check_plan(me, p, sizes, local.len(), cuts, landing.len())?;

        let own = cuts[me]..cuts[me + 1];
        let at = sizes.offset(me, me);
        landing[at..at + own.len()].copy_from_slice(&local[own]);

        let per_frame = (frame_bytes / T::SIZE.max(1)).max(1);
        let Endpoint {
            links,
            inbox,
            timeout,
            meter,
            credits,
            jitter,
            gate,
            ..
        } = self;
        let timeout = *timeout;
        let out = Outgoing {
            me,
            links,
            meter,
            credits: credits.as_ref(),
            jitter: jitter.as_mut(),
            gate: gate.as_deref(),
            timeout,
        };
        std::thread::scope(|scope| {
            let sender = scope.spawn(move || out.send_all(sizes, local, cuts, per_frame));
            let received = receive_all(me, inbox, sizes, landing, timeout);
            let sent = sender.join().expect("exchange sender panicked");
            match (received, sent) {
                (Ok(()), sent) => sent,
                (Err(r), Err(s)) if r.is_secondary() && !s.is_secondary() => Err(s),
                (Err(r), _) => Err(r),
            }
        })
    }
}

fn check_plan(
    me: usize,
    p: usize,
    sizes: &SizeMatrix,
    local_len: usize,
    cuts: &[usize],
    landing_len: usize,
) -> Result<(), TransportError> {
    let fail = |msg: String| Err(TransportError::PlanMismatch(msg));
    if sizes.workers() != p {
        return fail(format!(
            "size matrix for {} workers, cluster has {p}",
            sizes.workers()
        ));
    }
    if cuts.len() != p + 1
        || cuts[0] != 0
        || cuts[p] != local_len
        || cuts.windows(2).any(|w| w[0] > w[1])
    {
        return fail(format!(
            "cuts {cuts:?} do not cover {local_len} local elements"
        ));
    }
    for d in 0..p {
        if cuts[d + 1] - cuts[d] != sizes.get(me, d) {
            return fail(format!(
                "range for worker {d} has {} elements, size matrix says {}",
                cuts[d + 1] - cuts[d],
                sizes.get(me, d)
            ));
        }
    }
    if landing_len != sizes.incoming(me) {
        return fail(format!(
            "landing region holds {landing_len}, expecting {}",
            sizes.incoming(me)
        ));
    }
    Ok(())
}

struct Outgoing<'a> {
    me: usize,
    links: &'a mut [Option<Link>],
    meter: &'a Arc<MemoryMeter>,
    credits: Option<&'a (Sender<()>, Receiver<()>)>,
    jitter: Option<&'a mut ChaCha8Rng>,
    gate: Option<&'a DeliveryGate>,
    timeout: Duration,
}

impl Outgoing<'_> {
    fn send_all<T: Wire>(
        mut self,
        sizes: &SizeMatrix,
        local: &[T],
        cuts: &[usize],
        per_frame: usize,
    ) -> Result<ExchangeStats, TransportError> {
        let result = self.send_frames(sizes, local, cuts, per_frame);
        // Arrive even after a failure so the gate does not strand the others.
        if let Some(gate) = self.gate {
            gate.arrive();
        }
        result
    }

    fn send_frames<T: Wire>(
        &mut self,
        sizes: &SizeMatrix,
        local: &[T],
        cuts: &[usize],
        per_frame: usize,
    ) -> Result<ExchangeStats, TransportError> {
        let p = self.links.len();
        let me = self.me;
        let mut order: Vec<usize> = (1..p).map(|k| (me + k) % p).collect();
        if let Some(rng) = self.jitter.as_deref_mut() {
            order.shuffle(rng);
        }
        let mut stats = ExchangeStats::default();
        for dest in order {
            let part = &local[cuts[dest]..cuts[dest + 1]];
            let base = sizes.offset(me, dest);
            let mut pos = 0;
            while pos < part.len() {
                let want = match self.jitter.as_deref_mut() {
                    Some(rng) => rng.random_range(1..=per_frame),
                    None => per_frame,
                };
                let take = want.min(part.len() - pos);
                let credit = self.take_credit(dest)?;
                let bytes = encode_all(&part[pos..pos + take]);
                stats.frames_sent += 1;
                stats.elements_sent += take;
                stats.bytes_sent += bytes.len();
                let payload = Staged {
                    _charge: self.meter.charge(bytes.len()),
                    bytes,
                    _credit: credit,
                };
                let header = ExchangeHeader {
                    source: me as u32,
                    dest: dest as u32,
                    dest_offset: (base + pos) as u64,
                    count: take as u64,
                };
                let packet = Packet::Data { header, payload };
                let link = self.links[dest].as_mut().expect("link to every peer");
                match (self.gate, &*link) {
                    (Some(gate), Link::Local(tx)) => gate.hold(tx.clone(), packet),
                    _ => link.send(me, dest, packet)?,
                }
                if let Some(rng) = self.jitter.as_deref_mut() {
                    random_pause(rng);
                }
                pos += take;
            }
        }
        for link in self.links.iter_mut().flatten() {
            link.flush()?;
        }
        Ok(stats)
    }

    fn take_credit(&self, dest: usize) -> Result<Option<Credit>, TransportError> {
        let Some((tx, rx)) = self.credits else {
            return Ok(None);
        };
        rx.recv_timeout(self.timeout)
            .map_err(|_| TransportError::Timeout {
                waiting_for: vec![dest],
                after: self.timeout,
            })?;
        Ok(Some(Credit(tx.clone())))
    }
}

fn random_pause(rng: &mut ChaCha8Rng) {
    match rng.random_range(0..8u8) {
        0 => std::thread::sleep(Duration::from_micros(rng.random_range(1..200))),
        1..=3 => std::thread::yield_now(),
        _ => {}
    }
}

fn receive_all<T: Wire>(
    me: usize,
    inbox: &[Option<Receiver<Delivery>>],
    sizes: &SizeMatrix,
    landing: &mut [T],
    timeout: Duration,
) -> Result<(), TransportError> {
    let p = inbox.len();
    let mut remaining: Vec<usize> = (0..p)
        .map(|s| if s == me { 0 } else { sizes.get(s, me) })
        .collect();
    let mut next: Vec<usize> = (0..p).map(|s| sizes.offset(s, me)).collect();
    loop {
        let pending: Vec<usize> = (0..p).filter(|&s| remaining[s] > 0).collect();
        if pending.is_empty() {
            return Ok(());
        }
        let mut sel = Select::new();
        for &s in &pending {
            sel.recv(inbox[s].as_ref().expect("inbox from every peer"));
        }
        let op = sel
            .select_timeout(timeout)
            .map_err(|_| TransportError::Timeout {
                waiting_for: pending.clone(),
                after: timeout,
            })?;
        let s = pending[op.index()];
        let delivery = op
            .recv(inbox[s].as_ref().unwrap())
            .map_err(|_| TransportError::PeerGone { worker: s })?;
        let protocol = |detail: String| TransportError::Protocol { worker: s, detail };
        let (header, payload) = match delivery? {
            Packet::Data { header, payload } => (header, payload),
            Packet::Control { tag, .. } => {
                return Err(protocol(format!("control tag {tag} during exchange")))
            }
        };
        let count = header.count as usize;
        if header.source as usize != s || header.dest as usize != me {
            return Err(protocol(format!(
                "frame routed {} -> {} arrived on link {s} -> {me}",
                header.source, header.dest
            )));
        }
        if header.dest_offset as usize != next[s] {
            return Err(protocol(format!(
                "frame at offset {}, expected {}",
                header.dest_offset, next[s]
            )));
        }
        if count == 0 || count > remaining[s] {
            return Err(protocol(format!(
                "frame of {count} elements, {} outstanding",
                remaining[s]
            )));
        }
        if payload.bytes().len() != count * T::SIZE {
            return Err(protocol(format!(
                "payload of {} bytes for {count} elements",
                payload.bytes().len()
            )));
        }
        let dst = &mut landing[next[s]..next[s] + count];
        for (slot, raw) in dst.iter_mut().zip(payload.bytes().chunks_exact(T::SIZE)) {
            *slot = T::decode(raw);
        }
        next[s] += count;
        remaining[s] -= count;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{local_cluster, Backend, Chaos, TransportConfig};
    use rand::SeedableRng;

    #[test]
    fn offsets_are_column_prefix_sums() {
        let m = SizeMatrix::from_rows(&[vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]);
        assert_eq!(m.offset(0, 1), 0);
        assert_eq!(m.offset(1, 1), 2);
        assert_eq!(m.offset(2, 1), 7);
        assert_eq!(m.incoming(1), 15);
        assert_eq!(m.row(2), &[7, 8, 9]);
        assert_eq!(m.total(), 45);
    }

    /// Single-threaded expected result: concatenation of every source's
    /// range for this receiver, in source order.
    fn expected(rows: &[Vec<u64>], cuts: &[Vec<usize>], dest: usize) -> Vec<u64> {
        rows.iter()
            .zip(cuts)
            .flat_map(|(r, c)| r[c[dest]..c[dest + 1]].iter().copied())
            .collect()
    }

    fn run_exchange(p: usize, cfg: &TransportConfig, seed: u64, frame_bytes: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u64>> = (0..p)
            .map(|s| {
                (0..rng.random_range(0..400))
                    .map(|i| ((s as u64) << 32) | i)
                    .collect()
            })
            .collect();
        let cuts: Vec<Vec<usize>> = rows
            .iter()
            .map(|r| {
                let mut c: Vec<usize> = (0..p - 1).map(|_| rng.random_range(0..=r.len())).collect();
                c.sort();
                let mut all = vec![0];
                all.extend(c);
                all.push(r.len());
                all
            })
            .collect();
        let eps = local_cluster(p, cfg).unwrap();
        let out: Vec<(Vec<u64>, Endpoint)> = std::thread::scope(|scope| {
            let handles: Vec<_> = eps
                .into_iter()
                .map(|mut ep| {
                    let (rows, cuts) = (&rows, &cuts);
                    scope.spawn(move || {
                        let me = ep.id();
                        let row: Vec<usize> = cuts[me].windows(2).map(|w| w[1] - w[0]).collect();
                        let sizes = ep.exchange_sizes(8, &row).unwrap();
                        let mut landing = vec![0u64; sizes.incoming(me)];
                        ep.exchange(&sizes, &rows[me], &cuts[me], &mut landing, frame_bytes)
                            .unwrap();
                        (landing, ep)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (d, (got, ep)) in out.iter().enumerate() {
            assert_eq!(got, &expected(&rows, &cuts, d), "worker {d}");
            assert_eq!(ep.meter().current(), 0, "staged frames released");
        }
    }

    #[test]
    fn matches_reference_shuffle() {
        for p in [1, 2, 5] {
            run_exchange(p, &TransportConfig::default(), p as u64, 64);
        }
    }

    #[test]
    fn over_tcp() {
        let cfg = TransportConfig {
            backend: Backend::Tcp,
            ..Default::default()
        };
        run_exchange(4, &cfg, 9, 40);
    }

    #[test]
    fn under_jitter_and_delay() {
        for seed in 0..20 {
            let cfg = TransportConfig {
                chaos: Chaos {
                    jitter_seed: Some(seed),
                    delay_delivery: seed % 2 == 0,
                },
                ..Default::default()
            };
            run_exchange(4, &cfg, 100 + seed, 48);
        }
    }

    #[test]
    fn rejects_wrong_landing_size() {
        let mut eps = local_cluster(1, &TransportConfig::default()).unwrap();
        let sizes = SizeMatrix::new(1, vec![2]);
        let mut landing = [0u64; 3];
        let err = eps[0].exchange(&sizes, &[1u64, 2], &[0, 2], &mut landing, 64);
        assert!(matches!(err, Err(TransportError::PlanMismatch(_))));
    }
}
