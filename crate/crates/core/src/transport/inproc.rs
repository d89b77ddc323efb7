use std::sync::Arc;

use crossbeam_channel::{bounded, unbounded};

use super::{DeliveryGate, Endpoint, Link, TransportConfig};

/// `p` endpoints joined by bounded in-memory queues, one per ordered pair.
pub fn inproc_cluster(p: usize, cfg: &TransportConfig) -> Vec<Endpoint> {
    let p = p.max(1);
    let delay = cfg.chaos.delay_delivery;
    let gate = delay.then(|| Arc::new(DeliveryGate::new(p)));
    let mut eps: Vec<Endpoint> = (0..p).map(|i| Endpoint::new(i, p, cfg)).collect();
    for s in 0..p {
        for d in 0..p {
            if s == d {
                continue;
            }
            // Held frames are released all at once, so the queues must not block.
            let (tx, rx) = if delay {
                unbounded()
            } else {
                bounded(cfg.queue_capacity.max(1))
            };
            eps[s].links[d] = Some(Link::Local(tx));
            eps[d].inbox[s] = Some(rx);
        }
    }
    for ep in &mut eps {
        ep.gate = gate.clone();
    }
    eps
}
