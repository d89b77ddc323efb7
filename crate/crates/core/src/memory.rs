//! Explicit accounting of auxiliary (non-payload) memory per worker.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Current and peak auxiliary bytes held by one worker.
#[derive(Debug, Default)]
pub struct MemoryMeter {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl MemoryMeter {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn alloc(&self, bytes: usize) {
        let now = self.current.fetch_add(bytes, Ordering::AcqRel) + bytes;
        self.peak.fetch_max(now, Ordering::AcqRel);
    }

    pub fn free(&self, bytes: usize) {
        self.current.fetch_sub(bytes, Ordering::AcqRel);
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::Acquire)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::Acquire)
    }

    /// Restarts peak tracking from the current level.
    pub fn reset_peak(&self) {
        self.peak.store(self.current(), Ordering::Release);
    }

    /// Charges `bytes` until the returned guard drops.
    pub fn charge(self: &Arc<Self>, bytes: usize) -> Charge {
        self.alloc(bytes);
        Charge {
            meter: Some(Arc::clone(self)),
            bytes,
        }
    }
}

/// RAII share of a [`MemoryMeter`]. A detached charge tracks nothing.
#[derive(Debug)]
pub struct Charge {
    meter: Option<Arc<MemoryMeter>>,
    bytes: usize,
}

impl Charge {
    pub fn detached() -> Self {
        Self {
            meter: None,
            bytes: 0,
        }
    }

    /// Charges against `meter` if there is one.
    pub fn on(meter: Option<&Arc<MemoryMeter>>, bytes: usize) -> Self {
        match meter {
            Some(m) => m.charge(bytes),
            None => Self::detached(),
        }
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }
}

impl Drop for Charge {
    fn drop(&mut self) {
        if let Some(meter) = &self.meter {
            meter.free(self.bytes);
        }
    }
}

/// Byte size of `len` values of `T` as laid out in memory.
pub fn footprint<T>(len: usize) -> usize {
    len * std::mem::size_of::<T>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_survives_frees() {
        let meter = MemoryMeter::new();
        {
            let _a = meter.charge(100);
            let _b = meter.charge(50);
            assert_eq!(meter.current(), 150);
        }
        let _c = meter.charge(20);
        assert_eq!(meter.current(), 20);
        assert_eq!(meter.peak(), 150);
    }

    #[test]
    fn detached_charge_is_free() {
        let c = Charge::on(None, 1 << 20);
        assert_eq!(c.bytes(), 0);
    }
}
