//! Building blocks shared by the scheme engines.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of stream `stream` under run seed `seed`.
pub fn derive_stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Erasure generator for one packet (ARQ/HARQ) or one block (NC).
///
/// Every packet or block owns an independent ChaCha8 stream keyed by its
/// id, so loss patterns do not depend on how transmissions interleave.
pub fn unit_rng(stream_seed: u64, unit_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    rng.set_stream(unit_id);
    rng
}

/// Min-queue of events keyed by slot, FIFO among equal slots.
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<(u64, u64, usize)>>,
    payloads: Vec<Option<T>>,
    free: Vec<usize>,
    seq: u64,
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            payloads: Vec::new(),
            free: Vec::new(),
            seq: 0,
        }
    }

    pub fn push(&mut self, slot: u64, payload: T) {
        let idx = match self.free.pop() {
            Some(i) => {
                self.payloads[i] = Some(payload);
                i
            }
            None => {
                self.payloads.push(Some(payload));
                self.payloads.len() - 1
            }
        };
        self.heap.push(Reverse((slot, self.seq, idx)));
        self.seq += 1;
    }

    pub fn next_slot(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((slot, _, _))| *slot)
    }

    /// Pops the earliest event if it is due at `slot`.
    pub fn pop_due(&mut self, slot: u64) -> Option<T> {
        match self.heap.peek() {
            Some(Reverse((s, _, _))) if *s == slot => {
                let Reverse((_, _, idx)) = self.heap.pop().unwrap();
                self.free.push(idx);
                self.payloads[idx].take()
            }
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Transmitter lanes: how many transmissions may be on the air at once.
pub enum Lanes {
    Unlimited,
    Limited(Vec<u64>),
}

impl Lanes {
    /// `capacity == 0` means no air-interface limit.
    pub fn new(capacity: u32) -> Self {
        if capacity == 0 {
            Lanes::Unlimited
        } else {
            Lanes::Limited(vec![0; capacity as usize])
        }
    }

    /// Occupies a lane free at `slot` for `len` slots.
    pub fn acquire(&mut self, slot: u64, len: u64) -> bool {
        match self {
            Lanes::Unlimited => true,
            Lanes::Limited(free_at) => match free_at.iter_mut().find(|f| **f <= slot) {
                Some(f) => {
                    *f = slot + len;
                    true
                }
                None => false,
            },
        }
    }

    /// Earliest slot after `slot` at which a lane is free.
    pub fn next_free_after(&self, slot: u64) -> u64 {
        match self {
            Lanes::Unlimited => slot + 1,
            Lanes::Limited(free_at) => free_at.iter().copied().min().unwrap().max(slot + 1),
        }
    }
}

/// Tracks busy HARQ processes against the cap.
pub struct ProcessPool {
    cap: usize,
    busy: usize,
    peak: usize,
}

impl ProcessPool {
    pub fn new(cap: usize) -> Self {
        Self { cap, busy: 0, peak: 0 }
    }

    pub fn try_take(&mut self) -> bool {
        if self.busy < self.cap {
            self.busy += 1;
            self.peak = self.peak.max(self.busy);
            true
        } else {
            false
        }
    }

    pub fn release(&mut self) {
        assert!(self.busy > 0, "released an idle HARQ process");
        self.busy -= 1;
    }

    pub fn has_free(&self) -> bool {
        self.busy < self.cap
    }

    /// Cross-checks the pool against an independent count of processes
    /// holding data. Panics on violation.
    pub fn audit(&self, holding: usize) {
        assert_eq!(self.busy, holding, "HARQ process accounting diverged");
        assert!(
            holding <= self.cap,
            "{holding} HARQ processes waiting with cap {}",
            self.cap
        );
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}
