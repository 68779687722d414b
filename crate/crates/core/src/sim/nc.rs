//! Block network coding engines.
//!
//! Blocks take `K` packets from the source and are sent as `N` coded
//! packets: the `K` originals (systematic) followed by `N - K` parity
//! packets. Any `K` received packets decode the block, so only counts of
//! degrees of freedom are tracked, never coefficients. When a round ends
//! short of `K`, exactly the missing number of repair packets is sent. The
//! last block may be shorter than `K` and keeps the same redundancy.
//!
//! * [`run_nc_block`] keeps standard per-TB HARQ signalling: every coded
//!   packet holds a HARQ process until its own ACK/NACK. An original that
//!   arrives intact completes with its own ACK; a lost one completes when
//!   the block decodes.
//! * [`run_nc_hijack`] hands a whole block to one HARQ process, which sends
//!   the coded packets back to back and waits for a single block ACK/NACK
//!   carrying the missing degrees of freedom. All originals of the block
//!   complete together.
//! * [`run_nc_multistream`] deals packets round-robin to independent
//!   hijack streams, each with its own HARQ processes and transmitter.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use super::engine::{derive_stream_seed, unit_rng, EventQueue, Lanes, ProcessPool};
use super::{ServiceRecord, SimConfig, SimResult, SimScheme};
use crate::analytic::NcCode;
use crate::channel::{sample_erasure, BlerTable};
use crate::error::Result;

struct Block {
    k: u32,
    n: u32,
    /// Global id of original `j` is `ids(j)`; see [`Source`].
    first_local: u64,
    first_tx: Vec<u64>,
    acked: Vec<bool>,
    received: u32,
    /// Coded packets of the current round not yet fed back.
    outstanding: u32,
    /// Coded packets handed to the transmitter so far.
    sent: u32,
    rounds: u32,
    decoded: bool,
    rng: ChaCha8Rng,
}

impl Block {
    fn draw(&mut self, p: f64) -> bool {
        sample_erasure(&mut self.rng, p).expect("validated probability")
    }
}

/// Packet source of one stream: local index `i` is global id
/// `i * stride + offset`.
#[derive(Clone, Copy)]
struct Source {
    count: u64,
    stride: u64,
    offset: u64,
}

impl Source {
    fn global(&self, local: u64) -> u64 {
        local * self.stride + self.offset
    }
}

struct Outcome {
    records: Vec<ServiceRecord>,
    failed: Vec<u64>,
    last_slot: u64,
    peak: usize,
}

fn new_block(
    next_local: &mut u64,
    source: &Source,
    code: NcCode,
    stream_seed: u64,
    block_id: u64,
) -> Block {
    let k = code.k.min((source.count - *next_local) as u32);
    let n = k + code.redundancy();
    let block = Block {
        k,
        n,
        first_local: *next_local,
        first_tx: vec![0; k as usize],
        acked: vec![false; k as usize],
        received: 0,
        outstanding: n,
        sent: 0,
        rounds: 0,
        decoded: false,
        rng: unit_rng(stream_seed, block_id),
    };
    *next_local += k as u64;
    block
}

pub fn run_nc_block(config: &SimConfig, channel: &BlerTable) -> Result<SimResult> {
    config.expect_scheme(SimScheme::NcBlock)?;
    let p = channel.bler_lookup(config.mcs, config.snr_db)?;
    let source = Source { count: config.num_packets, stride: 1, offset: 0 };
    let out = per_tb_blocks(config, p, source, 0);
    Ok(SimResult::build(out.records, out.failed, out.last_slot, out.peak))
}

struct TbFeedback {
    block: usize,
    coded_index: u32,
    erased: bool,
}

fn per_tb_blocks(config: &SimConfig, p: f64, source: Source, stream: u64) -> Outcome {
    let code = config.code.expect("validated");
    let stream_seed = derive_stream_seed(config.seed, stream);
    let (rtt, tau) = (config.rtt_slots, config.tau_slots);
    let mut pool = ProcessPool::new(config.num_harq_processes);
    let mut lanes = Lanes::new(config.tx_capacity);
    let mut events: EventQueue<TbFeedback> = EventQueue::new();
    let mut blocks: Vec<Block> = Vec::new();
    // Block index of each queued repair packet.
    let mut repairs: VecDeque<usize> = VecDeque::new();
    let mut current: Option<usize> = None;
    let mut next_local = 0u64;
    let mut records = Vec::with_capacity(source.count as usize);
    let mut failed = Vec::new();
    let mut last_slot = 0u64;
    let mut t = 0u64;

    let complete = |records: &mut Vec<ServiceRecord>, b: &mut Block, j: usize, slot: u64| {
        b.acked[j] = true;
        records.push(ServiceRecord {
            packet_id: source.global(b.first_local + j as u64),
            first_tx_slot: b.first_tx[j],
            completion_slot: slot,
            attempts: 1 + b.rounds,
        });
    };

    loop {
        while let Some(fb) = events.pop_due(t) {
            last_slot = t;
            pool.release();
            let b = &mut blocks[fb.block];
            b.outstanding -= 1;
            if !fb.erased && !b.decoded {
                b.received += 1;
                if fb.coded_index < b.k {
                    complete(&mut records, b, fb.coded_index as usize, t);
                }
                if b.received == b.k {
                    b.decoded = true;
                    for j in 0..b.k as usize {
                        if !b.acked[j] {
                            complete(&mut records, b, j, t);
                        }
                    }
                }
            }
            if b.outstanding == 0 && b.sent >= b.n && !b.decoded {
                if b.rounds < config.max_retx {
                    b.rounds += 1;
                    let missing = b.k - b.received;
                    b.outstanding = missing;
                    repairs.extend(std::iter::repeat(fb.block).take(missing as usize));
                } else {
                    for j in 0..b.k as usize {
                        if !b.acked[j] {
                            failed.push(source.global(b.first_local + j as u64));
                        }
                    }
                    b.decoded = true;
                }
            }
        }

        loop {
            // Drop the rest of a block that decoded before it was fully sent.
            if let Some(c) = current {
                let b = &mut blocks[c];
                if b.decoded || b.sent >= b.n {
                    if b.sent < b.n {
                        b.outstanding -= b.n - b.sent;
                        b.sent = b.n;
                    }
                    current = None;
                }
            }
            let has_work =
                !repairs.is_empty() || current.is_some() || next_local < source.count;
            if !has_work || !pool.has_free() || !lanes.acquire(t, tau) {
                break;
            }
            let block_idx = match repairs.pop_front() {
                Some(b) => b,
                None => match current {
                    Some(c) => c,
                    None => {
                        let id = blocks.len() as u64;
                        blocks.push(new_block(&mut next_local, &source, code, stream_seed, id));
                        current = Some(blocks.len() - 1);
                        blocks.len() - 1
                    }
                },
            };
            pool.try_take();
            let b = &mut blocks[block_idx];
            let coded_index = b.sent;
            b.sent += 1;
            if coded_index < b.k {
                b.first_tx[coded_index as usize] = t;
            }
            let erased = b.draw(p);
            events.push(
                t + tau - 1 + rtt,
                TbFeedback { block: block_idx, coded_index, erased },
            );
            pool.audit(events.len());
        }

        let has_work = !repairs.is_empty() || current.is_some() || next_local < source.count;
        let ready = (has_work && pool.has_free()).then(|| lanes.next_free_after(t));
        t = match (events.next_slot(), ready) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => break,
        };
    }

    Outcome { records, failed, last_slot, peak: pool.peak() }
}

pub fn run_nc_hijack(config: &SimConfig, channel: &BlerTable) -> Result<SimResult> {
    config.expect_scheme(SimScheme::NcHijack)?;
    let p = channel.bler_lookup(config.mcs, config.snr_db)?;
    let source = Source { count: config.num_packets, stride: 1, offset: 0 };
    let out = hijack(config, p, source, 0);
    Ok(SimResult::build(out.records, out.failed, out.last_slot, out.peak))
}

pub fn run_nc_multistream(config: &SimConfig, channel: &BlerTable) -> Result<SimResult> {
    config.expect_scheme(SimScheme::NcMultistream)?;
    let p = channel.bler_lookup(config.mcs, config.snr_db)?;
    let streams = config.num_streams as u64;
    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut last_slot = 0;
    let mut peak = 0;
    for s in 0..streams {
        let count = config.num_packets / streams + u64::from(s < config.num_packets % streams);
        if count == 0 {
            continue;
        }
        let out = hijack(config, p, Source { count, stride: streams, offset: s }, s);
        records.extend(out.records);
        failed.extend(out.failed);
        last_slot = last_slot.max(out.last_slot);
        peak = peak.max(out.peak);
    }
    Ok(SimResult::build(records, failed, last_slot, peak))
}

/// A burst of coded packets sent back to back by the process owning
/// `block`.
struct BlockFeedback {
    block: usize,
}

fn hijack(config: &SimConfig, p: f64, source: Source, stream: u64) -> Outcome {
    let code = config.code.expect("validated");
    let stream_seed = derive_stream_seed(config.seed, stream);
    let (rtt, tau) = (config.rtt_slots, config.tau_slots);
    let mut pool = ProcessPool::new(config.num_harq_processes);
    let mut lanes = Lanes::new(config.tx_capacity);
    let mut events: EventQueue<BlockFeedback> = EventQueue::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut repairs: VecDeque<usize> = VecDeque::new();
    let mut active = 0usize;
    let mut next_local = 0u64;
    let mut records = Vec::with_capacity(source.count as usize);
    let mut failed = Vec::new();
    let mut last_slot = 0u64;
    let mut t = 0u64;

    loop {
        while let Some(BlockFeedback { block }) = events.pop_due(t) {
            last_slot = t;
            let b = &mut blocks[block];
            if b.received >= b.k {
                for j in 0..b.k as usize {
                    records.push(ServiceRecord {
                        packet_id: source.global(b.first_local + j as u64),
                        first_tx_slot: b.first_tx[j],
                        completion_slot: t,
                        attempts: 1 + b.rounds,
                    });
                }
                b.decoded = true;
                active -= 1;
                pool.release();
            } else if b.rounds < config.max_retx {
                b.rounds += 1;
                b.outstanding = b.k - b.received;
                repairs.push_back(block);
            } else {
                failed.extend((0..b.k as u64).map(|j| source.global(b.first_local + j)));
                active -= 1;
                pool.release();
            }
        }

        loop {
            let block_idx = if let Some(&b) = repairs.front() {
                if !lanes.acquire(t, blocks[b].outstanding as u64 * tau) {
                    break;
                }
                repairs.pop_front();
                b
            } else if next_local < source.count && pool.has_free() {
                let n = code.k.min((source.count - next_local) as u32) + code.redundancy();
                if !lanes.acquire(t, n as u64 * tau) {
                    break;
                }
                pool.try_take();
                active += 1;
                let id = blocks.len() as u64;
                blocks.push(new_block(&mut next_local, &source, code, stream_seed, id));
                blocks.len() - 1
            } else {
                break;
            };
            let b = &mut blocks[block_idx];
            let burst = b.outstanding;
            for i in 0..burst {
                let coded_index = b.sent;
                b.sent += 1;
                if coded_index < b.k {
                    b.first_tx[coded_index as usize] = t + i as u64 * tau;
                }
                if !b.draw(p) {
                    b.received += 1;
                }
            }
            b.outstanding = 0;
            events.push(t + burst as u64 * tau - 1 + rtt, BlockFeedback { block: block_idx });
            pool.audit(active);
        }

        let has_work = !repairs.is_empty() || (next_local < source.count && pool.has_free());
        let ready = has_work.then(|| lanes.next_free_after(t));
        t = match (events.next_slot(), ready) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => break,
        };
    }

    Outcome { records, failed, last_slot, peak: pool.peak() }
}
