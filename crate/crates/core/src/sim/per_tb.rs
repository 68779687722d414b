//! Per-transport-block stop-and-wait: selective-repeat ARQ and HARQ.
//!
//! Each packet holds one HARQ process from its first transmission until it
//! is acknowledged or abandoned. ARQ fails every attempt with the same
//! BLER; HARQ fails attempt `n` with the BLER at `n` times the linear SNR.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use super::engine::{derive_stream_seed, unit_rng, EventQueue, Lanes, ProcessPool};
use super::{SimConfig, SimResult, SimScheme, ServiceRecord};
use crate::channel::{sample_erasure, BlerTable};
use crate::error::Result;

pub fn run_sr_arq(config: &SimConfig, channel: &BlerTable) -> Result<SimResult> {
    config.expect_scheme(SimScheme::SrArq)?;
    let p = channel.bler_lookup(config.mcs, config.snr_db)?;
    let probs = vec![p; config.max_retx as usize + 1];
    Ok(simulate(config, &probs))
}

pub fn run_harq(config: &SimConfig, channel: &BlerTable) -> Result<SimResult> {
    config.expect_scheme(SimScheme::Harq)?;
    let probs = (1..=config.max_retx + 1)
        .map(|n| channel.harq_attempt_failure_prob(config.mcs, config.snr_db, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(simulate(config, &probs))
}

struct Tb {
    packet_id: u64,
    first_tx: u64,
    attempts: u32,
    rng: ChaCha8Rng,
}

struct Feedback {
    tb: Tb,
    erased: bool,
}

/// `failure_probs[n - 1]` is the failure probability of attempt `n`.
fn simulate(config: &SimConfig, failure_probs: &[f64]) -> SimResult {
    let stream_seed = derive_stream_seed(config.seed, 0);
    let (rtt, tau) = (config.rtt_slots, config.tau_slots);
    let mut pool = ProcessPool::new(config.num_harq_processes);
    let mut lanes = Lanes::new(config.tx_capacity);
    let mut events: EventQueue<Feedback> = EventQueue::new();
    let mut retx: VecDeque<Tb> = VecDeque::new();
    let mut records = Vec::with_capacity(config.num_packets as usize);
    let mut failed = Vec::new();
    let mut next_packet = 0u64;
    let mut last_slot = 0u64;
    let mut t = 0u64;

    loop {
        while let Some(Feedback { tb, erased }) = events.pop_due(t) {
            last_slot = t;
            if !erased {
                records.push(ServiceRecord {
                    packet_id: tb.packet_id,
                    first_tx_slot: tb.first_tx,
                    completion_slot: t,
                    attempts: tb.attempts,
                });
                pool.release();
            } else if tb.attempts as usize >= failure_probs.len() {
                failed.push(tb.packet_id);
                pool.release();
            } else {
                retx.push_back(tb);
            }
        }

        loop {
            let wants = !retx.is_empty() || (next_packet < config.num_packets && pool.has_free());
            if !wants || !lanes.acquire(t, tau) {
                break;
            }
            let mut tb = match retx.pop_front() {
                Some(tb) => tb,
                None => {
                    pool.try_take();
                    let id = next_packet;
                    next_packet += 1;
                    Tb {
                        packet_id: id,
                        first_tx: t,
                        attempts: 0,
                        rng: unit_rng(stream_seed, id),
                    }
                }
            };
            tb.attempts += 1;
            let p = failure_probs[tb.attempts as usize - 1];
            let erased = sample_erasure(&mut tb.rng, p).expect("validated probability");
            events.push(t + tau - 1 + rtt, Feedback { tb, erased });
            pool.audit(events.len() + retx.len());
        }

        let pending_new = next_packet < config.num_packets && pool.has_free();
        t = match events.next_slot() {
            None if retx.is_empty() && !pending_new => break,
            next_event => {
                let ready = if !retx.is_empty() || pending_new {
                    Some(lanes.next_free_after(t))
                } else {
                    None
                };
                match (next_event, ready) {
                    (Some(a), Some(b)) => a.min(b),
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!(),
                }
            }
        };
    }

    SimResult::build(records, failed, last_slot, pool.peak())
}
