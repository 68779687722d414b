//! Slot-driven Monte Carlo simulation of link-layer reliability schemes.
//!
//! Time advances in integer slots. A transmission occupying slots
//! `[t, t + len)` receives its feedback at `t + len - 1 + rtt`, so a single
//! one-slot transport block that succeeds first time has a service time of
//! exactly `rtt`: the transmission slot is folded into the round trip. A
//! HARQ process that receives feedback at slot `f` can transmit again at `f`.
//!
//! The source is saturated: all `num_packets` are backlogged at slot 0 and
//! the schedulers pull from it whenever a HARQ process and a transmitter
//! lane are free. Retransmissions and repair packets have priority over new
//! data.
//!
//! Erasures are drawn from per-packet (ARQ, HARQ) or per-block (network
//! coding) ChaCha8 streams, see [`engine::unit_rng`]. The `i`-th
//! transmission of a packet, or the `i`-th coded packet of a block
//! (systematic, then parity, then repairs in order), consumes the `i`-th
//! draw of its stream. Results are therefore bit-reproducible and paired
//! across configurations that differ only in timing.

pub mod engine;
mod nc;
mod per_tb;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytic::NcCode;
use crate::channel::BlerTable;
use crate::error::{Error, Result};

pub use nc::{run_nc_block, run_nc_hijack, run_nc_multistream};
pub use per_tb::{run_harq, run_sr_arq};

/// 3GPP limit on HARQ processes per entity.
pub const HARQ_PROCESS_CAP: usize = 16;

/// Default retransmission budget: 16 attempts in total.
pub const DEFAULT_MAX_RETX: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScheme {
    SrArq,
    Harq,
    NcBlock,
    NcHijack,
    NcMultistream,
}

impl SimScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SimScheme::SrArq => "sr_arq",
            SimScheme::Harq => "harq",
            SimScheme::NcBlock => "nc_block",
            SimScheme::NcHijack => "nc_hijack",
            SimScheme::NcMultistream => "nc_multistream",
        }
    }

    pub fn is_network_coded(&self) -> bool {
        matches!(
            self,
            SimScheme::NcBlock | SimScheme::NcHijack | SimScheme::NcMultistream
        )
    }
}

impl std::fmt::Display for SimScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SimScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sr_arq" => SimScheme::SrArq,
            "harq" => SimScheme::Harq,
            "nc_block" => SimScheme::NcBlock,
            "nc_hijack" => SimScheme::NcHijack,
            "nc_multistream" => SimScheme::NcMultistream,
            other => return Err(Error::Domain(format!("unknown scheme `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scheme: SimScheme,
    pub rtt_slots: u64,
    pub tau_slots: u64,
    pub num_harq_processes: usize,
    /// Allows more than [`HARQ_PROCESS_CAP`] processes.
    pub unlocked: bool,
    /// Block code for the network-coded schemes.
    pub code: Option<NcCode>,
    pub num_streams: usize,
    pub mcs: u32,
    pub snr_db: f64,
    pub num_packets: u64,
    pub seed: u64,
    /// Retransmissions (ARQ/HARQ) or repair rounds (network coding).
    pub max_retx: u32,
    /// Transport blocks that may be on the air at once; 0 for no limit.
    pub tx_capacity: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scheme: SimScheme::Harq,
            rtt_slots: 16,
            tau_slots: 1,
            num_harq_processes: HARQ_PROCESS_CAP,
            unlocked: false,
            code: None,
            num_streams: 1,
            mcs: 0,
            snr_db: 0.0,
            num_packets: 10_000,
            seed: 0,
            max_retx: DEFAULT_MAX_RETX,
            tx_capacity: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(m));
        if self.rtt_slots < 1 || self.tau_slots < 1 {
            return fail("rtt_slots and tau_slots must be >= 1".into());
        }
        if self.num_harq_processes < 1 {
            return fail("need at least one HARQ process".into());
        }
        if self.num_harq_processes > HARQ_PROCESS_CAP && !self.unlocked {
            return fail(format!(
                "{} HARQ processes exceed the cap of {HARQ_PROCESS_CAP}; set `unlocked` to allow",
                self.num_harq_processes
            ));
        }
        if self.num_packets < 1 {
            return fail("num_packets must be >= 1".into());
        }
        if self.scheme.is_network_coded() && self.code.is_none() {
            return fail(format!("scheme {} needs a code", self.scheme));
        }
        if let Some(code) = self.code {
            NcCode::new(code.k, code.n)?;
        }
        if self.num_streams < 1 {
            return fail("num_streams must be >= 1".into());
        }
        if !self.snr_db.is_finite() {
            return fail("snr_db must be finite".into());
        }
        Ok(())
    }

    pub(crate) fn expect_scheme(&self, scheme: SimScheme) -> Result<()> {
        self.validate()?;
        if self.scheme != scheme {
            return Err(Error::Domain(format!(
                "config is for {}, not {scheme}",
                self.scheme
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub packet_id: u64,
    pub first_tx_slot: u64,
    pub completion_slot: u64,
    pub attempts: u32,
}

impl ServiceRecord {
    pub fn service_slots(&self) -> u64 {
        self.completion_slot - self.first_tx_slot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Delivered packets, ordered by packet id.
    pub records: Vec<ServiceRecord>,
    /// Packets abandoned after the retransmission budget, ordered by id.
    pub failed_packets: Vec<u64>,
    /// NaN when nothing was delivered.
    pub mean_service_slots: f64,
    /// NaN when nothing was delivered.
    pub p99_service_slots: f64,
    /// Delivered original packets per slot over the whole run.
    pub throughput_packets_per_slot: f64,
    /// Slots from 0 up to the last feedback. Feedback lands at the start of
    /// its slot, so a lossless single-process run spends exactly `rtt` per
    /// packet.
    pub total_slots: u64,
    /// Largest number of simultaneously busy HARQ processes (per stream).
    pub peak_busy_processes: usize,
}

impl SimResult {
    pub(crate) fn build(
        mut records: Vec<ServiceRecord>,
        mut failed_packets: Vec<u64>,
        last_slot: u64,
        peak_busy_processes: usize,
    ) -> Self {
        records.sort_by_key(|r| r.packet_id);
        failed_packets.sort_unstable();
        let total_slots = last_slot.max(1);
        let (mean, p99) = if records.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let sum: u64 = records.iter().map(|r| r.service_slots()).sum();
            (
                sum as f64 / records.len() as f64,
                percentile(&records, 0.99).expect("non-empty"),
            )
        };
        Self {
            throughput_packets_per_slot: records.len() as f64 / total_slots as f64,
            records,
            failed_packets,
            mean_service_slots: mean,
            p99_service_slots: p99,
            total_slots,
            peak_busy_processes,
        }
    }

    pub fn completed(&self) -> usize {
        self.records.len()
    }

    pub fn failure_rate(&self) -> f64 {
        let total = self.records.len() + self.failed_packets.len();
        self.failed_packets.len() as f64 / total as f64
    }

    /// Sample standard deviation of service times, in slots.
    pub fn std_service_slots(&self) -> f64 {
        let n = self.records.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_service_slots;
        let ss: f64 = self
            .records
            .iter()
            .map(|r| (r.service_slots() as f64 - mean).powi(2))
            .sum();
        (ss / (n - 1) as f64).sqrt()
    }

    /// Standard error of the mean service time, in slots.
    pub fn standard_error(&self) -> f64 {
        self.std_service_slots() / (self.records.len() as f64).sqrt()
    }

    /// `packet_id,first_tx_slot,completion_slot,attempts`, one row per
    /// delivered packet.
    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Nearest-rank percentile of service times: the element at
/// `ceil(q n) - 1` after sorting ascending.
pub fn percentile(records: &[ServiceRecord], q: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("percentile of an empty record set".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("quantile {q} outside (0, 1]")));
    }
    let mut times: Vec<u64> = records.iter().map(|r| r.service_slots()).collect();
    times.sort_unstable();
    // The slack keeps 0.99 * 100 from landing on 100.
    let rank = ((q * times.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(times[rank.min(times.len()) - 1] as f64)
}

/// Runs whichever scheme `config.scheme` names.
pub fn run(config: &SimConfig, channel: &BlerTable) -> Result<SimResult> {
    match config.scheme {
        SimScheme::SrArq => run_sr_arq(config, channel),
        SimScheme::Harq => run_harq(config, channel),
        SimScheme::NcBlock => run_nc_block(config, channel),
        SimScheme::NcHijack => run_nc_hijack(config, channel),
        SimScheme::NcMultistream => run_nc_multistream(config, channel),
    }
}
