//! The comparison experiments behind the `figures` and `sla` commands.
//!
//! Each study is a list of independent points. [`StudyPoint::run`] evaluates
//! one point, so callers may fan points out in parallel; the serial
//! [`run_points`] is what the library uses itself. Every point derives its
//! seed from the study seed and its position, and the HARQ and network-coded
//! runs of a point share that seed.
//!
//! * fig4: MCS chosen for minimum service time versus maximum throughput.
//! * fig5: HARQ against `nc_block` with redundancy matched to the BLER.
//! * fig6: the fig5 pair at 16 and at 160 TBs per RTT.
//! * fig7: HARQ against `nc_hijack` at code rate 3/4.
//! * fig8: 99th-percentile service times over an erasure-probability grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytic::{redundancy_for_bler, redundancy_for_target, NcCode, TimingParams};
use crate::channel::{snr_grid, BlerTable, McsTable};
use crate::error::{Error, Result};
use crate::optimizer::{
    optimize_mcs_throughput, sweep, AnalyticScheme, OptimizerInputs, Policy, PolicyCurve,
};
use crate::sim::engine::derive_stream_seed;
use crate::sim::{self, SimConfig, SimResult, SimScheme, HARQ_PROCESS_CAP};

/// BLER cap used when picking the operating MCS of a sweep point.
pub const LINK_ADAPTATION_BLER_CAP: f64 = 0.1;
/// Block size of the matched-redundancy studies.
pub const MATCHED_K: u32 = 4;
/// Code of the hijack study (rate 3/4).
pub const HIJACK_CODE: (u32, u32) = (3, 4);
/// MCS whose curve is inverted to reach each erasure probability in fig8.
pub const SLA_MCS: u32 = 10;
/// Block failure target used to size the fig8 code.
pub const SLA_BLOCK_FAILURE: f64 = 0.01;
pub const SLA_ERASURE_GRID: [f64; 7] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    pub seed: u64,
    pub packets_per_point: u64,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub snr_step: f64,
    pub rtt_slots: u64,
    pub tau_slots: u64,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            seed: 0,
            packets_per_point: 10_000,
            snr_lo: -6.0,
            snr_hi: 27.0,
            snr_step: 0.1,
            rtt_slots: 16,
            tau_slots: 1,
        }
    }
}

impl StudySettings {
    pub fn grid(&self) -> Result<Vec<f64>> {
        snr_grid(self.snr_lo, self.snr_hi, self.snr_step)
    }

    fn point_seed(&self, index: usize) -> u64 {
        derive_stream_seed(self.seed, index as u64)
    }
}

/// Throughput-optimal HARQ MCS with first-transmission BLER at most
/// [`LINK_ADAPTATION_BLER_CAP`]; MCS 0 when nothing qualifies.
pub fn link_adapted_mcs(bler: &BlerTable, mcs: &McsTable, snr_db: f64, rtt_slots: u64) -> Result<u32> {
    let timing = TimingParams::new(rtt_slots as f64, 1.0)?;
    let mut inputs = OptimizerInputs::new(bler, mcs, timing, AnalyticScheme::harq());
    inputs.bler_cap = Some(LINK_ADAPTATION_BLER_CAP);
    match optimize_mcs_throughput(&inputs, snr_db) {
        Ok((m, _)) => Ok(m),
        Err(Error::NoFeasibleMcs { .. }) => Ok(mcs.entries()[0].index),
        Err(e) => Err(e),
    }
}

pub fn fig4(bler: &BlerTable, mcs: &McsTable, settings: &StudySettings) -> Result<Vec<PolicyCurve>> {
    let timing = TimingParams::new(settings.rtt_slots as f64, settings.tau_slots as f64)?;
    let base = OptimizerInputs::new(bler, mcs, timing, AnalyticScheme::harq());
    sweep(
        &base,
        (settings.snr_lo, settings.snr_hi, settings.snr_step),
        &[Policy::MinServiceTime, Policy::MaxThroughput],
        &[AnalyticScheme::harq(), AnalyticScheme::Arq],
    )
}

/// Summary of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub standard_error: f64,
    pub p99: f64,
    pub throughput: f64,
    pub fail_rate: f64,
    pub peak_busy: usize,
}

impl RunSummary {
    pub fn of(res: &SimResult) -> Self {
        Self {
            mean: res.mean_service_slots,
            standard_error: res.standard_error(),
            p99: res.p99_service_slots,
            throughput: res.throughput_packets_per_slot,
            fail_rate: res.failure_rate(),
            peak_busy: res.peak_busy_processes,
        }
    }
}

/// One HARQ versus network-coding comparison, both runs fully configured.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPoint {
    /// TBs the HARQ baseline can have in flight per RTT.
    pub flight: u64,
    pub snr_db: f64,
    /// First-transmission BLER at the point, or the grid value in fig8.
    pub p_erasure: f64,
    pub harq: SimConfig,
    pub nc: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparePoint {
    pub flight: u64,
    pub snr_db: f64,
    pub mcs: u32,
    pub p_erasure: f64,
    pub code: NcCode,
    pub nc_scheme: SimScheme,
    pub harq: RunSummary,
    pub nc: RunSummary,
}

impl ComparePoint {
    /// HARQ mean minus NC mean, in slots.
    pub fn gap(&self) -> f64 {
        self.harq.mean - self.nc.mean
    }

    /// Standard error of [`Self::gap`], treating the runs as independent.
    pub fn gap_se(&self) -> f64 {
        self.harq.standard_error.hypot(self.nc.standard_error)
    }
}

impl StudyPoint {
    pub fn run(&self, bler: &BlerTable) -> Result<ComparePoint> {
        let harq = sim::run(&self.harq, bler)?;
        let nc = sim::run(&self.nc, bler)?;
        Ok(ComparePoint {
            flight: self.flight,
            snr_db: self.snr_db,
            mcs: self.harq.mcs,
            p_erasure: self.p_erasure,
            code: self.nc.code.expect("network-coded config"),
            nc_scheme: self.nc.scheme,
            harq: RunSummary::of(&harq),
            nc: RunSummary::of(&nc),
        })
    }
}

pub fn run_points(points: &[StudyPoint], bler: &BlerTable) -> Result<Vec<ComparePoint>> {
    points.iter().map(|p| p.run(bler)).collect()
}

#[allow(clippy::too_many_arguments)]
fn pair(
    settings: &StudySettings,
    index: usize,
    rtt: u64,
    processes: usize,
    mcs: u32,
    snr_db: f64,
    nc_scheme: SimScheme,
    code: NcCode,
) -> (SimConfig, SimConfig) {
    let harq = SimConfig {
        scheme: SimScheme::Harq,
        rtt_slots: rtt,
        tau_slots: settings.tau_slots,
        num_harq_processes: processes,
        unlocked: processes > HARQ_PROCESS_CAP,
        mcs,
        snr_db,
        num_packets: settings.packets_per_point,
        seed: settings.point_seed(index),
        ..SimConfig::default()
    };
    let nc = SimConfig { scheme: nc_scheme, code: Some(code), ..harq.clone() };
    (harq, nc)
}

/// Link-adapted MCS, its BLER and the matched code at each grid SNR.
fn matched_grid(
    bler: &BlerTable,
    mcs: &McsTable,
    settings: &StudySettings,
) -> Result<Vec<(f64, u32, f64, NcCode)>> {
    settings
        .grid()?
        .into_iter()
        .map(|snr| {
            let m = link_adapted_mcs(bler, mcs, snr, settings.rtt_slots)?;
            let p = bler.bler_lookup(m, snr)?;
            Ok((snr, m, p, redundancy_for_bler(MATCHED_K, p)?))
        })
        .collect()
}

pub fn fig5_points(bler: &BlerTable, mcs: &McsTable, settings: &StudySettings) -> Result<Vec<StudyPoint>> {
    let rtt = settings.rtt_slots;
    Ok(matched_grid(bler, mcs, settings)?
        .into_iter()
        .enumerate()
        .map(|(i, (snr, m, p, code))| {
            let (harq, nc) = pair(settings, i, rtt, HARQ_PROCESS_CAP, m, snr, SimScheme::NcBlock, code);
            StudyPoint { flight: HARQ_PROCESS_CAP as u64, snr_db: snr, p_erasure: p, harq, nc }
        })
        .collect())
}

/// Pairs of points at 16 and 160 TBs per RTT, interleaved per SNR. The 160
/// case scales RTT and process count by ten so the per-TB loss process is
/// unchanged.
pub fn fig6_points(bler: &BlerTable, mcs: &McsTable, settings: &StudySettings) -> Result<Vec<StudyPoint>> {
    let mut out = Vec::new();
    for (i, (snr, m, p, code)) in matched_grid(bler, mcs, settings)?.into_iter().enumerate() {
        for flight in [16u64, 160] {
            let (harq, nc) = pair(settings, i, flight, flight as usize, m, snr, SimScheme::NcBlock, code);
            out.push(StudyPoint { flight, snr_db: snr, p_erasure: p, harq, nc });
        }
    }
    Ok(out)
}

/// Hijack at rate 3/4 with a long RTT, where the 16-process cap binds.
pub fn fig7_points(bler: &BlerTable, mcs: &McsTable, settings: &StudySettings) -> Result<Vec<StudyPoint>> {
    let rtt = 10 * settings.rtt_slots;
    let code = NcCode::new(HIJACK_CODE.0, HIJACK_CODE.1)?;
    settings
        .grid()?
        .into_iter()
        .enumerate()
        .map(|(i, snr)| {
            let m = link_adapted_mcs(bler, mcs, snr, rtt)?;
            let p = bler.bler_lookup(m, snr)?;
            let (harq, nc) = pair(settings, i, rtt, HARQ_PROCESS_CAP, m, snr, SimScheme::NcHijack, code);
            Ok(StudyPoint { flight: HARQ_PROCESS_CAP as u64, snr_db: snr, p_erasure: p, harq, nc })
        })
        .collect()
}

/// Erasure grid realised by moving along the [`SLA_MCS`] curve.
pub fn fig8_points(bler: &BlerTable, settings: &StudySettings) -> Result<Vec<StudyPoint>> {
    SLA_ERASURE_GRID
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let snr = bler.snr_for_bler(SLA_MCS, p)?;
            let code = redundancy_for_target(MATCHED_K, p, SLA_BLOCK_FAILURE)?;
            let (harq, nc) = pair(
                settings,
                i,
                settings.rtt_slots,
                HARQ_PROCESS_CAP,
                SLA_MCS,
                snr,
                SimScheme::NcBlock,
                code,
            );
            Ok(StudyPoint { flight: HARQ_PROCESS_CAP as u64, snr_db: snr, p_erasure: p, harq, nc })
        })
        .collect()
}

pub const COMPARE_HEADER: [&str; 17] = [
    "flight",
    "snr_db",
    "mcs",
    "p_erasure",
    "k",
    "n",
    "nc_scheme",
    "harq_mean",
    "harq_se",
    "harq_p99",
    "harq_throughput",
    "harq_fail_rate",
    "nc_mean",
    "nc_se",
    "nc_p99",
    "nc_throughput",
    "nc_fail_rate",
];

pub fn write_compare_csv<W: Write>(points: &[ComparePoint], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COMPARE_HEADER)?;
    let f = |x: f64| format!("{x:.6}");
    for c in points {
        wtr.write_record([
            c.flight.to_string(),
            format!("{:.2}", c.snr_db),
            c.mcs.to_string(),
            format!("{:.6e}", c.p_erasure),
            c.code.k.to_string(),
            c.code.n.to_string(),
            c.nc_scheme.to_string(),
            f(c.harq.mean),
            f(c.harq.standard_error),
            f(c.harq.p99),
            f(c.harq.throughput),
            f(c.harq.fail_rate),
            f(c.nc.mean),
            f(c.nc.standard_error),
            f(c.nc.p99),
            f(c.nc.throughput),
            f(c.nc.fail_rate),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `p_erasure,scheme,p99_slots`, HARQ then NC for each grid value.
pub fn write_sla_csv<W: Write>(points: &[ComparePoint], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["p_erasure", "scheme", "p99_slots"])?;
    for c in points {
        let p = format!("{:.2}", c.p_erasure);
        wtr.write_record([p.clone(), "harq".into(), format!("{}", c.harq.p99)])?;
        wtr.write_record([p, c.nc_scheme.to_string(), format!("{}", c.nc.p99)])?;
    }
    wtr.flush()?;
    Ok(())
}
