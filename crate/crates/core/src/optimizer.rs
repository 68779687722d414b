//! MCS selection: minimum expected service time versus maximum throughput.
//!
//! Throughput is scored as `SE(mcs) * resources / E[X](mcs, snr)`, which
//! charges retransmissions through `E[X]` and credits denser modulations
//! through the spectral efficiency. Ties go to the lowest MCS index.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytic::{
    arq_expected_service_time, harq_expected_service_time, nc_expected_service_time, NcCode,
    TimingParams, DEFAULT_EPSILON,
};
use crate::channel::{snr_grid, BlerTable, McsTable};
use crate::error::{Error, Result};
use crate::sim::DEFAULT_MAX_RETX;

/// Scheme whose analytic expectation is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticScheme {
    Arq,
    Harq { max_tx: u32 },
    Nc { code: NcCode },
}

impl AnalyticScheme {
    pub fn harq() -> Self {
        AnalyticScheme::Harq { max_tx: DEFAULT_MAX_RETX + 1 }
    }

    pub fn name(&self) -> String {
        match self {
            AnalyticScheme::Arq => "arq".into(),
            AnalyticScheme::Harq { .. } => "harq".into(),
            AnalyticScheme::Nc { code } => format!("nc_{}_{}", code.k, code.n),
        }
    }
}

impl fmt::Display for AnalyticScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for AnalyticScheme {
    type Err = Error;

    /// `arq`, `harq`, `harq:<max_tx>` or `nc:<k>:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("unknown analytic scheme `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<u32>().map_err(|_| bad());
        match parts.as_slice() {
            ["arq"] => Ok(AnalyticScheme::Arq),
            ["harq"] => Ok(AnalyticScheme::harq()),
            ["harq", m] => Ok(AnalyticScheme::Harq { max_tx: num(m)? }),
            ["nc", k, n] => Ok(AnalyticScheme::Nc { code: NcCode::new(num(k)?, num(n)?)? }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    MinServiceTime,
    MaxThroughput,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::MinServiceTime => "min_service_time",
            Policy::MaxThroughput => "max_throughput",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything the optimizer needs besides the SNR point.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerInputs<'a> {
    pub bler: &'a BlerTable,
    pub mcs: &'a McsTable,
    pub timing: TimingParams,
    pub scheme: AnalyticScheme,
    /// Resource elements per TB; bits per TB are `SE * resources`.
    pub resources: f64,
    pub epsilon: f64,
    /// Cap on first-transmission BLER for the throughput policy.
    pub bler_cap: Option<f64>,
}

impl<'a> OptimizerInputs<'a> {
    pub fn new(bler: &'a BlerTable, mcs: &'a McsTable, timing: TimingParams, scheme: AnalyticScheme) -> Self {
        Self {
            bler,
            mcs,
            timing,
            scheme,
            resources: 1.0,
            epsilon: DEFAULT_EPSILON,
            bler_cap: None,
        }
    }
}

/// Analytic `E[X]` in slots for one MCS, or `None` if the series cannot be
/// evaluated to the requested precision.
pub fn expected_slots(inputs: &OptimizerInputs, mcs: u32, snr_db: f64) -> Result<Option<f64>> {
    let p = inputs.bler.bler_lookup(mcs, snr_db)?;
    let est = match inputs.scheme {
        AnalyticScheme::Arq => arq_expected_service_time(p, inputs.timing, inputs.epsilon),
        AnalyticScheme::Harq { max_tx } => harq_expected_service_time(
            inputs.bler,
            mcs,
            snr_db,
            inputs.timing,
            max_tx,
            inputs.epsilon,
        ),
        AnalyticScheme::Nc { code } => nc_expected_service_time(p, code, inputs.timing),
    };
    match est {
        Ok(e) => Ok(Some(e.expected_slots)),
        Err(Error::Truncation { .. } | Error::Divergent) => Ok(None),
        Err(e) => Err(e),
    }
}

fn candidates<'b>(inputs: &'b OptimizerInputs) -> impl Iterator<Item = (u32, f64)> + 'b {
    inputs
        .mcs
        .entries()
        .iter()
        .filter(|e| inputs.bler.curve(e.index).is_ok())
        .map(|e| (e.index, e.spectral_efficiency))
}

pub fn optimize_mcs_service_time(inputs: &OptimizerInputs, snr_db: f64) -> Result<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (mcs, _) in candidates(inputs) {
        if let Some(x) = expected_slots(inputs, mcs, snr_db)? {
            if best.map_or(true, |(_, b)| x < b) {
                best = Some((mcs, x));
            }
        }
    }
    best.ok_or(Error::NoFeasibleMcs { snr_db })
}

pub fn optimize_mcs_throughput(inputs: &OptimizerInputs, snr_db: f64) -> Result<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (mcs, se) in candidates(inputs) {
        if let Some(cap) = inputs.bler_cap {
            if inputs.bler.bler_lookup(mcs, snr_db)? > cap {
                continue;
            }
        }
        if let Some(x) = expected_slots(inputs, mcs, snr_db)? {
            let tput = se * inputs.resources / x;
            if best.map_or(true, |(_, b)| tput > b) {
                best = Some((mcs, tput));
            }
        }
    }
    best.ok_or(Error::NoFeasibleMcs { snr_db })
}

pub fn optimize(inputs: &OptimizerInputs, policy: Policy, snr_db: f64) -> Result<(u32, f64)> {
    match policy {
        Policy::MinServiceTime => optimize_mcs_service_time(inputs, snr_db),
        Policy::MaxThroughput => optimize_mcs_throughput(inputs, snr_db),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurve {
    pub policy: Policy,
    pub scheme: String,
    pub snr_grid: Vec<f64>,
    /// `None` where no MCS is feasible.
    pub chosen_mcs: Vec<Option<u32>>,
    pub metric_values: Vec<f64>,
}

/// One curve per `(policy, scheme)`, policies outermost.
pub fn sweep(
    base: &OptimizerInputs,
    snr_range: (f64, f64, f64),
    policies: &[Policy],
    schemes: &[AnalyticScheme],
) -> Result<Vec<PolicyCurve>> {
    let grid = snr_grid(snr_range.0, snr_range.1, snr_range.2)?;
    let mut curves = Vec::new();
    for &policy in policies {
        for &scheme in schemes {
            let inputs = OptimizerInputs { scheme, ..*base };
            let mut chosen = Vec::with_capacity(grid.len());
            let mut metric = Vec::with_capacity(grid.len());
            for &snr in &grid {
                match optimize(&inputs, policy, snr) {
                    Ok((m, v)) => {
                        chosen.push(Some(m));
                        metric.push(v);
                    }
                    Err(Error::NoFeasibleMcs { .. }) => {
                        chosen.push(None);
                        metric.push(f64::NAN);
                    }
                    Err(e) => return Err(e),
                }
            }
            curves.push(PolicyCurve {
                policy,
                scheme: scheme.name(),
                snr_grid: grid.clone(),
                chosen_mcs: chosen,
                metric_values: metric,
            });
        }
    }
    Ok(curves)
}

/// `snr_db,policy,scheme,chosen_mcs,metric_value`; infeasible points have
/// empty MCS and metric fields.
pub fn write_curves_csv<W: Write>(curves: &[PolicyCurve], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["snr_db", "policy", "scheme", "chosen_mcs", "metric_value"])?;
    for c in curves {
        for i in 0..c.snr_grid.len() {
            let mcs = c.chosen_mcs[i].map(|m| m.to_string()).unwrap_or_default();
            let metric = if c.metric_values[i].is_nan() {
                String::new()
            } else {
                format!("{:.9}", c.metric_values[i])
            };
            wtr.write_record([
                format!("{:.1}", c.snr_grid[i]),
                c.policy.to_string(),
                c.scheme.clone(),
                mcs,
                metric,
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
