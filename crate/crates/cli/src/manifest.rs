//! Run manifests: a TOML file with flat sections, overridden by flags.
//!
//! ```toml
//! [inputs]
//! mcs_table = "mcs.csv"      # optional, bundled 256QAM table otherwise
//! bler_table = "bler.csv"    # optional, synthetic curves otherwise
//!
//! [output]
//! dir = "out"
//! formats = ["csv", "svg"]
//!
//! [sim]                      # any SimConfig field
//! scheme = "nc_block"
//! code = { k = 4, n = 5 }
//!
//! [analytic]
//! schemes = ["arq", "harq", "nc:2:3"]
//!
//! [sweep]
//! bler_cap = 0.1
//!
//! [study]                    # figures and sla
//! packets_per_point = 10000
//! ```
//!
//! Relative input paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use svclab_core::channel::{BlerTable, McsTable, SynthBlerParams};
use svclab_core::studies::StudySettings;
use svclab_core::SimConfig;

pub const OUT_ENV: &str = "SVCLAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub mcs_table: Option<PathBuf>,
    pub bler_table: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticSection {
    pub schemes: Vec<String>,
    /// MCS indices to evaluate; every index in the table when empty.
    pub mcs: Vec<u32>,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub snr_step: f64,
    pub rtt: f64,
    pub tau: f64,
    pub max_tx: u32,
    pub epsilon: f64,
}

impl Default for AnalyticSection {
    fn default() -> Self {
        Self {
            schemes: vec!["arq".into(), "harq".into()],
            mcs: vec![0],
            snr_lo: -6.0,
            snr_hi: 27.0,
            snr_step: 0.1,
            rtt: 16.0,
            tau: 1.0,
            max_tx: svclab_core::sim::DEFAULT_MAX_RETX + 1,
            epsilon: svclab_core::analytic::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub schemes: Vec<String>,
    pub policies: Vec<String>,
    pub rtt: f64,
    pub tau: f64,
    pub bler_cap: Option<f64>,
    pub resources: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lo: -6.0,
            hi: 27.0,
            step: 0.1,
            schemes: vec!["harq".into()],
            policies: vec!["min_service_time".into(), "max_throughput".into()],
            rtt: 16.0,
            tau: 1.0,
            bler_cap: None,
            resources: 1.0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub inputs: Inputs,
    pub output: Output,
    pub sim: SimConfig,
    pub analytic: AnalyticSection,
    pub sweep: SweepSection,
    pub study: StudySettings,
    pub synth: Option<SynthBlerParams>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self { base_dir: PathBuf::from("."), ..Self::default() });
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut m: Manifest = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn mcs_table(&self) -> Result<McsTable> {
        match &self.inputs.mcs_table {
            Some(p) => Ok(McsTable::from_path(&self.resolve(p))?),
            None => Ok(McsTable::nr_256qam()),
        }
    }

    pub fn bler_table(&self, mcs: &McsTable) -> Result<BlerTable> {
        match &self.inputs.bler_table {
            Some(p) => Ok(BlerTable::from_path(&self.resolve(p))?),
            None => self.synthetic_bler(mcs),
        }
    }

    pub fn synthetic_bler(&self, mcs: &McsTable) -> Result<BlerTable> {
        match &self.synth {
            None => Ok(BlerTable::default_synthetic(mcs)),
            Some(params) => {
                if !(params.steepness > 0.0) {
                    bail!("synth.steepness must be positive");
                }
                let grid = svclab_core::channel::snr_grid(-6.0, 27.0, 0.1)?;
                Ok(BlerTable::synthetic(mcs, params, &grid)?)
            }
        }
    }

    /// Flag, then `SVCLAB_OUT`, then the manifest, then `out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(dir) = flag {
            return dir.to_path_buf();
        }
        if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(dir);
        }
        match &self.output.dir {
            Some(d) => self.resolve(d),
            None => PathBuf::from("out"),
        }
    }

    /// CSV is always written; SVG when either the flag or the manifest asks.
    pub fn wants_svg(&self, flag: &[Format]) -> bool {
        let formats = if flag.is_empty() { &self.output.formats } else { flag };
        formats.contains(&Format::Svg)
    }
}
