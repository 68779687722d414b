//! MCS tables, BLER curves and the erasure channel.
//!
//! The physical layer is abstracted into a block error rate `p(mcs, snr)`.
//! A [`BlerTable`] stores one curve per MCS index on an SNR grid in dB and
//! answers lookups by linear interpolation in dB, clamping at the edges.
//! Combined HARQ receptions are modelled by effective-SNR scaling: the
//! `n`-th attempt sees the curve at `n` times the linear SNR.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for BLER monotonicity checks on ingestion.
pub const MONOTONE_TOLERANCE: f64 = 1e-9;

const SE_RELATIVE_TOLERANCE: f64 = 1e-6;

const DEFAULT_MCS_CSV: &str = include_str!("../data/mcs_table_256qam.csv");

pub fn db_to_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

pub fn linear_to_db(snr_linear: f64) -> f64 {
    10.0 * snr_linear.log10()
}

/// Unit of an [`SnrValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrDomain {
    Decibel,
    Linear,
}

/// An SNR tagged with its unit so the two domains cannot be mixed up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrValue {
    pub value: f64,
    pub domain: SnrDomain,
}

impl SnrValue {
    pub fn db(value: f64) -> Self {
        Self {
            value,
            domain: SnrDomain::Decibel,
        }
    }

    pub fn linear(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Domain(format!("linear SNR must be positive, got {value}")));
        }
        Ok(Self {
            value,
            domain: SnrDomain::Linear,
        })
    }

    pub fn as_db(&self) -> f64 {
        match self.domain {
            SnrDomain::Decibel => self.value,
            SnrDomain::Linear => linear_to_db(self.value),
        }
    }

    pub fn as_linear(&self) -> f64 {
        match self.domain {
            SnrDomain::Decibel => db_to_linear(self.value),
            SnrDomain::Linear => self.value,
        }
    }

    /// The SNR seen by a combination of `copies` equal-power receptions.
    pub fn combined(&self, copies: u32) -> Self {
        Self {
            value: self.as_linear() * copies as f64,
            domain: SnrDomain::Linear,
        }
    }
}

/// Grid `lo, lo + step, ...` with `floor((hi - lo) / step) + 1` points.
///
/// Points are rounded to 1e-9 dB so that printed grids read `-5.9`, not
/// `-5.8999999999`.
pub fn snr_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || hi < lo || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("bad SNR range ({lo}, {hi}, {step})")));
    }
    // A small slack absorbs representation error in e.g. 33 / 0.1.
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// One row of an MCS table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: u32,
    pub modulation_order: u32,
    pub code_rate: f64,
    pub spectral_efficiency: f64,
}

impl McsEntry {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.modulation_order < 1 {
            return Err(format!("MCS {}: modulation order must be >= 1", self.index));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(format!("MCS {}: code rate {} not in (0, 1]", self.index, self.code_rate));
        }
        if !(self.spectral_efficiency > 0.0) {
            return Err(format!("MCS {}: spectral efficiency must be positive", self.index));
        }
        if self.spectral_efficiency > self.modulation_order as f64 {
            return Err(format!(
                "MCS {}: spectral efficiency exceeds modulation order",
                self.index
            ));
        }
        let expected = self.modulation_order as f64 * self.code_rate;
        if ((self.spectral_efficiency - expected) / expected).abs() > SE_RELATIVE_TOLERANCE {
            return Err(format!(
                "MCS {}: spectral efficiency {} != modulation order x code rate {}",
                self.index, self.spectral_efficiency, expected
            ));
        }
        Ok(())
    }
}

/// Validated MCS table with unique, ascending indices.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidTable("MCS table is empty".into()));
        }
        for entry in &entries {
            entry.validate().map_err(Error::InvalidTable)?;
        }
        if entries.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::InvalidTable(
                "MCS indices must be unique and ascending".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// The 28-entry 256QAM table shipped in `data/mcs_table_256qam.csv`.
    pub fn nr_256qam() -> Self {
        Self::from_reader(DEFAULT_MCS_CSV.as_bytes(), "mcs_table_256qam.csv")
            .expect("bundled MCS table is valid")
    }

    pub fn from_reader<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(
            &mut rdr,
            &["index", "modulation_order", "code_rate", "spectral_efficiency"],
            source_name,
        )?;
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let entry: McsEntry = record.deserialize(None).map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line,
                message: e.to_string(),
            })?;
            entry.validate().map_err(|message| Error::Parse {
                source_name: source_name.to_string(),
                line,
                message,
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for entry in &self.entries {
            wtr.serialize(entry)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn get(&self, index: u32) -> Option<&McsEntry> {
        self.entries
            .binary_search_by_key(&index, |e| e.index)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_header<R: Read>(
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
    source_name: &str,
) -> Result<()> {
    let headers = rdr.headers()?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

/// Parameters of the synthetic logistic BLER family.
///
/// `bler(snr) = 1 / (1 + exp(steepness * (snr - s0)))` with the per-MCS
/// threshold `s0 = offset_db + db_per_bit * spectral_efficiency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthBlerParams {
    /// Slope of the waterfall, per dB.
    pub steepness: f64,
    /// Threshold of a hypothetical zero-rate MCS, dB.
    pub offset_db: f64,
    /// Threshold increase per bit/symbol of spectral efficiency, dB.
    pub db_per_bit: f64,
}

impl Default for SynthBlerParams {
    fn default() -> Self {
        Self {
            steepness: 2.0,
            offset_db: -8.0,
            db_per_bit: DEFAULT_DB_PER_BIT,
        }
    }
}

pub const DEFAULT_DB_PER_BIT: f64 = 4.0;

impl SynthBlerParams {
    pub fn threshold_db(&self, mcs: &McsEntry) -> f64 {
        self.offset_db + self.db_per_bit * mcs.spectral_efficiency
    }

    pub fn bler(&self, mcs: &McsEntry, snr_db: f64) -> f64 {
        let x = self.steepness * (snr_db - self.threshold_db(mcs));
        // Keep the value strictly inside (0, 1) even where exp saturates.
        (1.0 / (1.0 + x.exp())).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

/// Synthetic BLER with the default `db_per_bit` scale.
pub fn synth_bler(mcs: &McsEntry, snr_db: f64, steepness: f64, offset_db: f64) -> Result<f64> {
    if !(steepness > 0.0) {
        return Err(Error::Domain(format!("steepness must be positive, got {steepness}")));
    }
    Ok(SynthBlerParams {
        steepness,
        offset_db,
        db_per_bit: DEFAULT_DB_PER_BIT,
    }
    .bler(mcs, snr_db))
}

/// BLER curve of a single MCS: strictly increasing SNR points.
#[derive(Debug, Clone, PartialEq)]
pub struct BlerCurve {
    snr_db: Vec<f64>,
    bler: Vec<f64>,
}

impl BlerCurve {
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.snr_db.iter().copied().zip(self.bler.iter().copied())
    }

    pub fn lookup(&self, snr_db: f64) -> f64 {
        let n = self.snr_db.len();
        if snr_db <= self.snr_db[0] {
            return self.bler[0];
        }
        if snr_db >= self.snr_db[n - 1] {
            return self.bler[n - 1];
        }
        let hi = self.snr_db.partition_point(|&s| s <= snr_db);
        let lo = hi - 1;
        if self.snr_db[lo] == snr_db {
            return self.bler[lo];
        }
        let frac = (snr_db - self.snr_db[lo]) / (self.snr_db[hi] - self.snr_db[lo]);
        self.bler[lo] + frac * (self.bler[hi] - self.bler[lo])
    }

    /// Smallest SNR on the interpolated curve reaching `target`, clamped to
    /// the grid.
    pub fn snr_for_bler(&self, target: f64) -> f64 {
        let (first, last) = (self.snr_db[0], self.snr_db[self.snr_db.len() - 1]);
        if target >= self.lookup(first) {
            return first;
        }
        if target <= self.lookup(last) {
            return last;
        }
        let (mut lo, mut hi) = (first, last);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.lookup(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Block error rate as a function of MCS index and SNR in dB.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlerTable {
    curves: BTreeMap<u32, BlerCurve>,
}

/// Row of a BLER CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlerRow {
    pub mcs_index: u32,
    pub snr_db: f64,
    pub bler: f64,
}

impl BlerTable {
    /// Builds and validates a table from rows in any order.
    pub fn from_rows(rows: impl IntoIterator<Item = BlerRow>) -> Result<Self> {
        let mut grouped: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        for row in rows {
            if !(0.0..=1.0).contains(&row.bler) {
                return Err(Error::InvalidTable(format!(
                    "MCS {} at {} dB: BLER {} outside [0, 1]",
                    row.mcs_index, row.snr_db, row.bler
                )));
            }
            if !row.snr_db.is_finite() {
                return Err(Error::InvalidTable(format!(
                    "MCS {}: non-finite SNR",
                    row.mcs_index
                )));
            }
            grouped.entry(row.mcs_index).or_default().push((row.snr_db, row.bler));
        }
        if grouped.is_empty() {
            return Err(Error::InvalidTable("BLER table is empty".into()));
        }
        let mut curves = BTreeMap::new();
        for (mcs, mut points) in grouped {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in points.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidTable(format!(
                        "MCS {mcs}: duplicate SNR {} dB",
                        w[0].0
                    )));
                }
                if w[1].1 > w[0].1 + MONOTONE_TOLERANCE {
                    return Err(Error::InvalidTable(format!(
                        "MCS {mcs}: BLER increases from {} at {} dB to {} at {} dB",
                        w[0].1, w[0].0, w[1].1, w[1].0
                    )));
                }
            }
            let (snr_db, bler) = points.into_iter().unzip();
            curves.insert(mcs, BlerCurve { snr_db, bler });
        }
        Ok(Self { curves })
    }

    /// A table whose every MCS has BLER `p` at all SNRs.
    pub fn flat(mcs_indices: &[u32], p: f64) -> Result<Self> {
        Self::from_rows(mcs_indices.iter().flat_map(|&mcs_index| {
            [
                BlerRow { mcs_index, snr_db: -100.0, bler: p },
                BlerRow { mcs_index, snr_db: 100.0, bler: p },
            ]
        }))
    }

    /// Materializes the synthetic family on an SNR grid.
    pub fn synthetic(mcs_table: &McsTable, params: &SynthBlerParams, grid: &[f64]) -> Result<Self> {
        Self::from_rows(mcs_table.entries().iter().flat_map(|entry| {
            grid.iter().map(move |&snr_db| BlerRow {
                mcs_index: entry.index,
                snr_db,
                bler: params.bler(entry, snr_db),
            })
        }))
    }

    /// Default tables: shipped MCS table, default synthetic curves on the
    /// -6..27 dB grid at 0.1 dB.
    pub fn default_synthetic(mcs_table: &McsTable) -> Self {
        let grid = snr_grid(-6.0, 27.0, 0.1).expect("static grid");
        Self::synthetic(mcs_table, &SynthBlerParams::default(), &grid)
            .expect("synthetic curves are monotone")
    }

    pub fn from_reader<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(&mut rdr, &["mcs_index", "snr_db", "bler"], source_name)?;
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row: BlerRow = record.deserialize(None).map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line,
                message: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&row.bler) {
                return Err(Error::Parse {
                    source_name: source_name.to_string(),
                    line,
                    message: format!("BLER {} outside [0, 1]", row.bler),
                });
            }
            rows.push(row);
        }
        Self::from_rows(rows).map_err(|e| match e {
            Error::InvalidTable(message) => Error::Parse {
                source_name: source_name.to_string(),
                line: 0,
                message,
            },
            other => other,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Writes `mcs_index,snr_db,bler` rows grouped by MCS, SNR ascending.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (&mcs_index, curve) in &self.curves {
            for (snr_db, bler) in curve.points() {
                wtr.serialize(BlerRow { mcs_index, snr_db, bler })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn mcs_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.curves.keys().copied()
    }

    pub fn curve(&self, mcs: u32) -> Result<&BlerCurve> {
        self.curves.get(&mcs).ok_or(Error::UnknownMcs(mcs))
    }

    pub fn bler_lookup(&self, mcs: u32, snr_db: f64) -> Result<f64> {
        Ok(self.curve(mcs)?.lookup(snr_db))
    }

    /// Failure probability of the `attempt`-th HARQ transmission: the
    /// curve evaluated at `attempt` times the linear SNR.
    pub fn harq_attempt_failure_prob(&self, mcs: u32, snr_db: f64, attempt: u32) -> Result<f64> {
        if attempt < 1 {
            return Err(Error::Domain("HARQ attempt numbers start at 1".into()));
        }
        let curve = self.curve(mcs)?;
        if attempt == 1 {
            return Ok(curve.lookup(snr_db));
        }
        let effective = SnrValue::db(snr_db).combined(attempt).as_db();
        Ok(curve.lookup(effective))
    }

    /// SNR at which the first-transmission BLER of `mcs` equals `target`.
    pub fn snr_for_bler(&self, mcs: u32, target: f64) -> Result<f64> {
        Ok(self.curve(mcs)?.snr_for_bler(target))
    }
}

/// Draws one Bernoulli(`p`) erasure: `true` means the block was lost.
pub fn sample_erasure<R: Rng + ?Sized>(rng: &mut R, p: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("erasure probability {p} outside [0, 1]")));
    }
    Ok(rng.gen::<f64>() < p)
}
