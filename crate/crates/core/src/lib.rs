//! Service-time models for ARQ, HARQ and network-coded link layers.
//!
//! * [`channel`]: SNR units, the MCS table and BLER curves.
//! * [`analytic`]: closed-form expected service times.
//! * [`combining`]: MMSE combining of repeated observations.
//! * [`sim`]: slot-level Monte Carlo of every scheme.
//! * [`optimizer`]: MCS selection per SNR.
//! * [`studies`]: the canned comparison experiments.

pub mod analytic;
pub mod channel;
pub mod combining;
pub mod error;
pub mod optimizer;
pub mod sim;
pub mod studies;

pub use analytic::{NcCode, ServiceTimeEstimate, TimingParams};
pub use channel::{BlerTable, McsEntry, McsTable, SnrValue};
pub use error::{Error, Result};
pub use sim::{ServiceRecord, SimConfig, SimResult, SimScheme};
