//! Closed-form expected service times.
//!
//! All results are in slots. ARQ and HARQ are infinite series truncated
//! once the remaining probability mass is negligible; the network-coding
//! expression is a finite sum over the number of erasures in one block and
//! covers at most one repair round.

use serde::{Deserialize, Serialize};

use crate::channel::BlerTable;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Hard cap on series length; reaching it is reported as truncation.
pub const MAX_SERIES_TERMS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    /// Round trip time in slots.
    pub rtt: f64,
    /// Transmission time of one packet in slots.
    pub tau: f64,
}

impl TimingParams {
    pub fn new(rtt: f64, tau: f64) -> Result<Self> {
        if !(rtt > 0.0 && rtt.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("rtt and tau must be positive, got {rtt}, {tau}")));
        }
        Ok(Self { rtt, tau })
    }

    /// False when per-packet time is no longer small against the RTT
    /// (`tau >= rtt / 10`), in which case the RTT-only ARQ/HARQ model is
    /// optimistic.
    pub fn tau_negligible(&self) -> bool {
        self.tau < self.rtt / 10.0
    }
}

/// Block code with `k` original and `n - k` redundant packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NcCode {
    pub k: u32,
    pub n: u32,
}

impl NcCode {
    pub fn new(k: u32, n: u32) -> Result<Self> {
        if k < 1 || n < k {
            return Err(Error::Domain(format!("need n >= k >= 1, got k={k}, n={n}")));
        }
        Ok(Self { k, n })
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn redundancy(&self) -> u32 {
        self.n - self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceTimeEstimate {
    pub expected_slots: f64,
    /// Probability mass left out of the sum.
    pub truncation_residual: f64,
    pub terms_used: u64,
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Selective-repeat ARQ: every attempt fails independently with `p`.
///
/// Stops once the expected-value tail `p^n (n + 1/(1-p))` (in RTTs) drops
/// below `epsilon`, so the result is within `epsilon * rtt` of `rtt/(1-p)`.
pub fn arq_expected_service_time(
    p: f64,
    timing: TimingParams,
    epsilon: f64,
) -> Result<ServiceTimeEstimate> {
    check_probability(p)?;
    if !(epsilon > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    if p >= 1.0 {
        return Err(Error::Divergent);
    }
    // Fail fast when even the mass term alone would outlast the budget.
    if p > 0.0 && epsilon.ln() / p.ln() > MAX_SERIES_TERMS as f64 {
        return Err(Error::Truncation { residual: p, epsilon });
    }
    let mut sum = 0.0;
    let mut reach = 1.0; // probability that attempt k happens
    let mut k = 0u64;
    loop {
        k += 1;
        sum += reach * (1.0 - p) * k as f64;
        reach *= p;
        let tail = reach * (k as f64 + 1.0 / (1.0 - p));
        if tail < epsilon {
            break;
        }
        if k >= MAX_SERIES_TERMS {
            return Err(Error::Truncation { residual: reach, epsilon });
        }
    }
    Ok(ServiceTimeEstimate {
        expected_slots: sum * timing.rtt,
        truncation_residual: reach,
        terms_used: k,
    })
}

/// HARQ with soft combining: attempt `k` fails with `p(mcs, k * snr)`.
pub fn harq_expected_service_time(
    table: &BlerTable,
    mcs: u32,
    snr_db: f64,
    timing: TimingParams,
    max_tx: u32,
    epsilon: f64,
) -> Result<ServiceTimeEstimate> {
    if max_tx < 1 {
        return Err(Error::Domain("max_tx must be >= 1".into()));
    }
    let probs = (1..=max_tx)
        .map(|attempt| table.harq_attempt_failure_prob(mcs, snr_db, attempt))
        .collect::<Result<Vec<_>>>()?;
    harq_expected_from_failure_probs(&probs, timing, epsilon)
}

/// HARQ expectation from an explicit per-attempt failure sequence.
pub fn harq_expected_from_failure_probs(
    failure_probs: &[f64],
    timing: TimingParams,
    epsilon: f64,
) -> Result<ServiceTimeEstimate> {
    let mut sum = 0.0;
    let mut reach = 1.0;
    let mut terms = 0u64;
    for (k, &p) in failure_probs.iter().enumerate() {
        check_probability(p)?;
        terms += 1;
        sum += reach * (1.0 - p) * (k + 1) as f64;
        reach *= p;
        if reach == 0.0 {
            break;
        }
    }
    if reach > epsilon {
        return Err(Error::Truncation { residual: reach, epsilon });
    }
    Ok(ServiceTimeEstimate {
        expected_slots: sum * timing.rtt,
        truncation_residual: reach,
        terms_used: terms,
    })
}

/// How the loss branches of the network-coding expectation are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NcWeighting {
    /// Condition on the tagged packet: it is lost with probability `p` and
    /// the block has `i` erasures with probability
    /// `(i/N) C(N,i) p^i (1-p)^(N-i)` given that. Weights sum to one.
    #[default]
    PerPacket,
    /// `C(N,i) p^i (1-p)^(N-i)` with no conditioning factor. Weights sum to
    /// `2 - p - (1-p)^N`, i.e. to one only when `N = 1`.
    Unconditioned,
}

/// Binomial probabilities `C(n, i) p^i (1-p)^(n-i)` for `i = 0..=n`,
/// evaluated in the log domain.
pub fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n as usize + 1];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[n as usize] = 1.0;
        return out;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_choose = 0.0;
    for i in 0..=n {
        if i > 0 {
            log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        out[i as usize] = (log_choose + i as f64 * lp + (n - i) as f64 * lq).exp();
    }
    out
}

/// Total weight of the intact, recovered and retransmitted branches.
pub fn nc_branch_weights(p: f64, code: NcCode, weighting: NcWeighting) -> Result<[f64; 3]> {
    check_probability(p)?;
    let pmf = binomial_pmf(code.n, p);
    let scale = |i: u32| match weighting {
        NcWeighting::PerPacket => i as f64 / code.n as f64,
        NcWeighting::Unconditioned => 1.0,
    };
    let recovered: f64 = (1..=code.redundancy()).map(|i| scale(i) * pmf[i as usize]).sum();
    let retransmitted: f64 = (code.redundancy() + 1..=code.n)
        .map(|i| scale(i) * pmf[i as usize])
        .sum();
    Ok([1.0 - p, recovered, retransmitted])
}

/// Block network coding with at most one repair round.
///
/// Branches, with `i` erasures among the `N` coded packets of the block:
/// - packet intact: `RTT + tau`;
/// - packet lost, `i <= N - K`: `RTT + i tau + (K+1)/2 tau`;
/// - packet lost, `i > N - K`: `2 RTT + (2N-K+1)/2 tau + (i-N+K) tau`.
///
/// The `(K+1)/2 tau` term is the mean position of a packet inside its
/// block, taken as given rather than derived.
pub fn nc_expected_service_time(
    p: f64,
    code: NcCode,
    timing: TimingParams,
) -> Result<ServiceTimeEstimate> {
    nc_expected_service_time_with(p, code, timing, NcWeighting::PerPacket)
}

pub fn nc_expected_service_time_with(
    p: f64,
    code: NcCode,
    timing: TimingParams,
    weighting: NcWeighting,
) -> Result<ServiceTimeEstimate> {
    check_probability(p)?;
    if p >= 1.0 {
        return Err(Error::Divergent);
    }
    let TimingParams { rtt, tau } = timing;
    let (k, n) = (code.k as f64, code.n as f64);
    let pmf = binomial_pmf(code.n, p);
    let scale = |i: u32| match weighting {
        NcWeighting::PerPacket => i as f64 / n,
        NcWeighting::Unconditioned => 1.0,
    };
    let mut sum = (1.0 - p) * (rtt + tau);
    for i in 1..=code.redundancy() {
        let w = scale(i) * pmf[i as usize];
        sum += w * (rtt + i as f64 * tau + (k + 1.0) / 2.0 * tau);
    }
    for i in code.redundancy() + 1..=code.n {
        let w = scale(i) * pmf[i as usize];
        let missing = i as f64 - n + k;
        sum += w * (2.0 * rtt + (2.0 * n - k + 1.0) / 2.0 * tau + missing * tau);
    }
    Ok(ServiceTimeEstimate {
        expected_slots: sum,
        truncation_residual: 0.0,
        terms_used: code.n as u64 + 1,
    })
}

/// Smallest `N` with `(N - K) / N >= p`.
pub fn redundancy_for_bler(k: u32, p: f64) -> Result<NcCode> {
    check_probability(p)?;
    if k < 1 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    if p >= 1.0 {
        return Err(Error::Divergent);
    }
    let mut n = ((k as f64 / (1.0 - p)).ceil() as u32).max(k);
    // Step back over float overshoot, then forward over undershoot.
    while n > k && ((n - 1 - k) as f64) >= p * (n - 1) as f64 {
        n -= 1;
    }
    while ((n - k) as f64) < p * n as f64 {
        n += 1;
    }
    NcCode::new(k, n)
}

/// Smallest `N` whose block decoding failure probability
/// `P[fewer than K of N received]` is at most `max_failure`.
pub fn redundancy_for_target(k: u32, p: f64, max_failure: f64) -> Result<NcCode> {
    check_probability(p)?;
    if k < 1 || !(max_failure > 0.0) {
        return Err(Error::Domain("need k >= 1 and a positive failure target".into()));
    }
    if p >= 1.0 {
        return Err(Error::Divergent);
    }
    const MAX_N: u32 = 100_000;
    let mut n = k;
    while n <= MAX_N {
        // Erasures beyond n - k break the block.
        let pmf = binomial_pmf(n, p);
        let failure: f64 = pmf[(n - k + 1) as usize..].iter().sum();
        if failure <= max_failure {
            return NcCode::new(k, n);
        }
        n += 1;
    }
    Err(Error::Domain(format!(
        "no code with k={k} reaches failure {max_failure} at p={p}"
    )))
}

/// Steady-state throughput in bits per second.
pub fn throughput_from_service_time(
    estimate: &ServiceTimeEstimate,
    bits_per_tb: f64,
    slot_seconds: f64,
) -> Result<f64> {
    if !(estimate.expected_slots > 0.0) {
        return Err(Error::Domain("expected service time must be positive".into()));
    }
    Ok(bits_per_tb / (estimate.expected_slots * slot_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{BlerRow, McsTable};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn timing(rtt: f64, tau: f64) -> TimingParams {
        TimingParams::new(rtt, tau).unwrap()
    }

    /// Enumerates every erasure pattern of a block and every position of the
    /// tagged packet in it, scoring each with the branch it falls into.
    fn nc_brute_force(p: f64, k: u32, n: u32, rtt: f64, tau: f64) -> f64 {
        let mut total = 0.0;
        for pattern in 0u32..(1 << n) {
            let erasures = pattern.count_ones();
            let prob = p.powi(erasures as i32) * (1.0 - p).powi((n - erasures) as i32);
            for pos in 0..n {
                let lost = pattern & (1 << pos) != 0;
                let value = if !lost {
                    rtt + tau
                } else if erasures <= n - k {
                    rtt + erasures as f64 * tau + (k as f64 + 1.0) / 2.0 * tau
                } else {
                    2.0 * rtt
                        + (2.0 * n as f64 - k as f64 + 1.0) / 2.0 * tau
                        + (erasures as f64 - n as f64 + k as f64) * tau
                };
                total += prob * value / n as f64;
            }
        }
        total
    }

    #[test]
    fn arq_examples() {
        let t = timing(10.0, 1.0);
        assert_eq!(arq_expected_service_time(0.0, t, DEFAULT_EPSILON).unwrap().expected_slots, 10.0);
        assert_abs_diff_eq!(
            arq_expected_service_time(0.5, t, DEFAULT_EPSILON).unwrap().expected_slots,
            20.0,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            arq_expected_service_time(0.9, t, DEFAULT_EPSILON).unwrap().expected_slots,
            100.0,
            epsilon = 1e-4
        );
        assert!(matches!(arq_expected_service_time(1.0, t, DEFAULT_EPSILON), Err(Error::Divergent)));
    }

    #[test]
    fn harq_examples() {
        let t = timing(10.0, 1.0);
        assert_eq!(
            harq_expected_from_failure_probs(&[0.0], t, DEFAULT_EPSILON).unwrap().expected_slots,
            10.0
        );
        let hand = harq_expected_from_failure_probs(&[0.5, 0.1, 0.0], t, DEFAULT_EPSILON).unwrap();
        assert_abs_diff_eq!(hand.expected_slots, 15.5, epsilon = 1e-12);

        let flat = BlerTable::flat(&[0], 0.5).unwrap();
        let harq = harq_expected_service_time(&flat, 0, 3.0, t, 64, DEFAULT_EPSILON).unwrap();
        let arq = arq_expected_service_time(0.5, t, DEFAULT_EPSILON).unwrap();
        assert_abs_diff_eq!(harq.expected_slots, arq.expected_slots, epsilon = 1e-9);

        let err = harq_expected_service_time(&flat, 0, 3.0, t, 4, DEFAULT_EPSILON).unwrap_err();
        match err {
            Error::Truncation { residual, .. } => assert_eq!(residual, 0.0625),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn harq_from_table_points() {
        // p(s) = 0.5, p(2s) = 0.1, p(3s) = 0 with s = 1 (0 dB).
        let table = BlerTable::from_rows([
            BlerRow { mcs_index: 0, snr_db: 0.0, bler: 0.5 },
            BlerRow { mcs_index: 0, snr_db: 10.0 * 2f64.log10(), bler: 0.1 },
            BlerRow { mcs_index: 0, snr_db: 10.0 * 3f64.log10(), bler: 0.0 },
        ])
        .unwrap();
        let est =
            harq_expected_service_time(&table, 0, 0.0, timing(10.0, 1.0), 16, DEFAULT_EPSILON).unwrap();
        assert_abs_diff_eq!(est.expected_slots, 15.5, epsilon = 1e-12);
        assert_eq!(est.truncation_residual, 0.0);
    }

    #[test]
    fn nc_examples() {
        let t = timing(10.0, 1.0);
        let code = NcCode::new(4, 6).unwrap();
        assert_eq!(nc_expected_service_time(0.0, code, t).unwrap().expected_slots, 11.0);
        let single = NcCode::new(1, 1).unwrap();
        assert_abs_diff_eq!(
            nc_expected_service_time(0.5, single, t).unwrap().expected_slots,
            16.5,
            epsilon = 1e-12
        );
        // Frozen from the enumeration oracle.
        let code = NcCode::new(2, 3).unwrap();
        assert_abs_diff_eq!(
            nc_expected_service_time(0.1, code, t).unwrap().expected_slots,
            11.36,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            nc_expected_service_time_with(0.1, code, t, NcWeighting::Unconditioned)
                .unwrap()
                .expected_slots,
            13.5965,
            epsilon = 1e-12
        );
    }

    #[test]
    fn nc_matches_enumeration() {
        for (p, k, n) in [(0.1, 2, 3), (0.3, 3, 5), (0.05, 8, 10), (0.6, 1, 4)] {
            let code = NcCode::new(k, n).unwrap();
            let t = timing(16.0, 1.0);
            assert_relative_eq!(
                nc_expected_service_time(p, code, t).unwrap().expected_slots,
                nc_brute_force(p, k, n, 16.0, 1.0),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn nc_large_block_is_finite() {
        let code = NcCode::new(9000, 10_000).unwrap();
        let est = nc_expected_service_time(0.05, code, timing(100.0, 1.0)).unwrap();
        assert!(est.expected_slots.is_finite() && est.expected_slots > 100.0);
        let w = nc_branch_weights(0.05, code, NcWeighting::PerPacket).unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn redundancy_examples() {
        assert_eq!(redundancy_for_bler(8, 0.0).unwrap(), NcCode { k: 8, n: 8 });
        assert_eq!(redundancy_for_bler(8, 0.2).unwrap(), NcCode { k: 8, n: 10 });
        assert_eq!(redundancy_for_bler(3, 0.25).unwrap(), NcCode { k: 3, n: 4 });
        assert_eq!(redundancy_for_bler(3, 0.5).unwrap(), NcCode { k: 3, n: 6 });
        let code = redundancy_for_target(4, 0.3, 0.01).unwrap();
        let fail: f64 = binomial_pmf(code.n, 0.3)[(code.n - 3) as usize..].iter().sum();
        assert!(fail <= 0.01);
        let fewer: f64 = binomial_pmf(code.n - 1, 0.3)[(code.n - 4) as usize..].iter().sum();
        assert!(fewer > 0.01);
    }

    #[test]
    fn throughput_examples() {
        let est = |x| ServiceTimeEstimate { expected_slots: x, truncation_residual: 0.0, terms_used: 1 };
        assert_abs_diff_eq!(throughput_from_service_time(&est(10.0), 1.0, 1.0).unwrap(), 0.1);
        assert_abs_diff_eq!(
            throughput_from_service_time(&est(20.0), 1000.0, 0.001).unwrap(),
            50_000.0,
            epsilon = 1e-9
        );
        let a = throughput_from_service_time(&est(7.0), 100.0, 0.5).unwrap();
        let b = throughput_from_service_time(&est(14.0), 100.0, 0.5).unwrap();
        assert_abs_diff_eq!(a, 2.0 * b, epsilon = 1e-12);
        assert!(throughput_from_service_time(&est(0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn nc_non_increasing_in_n_on_grid() {
        // With tau small against the RTT, added redundancy helps until the
        // tau-growth terms dominate; check the prefix before that point.
        let t = timing(100.0, 1.0);
        for &p in &[0.05, 0.1, 0.2, 0.3] {
            for k in [2u32, 4, 8] {
                let mut prev = f64::INFINITY;
                for n in k..=k + 3 {
                    let cur = nc_expected_service_time(p, NcCode::new(k, n).unwrap(), t)
                        .unwrap()
                        .expected_slots;
                    if n as f64 * p > (n - k) as f64 {
                        assert!(cur <= prev + 1e-9, "p={p} k={k} n={n}: {cur} > {prev}");
                    }
                    prev = cur;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn arq_close_to_closed_form(p in 0.0f64..=0.99, rtt in 1.0f64..200.0) {
            let est = arq_expected_service_time(p, timing(rtt, 1.0), DEFAULT_EPSILON).unwrap();
            prop_assert!((est.expected_slots - rtt / (1.0 - p)).abs() <= 10.0 * DEFAULT_EPSILON * rtt);
            prop_assert!(est.truncation_residual < DEFAULT_EPSILON);
            prop_assert!(est.expected_slots >= rtt);
        }

        #[test]
        fn harq_never_worse_than_arq(snr in -6.0f64..27.0, mcs in 0u32..28) {
            let table = BlerTable::default_synthetic(&McsTable::nr_256qam());
            let t = timing(16.0, 1.0);
            let p = table.bler_lookup(mcs, snr).unwrap();
            prop_assume!(p < 0.999);
            let harq = harq_expected_service_time(&table, mcs, snr, t, 10_000, 1e-9);
            let arq = arq_expected_service_time(p, t, DEFAULT_EPSILON).unwrap();
            if let Ok(harq) = harq {
                prop_assert!(harq.expected_slots <= arq.expected_slots + 1e-6);
            }
        }

        #[test]
        fn weights_sum_to_one(p in 0.0f64..0.999, k in 1u32..40, extra in 0u32..40) {
            let code = NcCode::new(k, k + extra).unwrap();
            let w = nc_branch_weights(p, code, NcWeighting::PerPacket).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nc_above_rtt(p in 0.0f64..0.99, k in 1u32..20, extra in 0u32..10) {
            let code = NcCode::new(k, k + extra).unwrap();
            let est = nc_expected_service_time(p, code, timing(10.0, 1.0)).unwrap();
            prop_assert!(est.expected_slots > 10.0);
        }

        #[test]
        fn redundancy_is_minimal(k in 1u32..200, p in 0.0f64..0.95) {
            let code = redundancy_for_bler(k, p).unwrap();
            let n = code.n as f64;
            prop_assert!((n - k as f64) / n >= p - 1e-12);
            prop_assert!((n - k as f64) / n - p < 1.0 / n);
        }
    }
}
