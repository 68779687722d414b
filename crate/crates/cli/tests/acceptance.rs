//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! run with `--nocapture` to see them.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use svclab_core::analytic::{
    arq_expected_service_time, harq_expected_service_time, nc_expected_service_time, DEFAULT_EPSILON,
};
use svclab_core::channel::{BlerRow, BlerTable, McsTable};
use svclab_core::combining::{effective_snr_equivalence, error_variance, lsq_oracle, optimal_weight, SignalMoments};
use svclab_core::studies::{self, ComparePoint, StudySettings};
use svclab_core::{sim, NcCode, SimConfig, SimResult, SimScheme, TimingParams};

/// Busy-process peaks seen so far, with the cap each run was configured for.
#[derive(Default)]
struct Peaks(Vec<(String, usize, usize)>);

impl Peaks {
    fn sim(&mut self, label: &str, cfg: &SimConfig, res: &SimResult) {
        self.0.push((label.to_string(), res.peak_busy_processes, cfg.num_harq_processes));
    }

    fn points(&mut self, label: &str, points: &[ComparePoint], caps: impl Fn(&ComparePoint) -> usize) {
        for c in points {
            let cap = caps(c);
            self.0.push((format!("{label} harq {:.1} dB", c.snr_db), c.harq.peak_busy, cap));
            self.0.push((format!("{label} nc {:.1} dB", c.snr_db), c.nc.peak_busy, cap));
        }
    }
}

type Outcome = (bool, String);

fn within_3se(res: &SimResult, expected: f64) -> bool {
    (res.mean_service_slots - expected).abs() <= 3.0 * res.standard_error()
}

fn arq_oracle(peaks: &mut Peaks) -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [0.1, 0.3, 0.5, 0.9] {
        let exact = 10.0 / (1.0 - p);
        let est = arq_expected_service_time(p, TimingParams::new(10.0, 1.0).unwrap(), DEFAULT_EPSILON).unwrap();
        let analytic_ok = (est.expected_slots - exact).abs() < 1e-6;
        let cfg = SimConfig {
            scheme: SimScheme::SrArq,
            rtt_slots: 10,
            num_packets: 1_000_000,
            max_retx: 400,
            seed: 1,
            ..SimConfig::default()
        };
        let res = sim::run(&cfg, &BlerTable::flat(&[0], p).unwrap()).unwrap();
        peaks.sim("arq", &cfg, &res);
        let mc_ok = within_3se(&res, exact) && res.failed_packets.is_empty();
        ok &= analytic_ok && mc_ok;
        notes.push(format!("p={p}: analytic {:.9} sim {:.4}±{:.4}", est.expected_slots, res.mean_service_slots, res.standard_error()));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(10);
    (ok, format!("{}; {:.2}s", notes.join(", "), elapsed.as_secs_f64()))
}

/// First attempt fails w.p. 0.5, the combined second w.p. 0.1, the third never.
fn hand_table() -> BlerTable {
    let rows = [(0.0, 0.5), (10.0 * 2f64.log10(), 0.1), (10.0 * 3f64.log10(), 0.0), (30.0, 0.0)];
    BlerTable::from_rows(rows.iter().map(|&(snr_db, bler)| BlerRow { mcs_index: 0, snr_db, bler })).unwrap()
}

fn harq_oracle(peaks: &mut Peaks) -> Outcome {
    let table = hand_table();
    let x = harq_expected_service_time(&table, 0, 0.0, TimingParams::new(10.0, 1.0).unwrap(), 16, DEFAULT_EPSILON)
        .unwrap()
        .expected_slots;
    let analytic_ok = (x - 15.5).abs() < 1e-12;
    let cfg = SimConfig {
        scheme: SimScheme::Harq,
        rtt_slots: 10,
        snr_db: 0.0,
        num_packets: 1_000_000,
        seed: 2,
        ..SimConfig::default()
    };
    let res = sim::run(&cfg, &table).unwrap();
    peaks.sim("harq", &cfg, &res);
    let ok = analytic_ok && within_3se(&res, 15.5);
    (ok, format!("analytic {x:.12} (1.55 x 10), sim {:.4}±{:.4}", res.mean_service_slots, res.standard_error()))
}

fn nc_oracle(peaks: &mut Peaks) -> Outcome {
    let code = NcCode::new(2, 3).unwrap();
    let cfg = SimConfig {
        scheme: SimScheme::NcBlock,
        code: Some(code),
        rtt_slots: 10,
        tau_slots: 1,
        max_retx: 1,
        num_packets: 200_000,
        seed: 3,
        ..SimConfig::default()
    };
    let res = sim::run(&cfg, &BlerTable::flat(&[0], 0.1).unwrap()).unwrap();
    peaks.sim("nc_block", &cfg, &res);
    let timing = TimingParams::new(9.0, 1.0).unwrap();
    let x = nc_expected_service_time(0.1, code, timing).unwrap().expected_slots;
    let rel = (res.mean_service_slots - x).abs() / x;
    (rel < 0.02, format!("sim {:.4} analytic {x:.4}, rel err {:.3}%", res.mean_service_slots, 100.0 * rel))
}

fn combining_math() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let (mut worst_rel, mut worst_eq) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.gen_range(1..=32u32);
        let m = SignalMoments::new(10f64.powf(rng.gen_range(-3.0..3.0)), 10f64.powf(rng.gen_range(-3.0..3.0))).unwrap();
        let (weights, var) = lsq_oracle(k as usize, m).unwrap();
        let w = optimal_weight(k, m).unwrap();
        for a in weights {
            worst_rel = worst_rel.max((a - w).abs() / w.abs());
        }
        let v = error_variance(k, m).unwrap();
        worst_rel = worst_rel.max((var - v).abs() / v.abs());
        let (combined, single) = effective_snr_equivalence(k, m).unwrap();
        worst_eq = worst_eq.max((combined - single).abs());
    }
    (worst_rel <= 1e-10 && worst_eq <= 1e-12, format!("max rel err {worst_rel:.2e}, max equivalence gap {worst_eq:.2e}"))
}

struct Studies {
    fig5: Vec<ComparePoint>,
    fig6: Vec<ComparePoint>,
    fig6_time: Duration,
    fig7: Vec<ComparePoint>,
    fig8: Vec<ComparePoint>,
}

fn run_studies() -> Studies {
    let mcs = McsTable::nr_256qam();
    let bler = BlerTable::default_synthetic(&mcs);
    let s = StudySettings::default();
    let fig5 = studies::run_points(&studies::fig5_points(&bler, &mcs, &s).unwrap(), &bler).unwrap();
    let start = Instant::now();
    let fig6 = studies::run_points(&studies::fig6_points(&bler, &mcs, &s).unwrap(), &bler).unwrap();
    let fig6_time = start.elapsed();
    let fig7 = studies::run_points(&studies::fig7_points(&bler, &mcs, &s).unwrap(), &bler).unwrap();
    let fig8 = studies::run_points(&studies::fig8_points(&bler, &s).unwrap(), &bler).unwrap();
    Studies { fig5, fig6, fig6_time, fig7, fig8 }
}

fn dominance(st: &Studies) -> Outcome {
    let bad: Vec<String> = st
        .fig5
        .iter()
        .filter(|c| c.nc.mean > c.harq.mean + 3.0 * c.gap_se())
        .map(|c| format!("{:.1}", c.snr_db))
        .collect();
    let third = st.fig5.len() / 3;
    let best = st.fig5[..third]
        .iter()
        .max_by(|a, b| (a.gap() / a.harq.mean).total_cmp(&(b.gap() / b.harq.mean)))
        .unwrap();
    let note = format!(
        "{} of {} points violate; max low-SNR reduction {:.2}% at {:.1} dB (reference: up to 7%)",
        bad.len(),
        st.fig5.len(),
        100.0 * best.gap() / best.harq.mean,
        best.snr_db
    );
    (bad.is_empty(), note)
}

fn flight_size(st: &Studies) -> Outcome {
    let mut violations = 0;
    let mut pairs = 0;
    for pair in st.fig6.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert_eq!((a.flight, b.flight), (16, 160));
        assert_eq!(a.snr_db, b.snr_db);
        pairs += 1;
        if b.gap() < a.gap() {
            violations += 1;
        }
    }
    let fast = st.fig6_time < Duration::from_secs(120);
    (
        violations == 0 && fast,
        format!("{violations} of {pairs} points with gap160 < gap16; sweep took {:.1}s", st.fig6_time.as_secs_f64()),
    )
}

fn hijack(st: &Studies) -> Outcome {
    let slower: Vec<&ComparePoint> = st.fig7.iter().filter(|c| c.nc.mean >= c.harq.mean).collect();
    let low_tput = st.fig7.iter().filter(|c| c.nc.throughput < 0.95 * c.harq.throughput).count();
    let min_ratio = st
        .fig7
        .iter()
        .map(|c| c.nc.throughput / c.harq.throughput)
        .fold(f64::INFINITY, f64::min);
    let mut note = format!(
        "mean: {} of {} points with hijack >= harq; throughput: {low_tput} points below 0.95x, min ratio {min_ratio:.2}",
        slower.len(),
        st.fig7.len()
    );
    if let Some(c) = slower.first() {
        note += &format!(" (e.g. {:.1} dB p={:.4}: hijack {:.2} harq {:.2})", c.snr_db, c.p_erasure, c.nc.mean, c.harq.mean);
    }
    (slower.is_empty() && low_tput == 0, note)
}

fn sla(st: &Studies) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for c in st.fig8.iter().filter(|c| c.p_erasure >= 0.05) {
        let ratio = c.harq.p99 / c.nc.p99;
        ok &= ratio > 1.0;
        notes.push(format!("p={:.2}: {ratio:.2}", c.p_erasure));
    }
    (ok, format!("p99 ratio {} (reference: approximately 2)", notes.join(", ")))
}

fn run_cli(dir: &Path, out: &str, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_svclab"))
        .current_dir(dir)
        .env_remove("SVCLAB_OUT")
        .args(["--config", "run.toml", "--out", out, "--format", "csv,svg"])
        .args(args)
        .output()
        .unwrap()
        .status;
    assert!(status.success(), "{args:?}");
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[sim]\nscheme = \"nc_block\"\ncode = { k = 4, n = 6 }\nsnr_db = -4.0\nnum_packets = 20000\n\
         [study]\npackets_per_point = 2000\nsnr_step = 1.0\n",
    )
    .unwrap();
    let commands: [&[&str]; 6] = [
        &["simulate"],
        &["analytic"],
        &["sweep"],
        &["sla"],
        &["gen-bler"],
        &["figures", "--only", "fig5,fig7"],
    ];
    for (i, args) in commands.iter().enumerate() {
        run_cli(dir.path(), &format!("a{i}"), args);
        run_cli(dir.path(), &format!("b{i}"), args);
    }
    let mut compared = 0;
    let mut diffs = Vec::new();
    for i in 0..commands.len() {
        let a = dir.path().join(format!("a{i}"));
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            compared += 1;
            let b = dir.path().join(format!("b{i}")).join(&name);
            if std::fs::read(a.join(&name)).unwrap() != std::fs::read(b).unwrap() {
                diffs.push(name.to_string_lossy().into_owned());
            }
        }
    }
    (diffs.is_empty() && compared > 0, format!("{compared} files compared, differing: {diffs:?}"))
}

fn process_cap(peaks: &Peaks) -> Outcome {
    let over: Vec<_> = peaks.0.iter().filter(|(_, peak, cap)| peak > cap).collect();
    let max = peaks.0.iter().map(|(_, p, _)| *p).max().unwrap_or(0);
    (over.is_empty(), format!("{} runs checked, max peak {max}, over cap: {over:?}", peaks.0.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance_criteria() {
    let mut peaks = Peaks::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("criterion {id:>2} {name}: {} | {}", if o.0 { "PASS" } else { "FAIL" }, o.1);
        results.push((id, name, o));
    };

    report(1, "arq oracle", guarded(|| arq_oracle(&mut peaks)));
    report(2, "harq oracle", guarded(|| harq_oracle(&mut peaks)));
    report(3, "nc oracle", guarded(|| nc_oracle(&mut peaks)));
    report(4, "combining", guarded(combining_math));

    let studies = catch_unwind(run_studies).ok();
    match &studies {
        Some(st) => {
            report(5, "dominance", guarded(|| dominance(st)));
            report(6, "flight size", guarded(|| flight_size(st)));
            report(7, "hijack", guarded(|| hijack(st)));
            report(8, "sla tail", guarded(|| sla(st)));
            peaks.points("fig5", &st.fig5, |_| 16);
            peaks.points("fig6", &st.fig6, |c| c.flight as usize);
            peaks.points("fig7", &st.fig7, |_| 16);
            peaks.points("fig8", &st.fig8, |_| 16);
        }
        None => {
            for (id, name) in [(5, "dominance"), (6, "flight size"), (7, "hijack"), (8, "sla tail")] {
                report(id, name, (false, "study sweep panicked".into()));
            }
        }
    }
    report(9, "determinism", guarded(determinism));
    report(10, "process cap", guarded(|| process_cap(&peaks)));

    let failed: Vec<String> = results.iter().filter(|r| !r.2 .0).map(|r| format!("{} ({})", r.0, r.1)).collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
