use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rayon::prelude::*;
use svclab_core::analytic::{
    arq_expected_service_time, harq_expected_service_time, nc_expected_service_time,
    ServiceTimeEstimate, TimingParams,
};
use svclab_core::channel::{snr_grid, BlerTable, McsTable};
use svclab_core::optimizer::{self, AnalyticScheme, OptimizerInputs, Policy, PolicyCurve};
use svclab_core::studies::{self, ComparePoint, StudyPoint};
use svclab_core::{sim, Error, SimConfig, SimScheme};

use crate::manifest::Manifest;
use crate::output::{write_atomic, write_string};
use crate::svg::{line_chart, Series};

pub struct Ctx {
    pub manifest: Manifest,
    pub out: PathBuf,
    pub svg: bool,
}

impl Ctx {
    fn tables(&self) -> Result<(McsTable, BlerTable)> {
        let mcs = self.manifest.mcs_table()?;
        let bler = self.manifest.bler_table(&mcs)?;
        Ok((mcs, bler))
    }

    fn note(&self, path: &Path) {
        eprintln!("wrote {}", path.display());
    }

    fn plot(&self, name: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Result<()> {
        if self.svg {
            let p = write_string(&self.out, name, &line_chart(title, x, y, series))?;
            self.note(&p);
        }
        Ok(())
    }
}

fn warn_tau(rtt: f64, tau: f64) {
    if let Ok(t) = TimingParams::new(rtt, tau) {
        if !t.tau_negligible() {
            eprintln!("warning: tau = {tau} is not negligible against rtt = {rtt} (tau >= rtt/10)");
        }
    }
}

fn estimate(
    scheme: AnalyticScheme,
    bler: &BlerTable,
    mcs: u32,
    snr: f64,
    timing: TimingParams,
    epsilon: f64,
) -> Result<Result<ServiceTimeEstimate, Error>> {
    let p = bler.bler_lookup(mcs, snr)?;
    Ok(match scheme {
        AnalyticScheme::Arq => arq_expected_service_time(p, timing, epsilon),
        AnalyticScheme::Harq { max_tx } => {
            harq_expected_service_time(bler, mcs, snr, timing, max_tx, epsilon)
        }
        AnalyticScheme::Nc { code } => nc_expected_service_time(p, code, timing),
    })
}

pub fn analytic(ctx: &Ctx) -> Result<()> {
    let a = &ctx.manifest.analytic;
    let (mcs_table, bler) = ctx.tables()?;
    let timing = TimingParams::new(a.rtt, a.tau)?;
    warn_tau(a.rtt, a.tau);
    let schemes = a
        .schemes
        .iter()
        .map(|s| {
            let parsed: AnalyticScheme = s.parse()?;
            Ok(match parsed {
                AnalyticScheme::Harq { .. } if s == "harq" => AnalyticScheme::Harq { max_tx: a.max_tx },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let indices: Vec<u32> = if a.mcs.is_empty() {
        mcs_table.entries().iter().map(|e| e.index).collect()
    } else {
        a.mcs.clone()
    };
    let grid = snr_grid(a.snr_lo, a.snr_hi, a.snr_step)?;
    let path = write_atomic(&ctx.out, "analytic.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["scheme", "snr_db", "mcs", "expected_slots", "residual"])?;
        for &scheme in &schemes {
            for &m in &indices {
                for &snr in &grid {
                    let (x, r) = match estimate(scheme, &bler, m, snr, timing, a.epsilon)? {
                        Ok(e) => (format!("{:.9}", e.expected_slots), format!("{:e}", e.truncation_residual)),
                        Err(Error::Truncation { residual, .. }) => (String::new(), format!("{residual:e}")),
                        Err(Error::Divergent) => (String::new(), "1e0".into()),
                        Err(e) => return Err(e.into()),
                    };
                    wtr.write_record([scheme.name(), snr.to_string(), m.to_string(), x, r])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    ctx.note(&path);
    Ok(())
}

#[derive(Debug, Default, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scheme: Option<SimScheme>,
    #[arg(long)]
    pub mcs: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub packets: Option<u64>,
}

fn fmt_stat(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

pub fn simulate(ctx: &Ctx, args: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let (_, bler) = ctx.tables()?;
    let mut cfg: SimConfig = ctx.manifest.sim.clone();
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    if let Some(m) = args.mcs {
        cfg.mcs = m;
    }
    if let Some(s) = args.snr {
        cfg.snr_db = s;
    }
    if let Some(n) = args.packets {
        cfg.num_packets = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    warn_tau(cfg.rtt_slots as f64, cfg.tau_slots as f64);
    let res = sim::run(&cfg, &bler)?;
    let p = write_atomic(&ctx.out, "records.csv", |w| Ok(res.write_records_csv(w)?))?;
    ctx.note(&p);
    let summary = [
        cfg.scheme.to_string(),
        fmt_stat(res.mean_service_slots),
        fmt_stat(res.p99_service_slots),
        format!("{:.6}", res.throughput_packets_per_slot),
        format!("{:.6}", res.failure_rate()),
    ];
    let p = write_atomic(&ctx.out, "summary.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["scheme", "mean_slots", "p99_slots", "throughput", "fail_rate"])?;
        wtr.write_record(&summary)?;
        wtr.flush()?;
        Ok(())
    })?;
    ctx.note(&p);
    println!("{}", summary.join(","));
    Ok(())
}

fn parse_policy(s: &str) -> Result<Policy> {
    match s {
        "min_service_time" => Ok(Policy::MinServiceTime),
        "max_throughput" => Ok(Policy::MaxThroughput),
        other => bail!("unknown policy `{other}`"),
    }
}

fn run_sweep(
    base: &OptimizerInputs,
    range: (f64, f64, f64),
    policies: &[Policy],
    schemes: &[AnalyticScheme],
) -> Result<Vec<PolicyCurve>> {
    let jobs: Vec<(Policy, AnalyticScheme)> = policies
        .iter()
        .flat_map(|&p| schemes.iter().map(move |&s| (p, s)))
        .collect();
    let curves = jobs
        .par_iter()
        .map(|&(p, s)| optimizer::sweep(base, range, &[p], &[s]).map(|mut v| v.remove(0)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(curves)
}

fn curve_plots(ctx: &Ctx, stem: &str, title: &str, curves: &[PolicyCurve]) -> Result<()> {
    let mcs_series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            name: format!("{} {}", c.scheme, c.policy),
            points: c
                .snr_grid
                .iter()
                .zip(&c.chosen_mcs)
                .map(|(&x, m)| (x, m.map_or(f64::NAN, f64::from)))
                .collect(),
        })
        .collect();
    ctx.plot(&format!("{stem}.svg"), title, "SNR (dB)", "chosen MCS", &mcs_series)
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    let s = &ctx.manifest.sweep;
    let (mcs_table, bler) = ctx.tables()?;
    warn_tau(s.rtt, s.tau);
    let timing = TimingParams::new(s.rtt, s.tau)?;
    let schemes = s.schemes.iter().map(|x| Ok(x.parse()?)).collect::<Result<Vec<AnalyticScheme>>>()?;
    let policies = s.policies.iter().map(|p| parse_policy(p)).collect::<Result<Vec<_>>>()?;
    let mut base = OptimizerInputs::new(&bler, &mcs_table, timing, AnalyticScheme::Arq);
    base.bler_cap = s.bler_cap;
    base.resources = s.resources;
    let curves = run_sweep(&base, (s.lo, s.hi, s.step), &policies, &schemes)?;
    let p = write_atomic(&ctx.out, "curves.csv", |w| Ok(optimizer::write_curves_csv(&curves, w)?))?;
    ctx.note(&p);
    curve_plots(ctx, "curves", "MCS choice per policy", &curves)
}

fn run_points(points: &[StudyPoint], bler: &BlerTable) -> Result<Vec<ComparePoint>> {
    Ok(points
        .par_iter()
        .map(|p| p.run(bler))
        .collect::<Result<Vec<_>, _>>()?)
}

fn write_compare(ctx: &Ctx, name: &str, points: &[ComparePoint]) -> Result<()> {
    let p = write_atomic(&ctx.out, name, |w| Ok(studies::write_compare_csv(points, w)?))?;
    ctx.note(&p);
    Ok(())
}

fn study_settings(ctx: &Ctx, seed: Option<u64>) -> studies::StudySettings {
    let mut s = ctx.manifest.study;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    warn_tau(s.rtt_slots as f64, s.tau_slots as f64);
    s
}

fn sla_points(ctx: &Ctx, bler: &BlerTable, seed: Option<u64>) -> Result<Vec<ComparePoint>> {
    run_points(&studies::fig8_points(bler, &study_settings(ctx, seed))?, bler)
}

fn sla_plot(ctx: &Ctx, name: &str, points: &[ComparePoint]) -> Result<()> {
    let series = [
        Series {
            name: "harq".into(),
            points: points.iter().map(|c| (c.p_erasure, c.harq.p99)).collect(),
        },
        Series {
            name: "nc_block".into(),
            points: points.iter().map(|c| (c.p_erasure, c.nc.p99)).collect(),
        },
    ];
    ctx.plot(name, "99th-percentile service time", "erasure probability", "p99 (slots)", &series)
}

pub fn sla(ctx: &Ctx, seed: Option<u64>) -> Result<()> {
    let (_, bler) = ctx.tables()?;
    let points = sla_points(ctx, &bler, seed)?;
    let p = write_atomic(&ctx.out, "sla.csv", |w| Ok(studies::write_sla_csv(&points, w)?))?;
    ctx.note(&p);
    for c in &points {
        println!("p={:.2} harq_p99={} nc_p99={} ratio={:.3}", c.p_erasure, c.harq.p99, c.nc.p99, c.harq.p99 / c.nc.p99);
    }
    sla_plot(ctx, "sla.svg", &points)
}

pub fn gen_bler(ctx: &Ctx) -> Result<()> {
    let mcs = ctx.manifest.mcs_table()?;
    let table = ctx.manifest.synthetic_bler(&mcs)?;
    let p = write_atomic(&ctx.out, "bler_table.csv", |w| Ok(table.write_csv(w)?))?;
    ctx.note(&p);
    Ok(())
}

pub const FIGURES: [&str; 5] = ["fig4", "fig5", "fig6", "fig7", "fig8"];

fn compare_series(points: &[ComparePoint], nc_name: &str, value: impl Fn(&ComparePoint) -> (f64, f64)) -> [Series; 2] {
    [
        Series {
            name: "harq".into(),
            points: points.iter().map(|c| (c.snr_db, value(c).0)).collect(),
        },
        Series {
            name: nc_name.into(),
            points: points.iter().map(|c| (c.snr_db, value(c).1)).collect(),
        },
    ]
}

pub fn figures(ctx: &Ctx, only: &[String], seed: Option<u64>) -> Result<()> {
    for name in only {
        if !FIGURES.contains(&name.as_str()) {
            bail!("unknown figure `{name}`; expected one of {}", FIGURES.join(", "));
        }
    }
    let want = |f: &str| only.is_empty() || only.iter().any(|o| o == f);
    let (mcs, bler) = ctx.tables()?;
    let settings = study_settings(ctx, seed);

    if want("fig4") {
        let timing = TimingParams::new(settings.rtt_slots as f64, settings.tau_slots as f64)?;
        let base = OptimizerInputs::new(&bler, &mcs, timing, AnalyticScheme::harq());
        let curves = run_sweep(
            &base,
            (settings.snr_lo, settings.snr_hi, settings.snr_step),
            &[Policy::MinServiceTime, Policy::MaxThroughput],
            &[AnalyticScheme::harq(), AnalyticScheme::Arq],
        )?;
        let p = write_atomic(&ctx.out, "fig4.csv", |w| Ok(optimizer::write_curves_csv(&curves, w)?))?;
        ctx.note(&p);
        curve_plots(ctx, "fig4", "MCS for service time vs throughput", &curves)?;
    }
    if want("fig5") {
        let pts = run_points(&studies::fig5_points(&bler, &mcs, &settings)?, &bler)?;
        write_compare(ctx, "fig5.csv", &pts)?;
        let series = compare_series(&pts, "nc_block", |c| (c.harq.mean, c.nc.mean));
        ctx.plot("fig5.svg", "Mean service time, matched redundancy", "SNR (dB)", "slots", &series)?;
    }
    if want("fig6") {
        let pts = run_points(&studies::fig6_points(&bler, &mcs, &settings)?, &bler)?;
        write_compare(ctx, "fig6.csv", &pts)?;
        let gaps = |flight: u64| Series {
            name: format!("{flight} TB/RTT"),
            points: pts
                .iter()
                .filter(|c| c.flight == flight)
                .map(|c| (c.snr_db, c.gap() / c.harq.mean))
                .collect(),
        };
        ctx.plot(
            "fig6.svg",
            "Relative HARQ - NC gap",
            "SNR (dB)",
            "(HARQ - NC) / HARQ",
            &[gaps(16), gaps(160)],
        )?;
    }
    if want("fig7") {
        let pts = run_points(&studies::fig7_points(&bler, &mcs, &settings)?, &bler)?;
        write_compare(ctx, "fig7.csv", &pts)?;
        let mean = compare_series(&pts, "nc_hijack", |c| (c.harq.mean, c.nc.mean));
        ctx.plot("fig7.svg", "Hijack at rate 3/4: mean service time", "SNR (dB)", "slots", &mean)?;
        let tput = compare_series(&pts, "nc_hijack", |c| (c.harq.throughput, c.nc.throughput));
        ctx.plot("fig7_throughput.svg", "Hijack at rate 3/4: throughput", "SNR (dB)", "packets/slot", &tput)?;
    }
    if want("fig8") {
        let pts = run_points(&studies::fig8_points(&bler, &settings)?, &bler)?;
        write_compare(ctx, "fig8.csv", &pts)?;
        sla_plot(ctx, "fig8.svg", &pts)?;
    }
    Ok(())
}
