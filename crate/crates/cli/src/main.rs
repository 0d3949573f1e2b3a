//! `capest`: runs CapEst scenarios, oracles and the fixed-point analysis.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use capest_core::allocator::Fairness;
use capest_core::experiment::{
    lir_survey, path_probe_survey, residual_curve, run_capest, run_fixedpoint, write_curve_csv,
    write_fixedpoint, write_lir_csv, write_oracle, write_path_probe_csv, write_report,
    CapEstConfig, FixedPointReport, NeighborSet, RunReport,
};
use capest_core::fixedpoint::WlanModel;
use capest_core::oracle::{
    cached_maxmin_oracle, FeasibilityOptions, MaxMinSolution, OracleOptions,
};
use capest_core::{AllocatorConfig, LinkId, Scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

/// Iterations within which a run must settle in the band under `--check`.
const CHECK_BUDGET: usize = 18;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "capest",
    version,
    about = "Measurement-based capacity estimation for CSMA/CA networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios in the given mode.
    Run(RunArgs),
    /// Analyse the saturated single-hop model.
    Fixedpoint(FixedpointArgs),
    /// Find the max-min (or weighted) rates of a scenario by simulation.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    CapestMaxmin,
    CapestWeighted,
    Oracle,
    Fixedpoint,
    LirSurvey,
    ResidualCurve,
    PathProbe,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario files or builtin names (`fim`, `chain_cross`).
    #[arg(required = true)]
    scenarios: Vec<String>,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Iterations; defaults to the scenario's `run.iterations`.
    #[arg(long)]
    iters: Option<usize>,
    /// Packets per link per iteration; defaults to the scenario's `run.quota`.
    #[arg(long)]
    quota: Option<u64>,
    /// Seeds, repeatable; defaults to the scenario's `run.seeds`.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Exit nonzero when a scenario misses its acceptance thresholds.
    #[arg(long)]
    check: bool,
    /// Compare CapEst runs with the oracle even without `--check`.
    #[arg(long)]
    compare: bool,
    /// Oracle solution cache; defaults to `<out>/oracle_cache.json`.
    #[arg(long)]
    oracle_cache: Option<PathBuf>,
    /// Oracle bisection tolerance, packets/s.
    #[arg(long, default_value_t = capest_core::oracle::DEFAULT_TOL_R)]
    tol: f64,
    /// Residual curve: the backlogged link, e.g. `3->4`; defaults to the first active link.
    #[arg(long)]
    target: Option<String>,
    /// Residual curve: `name=a->b+c->d`, repeatable; defaults to each neighbor on its own.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Residual curve: largest total neighbor load, packets/s.
    #[arg(long, default_value_t = 600.0)]
    max_load: f64,
    /// Residual curve: grid points from zero to `--max-load`.
    #[arg(long, default_value_t = 7)]
    points: usize,
    /// LIR survey: run length of each backlogged run, ms.
    #[arg(long, default_value_t = 5000)]
    horizon_ms: u64,
    /// Path probe: background flow rates, comma separated; defaults to the
    /// rates a CapEst run converges to.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
}

#[derive(Args)]
struct FixedpointArgs {
    /// Contending nodes.
    #[arg(long)]
    n: u32,
    /// Slot time, µs.
    #[arg(long, default_value_t = 20.0)]
    sigma: f64,
    /// Transmission time, µs.
    #[arg(long, default_value_t = 800.0)]
    ts: f64,
    /// Mean first backoff, slots.
    #[arg(long, default_value_t = 16.0)]
    b0: f64,
    /// Backoff stages k.
    #[arg(long, default_value_t = 7)]
    stages: u32,
    /// Iteration weights, repeatable; defaults to 1 − 1/n.
    #[arg(long = "alpha")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Points of the shape scan.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct OracleArgs {
    scenario: String,
    /// Bisection tolerance, packets/s.
    #[arg(long, default_value_t = capest_core::oracle::DEFAULT_TOL_R)]
    tol: f64,
    /// Raise flows in proportion to their weights.
    #[arg(long)]
    weighted: bool,
    /// Length of each feasibility run, ms.
    #[arg(long)]
    horizon_ms: Option<u64>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failed thresholds; empty means the check passed.
type Verdict = Vec<String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Fixedpoint(a) => cmd_fixedpoint(&a),
        Command::Oracle(a) => cmd_oracle(&a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Sizes the worker pool from `CAPEST_WORKERS`.
fn init_workers() -> Result<()> {
    let Ok(v) = std::env::var("CAPEST_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("CAPEST_WORKERS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn scenario_name(source: &str) -> String {
    Path::new(source)
        .file_stem()
        .map_or_else(|| source.to_string(), |s| s.to_string_lossy().into_owned())
}

struct Loaded {
    name: String,
    scenario: Scenario,
}

fn load(sources: &[String]) -> Result<Vec<Loaded>> {
    let mut out: Vec<Loaded> = Vec::new();
    for source in sources {
        let scenario =
            Scenario::open(source).with_context(|| format!("loading scenario `{source}`"))?;
        let name = scenario_name(source);
        if out.iter().any(|l| l.name == name) {
            bail!("two scenarios would share the output directory `{name}`");
        }
        out.push(Loaded { name, scenario });
    }
    Ok(out)
}

fn oracle_options(tol: f64, weighted: bool) -> OracleOptions {
    OracleOptions {
        tol_r: tol,
        weighted,
        ..OracleOptions::default()
    }
}

fn solve_oracle(s: &Scenario, cache: &Path, opts: &OracleOptions) -> Result<MaxMinSolution> {
    Ok(cached_maxmin_oracle(
        cache,
        &s.topology,
        &s.mac,
        &s.policy,
        opts,
    )?)
}

fn report_verdict(label: &str, verdict: &Verdict) -> bool {
    if verdict.is_empty() {
        println!("{label}: check PASS");
        true
    } else {
        println!("{label}: check FAIL: {}", verdict.join("; "));
        false
    }
}

fn cmd_run(a: &RunArgs) -> Result<bool> {
    if a.iters == Some(0) || a.quota == Some(0) {
        bail!("--iters and --quota must be at least 1");
    }
    let loaded = load(&a.scenarios)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cache = a
        .oracle_cache
        .clone()
        .unwrap_or_else(|| a.out.join("oracle_cache.json"));
    let verdicts: Vec<(String, Verdict)> = match a.mode {
        Mode::CapestMaxmin | Mode::CapestWeighted => run_capest_mode(a, &loaded, &cache)?,
        Mode::Oracle => loaded
            .par_iter()
            .map(|l| {
                let sol = solve_oracle(&l.scenario, &cache, &oracle_options(a.tol, false))?;
                write_oracle(&l.scenario.topology, &sol, &a.out.join(&l.name))?;
                print_rates(&l.name, &l.scenario, &sol.rates);
                Ok((l.name.clone(), Vec::new()))
            })
            .collect::<Result<_>>()?,
        Mode::Fixedpoint => loaded
            .par_iter()
            .map(|l| {
                let report = scenario_fixedpoint(&l.scenario)?;
                write_fixedpoint(&report, &a.out.join(&l.name))?;
                Ok((l.name.clone(), fixedpoint_verdict(&report)))
            })
            .collect::<Result<_>>()?,
        Mode::LirSurvey => jobs(a, &loaded)
            .par_iter()
            .map(|(l, seed)| {
                let s = &l.scenario;
                let rows = lir_survey(
                    &s.topology,
                    &s.mac,
                    &s.policy,
                    a.horizon_ms * 1000,
                    &[*seed],
                )?;
                let dir = seed_dir(&a.out, &l.name, *seed)?;
                write_lir_csv(&s.topology, &rows, &dir.join("lir.csv"))?;
                Ok((format!("{} seed {seed}", l.name), Vec::new()))
            })
            .collect::<Result<_>>()?,
        Mode::ResidualCurve => jobs(a, &loaded)
            .par_iter()
            .map(|(l, seed)| {
                let s = &l.scenario;
                let (target, sets) = curve_sets(a, s)?;
                let grid = load_grid(a.max_load, a.points)?;
                let quota = a.quota.unwrap_or(s.run.quota);
                let points = residual_curve(
                    &s.topology,
                    &s.mac,
                    &s.policy,
                    target,
                    &sets,
                    &grid,
                    quota,
                    *seed,
                )?;
                let dir = seed_dir(&a.out, &l.name, *seed)?;
                write_curve_csv(&points, &dir.join("curve.csv"))?;
                let truncated = points.iter().filter(|p| p.truncated).count();
                let verdict = if truncated > 0 {
                    vec![format!("{truncated} truncated points")]
                } else {
                    Vec::new()
                };
                Ok((format!("{} seed {seed}", l.name), verdict))
            })
            .collect::<Result<_>>()?,
        Mode::PathProbe => jobs(a, &loaded)
            .par_iter()
            .map(|(l, seed)| {
                let s = &l.scenario;
                let quota = a.quota.unwrap_or(s.run.quota);
                let rates = if a.rates.is_empty() {
                    capest(a, s, Fairness::MaxMin, *seed)?
                        .final_rates()
                        .to_vec()
                } else {
                    a.rates.clone()
                };
                let rows = path_probe_survey(&s.topology, &s.mac, &s.policy, &rates, quota, *seed)?;
                let dir = seed_dir(&a.out, &l.name, *seed)?;
                write_path_probe_csv(&s.topology, &rows, &dir.join("path_probe.csv"))?;
                Ok((format!("{} seed {seed}", l.name), Vec::new()))
            })
            .collect::<Result<_>>()?,
    };
    let mut ok = true;
    if a.check {
        for (label, v) in &verdicts {
            ok &= report_verdict(label, v);
        }
    }
    Ok(ok)
}

fn jobs<'a>(a: &RunArgs, loaded: &'a [Loaded]) -> Vec<(&'a Loaded, u64)> {
    loaded
        .iter()
        .flat_map(|l| {
            let seeds = if a.seeds.is_empty() {
                l.scenario.run.seeds.clone()
            } else {
                a.seeds.clone()
            };
            seeds.into_iter().map(move |s| (l, s))
        })
        .collect()
}

fn seed_dir(out: &Path, name: &str, seed: u64) -> Result<PathBuf> {
    let dir = out.join(name).join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn capest(a: &RunArgs, s: &Scenario, fairness: Fairness, seed: u64) -> Result<RunReport> {
    let cfg = CapEstConfig {
        iterations: a.iters.unwrap_or(s.run.iterations),
        quota: a.quota.unwrap_or(s.run.quota),
        seed,
        allocator: AllocatorConfig {
            fairness,
            ..AllocatorConfig::default()
        },
        ..CapEstConfig::default()
    };
    Ok(run_capest(&s.topology, &s.mac, &s.policy, &cfg)?)
}

fn run_capest_mode(a: &RunArgs, loaded: &[Loaded], cache: &Path) -> Result<Vec<(String, Verdict)>> {
    let weighted = a.mode == Mode::CapestWeighted;
    let fairness = if weighted {
        Fairness::Weighted
    } else {
        Fairness::MaxMin
    };
    let oracles: Vec<Option<Vec<f64>>> = if a.check || a.compare {
        loaded
            .par_iter()
            .map(|l| {
                Ok(Some(
                    solve_oracle(&l.scenario, cache, &oracle_options(a.tol, weighted))?.rates,
                ))
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; loaded.len()]
    };
    let jobs: Vec<(usize, u64)> = jobs(a, loaded)
        .into_iter()
        .map(|(l, s)| {
            (
                loaded
                    .iter()
                    .position(|x| std::ptr::eq(x, l))
                    .expect("job scenario"),
                s,
            )
        })
        .collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let l = &loaded[i];
            let mut report = capest(a, &l.scenario, fairness, seed)?;
            if let Some(o) = &oracles[i] {
                report.attach_oracle(o.clone());
            }
            let dir = seed_dir(&a.out, &l.name, seed)?;
            let summary = write_report(&report, &dir)?;
            let label = format!("{} seed {seed}", l.name);
            println!(
                "{label}: final rates {}{}",
                fmt_rates(&summary.final_rates),
                summary
                    .final_gap
                    .map_or(String::new(), |g| format!(", final gap {:.2}%", 100.0 * g))
            );
            Ok((label, capest_verdict(&report)))
        })
        .collect()
}

fn capest_verdict(r: &RunReport) -> Verdict {
    let mut v = Vec::new();
    if let Some(c) = &r.convergence {
        match c.iterations_to_band {
            Some(k) if k <= CHECK_BUDGET => {}
            Some(k) => v.push(format!(
                "settled in the band only from iteration {k} (budget {CHECK_BUDGET})"
            )),
            None => v.push(format!(
                "final gap {:.2}% is outside the band",
                100.0 * c.final_gap
            )),
        }
    }
    if r.constraint_violations() > 0 {
        v.push(format!(
            "{} constraint violations",
            r.constraint_violations()
        ));
    }
    v
}

fn fmt_rates(r: &[f64]) -> String {
    let parts: Vec<String> = r.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn print_rates(label: &str, s: &Scenario, rates: &[f64]) {
    for (f, r) in s.topology.flows.iter().zip(rates) {
        println!("{label}: {} {r:.3} pkt/s", f.id);
    }
}

fn curve_sets(a: &RunArgs, s: &Scenario) -> Result<(LinkId, Vec<NeighborSet>)> {
    let topo = &s.topology;
    let target = match &a.target {
        Some(name) => topo.find_link(name)?,
        None => *topo
            .active_links()
            .first()
            .context("scenario has no active link")?,
    };
    let sets = if a.sets.is_empty() {
        topo.neighborhood()
            .of(target)
            .iter()
            .filter(|&&l| l != target)
            .map(|&l| NeighborSet {
                name: topo.link_name(l),
                links: vec![l],
            })
            .collect()
    } else {
        a.sets
            .iter()
            .map(|source| {
                let (name, links) = source
                    .split_once('=')
                    .with_context(|| format!("--set `{source}` must look like name=a->b+c->d"))?;
                let links = links
                    .split('+')
                    .map(|l| topo.find_link(l))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(NeighborSet {
                    name: name.to_string(),
                    links,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    if sets.is_empty() {
        bail!(
            "link {} has no neighbors; name a set with --set",
            topo.link_name(target)
        );
    }
    Ok((target, sets))
}

fn load_grid(max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || max.is_nan() || max <= 0.0 {
        bail!("--points must be at least 2 and --max-load positive");
    }
    Ok((0..points)
        .map(|i| max * i as f64 / (points - 1) as f64)
        .collect())
}

/// The model a scenario's MAC implies: every transmitting node contends.
fn scenario_fixedpoint(s: &Scenario) -> Result<FixedPointReport> {
    let topo = &s.topology;
    let mut senders: Vec<_> = topo
        .active_links()
        .iter()
        .map(|&l| topo.link(l).tx)
        .collect();
    senders.sort_unstable();
    senders.dedup();
    let first = *topo
        .active_links()
        .first()
        .context("scenario has no active link")?;
    let n = u32::try_from(senders.len())?;
    let t_s = s.mac.data_us(topo.link(first)) as f64;
    let k = s.mac.retransmit_limit.unwrap_or(7);
    let model = WlanModel::from_mac(n, &s.mac, t_s, k)?;
    Ok(run_fixedpoint(
        &model,
        &[1.0 - 1.0 / f64::from(n)],
        1e-9,
        100_000,
        1000,
    )?)
}

fn fixedpoint_verdict(r: &FixedPointReport) -> Verdict {
    let mut v = Vec::new();
    if !r.bisection.converged {
        v.push("bisection did not converge".into());
    }
    for (alpha, it) in &r.sweeps {
        let agree =
            (it.lambda_star - r.bisection.lambda_star).abs() <= 1e-6 * r.bisection.lambda_star;
        if !it.converged || !agree {
            v.push(format!(
                "alpha {alpha}: iteration did not reach the fixed point"
            ));
        } else if !it.is_monotone_nondecreasing() {
            v.push(format!("alpha {alpha}: trace is not monotone"));
        }
    }
    if !r.shape.decreasing() {
        v.push(format!(
            "f' >= 0 at {} grid points",
            r.shape.nonnegative_slope.len()
        ));
    }
    if !r.shape.concave() {
        v.push(format!(
            "f'' >= 0 at {} grid points",
            r.shape.nonnegative_curvature.len()
        ));
    }
    if r.derivative_error > 1e-4 {
        v.push(format!(
            "derivative disagreement {:.1e}",
            r.derivative_error
        ));
    }
    v
}

fn cmd_fixedpoint(a: &FixedpointArgs) -> Result<bool> {
    let model = WlanModel::canonical(a.n, a.sigma, a.ts, a.b0, a.stages).with_context(|| {
        format!(
            "n={} sigma={} ts={} b0={} stages={}",
            a.n, a.sigma, a.ts, a.b0, a.stages
        )
    })?;
    let alphas = if a.alphas.is_empty() {
        vec![1.0 - 1.0 / f64::from(a.n)]
    } else {
        a.alphas.clone()
    };
    let report = run_fixedpoint(&model, &alphas, a.tol, a.max_iter, a.grid)?;
    println!(
        "bisection: lambda* {:.6} pkt/s, converged {}",
        report.bisection.lambda_star * 1e6,
        report.bisection.converged
    );
    for (alpha, it) in &report.sweeps {
        println!(
            "alpha {alpha}: lambda {:.6} pkt/s after {} steps, converged {}, monotone {}",
            it.lambda_star * 1e6,
            it.iterations,
            it.converged,
            it.is_monotone_nondecreasing()
        );
    }
    println!(
        "shape: decreasing {}, concave {} ({} of {} points with f'' >= 0), derivative error {:.1e}",
        report.shape.decreasing(),
        report.shape.concave(),
        report.shape.nonnegative_curvature.len(),
        report.shape.interior_points,
        report.derivative_error
    );
    if let Some(out) = &a.out {
        write_fixedpoint(&report, out)?;
    }
    Ok(!a.check || report_verdict("fixedpoint", &fixedpoint_verdict(&report)))
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let s = Scenario::open(&a.scenario)
        .with_context(|| format!("loading scenario `{}`", a.scenario))?;
    let mut opts = oracle_options(a.tol, a.weighted);
    if let Some(h) = a.horizon_ms {
        opts.feasibility = FeasibilityOptions::with_horizon(h * 1000);
    }
    let sol = match &a.cache {
        Some(cache) => solve_oracle(&s, cache, &opts)?,
        None => capest_core::oracle::maxmin_oracle(&s.topology, &s.mac, &s.policy, &opts)?,
    };
    print_rates(&scenario_name(&a.scenario), &s, &sol.rates);
    if let Some(out) = &a.out {
        write_oracle(&s.topology, &sol, out)?;
    }
    Ok(())
}
