//! Experiments beside the main loop: residual curves, LIR surveys, path
//! probes and the fixed-point analysis.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::output::{num, write_rows};
use crate::error::{Error, Result};
use crate::estimator::ServiceEstimator;
use crate::fixedpoint::{
    beta_map_derivative, beta_map_derivative_fd, capest_iterate, find_fixed_point, psi_saturated,
    verify_shape, FixedPointResult, ShapeReport, WlanModel,
};
use crate::macsim::{
    lir_measurement, path_capacity_probe, run_iteration, AccessPolicy, LinkLoad, MacConfig,
    StopRule,
};
use crate::oracle::MaxMinSolution;
use crate::topo::{classify_lir, LinkId, LirMeasurement, Topology, DEFAULT_LIR_THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub name: String,
    /// The neighbor load is split evenly across these links.
    pub links: Vec<LinkId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub set: String,
    /// Total load on the set, packets/s.
    pub neighbor_load: f64,
    /// 1/S̄ of the backlogged target, packets/s.
    pub service_rate: f64,
    pub truncated: bool,
}

/// 1/S̄ of a backlogged `target` while each neighbor set carries each load of `grid`.
#[allow(clippy::too_many_arguments)]
pub fn residual_curve(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    target: LinkId,
    sets: &[NeighborSet],
    grid: &[f64],
    quota: u64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if target.0 >= topo.links.len() {
        return Err(Error::Config(format!("no link {target}")));
    }
    for s in sets {
        if s.links.is_empty()
            || s.links
                .iter()
                .any(|l| *l == target || l.0 >= topo.links.len())
        {
            return Err(Error::Config(format!(
                "neighbor set `{}` must name other existing links",
                s.name
            )));
        }
    }
    let jobs: Vec<(&NeighborSet, f64)> = sets
        .iter()
        .flat_map(|s| grid.iter().map(move |&y| (s, y)))
        .collect();
    let cap = quota * 40 * mac.uncontended_service_us(topo.link(target)).ceil() as u64;
    jobs.par_iter()
        .map(|&(set, load)| {
            let mut loads = vec![LinkLoad::backlogged(target)];
            let share = load / set.links.len() as f64;
            loads.extend(
                set.links
                    .iter()
                    .map(|&l| LinkLoad::new(l, share).background()),
            );
            let m = run_iteration(topo, &loads, mac, policy, StopRule::quota(quota, cap), seed)?;
            let mut est = ServiceEstimator::new();
            for s in m.link(target).service_samples() {
                est.record_success(s as f64);
            }
            Ok(CurvePoint {
                set: set.name.clone(),
                neighbor_load: load,
                service_rate: if est.k() == 0 { 0.0 } else { 1e6 / est.s_bar() },
                truncated: m.truncated,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LirRow {
    pub a: LinkId,
    pub b: LinkId,
    pub seed: u64,
    pub measurement: LirMeasurement,
    pub lir: f64,
    pub interfering: bool,
}

/// LIR of every unordered link pair, once per seed.
pub fn lir_survey(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    horizon_us: u64,
    seeds: &[u64],
) -> Result<Vec<LirRow>> {
    let n = topo.links.len();
    let jobs: Vec<(LinkId, LinkId, u64)> = (0..n)
        .flat_map(|a| {
            (a + 1..n).flat_map(move |b| seeds.iter().map(move |&s| (LinkId(a), LinkId(b), s)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(a, b, seed)| {
            let m = lir_measurement(topo, a, b, mac, policy, horizon_us, seed)?;
            Ok(LirRow {
                a,
                b,
                seed,
                measurement: m,
                lir: m.lir()?,
                interfering: classify_lir(&m, DEFAULT_LIR_THRESHOLD)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathProbeRow {
    pub flow: String,
    pub bottleneck: LinkId,
    /// Packets/s the path could still carry.
    pub capacity: f64,
    pub truncated: bool,
}

/// Probes each flow's path with the other flows running at `rates`.
pub fn path_probe_survey(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    rates: &[f64],
    quota: u64,
    seed: u64,
) -> Result<Vec<PathProbeRow>> {
    if rates.len() != topo.flows.len() {
        return Err(Error::Config(format!(
            "{} rates for {} flows",
            rates.len(),
            topo.flows.len()
        )));
    }
    topo.flows
        .par_iter()
        .enumerate()
        .map(|(i, flow)| {
            let mut others = rates.to_vec();
            others[i] = 0.0;
            let lambda = topo.link_loads(&others);
            let background: Vec<LinkLoad> = topo
                .link_ids()
                .filter(|l| lambda[l.0] > 0.0)
                .map(|l| LinkLoad::new(l, lambda[l.0]))
                .collect();
            let p = path_capacity_probe(topo, &flow.path, &background, quota, mac, policy, seed)?;
            Ok(PathProbeRow {
                flow: flow.id.clone(),
                bottleneck: p.bottleneck,
                capacity: p.capacity,
                truncated: p.truncated,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub model: WlanModel,
    pub lambda_0: f64,
    pub bisection: FixedPointResult,
    /// One iteration per α.
    pub sweeps: Vec<(f64, FixedPointResult)>,
    pub shape: ShapeReport,
    /// Worst relative disagreement between f′ and its finite difference.
    pub derivative_error: f64,
}

/// Bisection, the CapEst iteration for each α from λ_0 = 10⁻⁴/(b_0σ), and the shape scan.
pub fn run_fixedpoint(
    model: &WlanModel,
    alphas: &[f64],
    tol: f64,
    max_iter: usize,
    grid: usize,
) -> Result<FixedPointReport> {
    let bisection = find_fixed_point(model, tol)?;
    let lambda_0 = 1e-4 * model.psi_zero();
    let sweeps = alphas
        .iter()
        .map(|&a| Ok((a, capest_iterate(model, lambda_0, a, tol, max_iter)?)))
        .collect::<Result<Vec<_>>>()?;
    let shape = verify_shape(model, grid)?;
    let derivative_error = (1..=10)
        .map(|i| {
            let beta = f64::from(i) / 11.0 / model.b0();
            let a = beta_map_derivative(model, beta);
            let fd = beta_map_derivative_fd(model, beta, 1e-5 / model.b0());
            (a - fd).abs() / a.abs()
        })
        .fold(0.0, f64::max);
    Ok(FixedPointReport {
        model: model.clone(),
        lambda_0,
        bisection,
        sweeps,
        shape,
        derivative_error,
    })
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let rows = points.iter().map(|p| {
        vec![
            p.set.clone(),
            num(p.neighbor_load),
            num(p.service_rate),
            u8::from(p.truncated).to_string(),
        ]
    });
    write_rows(
        std::fs::File::create(path)?,
        "set,neighbor_load_pps,service_rate_pps,truncated",
        rows,
    )
}

pub fn write_lir_csv(topo: &Topology, rows: &[LirRow], path: &Path) -> Result<()> {
    let rows = rows.iter().map(|r| {
        vec![
            topo.link_name(r.a),
            topo.link_name(r.b),
            r.seed.to_string(),
            num(r.measurement.c11),
            num(r.measurement.c22),
            num(r.measurement.c31),
            num(r.measurement.c32),
            num(r.lir),
            u8::from(r.interfering).to_string(),
        ]
    });
    write_rows(
        std::fs::File::create(path)?,
        "link_a,link_b,seed,c11_pps,c22_pps,c31_pps,c32_pps,lir,interfering",
        rows,
    )
}

pub fn write_path_probe_csv(topo: &Topology, rows: &[PathProbeRow], path: &Path) -> Result<()> {
    let rows = rows.iter().map(|r| {
        vec![
            r.flow.clone(),
            topo.link_name(r.bottleneck),
            num(r.capacity),
            u8::from(r.truncated).to_string(),
        ]
    });
    write_rows(
        std::fs::File::create(path)?,
        "flow,bottleneck,capacity_pps,truncated",
        rows,
    )
}

/// oracle.csv (flow, rate, freezing round, bottleneck) and oracle_trace.csv (every bisection probe).
pub fn write_oracle(topo: &Topology, solution: &MaxMinSolution, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows = topo.flows.iter().enumerate().map(|(f, flow)| {
        let round = solution.groups.iter().position(|g| g.contains(&f));
        vec![
            flow.id.clone(),
            num(solution.rates[f]),
            round.map_or(String::new(), |r| (r + 1).to_string()),
            round.map_or(String::new(), |r| topo.link_name(solution.bottlenecks[r])),
        ]
    });
    write_rows(
        std::fs::File::create(dir.join("oracle.csv"))?,
        "flow,rate_pps,round,bottleneck",
        rows,
    )?;
    let probes = solution.trace.iter().map(|p| {
        vec![
            p.round.to_string(),
            num(p.level),
            p.feasible_votes.to_string(),
            u8::from(p.feasible).to_string(),
        ]
    });
    write_rows(
        std::fs::File::create(dir.join("oracle_trace.csv"))?,
        "round,level_pps,feasible_votes,feasible",
        probes,
    )
}

/// trace.csv (λ_k and Ψ(λ_k) per α), alpha_sweep.csv and shape.json; rates in packets/s.
pub fn write_fixedpoint(report: &FixedPointReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = &report.model;
    let trace = report.sweeps.iter().flat_map(|(alpha, r)| {
        r.trace.iter().enumerate().map(move |(k, &l)| {
            vec![
                num(*alpha),
                k.to_string(),
                num(l * 1e6),
                num(psi_saturated(m, l) * 1e6),
            ]
        })
    });
    write_rows(
        std::fs::File::create(dir.join("trace.csv"))?,
        "alpha,k,lambda_pps,psi_pps",
        trace,
    )?;
    let sweep = report.sweeps.iter().map(|(alpha, r)| {
        vec![
            num(*alpha),
            r.iterations.to_string(),
            u8::from(r.converged).to_string(),
            u8::from(r.is_monotone_nondecreasing()).to_string(),
            num(r.lambda_star * 1e6),
            num(report.bisection.lambda_star * 1e6),
        ]
    });
    write_rows(
        std::fs::File::create(dir.join("alpha_sweep.csv"))?,
        "alpha,iterations,converged,monotone,lambda_star_pps,bisection_lambda_star_pps",
        sweep,
    )?;
    #[derive(Serialize)]
    struct ShapeDoc<'a> {
        model: &'a WlanModel,
        bisection_lambda_star_pps: f64,
        decreasing: bool,
        concave: bool,
        nonnegative_slope_points: usize,
        nonnegative_curvature_points: usize,
        derivative_error: f64,
        shape: &'a ShapeReport,
    }
    let doc = ShapeDoc {
        model: m,
        bisection_lambda_star_pps: report.bisection.lambda_star * 1e6,
        decreasing: report.shape.decreasing(),
        concave: report.shape.concave(),
        nonnegative_slope_points: report.shape.nonnegative_slope.len(),
        nonnegative_curvature_points: report.shape.nonnegative_curvature.len(),
        derivative_error: report.derivative_error,
        shape: &report.shape,
    };
    std::fs::write(dir.join("shape.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}
