//! The CapEst loop and its reports.
//!
//! Each iteration resets the estimators, simulates the network at the
//! current per-link loads until every loaded link has finished `quota`
//! packets, turns the outcomes into residual estimates, steps the allocator
//! and recomputes the loads from the new flow rates.

mod output;
mod studies;

use std::time::Instant;

use serde::Serialize;

use crate::allocator::{
    allocate, check_constraint, effective_airtimes, AllocationState, AllocatorConfig,
};
use crate::error::{Error, Result};
use crate::estimator::{LossAccounting, LossModel, ResidualEstimate, ServiceEstimator};
use crate::macsim::{run_iteration, AccessPolicy, ArrivalProcess, LinkLoad, MacConfig, StopRule};
use crate::topo::{LinkId, Topology};

pub use output::{
    write_flows_csv, write_links_csv, write_report, Summary, FLOWS_HEADER, LINKS_HEADER,
    SCHEMA_VERSION,
};
pub use studies::{
    lir_survey, path_probe_survey, residual_curve, run_fixedpoint, write_curve_csv,
    write_fixedpoint, write_lir_csv, write_oracle, write_path_probe_csv, CurvePoint,
    FixedPointReport, LirRow, NeighborSet, PathProbeRow,
};

/// Gap to the oracle that counts as converged.
pub const CONVERGENCE_BAND: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct CapEstConfig {
    pub iterations: usize,
    /// Packets each loaded link finishes per iteration.
    pub quota: u64,
    pub seed: u64,
    pub allocator: AllocatorConfig,
    pub loss_accounting: LossAccounting,
    pub arrivals: ArrivalProcess,
    /// Run time at the new loads before measurement starts, µs.
    pub warmup_us: u64,
}

impl Default for CapEstConfig {
    fn default() -> Self {
        Self {
            iterations: crate::scenario::DEFAULT_ITERATIONS,
            quota: crate::scenario::DEFAULT_QUOTA,
            seed: 1,
            allocator: AllocatorConfig::default(),
            loss_accounting: LossAccounting::Expected,
            arrivals: ArrivalProcess::Poisson,
            warmup_us: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkRecord {
    /// Offered load during the iteration, packets/s.
    pub lambda: f64,
    pub successes: u64,
    pub drops: u64,
    /// Mean service time, µs; 0 without samples.
    pub s_bar: f64,
    pub service_rate: f64,
    pub residual: f64,
    pub t_bar: f64,
    pub r_allocate: f64,
    pub r_max: f64,
    /// Rate change the allocator emitted for this link.
    pub delta: f64,
    /// Constraint slack against measured airtimes; NaN without an estimate.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Flow rates the iteration ran at.
    pub offered: Vec<f64>,
    /// Flow rates the allocator emitted after it.
    pub rates: Vec<f64>,
    pub links: Vec<LinkRecord>,
    pub truncated: bool,
    pub duration_us: u64,
    pub constraint_holds: bool,
    pub violations: Vec<LinkId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Convergence {
    /// First iteration from which every later gap stays within the band.
    pub iterations_to_band: Option<usize>,
    pub final_gap: f64,
    /// Largest gap from `iterations_to_band` on.
    pub max_gap_after: Option<f64>,
    pub gaps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub flows: Vec<String>,
    pub links: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    pub oracle: Option<Vec<f64>>,
    pub convergence: Option<Convergence>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn final_rates(&self) -> &[f64] {
        self.iterations.last().map_or(&[], |it| &it.rates)
    }

    pub fn constraint_violations(&self) -> usize {
        self.iterations.iter().map(|it| it.violations.len()).sum()
    }

    pub fn truncated_iterations(&self) -> usize {
        self.iterations.iter().filter(|it| it.truncated).count()
    }

    /// Largest relative per-flow change between consecutive emitted rates, from `from` (1-based) on.
    pub fn max_step_after(&self, from: usize) -> f64 {
        self.iterations
            .windows(2)
            .filter(|w| w[1].iteration > from)
            .flat_map(|w| {
                w[0].rates
                    .iter()
                    .zip(&w[1].rates)
                    .map(|(a, b)| (b - a).abs() / a.max(f64::MIN_POSITIVE))
            })
            .fold(0.0, f64::max)
    }

    pub fn attach_oracle(&mut self, oracle: Vec<f64>) {
        let gaps: Vec<f64> = self
            .iterations
            .iter()
            .map(|it| gap(&it.rates, &oracle))
            .collect();
        self.convergence = Some(convergence(&gaps));
        self.oracle = Some(oracle);
    }
}

/// max_f |r_f − o_f| / o_f.
pub fn gap(rates: &[f64], oracle: &[f64]) -> f64 {
    rates
        .iter()
        .zip(oracle)
        .map(|(r, o)| (r - o).abs() / o)
        .fold(0.0, f64::max)
}

fn convergence(gaps: &[f64]) -> Convergence {
    let mut settled = None;
    for i in (0..gaps.len()).rev() {
        if gaps[i] > CONVERGENCE_BAND {
            break;
        }
        settled = Some(i + 1);
    }
    Convergence {
        iterations_to_band: settled,
        final_gap: gaps.last().copied().unwrap_or(f64::NAN),
        max_gap_after: settled.map(|s| gaps[s - 1..].iter().copied().fold(0.0, f64::max)),
        gaps: gaps.to_vec(),
    }
}

/// Seed of one iteration, spread so neighboring iterations share no stream.
pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    let mut z = seed ^ (iteration as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_capest(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    cfg: &CapEstConfig,
) -> Result<RunReport> {
    if cfg.iterations == 0 || cfg.quota == 0 {
        return Err(Error::Config(
            "iterations and quota must be at least 1".into(),
        ));
    }
    if topo.flows.is_empty() {
        return Err(Error::Config("scenario has no flows".into()));
    }
    let start = Instant::now();
    let nbr = topo.neighborhood();
    let loss_model = LossModel {
        w_m: mac.cw_max,
        slot_us: mac.slot_us as f64,
        retransmit_limit: mac.retransmit_limit.unwrap_or(1),
    };
    let slowest = topo
        .links
        .iter()
        .map(|l| mac.uncontended_service_us(l))
        .fold(0.0, f64::max);
    let mut estimators = vec![ServiceEstimator::new(); topo.links.len()];
    let mut state = AllocationState::initial(topo, cfg.allocator.rate_floor);
    let mut records = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations {
        let lambda = topo.link_loads(&state.rates);
        let loads: Vec<LinkLoad> = topo
            .link_ids()
            .filter(|l| lambda[l.0] > 0.0)
            .map(|l| LinkLoad::new(l, lambda[l.0]).with_process(cfg.arrivals))
            .collect();
        let cap =
            cfg.warmup_us + (cfg.quota as f64 * 10.0 * slowest * loads.len() as f64).ceil() as u64;
        let m = run_iteration(
            topo,
            &loads,
            mac,
            policy,
            StopRule::quota(cfg.quota, cap).with_warmup(cfg.warmup_us),
            iteration_seed(cfg.seed, iteration),
        )?;

        let mut residuals: Vec<Option<ResidualEstimate>> = vec![None; topo.links.len()];
        for l in topo.link_ids() {
            let est = &mut estimators[l.0];
            est.reset();
            if lambda[l.0] == 0.0 {
                continue;
            }
            let t_s = mac.data_us(topo.link(l)) as f64;
            let lm = m.link(l);
            est.ingest(lm, cfg.loss_accounting, &loss_model, t_s);
            if est.k() == 0 && m.truncated {
                // Nothing finished before the time cap. A packet still waiting
                // has taken at least the whole window; an idle link shows no
                // contention at all.
                let stand_in = if lm.residual > 0 {
                    m.duration_us.saturating_sub(cfg.warmup_us).max(1) as f64
                } else {
                    mac.uncontended_service_us(topo.link(l))
                };
                est.update_service(stand_in);
            }
            residuals[l.0] = Some(est.residual(l, lambda[l.0])?);
        }

        let step = allocate(&state, &residuals, &nbr, topo, &cfg.allocator)?;
        let measured: Vec<Option<f64>> = effective_airtimes(topo, &residuals)
            .into_iter()
            .map(Some)
            .collect();
        let check = check_constraint(&step.deltas, &residuals, &nbr, &measured)?;

        let links = topo
            .link_ids()
            .map(|l| {
                let lm = m.link(l);
                let r = residuals[l.0];
                LinkRecord {
                    lambda: lambda[l.0],
                    successes: lm.successes,
                    drops: lm.mac_drops,
                    s_bar: estimators[l.0].s_bar(),
                    service_rate: r.map_or(0.0, |r| r.service_rate),
                    residual: r.map_or(0.0, |r| r.residual),
                    t_bar: r.map_or(0.0, |r| r.t_bar),
                    r_allocate: step.state.r_allocate[l.0],
                    r_max: step.state.r_max[l.0],
                    delta: step.deltas[l.0],
                    slack: check.slack[l.0],
                }
            })
            .collect();
        records.push(IterationRecord {
            iteration,
            offered: state.rates.clone(),
            rates: step.state.rates.clone(),
            links,
            truncated: m.truncated,
            duration_us: m.duration_us,
            constraint_holds: check.holds,
            violations: check.violations,
        });
        state = step.state;
    }

    Ok(RunReport {
        flows: topo.flows.iter().map(|f| f.id.clone()).collect(),
        links: topo.link_ids().map(|l| topo.link_name(l)).collect(),
        iterations: records,
        oracle: None,
        convergence: None,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::{builtin_topology, BuiltinTopology, FlowSpec, Node, Relation};

    fn single_link() -> Topology {
        Topology::with_flow_links(
            vec![Node { id: 1, pos: None }, Node { id: 2, pos: None }],
            vec![],
            vec![FlowSpec::new("f", vec![1, 2])],
            Relation::new(),
            Relation::new(),
        )
        .unwrap()
    }

    #[test]
    fn single_link_approaches_saturation() {
        let t = single_link();
        let mac = MacConfig::default();
        let cfg = CapEstConfig {
            iterations: 12,
            ..CapEstConfig::default()
        };
        let r = run_capest(&t, &mac, &AccessPolicy::DcfBasic, &cfg).unwrap();
        assert_eq!(r.iterations.len(), 12);
        let sat = mac.solo_saturation_pps(&t.links[0]);
        let last = r.final_rates()[0];
        assert!((last - sat).abs() / sat < 0.05, "{last} vs {sat}");
        assert_eq!(r.constraint_violations(), 0);
    }

    #[test]
    fn truncated_iterations_are_flagged_not_fatal() {
        let t = Topology::with_flow_links(
            (1..=3).map(|id| Node { id, pos: None }).collect(),
            vec![],
            vec![FlowSpec::new("f", vec![1, 2, 3])],
            Relation::from_pairs([(1, 2), (2, 3), (1, 3)]),
            Relation::new(),
        )
        .unwrap();
        let cfg = CapEstConfig {
            iterations: 3,
            quota: 50,
            seed: 4,
            ..CapEstConfig::default()
        };
        let r = run_capest(&t, &MacConfig::default(), &AccessPolicy::DcfBasic, &cfg).unwrap();
        assert!(r.iterations[0].truncated);
        assert!(r.truncated_iterations() >= 1);
        assert!(r.final_rates()[0].is_finite() && r.final_rates()[0] >= 1.0);
    }

    #[test]
    fn first_iteration_runs_at_the_floor() {
        let t = builtin_topology(BuiltinTopology::Fim);
        let cfg = CapEstConfig {
            iterations: 1,
            ..CapEstConfig::default()
        };
        let r = run_capest(&t, &MacConfig::default(), &AccessPolicy::DcfBasic, &cfg).unwrap();
        assert!(r.iterations[0].offered.iter().all(|&x| x == 1.0));
        assert!(r.iterations[0].rates.iter().all(|&x| x > 1.0));
    }

    #[test]
    fn convergence_tracks_the_last_excursion() {
        let c = convergence(&[0.5, 0.04, 0.06, 0.03, 0.02]);
        assert_eq!(c.iterations_to_band, Some(4));
        assert_eq!(c.max_gap_after, Some(0.03));
        assert_eq!(convergence(&[0.5, 0.2]).iterations_to_band, None);
    }

    #[test]
    fn gap_is_worst_relative_error() {
        assert!((gap(&[90.0, 105.0], &[100.0, 100.0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ_per_iteration() {
        assert_ne!(iteration_seed(1, 1), iteration_seed(1, 2));
        assert_ne!(iteration_seed(1, 1), iteration_seed(2, 1));
    }

    #[test]
    fn rejects_empty_runs() {
        let t = single_link();
        let cfg = CapEstConfig {
            iterations: 0,
            ..CapEstConfig::default()
        };
        assert!(run_capest(&t, &MacConfig::default(), &AccessPolicy::DcfBasic, &cfg).is_err());
    }
}
