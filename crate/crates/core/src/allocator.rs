//! Centralized max-min and weighted rate allocation from residual estimates.

use crate::error::{Error, Result};
use crate::estimator::ResidualEstimate;
use crate::topo::{LinkId, NeighborhoodMap, Topology};

pub const DEFAULT_RATE_FLOOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fairness {
    #[default]
    MaxMin,
    /// Rates proportional to flow weights.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocatorConfig {
    pub fairness: Fairness,
    /// Lowest rate any flow is given, packets/s.
    pub rate_floor: f64,
    /// Scale neighbor rate changes by their airtime relative to the
    /// constrained link; off treats every packet as equal airtime.
    pub airtime_normalization: bool,
    /// Cap rate increases so every link's constraint holds against the
    /// residuals consumed.
    pub enforce_constraint: bool,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            fairness: Fairness::MaxMin,
            rate_floor: DEFAULT_RATE_FLOOR,
            airtime_normalization: true,
            enforce_constraint: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationState {
    /// Per link, packets/s (per unit weight in weighted mode).
    pub r_allocate: Vec<f64>,
    /// Per link, packets/s; infinite for links without flows.
    pub r_max: Vec<f64>,
    /// Per flow, packets/s.
    pub rates: Vec<f64>,
    pub iteration: usize,
}

impl AllocationState {
    /// Every flow at the floor; each link allows floor × flows through it.
    pub fn initial(topo: &Topology, rate_floor: f64) -> Self {
        Self {
            r_allocate: topo
                .link_ids()
                .map(|l| rate_floor * topo.flow_count(l) as f64)
                .collect(),
            r_max: vec![f64::INFINITY; topo.links.len()],
            rates: vec![rate_floor; topo.flows.len()],
            iteration: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintCheck {
    pub holds: bool,
    /// residual − Σ δ·T̄ₖ/T̄ᵢ per link; NaN for links that were not checked.
    pub slack: Vec<f64>,
    pub violations: Vec<LinkId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub state: AllocationState,
    /// Per-link rate change, Σ_f Δr_f·I(f, link).
    pub deltas: Vec<f64>,
    /// Flows whose rate the constraint cap lowered.
    pub capped_flows: Vec<usize>,
    /// Constraint verdict for the emitted deltas.
    pub check: ConstraintCheck,
    /// Links whose constraint the uncapped update would have violated.
    pub uncapped_violations: usize,
}

// Relative slack below which a constraint still counts as met.
const SLACK_TOL: f64 = 1e-9;

/// Σ_{k∈N(i)} Σ_f w_f·I(f,k)·a_ki, where a_ki = T̄_k/T̄_i or 1.
pub fn flow_incidence(
    topo: &Topology,
    nbr: &NeighborhoodMap,
    link: LinkId,
    weights: &[f64],
    airtimes: Option<&[f64]>,
) -> f64 {
    nbr.of(link)
        .iter()
        .map(|&k| {
            let w: f64 = topo
                .flows
                .iter()
                .zip(weights)
                .filter(|(f, _)| f.uses(k))
                .map(|(_, &w)| w)
                .sum();
            w * airtimes.map_or(1.0, |a| a[k.0] / a[link.0])
        })
        .sum()
}

/// Per-link rate changes implied by per-flow rate changes.
pub fn link_deltas(topo: &Topology, old: &[f64], new: &[f64]) -> Vec<f64> {
    let diff: Vec<f64> = new.iter().zip(old).map(|(n, o)| n - o).collect();
    topo.link_loads(&diff)
}

/// Checks Σ_{k∈N(i)} δ_k·T̄_k/T̄_i ≤ residual_i for every link with an estimate.
///
/// `airtimes[k]` may be `None` only when every known airtime is equal, in
/// which case the ratio is taken as one.
pub fn check_constraint(
    deltas: &[f64],
    residuals: &[Option<ResidualEstimate>],
    nbr: &NeighborhoodMap,
    airtimes: &[Option<f64>],
) -> Result<ConstraintCheck> {
    let known: Vec<f64> = airtimes.iter().flatten().copied().collect();
    let uniform = known
        .windows(2)
        .all(|w| (w[0] - w[1]).abs() <= 1e-9 * w[0].abs().max(1.0));
    let mut slack = vec![f64::NAN; deltas.len()];
    let mut violations = Vec::new();
    for (i, est) in residuals.iter().enumerate() {
        let Some(est) = est else { continue };
        let link = LinkId(i);
        let mut used = 0.0;
        for &k in nbr.of(link) {
            let d = deltas[k.0];
            if d == 0.0 {
                continue;
            }
            let ratio = match (airtimes[k.0], airtimes[i]) {
                (Some(tk), Some(ti)) => tk / ti,
                _ if uniform => 1.0,
                (None, _) => return Err(Error::MissingAirtime(k)),
                (_, None) => return Err(Error::MissingAirtime(link)),
            };
            used += d * ratio;
        }
        slack[i] = est.residual - used;
        let scale = est.residual.abs().max(used.abs()).max(1.0);
        if slack[i] < -SLACK_TOL * scale {
            violations.push(link);
        }
    }
    Ok(ConstraintCheck {
        holds: violations.is_empty(),
        slack,
        violations,
    })
}

/// One allocator update with equal weights.
pub fn maxmin_step(
    state: &AllocationState,
    residuals: &[Option<ResidualEstimate>],
    nbr: &NeighborhoodMap,
    topo: &Topology,
    cfg: &AllocatorConfig,
) -> Result<StepReport> {
    let weights = vec![1.0; topo.flows.len()];
    step(state, residuals, nbr, topo, &weights, cfg)
}

/// One allocator update dividing residual capacity in proportion to `weights`.
pub fn weighted_step(
    state: &AllocationState,
    residuals: &[Option<ResidualEstimate>],
    nbr: &NeighborhoodMap,
    topo: &Topology,
    weights: &[f64],
    cfg: &AllocatorConfig,
) -> Result<StepReport> {
    if weights.len() != topo.flows.len() {
        return Err(Error::Allocator(format!(
            "{} weights for {} flows",
            weights.len(),
            topo.flows.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::NonPositiveWeight(w));
    }
    step(state, residuals, nbr, topo, weights, cfg)
}

/// Dispatches on the configured fairness, using the topology's flow weights.
pub fn allocate(
    state: &AllocationState,
    residuals: &[Option<ResidualEstimate>],
    nbr: &NeighborhoodMap,
    topo: &Topology,
    cfg: &AllocatorConfig,
) -> Result<StepReport> {
    match cfg.fairness {
        Fairness::MaxMin => maxmin_step(state, residuals, nbr, topo, cfg),
        Fairness::Weighted => {
            let weights: Vec<f64> = topo.flows.iter().map(|f| f.weight).collect();
            weighted_step(state, residuals, nbr, topo, &weights, cfg)
        }
    }
}

/// Airtime used for link `l`: its measured T̄, else the nominal payload airtime.
pub fn effective_airtimes(topo: &Topology, residuals: &[Option<ResidualEstimate>]) -> Vec<f64> {
    topo.link_ids()
        .map(|l| match residuals[l.0] {
            Some(r) if r.t_bar > 0.0 => r.t_bar,
            _ => topo.link(l).payload_airtime_us(),
        })
        .collect()
}

fn step(
    state: &AllocationState,
    residuals: &[Option<ResidualEstimate>],
    nbr: &NeighborhoodMap,
    topo: &Topology,
    weights: &[f64],
    cfg: &AllocatorConfig,
) -> Result<StepReport> {
    let n_links = topo.links.len();
    if residuals.len() != n_links
        || state.r_allocate.len() != n_links
        || state.rates.len() != topo.flows.len()
    {
        return Err(Error::Allocator(
            "state or residuals do not match the topology".into(),
        ));
    }
    let floor = cfg.rate_floor;
    let carries: Vec<bool> = topo.link_ids().map(|l| topo.flow_count(l) > 0).collect();
    for l in topo.link_ids() {
        if carries[l.0] && residuals[l.0].is_none() {
            return Err(Error::NoMeasurement(l));
        }
    }
    let airtimes = effective_airtimes(topo, residuals);
    let norm = cfg.airtime_normalization.then_some(airtimes.as_slice());

    let mut r_max = vec![f64::INFINITY; n_links];
    for l in topo.link_ids() {
        if !carries[l.0] {
            continue;
        }
        let inc = flow_incidence(topo, nbr, l, weights, norm);
        if !(inc > 0.0) {
            return Err(Error::Allocator(format!(
                "link {} carries flows but has zero incidence",
                topo.link_name(l)
            )));
        }
        let res = residuals[l.0].expect("checked above").residual;
        r_max[l.0] = state.r_allocate[l.0] + res / inc;
    }

    let mut r_allocate = state.r_allocate.clone();
    for l in topo.link_ids() {
        if !carries[l.0] {
            continue;
        }
        // Ties resolve to the lowest link id; only the value matters here.
        let m = nbr
            .of(l)
            .iter()
            .filter(|k| carries[k.0])
            .map(|k| r_max[k.0])
            .fold(f64::INFINITY, f64::min);
        r_allocate[l.0] = m.max(floor);
    }

    let candidate: Vec<f64> = topo
        .flows
        .iter()
        .zip(weights)
        .map(|(f, &w)| {
            let m = f
                .path
                .iter()
                .map(|l| r_allocate[l.0])
                .fold(f64::INFINITY, f64::min);
            (w * m).max(floor)
        })
        .collect();

    let airtime_opts: Vec<Option<f64>> = if cfg.airtime_normalization {
        airtimes.iter().map(|&a| Some(a)).collect()
    } else {
        vec![Some(1.0); n_links]
    };
    let uncapped = check_constraint(
        &link_deltas(topo, &state.rates, &candidate),
        residuals,
        nbr,
        &airtime_opts,
    )?;

    let mut rates = candidate.clone();
    if cfg.enforce_constraint {
        project(
            topo,
            nbr,
            residuals,
            &airtime_opts,
            &state.rates,
            &mut rates,
            weights,
            floor,
        );
    }
    let capped_flows: Vec<usize> = (0..rates.len())
        .filter(|&f| rates[f] < candidate[f])
        .collect();
    if !capped_flows.is_empty() {
        for l in topo.link_ids() {
            let through = topo
                .flows
                .iter()
                .enumerate()
                .filter(|(_, f)| f.uses(l))
                .map(|(i, _)| (i, rates[i] / weights[i]));
            if let Some(top) = through.clone().map(|(_, r)| r).reduce(f64::max) {
                if through.clone().any(|(i, _)| capped_flows.contains(&i)) {
                    r_allocate[l.0] = r_allocate[l.0].min(top).max(floor);
                }
            }
        }
    }

    let deltas = link_deltas(topo, &state.rates, &rates);
    let check = check_constraint(&deltas, residuals, nbr, &airtime_opts)?;
    Ok(StepReport {
        state: AllocationState {
            r_allocate,
            r_max,
            rates,
            iteration: state.iteration + 1,
        },
        deltas,
        capped_flows,
        check,
        uncapped_violations: uncapped.violations.len(),
    })
}

/// Lowers rates until every link's constraint holds, one link at a time in
/// id order. For a violated link, flows touching its neighborhood are held
/// to `max(floor, w_f·d)` with the largest water level `d` that satisfies it.
/// Lowering rates never tightens another link's constraint, so one pass suffices.
#[allow(clippy::too_many_arguments)]
fn project(
    topo: &Topology,
    nbr: &NeighborhoodMap,
    residuals: &[Option<ResidualEstimate>],
    airtimes: &[Option<f64>],
    old: &[f64],
    rates: &mut [f64],
    weights: &[f64],
    floor: f64,
) {
    let ratio = |k: LinkId, i: LinkId| match (airtimes[k.0], airtimes[i.0]) {
        (Some(tk), Some(ti)) => tk / ti,
        _ => 1.0,
    };
    let used = |rates: &[f64], i: LinkId| -> f64 {
        let deltas = link_deltas(topo, old, rates);
        nbr.of(i).iter().map(|&k| deltas[k.0] * ratio(k, i)).sum()
    };
    for i in topo.link_ids() {
        let Some(est) = residuals[i.0] else { continue };
        let res = est.residual;
        let current = used(rates, i);
        if current <= res + SLACK_TOL * res.abs().max(1.0) {
            continue;
        }
        let group: Vec<usize> = (0..topo.flows.len())
            .filter(|&f| nbr.of(i).iter().any(|&k| topo.flows[f].uses(k)))
            .collect();
        let base: Vec<f64> = rates.to_vec();
        let capped = |d: f64| -> Vec<f64> {
            let mut r = base.clone();
            for &f in &group {
                r[f] = base[f].min((weights[f] * d).max(floor));
            }
            r
        };
        let mut hi = group
            .iter()
            .map(|&f| base[f] / weights[f])
            .fold(0.0, f64::max);
        let mut lo = 0.0;
        if used(&capped(lo), i) > res {
            rates.copy_from_slice(&capped(lo));
            continue;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if used(&capped(mid), i) <= res {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        rates.copy_from_slice(&capped(lo));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::{builtin_topology, BuiltinTopology, FlowSpec, Node, Relation};
    use proptest::prelude::*;

    fn est(link: usize, residual: f64) -> Option<ResidualEstimate> {
        Some(ResidualEstimate {
            link: LinkId(link),
            service_rate: residual.max(0.0) + 1.0,
            residual,
            t_bar: 744.727,
        })
    }

    fn single() -> Topology {
        Topology::with_flow_links(
            vec![Node { id: 1, pos: None }, Node { id: 2, pos: None }],
            vec![],
            vec![FlowSpec::new("f", vec![1, 2])],
            Relation::new(),
            Relation::new(),
        )
        .unwrap()
    }

    /// Single-hop flows on disjoint node pairs that all sense each other.
    fn clique(n: u32, weights: &[f64]) -> Topology {
        let nodes = (1..=2 * n).map(|id| Node { id, pos: None }).collect();
        let flows = (0..n)
            .map(|i| FlowSpec {
                weight: weights[i as usize],
                ..FlowSpec::new(format!("f{i}"), vec![2 * i + 1, 2 * i + 2])
            })
            .collect();
        let mut senses = Relation::new();
        for a in 1..=2 * n {
            for b in a + 1..=2 * n {
                senses.insert(a, b);
            }
        }
        Topology::with_flow_links(nodes, vec![], flows, senses, Relation::new()).unwrap()
    }

    #[test]
    fn singleton_neighborhood() {
        let t = single();
        let nbr = t.neighborhood();
        let state = AllocationState {
            r_allocate: vec![100.0],
            r_max: vec![f64::INFINITY],
            rates: vec![100.0],
            iteration: 0,
        };
        let rep = maxmin_step(
            &state,
            &[est(0, 600.0)],
            &nbr,
            &t,
            &AllocatorConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.state.r_max[0], 700.0);
        assert_eq!(rep.state.rates[0], 700.0);
        assert!(rep.check.holds);
    }

    #[test]
    fn negative_residual_reduces_rates() {
        let t = clique(2, &[1.0, 1.0]);
        let nbr = t.neighborhood();
        let state = AllocationState {
            r_allocate: vec![500.0, 500.0],
            r_max: vec![f64::INFINITY; 2],
            rates: vec![500.0, 500.0],
            iteration: 3,
        };
        let rep = maxmin_step(
            &state,
            &[est(0, -100.0), est(1, -100.0)],
            &nbr,
            &t,
            &AllocatorConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.state.r_max, vec![450.0, 450.0]);
        assert_eq!(rep.state.rates, vec![450.0, 450.0]);
        assert_eq!(rep.state.iteration, 4);
    }

    #[test]
    fn fim_symmetric_start_stays_equal() {
        let t = builtin_topology(BuiltinTopology::Fim);
        let nbr = t.neighborhood();
        let mut state = AllocationState::initial(&t, 1.0);
        for res in [800.0, 300.0, -50.0, 20.0] {
            let r: Vec<_> = (0..t.links.len()).map(|l| est(l, res)).collect();
            state = maxmin_step(&state, &r, &nbr, &t, &AllocatorConfig::default())
                .unwrap()
                .state;
            assert!(
                state
                    .rates
                    .iter()
                    .all(|&x| (x - state.rates[0]).abs() < 1e-9),
                "{:?}",
                state.rates
            );
        }
    }

    #[test]
    fn weighted_split_in_a_clique() {
        let t = clique(2, &[2.0, 1.0]);
        let nbr = t.neighborhood();
        let mut state = AllocationState::initial(&t, 1.0);
        let rep = weighted_step(
            &state,
            &[est(0, 900.0), est(1, 900.0)],
            &nbr,
            &t,
            &[2.0, 1.0],
            &AllocatorConfig::default(),
        )
        .unwrap();
        state = rep.state;
        assert!(
            (state.rates[0] / state.rates[1] - 2.0).abs() < 1e-9,
            "{:?}",
            state.rates
        );
    }

    #[test]
    fn unit_weights_match_maxmin() {
        let t = builtin_topology(BuiltinTopology::ChainCross);
        let nbr = t.neighborhood();
        let state = AllocationState::initial(&t, 1.0);
        let r: Vec<_> = (0..t.links.len())
            .map(|l| est(l, 400.0 + 10.0 * l as f64))
            .collect();
        let cfg = AllocatorConfig::default();
        let a = maxmin_step(&state, &r, &nbr, &t, &cfg).unwrap();
        let b = weighted_step(&state, &r, &nbr, &t, &vec![1.0; t.flows.len()], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_weights() {
        let t = clique(2, &[1.0, 1.0]);
        let nbr = t.neighborhood();
        let state = AllocationState::initial(&t, 1.0);
        let r = [est(0, 10.0), est(1, 10.0)];
        let cfg = AllocatorConfig::default();
        assert!(matches!(
            weighted_step(&state, &r, &nbr, &t, &[1.0, 0.0], &cfg),
            Err(Error::NonPositiveWeight(_))
        ));
        assert!(matches!(
            maxmin_step(&state, &[est(0, 1.0), None], &nbr, &t, &cfg),
            Err(Error::NoMeasurement(_))
        ));
    }

    #[test]
    fn constraint_boundaries() {
        let t = clique(3, &[1.0; 3]);
        let nbr = t.neighborhood();
        let r = [est(0, 90.0), est(1, 90.0), est(2, 90.0)];
        let same = vec![Some(744.7); 3];
        let zero = check_constraint(&[0.0; 3], &r, &nbr, &same).unwrap();
        assert!(zero.holds);
        assert_eq!(zero.slack, vec![90.0; 3]);
        let tight = check_constraint(&[30.0; 3], &r, &nbr, &same).unwrap();
        assert!(tight.holds);
        assert!(tight.slack.iter().all(|s| s.abs() < 1e-9));
        let over = check_constraint(&[31.0, 30.0, 30.0], &r, &nbr, &same).unwrap();
        assert!(!over.holds);
        assert_eq!(over.violations.len(), 3);
    }

    #[test]
    fn airtime_ratio_scales_consumption() {
        let t = clique(2, &[1.0, 1.0]);
        let nbr = t.neighborhood();
        let r = [est(0, 1000.0), est(1, 1000.0)];
        let airtimes = [Some(372.36), Some(744.73)];
        // Growth of 100 pkt/s on the short-packet link, then on the long-packet
        // link, as seen by the same constrained link.
        let short = check_constraint(&[100.0, 0.0], &r, &nbr, &airtimes).unwrap();
        let long = check_constraint(&[0.0, 100.0], &r, &nbr, &airtimes).unwrap();
        let used_short = 1000.0 - short.slack[1];
        let used_long = 1000.0 - long.slack[1];
        assert!((used_short / used_long - 0.5).abs() < 1e-3);
    }

    #[test]
    fn missing_airtime_only_matters_when_they_differ() {
        let t = clique(2, &[1.0, 1.0]);
        let nbr = t.neighborhood();
        let r = [est(0, 100.0), est(1, 100.0)];
        assert!(check_constraint(&[10.0, 10.0], &r, &nbr, &[Some(744.7), None]).is_ok());
        let mut t3 = clique(3, &[1.0; 3]);
        t3.links[2].packet_size_bytes = 512;
        let nbr3 = t3.neighborhood();
        let r3 = [est(0, 100.0), est(1, 100.0), est(2, 100.0)];
        assert!(matches!(
            check_constraint(&[10.0; 3], &r3, &nbr3, &[Some(744.7), Some(372.4), None]),
            Err(Error::MissingAirtime(_))
        ));
    }

    #[test]
    fn zero_residuals_keep_a_settled_state() {
        let t = builtin_topology(BuiltinTopology::Fim);
        let nbr = t.neighborhood();
        let state = AllocationState {
            r_allocate: vec![120.0; t.links.len()],
            r_max: vec![f64::INFINITY; t.links.len()],
            rates: vec![120.0; t.flows.len()],
            iteration: 0,
        };
        let r: Vec<_> = (0..t.links.len()).map(|l| est(l, 0.0)).collect();
        let next = maxmin_step(&state, &r, &nbr, &t, &AllocatorConfig::default())
            .unwrap()
            .state;
        assert_eq!(next.r_allocate, state.r_allocate);
        assert_eq!(next.rates, state.rates);
    }

    proptest! {
        #[test]
        fn steps_satisfy_constraint_and_floor(
            residuals in proptest::collection::vec(-300.0..900.0f64, 14),
            rates in proptest::collection::vec(1.0..400.0f64, 5),
        ) {
            let t = builtin_topology(BuiltinTopology::ChainCross);
            let nbr = t.neighborhood();
            let mut state = AllocationState::initial(&t, 1.0);
            state.rates = rates.clone();
            for (l, r) in state.r_allocate.iter_mut().enumerate() {
                if let Some(m) = t.flows.iter().zip(&rates).filter(|(f, _)| f.uses(LinkId(l))).map(|(_, &x)| x).reduce(f64::max) {
                    *r = m;
                }
            }
            let r: Vec<_> = (0..t.links.len()).map(|l| est(l, residuals[l % residuals.len()])).collect();
            let rep = maxmin_step(&state, &r, &nbr, &t, &AllocatorConfig::default()).unwrap();
            for (f, flow) in t.flows.iter().enumerate() {
                let bound = flow.path.iter().map(|l| rep.state.r_allocate[l.0]).fold(f64::INFINITY, f64::min);
                prop_assert!(rep.state.rates[f] >= 1.0);
                prop_assert!(rep.state.rates[f] <= bound.max(1.0) + 1e-9);
            }
            // Only the floor can leave a constraint violated.
            for &l in &rep.check.violations {
                for &k in nbr.of(l) {
                    for (i, f) in t.flows.iter().enumerate() {
                        if f.uses(k) {
                            prop_assert!(rep.state.rates[i] <= 1.0 + 1e-9);
                        }
                    }
                }
            }
        }

        #[test]
        fn weight_scale_cancels(c in 0.1..10.0f64, res in 50.0..900.0f64) {
            let t = builtin_topology(BuiltinTopology::Fim);
            let nbr = t.neighborhood();
            let w = [4.0, 1.0, 4.0];
            let cw: Vec<f64> = w.iter().map(|x| x * c).collect();
            let base = AllocationState {
                r_allocate: vec![50.0; t.links.len()],
                r_max: vec![f64::INFINITY; t.links.len()],
                rates: vec![200.0, 50.0, 200.0],
                iteration: 0,
            };
            let scaled = AllocationState {
                r_allocate: base.r_allocate.iter().map(|r| r / c).collect(),
                ..base.clone()
            };
            let r: Vec<_> = (0..t.links.len()).map(|l| est(l, res)).collect();
            let cfg = AllocatorConfig { rate_floor: 1e-9, ..AllocatorConfig::default() };
            let a = weighted_step(&base, &r, &nbr, &t, &w, &cfg).unwrap();
            let b = weighted_step(&scaled, &r, &nbr, &t, &cw, &cfg).unwrap();
            for (x, y) in a.state.rates.iter().zip(&b.state.rates) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }
}
