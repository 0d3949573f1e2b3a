//! Simulation ground truth: feasibility of a rate vector and the max-min
//! allocation found by water-filling over feasibility.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::macsim::{run_iteration, AccessPolicy, ArrivalProcess, LinkLoad, MacConfig, StopRule};
use crate::scenario::save_topology;
use crate::topo::{LinkId, Topology};

pub const DEFAULT_EPSILON: f64 = 0.02;
pub const DEFAULT_HORIZON_US: u64 = 30_000_000;
pub const DEFAULT_TOL_R: f64 = 2.0;

// How many tol_r steps below a bisection result the fresh-seed check may go.
const FRESH_BACKOFF_STEPS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityOptions {
    /// A link passes when delivered/offered ≥ 1 − epsilon.
    pub epsilon: f64,
    pub horizon_us: u64,
    pub warmup_us: u64,
    /// Largest fitted queue growth over the window, as a fraction of the
    /// window's arrivals, that still counts as noise.
    pub queue_growth_tolerance: f64,
    pub arrivals: ArrivalProcess,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self::with_horizon(DEFAULT_HORIZON_US)
    }
}

impl FeasibilityOptions {
    /// Default thresholds with the first fifth of the run as warmup.
    pub fn with_horizon(horizon_us: u64) -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            horizon_us,
            warmup_us: horizon_us / 5,
            queue_growth_tolerance: 0.01,
            arrivals: ArrivalProcess::Poisson,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkVerdict {
    pub link: LinkId,
    /// Packets/s offered to the link.
    pub offered: f64,
    /// Delivered over arrivals inside the window; 1 for an idle link.
    pub ratio: f64,
    /// Least-squares queue growth across the window, packets.
    pub queue_growth: f64,
    pub max_queue: usize,
    pub overflows: u64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    pub links: Vec<LinkVerdict>,
}

impl FeasibilityVerdict {
    /// The loaded link with the smallest delivered/offered ratio.
    pub fn worst_link(&self) -> Option<&LinkVerdict> {
        self.links
            .iter()
            .filter(|l| l.offered > 0.0)
            .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
    }

    pub fn min_ratio(&self) -> f64 {
        self.worst_link().map_or(1.0, |l| l.ratio)
    }
}

fn fitted_growth(samples: &[(u64, usize)]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mt = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let mq = samples.iter().map(|s| s.1 as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, q) in samples {
        sxy += (t as f64 - mt) * (q as f64 - mq);
        sxx += (t as f64 - mt).powi(2);
    }
    if sxx == 0.0 {
        return 0.0;
    }
    let span = (samples[samples.len() - 1].0 - samples[0].0) as f64;
    sxy / sxx * span
}

/// Offers λ = Σ r_f·I(f, link) to every link and checks that each keeps up.
pub fn is_feasible(
    topo: &Topology,
    flow_rates: &[f64],
    mac: &MacConfig,
    policy: &AccessPolicy,
    opts: &FeasibilityOptions,
    seed: u64,
) -> Result<FeasibilityVerdict> {
    if flow_rates.len() != topo.flows.len() {
        return Err(Error::Oracle(format!(
            "{} rates for {} flows",
            flow_rates.len(),
            topo.flows.len()
        )));
    }
    if let Some(r) = flow_rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(Error::Oracle(format!(
            "flow rates must be finite and nonnegative, got {r}"
        )));
    }
    if opts.warmup_us >= opts.horizon_us {
        return Err(Error::Oracle("warmup must end before the horizon".into()));
    }
    let offered = topo.link_loads(flow_rates);
    let loads: Vec<LinkLoad> = topo
        .link_ids()
        .filter(|l| offered[l.0] > 0.0)
        .map(|l| LinkLoad::new(l, offered[l.0]).with_process(opts.arrivals))
        .collect();
    let m = run_iteration(
        topo,
        &loads,
        mac,
        policy,
        StopRule::horizon(opts.horizon_us, opts.warmup_us),
        seed,
    )?;
    if m.truncated {
        return Err(Error::Truncated {
            at_us: m.duration_us,
        });
    }
    let links: Vec<LinkVerdict> = topo
        .link_ids()
        .map(|l| {
            let w = &m.link(l).window;
            let ratio = if w.arrivals == 0 {
                1.0
            } else {
                w.delivered as f64 / w.arrivals as f64
            };
            let queue_growth = fitted_growth(&w.queue_samples);
            let ok = ratio >= 1.0 - opts.epsilon
                && w.overflows == 0
                && queue_growth <= opts.queue_growth_tolerance * (w.arrivals as f64).max(1.0);
            LinkVerdict {
                link: l,
                offered: offered[l.0],
                ratio,
                queue_growth,
                max_queue: w.max_queue,
                overflows: w.overflows,
                ok,
            }
        })
        .collect();
    Ok(FeasibilityVerdict {
        feasible: links.iter().all(|l| l.ok),
        links,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Bisection stops once the bracket is narrower than this, packets/s.
    pub tol_r: f64,
    /// Each probe runs once per seed; the majority decides.
    pub seeds: Vec<u64>,
    pub feasibility: FeasibilityOptions,
    /// Raise flows in proportion to their weights instead of equally.
    pub weighted: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tol_r: DEFAULT_TOL_R,
            seeds: vec![1, 2, 3],
            feasibility: FeasibilityOptions::default(),
            weighted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionProbe {
    pub round: usize,
    /// Common level of the unfrozen flows, packets/s per unit weight.
    pub level: f64,
    pub feasible_votes: usize,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMinSolution {
    /// Packets/s, indexed like `topology.flows`.
    pub rates: Vec<f64>,
    /// Flow indices frozen together, in freezing order.
    pub groups: Vec<Vec<usize>>,
    /// The binding link behind each group.
    pub bottlenecks: Vec<LinkId>,
    pub trace: Vec<BisectionProbe>,
    /// Horizon the solution was found with; doubled when a first attempt was too noisy.
    pub horizon_us: u64,
}

struct Vote {
    feasible: bool,
    votes: usize,
    verdicts: Vec<FeasibilityVerdict>,
}

fn vote(
    topo: &Topology,
    rates: &[f64],
    mac: &MacConfig,
    policy: &AccessPolicy,
    opts: &FeasibilityOptions,
    seeds: &[u64],
) -> Result<Vote> {
    let verdicts = seeds
        .par_iter()
        .map(|&s| is_feasible(topo, rates, mac, policy, opts, s))
        .collect::<Result<Vec<_>>>()?;
    let votes = verdicts.iter().filter(|v| v.feasible).count();
    Ok(Vote {
        feasible: 2 * votes > verdicts.len(),
        votes,
        verdicts,
    })
}

/// The link with the lowest mean delivered/offered ratio across the runs.
fn binding_link(verdicts: &[FeasibilityVerdict]) -> Option<LinkId> {
    let n_links = verdicts.first()?.links.len();
    (0..n_links)
        .filter(|&i| verdicts[0].links[i].offered > 0.0)
        .map(|i| {
            let mean =
                verdicts.iter().map(|v| v.links[i].ratio).sum::<f64>() / verdicts.len() as f64;
            (LinkId(i), mean)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| l)
}

enum Attempt {
    Done(MaxMinSolution),
    Noisy(String),
}

fn water_fill(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    opts: &OracleOptions,
    round_seed: u64,
) -> Result<Attempt> {
    let n = topo.flows.len();
    let nbr = topo.neighborhood();
    let weight = |f: usize| {
        if opts.weighted {
            topo.flows[f].weight
        } else {
            1.0
        }
    };
    let ceiling = topo
        .links
        .iter()
        .map(|l| mac.solo_saturation_pps(l))
        .fold(0.0, f64::max)
        * 1.05;

    let mut frozen: Vec<Option<f64>> = vec![None; n];
    let mut groups = Vec::new();
    let mut bottlenecks = Vec::new();
    let mut trace = Vec::new();
    let mut level = 0.0;
    let rates_at = |frozen: &[Option<f64>], level: f64| -> Vec<f64> {
        (0..n)
            .map(|f| frozen[f].unwrap_or(weight(f) * level))
            .collect()
    };

    for round in 0.. {
        let unfrozen: Vec<usize> = (0..n).filter(|&f| frozen[f].is_none()).collect();
        if unfrozen.is_empty() {
            break;
        }
        let min_w = unfrozen
            .iter()
            .map(|&f| weight(f))
            .fold(f64::INFINITY, f64::min);
        let mut lo = level;
        let mut hi = ceiling / min_w;
        let top = vote(
            topo,
            &rates_at(&frozen, hi),
            mac,
            policy,
            &opts.feasibility,
            &opts.seeds,
        )?;
        trace.push(BisectionProbe {
            round,
            level: hi,
            feasible_votes: top.votes,
            feasible: top.feasible,
        });
        if top.feasible {
            return Ok(Attempt::Noisy(format!(
                "level {hi:.1} above every link's saturation rate judged feasible"
            )));
        }
        let mut binding = top.verdicts;
        while hi - lo > opts.tol_r {
            let mid = 0.5 * (lo + hi);
            let v = vote(
                topo,
                &rates_at(&frozen, mid),
                mac,
                policy,
                &opts.feasibility,
                &opts.seeds,
            )?;
            trace.push(BisectionProbe {
                round,
                level: mid,
                feasible_votes: v.votes,
                feasible: v.feasible,
            });
            if v.feasible {
                lo = mid;
            } else {
                hi = mid;
                binding = v.verdicts;
            }
        }

        // The accepted level sits within tol_r of the boundary, so fresh
        // seeds may reject it; back off a few steps before calling the
        // search untrustworthy.
        let fresh: Vec<u64> = opts
            .seeds
            .iter()
            .map(|s| s ^ round_seed.wrapping_add(round as u64 + 1))
            .collect();
        let start = lo;
        let mut confirmed = false;
        for _ in 0..=FRESH_BACKOFF_STEPS {
            let check = vote(
                topo,
                &rates_at(&frozen, lo),
                mac,
                policy,
                &opts.feasibility,
                &fresh,
            )?;
            trace.push(BisectionProbe {
                round,
                level: lo,
                feasible_votes: check.votes,
                feasible: check.feasible,
            });
            if check.feasible {
                confirmed = true;
                break;
            }
            lo = (lo - opts.tol_r).max(level);
        }
        if !confirmed {
            return Ok(Attempt::Noisy(format!(
                "level {start:.1} in round {round} was feasible during bisection but fails on fresh seeds \
                 even {FRESH_BACKOFF_STEPS} tolerance steps lower"
            )));
        }

        let b = binding_link(&binding)
            .ok_or_else(|| Error::Oracle("no loaded link to blame".into()))?;
        let group: Vec<usize> = unfrozen
            .iter()
            .copied()
            .filter(|&f| topo.flows[f].path.iter().any(|&l| nbr.contains(b, l)))
            .collect();
        let group = if group.is_empty() { unfrozen } else { group };
        for &f in &group {
            frozen[f] = Some(weight(f) * lo);
        }
        groups.push(group);
        bottlenecks.push(b);
        level = lo;
    }

    Ok(Attempt::Done(MaxMinSolution {
        rates: frozen
            .into_iter()
            .map(|r| r.expect("every flow frozen"))
            .collect(),
        groups,
        bottlenecks,
        trace,
        horizon_us: opts.feasibility.horizon_us,
    }))
}

/// Progressive water-filling: raise the unfrozen flows together until the
/// network stops keeping up, then freeze every flow crossing the binding
/// link's neighborhood, and repeat.
pub fn maxmin_oracle(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    opts: &OracleOptions,
) -> Result<MaxMinSolution> {
    if topo.flows.is_empty() {
        return Err(Error::Oracle("no flows to allocate".into()));
    }
    if opts.seeds.is_empty() || !(opts.tol_r > 0.0) {
        return Err(Error::Oracle(
            "need at least one seed and a positive tolerance".into(),
        ));
    }
    let first = match water_fill(topo, mac, policy, opts, 0x5eed)? {
        Attempt::Done(s) => return Ok(s),
        Attempt::Noisy(why) => why,
    };
    let mut wider = opts.clone();
    wider.feasibility = FeasibilityOptions {
        horizon_us: opts.feasibility.horizon_us * 2,
        warmup_us: opts.feasibility.warmup_us * 2,
        ..opts.feasibility.clone()
    };
    match water_fill(topo, mac, policy, &wider, 0x5eed)? {
        Attempt::Done(s) => Ok(s),
        Attempt::Noisy(why) => Err(Error::Oracle(format!(
            "feasibility is not monotone even with a doubled horizon: {first}; then {why}"
        ))),
    }
}

const CACHE_VERSION: &str = "capest-oracle-v1";

/// Identifies an oracle question: topology text, MAC, policy and options.
pub fn scenario_hash(
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    opts: &OracleOptions,
) -> String {
    let mut h = Sha256::new();
    for part in [
        CACHE_VERSION.to_string(),
        save_topology(topo),
        serde_json::to_string(mac).expect("mac serializes"),
        serde_json::to_string(policy).expect("policy serializes"),
        serde_json::to_string(opts).expect("options serialize"),
    ] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

fn read_cache(cache: &Path) -> Result<BTreeMap<String, MaxMinSolution>> {
    match std::fs::read_to_string(cache) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
        Err(e) => Err(e.into()),
    }
}

static CACHE_WRITE: Mutex<()> = Mutex::new(());

/// [`maxmin_oracle`] behind a JSON file of solutions keyed by [`scenario_hash`].
///
/// Writers re-read the file before inserting and replace it by rename, so
/// concurrent callers lose no entries within a process and never leave a
/// torn file.
pub fn cached_maxmin_oracle(
    cache: &Path,
    topo: &Topology,
    mac: &MacConfig,
    policy: &AccessPolicy,
    opts: &OracleOptions,
) -> Result<MaxMinSolution> {
    let key = scenario_hash(topo, mac, policy, opts);
    if let Some(hit) = read_cache(cache)?.remove(&key) {
        return Ok(hit);
    }
    let solution = maxmin_oracle(topo, mac, policy, opts)?;
    let _guard = CACHE_WRITE.lock().unwrap_or_else(|e| e.into_inner());
    let mut entries = read_cache(cache)?;
    entries.insert(key, solution.clone());
    if let Some(dir) = cache.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = cache.with_extension(format!("json.{}.tmp", std::process::id()));
    std::fs::write(&tmp, serde_json::to_string_pretty(&entries)? + "\n")?;
    std::fs::rename(&tmp, cache)?;
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::{FlowSpec, Node, Relation};

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

    fn short() -> FeasibilityOptions {
        FeasibilityOptions::with_horizon(4_000_000)
    }

    #[test]
    fn zero_rates_are_feasible() {
        let t = single_link();
        let v = is_feasible(
            &t,
            &[0.0],
            &MacConfig::default(),
            &AccessPolicy::DcfBasic,
            &short(),
            1,
        )
        .unwrap();
        assert!(v.feasible);
    }

    #[test]
    fn overload_is_infeasible() {
        let t = single_link();
        let mac = MacConfig::default();
        let sat = mac.solo_saturation_pps(&t.links[0]);
        let v = is_feasible(&t, &[2.0 * sat], &mac, &AccessPolicy::DcfBasic, &short(), 1).unwrap();
        assert!(!v.feasible);
        assert!(v.min_ratio() < 0.6);
    }

    #[test]
    fn half_saturation_is_feasible() {
        let t = single_link();
        let mac = MacConfig::default();
        let sat = mac.solo_saturation_pps(&t.links[0]);
        let v = is_feasible(&t, &[0.5 * sat], &mac, &AccessPolicy::DcfBasic, &short(), 1).unwrap();
        assert!(v.feasible, "{v:?}");
    }

    #[test]
    fn rejects_bad_rates() {
        let t = single_link();
        let mac = MacConfig::default();
        let p = AccessPolicy::DcfBasic;
        assert!(is_feasible(&t, &[-1.0], &mac, &p, &short(), 1).is_err());
        assert!(is_feasible(&t, &[1.0, 2.0], &mac, &p, &short(), 1).is_err());
    }

    #[test]
    fn growth_fit() {
        let rising: Vec<(u64, usize)> = (0..11).map(|i| (i * 10, i as usize * 2)).collect();
        assert!((fitted_growth(&rising) - 20.0).abs() < 1e-9);
        assert_eq!(fitted_growth(&[(0, 5)]), 0.0);
    }

    #[test]
    fn single_flow_reaches_saturation() {
        let t = single_link();
        let mac = MacConfig::default();
        let opts = OracleOptions {
            feasibility: short(),
            ..OracleOptions::default()
        };
        let s = maxmin_oracle(&t, &mac, &AccessPolicy::DcfBasic, &opts).unwrap();
        let sat = mac.solo_saturation_pps(&t.links[0]);
        assert!(
            (s.rates[0] - sat).abs() <= 0.03 * sat,
            "{} vs {sat}",
            s.rates[0]
        );
        assert_eq!(s.groups, vec![vec![0]]);
    }

    #[test]
    fn cache_hits_skip_the_search() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.json");
        let t = single_link();
        let mac = MacConfig::default();
        let opts = OracleOptions {
            tol_r: 50.0,
            feasibility: FeasibilityOptions::with_horizon(1_000_000),
            ..OracleOptions::default()
        };
        let a = cached_maxmin_oracle(&path, &t, &mac, &AccessPolicy::DcfBasic, &opts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(&scenario_hash(&t, &mac, &AccessPolicy::DcfBasic, &opts)));
        let b = cached_maxmin_oracle(&path, &t, &mac, &AccessPolicy::DcfBasic, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hash_depends_on_inputs() {
        let t = single_link();
        let mac = MacConfig::default();
        let opts = OracleOptions::default();
        let a = scenario_hash(&t, &mac, &AccessPolicy::DcfBasic, &opts);
        let b = scenario_hash(&t, &mac, &AccessPolicy::priority_default(), &opts);
        assert_ne!(a, b);
        assert_eq!(a, scenario_hash(&t, &mac, &AccessPolicy::DcfBasic, &opts));
    }

    #[test]
    fn empty_flow_set_is_rejected() {
        let t = single_link().without_flows(&["f"]);
        assert!(maxmin_oracle(
            &t,
            &MacConfig::default(),
            &AccessPolicy::DcfBasic,
            &OracleOptions::default()
        )
        .is_err());
    }
}
