use crate::error::{Error, Result};
use crate::topo::{LinkId, LirMeasurement, Topology};

use super::{run_iteration, AccessPolicy, LinkLoad, MacConfig, StopRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    SoloA,
    SoloB,
    Simultaneous,
}

/// Delivered throughput of each link of a pair, packets/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairThroughput {
    pub a: f64,
    pub b: f64,
}

/// Saturates the selected links of a pair for `horizon_us`; everything else is silent.
#[allow(clippy::too_many_arguments)]
pub fn backlogged_pair_run(
    topo: &Topology,
    link_a: LinkId,
    link_b: LinkId,
    mode: PairMode,
    mac: &MacConfig,
    policy: &AccessPolicy,
    horizon_us: u64,
    seed: u64,
) -> Result<PairThroughput> {
    let loads: Vec<LinkLoad> = match mode {
        PairMode::SoloA => vec![LinkLoad::backlogged(link_a)],
        PairMode::SoloB => vec![LinkLoad::backlogged(link_b)],
        PairMode::Simultaneous => vec![LinkLoad::backlogged(link_a), LinkLoad::backlogged(link_b)],
    };
    let m = run_iteration(
        topo,
        &loads,
        mac,
        policy,
        StopRule::horizon(horizon_us, 0),
        seed,
    )?;
    Ok(PairThroughput {
        a: m.throughput(link_a),
        b: m.throughput(link_b),
    })
}

/// The three backlogged runs behind a link interference ratio.
pub fn lir_measurement(
    topo: &Topology,
    link_a: LinkId,
    link_b: LinkId,
    mac: &MacConfig,
    policy: &AccessPolicy,
    horizon_us: u64,
    seed: u64,
) -> Result<LirMeasurement> {
    let run = |mode| backlogged_pair_run(topo, link_a, link_b, mode, mac, policy, horizon_us, seed);
    let solo_a = run(PairMode::SoloA)?;
    let solo_b = run(PairMode::SoloB)?;
    let both = run(PairMode::Simultaneous)?;
    Ok(LirMeasurement {
        c11: solo_a.a,
        c22: solo_b.b,
        c31: both.a,
        c32: both.b,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathProbeLink {
    pub link: LinkId,
    /// 1/S̄ of the probe packets, packets/s.
    pub service_rate: f64,
    /// Background arrival rate already carried by the link, packets/s.
    pub lambda: f64,
}

impl PathProbeLink {
    pub fn capacity(&self) -> f64 {
        self.service_rate - self.lambda
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathProbe {
    /// Smallest per-link capacity along the path, packets/s.
    pub capacity: f64,
    pub bottleneck: LinkId,
    pub links: Vec<PathProbeLink>,
    pub truncated: bool,
}

/// Sends `quota` back-to-back packets over each path link in turn, with the
/// background loads running, and reports the bottleneck of 1/S̄ − λ.
///
/// A background load on a probed link is replaced by the probe for that run;
/// its rate is what λ subtracts.
pub fn path_capacity_probe(
    topo: &Topology,
    path: &[LinkId],
    background: &[LinkLoad],
    quota: u64,
    mac: &MacConfig,
    policy: &AccessPolicy,
    seed: u64,
) -> Result<PathProbe> {
    if path.is_empty() {
        return Err(Error::Config("probe path is empty".into()));
    }
    for hop in path.windows(2) {
        if topo.link(hop[0]).rx != topo.link(hop[1]).tx {
            return Err(Error::Config(format!(
                "probe path is not connected at {} -> {}",
                topo.link_name(hop[0]),
                topo.link_name(hop[1])
            )));
        }
    }
    let mut links = Vec::with_capacity(path.len());
    let mut truncated = false;
    for (i, &link) in path.iter().enumerate() {
        let lambda = background
            .iter()
            .filter(|b| b.link == link)
            .map(|b| b.rate)
            .sum();
        let mut loads: Vec<LinkLoad> = background
            .iter()
            .filter(|b| b.link != link)
            .map(|b| b.clone().background())
            .collect();
        loads.push(LinkLoad::backlogged(link));
        let cap = quota * 20 * mac.uncontended_service_us(topo.link(link)).ceil() as u64;
        let m = run_iteration(
            topo,
            &loads,
            mac,
            policy,
            StopRule::quota(quota, cap),
            seed.wrapping_add(i as u64),
        )?;
        truncated |= m.truncated;
        let samples: Vec<u64> = m.link(link).service_samples().collect();
        let service_rate = if samples.is_empty() {
            0.0
        } else {
            1e6 * samples.len() as f64 / samples.iter().sum::<u64>() as f64
        };
        links.push(PathProbeLink {
            link,
            service_rate,
            lambda,
        });
    }
    let worst = links
        .iter()
        .min_by(|a, b| a.capacity().total_cmp(&b.capacity()))
        .expect("path is nonempty");
    Ok(PathProbe {
        capacity: worst.capacity(),
        bottleneck: worst.link,
        truncated,
        links: links.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::{FlowSpec, Node, Relation};

    fn two_pairs(senses: &[(u32, u32)]) -> Topology {
        Topology::with_flow_links(
            (1..=4).map(|id| Node { id, pos: None }).collect(),
            vec![],
            vec![
                FlowSpec::new("a", vec![1, 2]),
                FlowSpec::new("b", vec![3, 4]),
            ],
            Relation::from_pairs(senses.iter().copied()),
            Relation::new(),
        )
        .unwrap()
    }

    const HORIZON: u64 = 5_000_000;

    #[test]
    fn solo_matches_saturation_closed_form() {
        let t = two_pairs(&[]);
        let mac = MacConfig::default();
        let r = backlogged_pair_run(
            &t,
            LinkId(0),
            LinkId(1),
            PairMode::SoloA,
            &mac,
            &AccessPolicy::DcfBasic,
            HORIZON,
            1,
        )
        .unwrap();
        let expect = mac.solo_saturation_pps(&t.links[0]);
        assert!((r.a - expect).abs() / expect < 0.02, "{} vs {expect}", r.a);
        assert_eq!(r.b, 0.0);
    }

    #[test]
    fn independent_pair_keeps_solo_rates() {
        let t = two_pairs(&[]);
        let mac = MacConfig::default();
        let p = AccessPolicy::DcfBasic;
        let solo = backlogged_pair_run(
            &t,
            LinkId(0),
            LinkId(1),
            PairMode::SoloA,
            &mac,
            &p,
            HORIZON,
            2,
        )
        .unwrap();
        let both = backlogged_pair_run(
            &t,
            LinkId(0),
            LinkId(1),
            PairMode::Simultaneous,
            &mac,
            &p,
            HORIZON,
            2,
        )
        .unwrap();
        assert!((both.a - solo.a).abs() / solo.a < 0.05);
    }

    #[test]
    fn shared_channel_pair_splits_capacity() {
        let t = two_pairs(&[(1, 3), (1, 4), (2, 3), (2, 4)]);
        let mac = MacConfig::default();
        let p = AccessPolicy::DcfBasic;
        let a = backlogged_pair_run(
            &t,
            LinkId(0),
            LinkId(1),
            PairMode::SoloA,
            &mac,
            &p,
            HORIZON,
            3,
        )
        .unwrap();
        let b = backlogged_pair_run(
            &t,
            LinkId(0),
            LinkId(1),
            PairMode::SoloB,
            &mac,
            &p,
            HORIZON,
            3,
        )
        .unwrap();
        let both = backlogged_pair_run(
            &t,
            LinkId(0),
            LinkId(1),
            PairMode::Simultaneous,
            &mac,
            &p,
            HORIZON,
            3,
        )
        .unwrap();
        // Overlapping backoffs shorten idle time, so the pair can beat one
        // station, but never the back-to-back exchange rate.
        let ceiling = 1e6 / (mac.difs_us + mac.exchange_us(&t.links[0])) as f64;
        assert!(both.a + both.b <= ceiling);
        assert!(both.a + both.b < 1.2 * a.a.max(b.b));
        let share = both.a / (both.a + both.b);
        assert!((share - 0.5).abs() < 0.05, "share {share}");
    }

    #[test]
    fn probe_on_idle_link_is_service_rate() {
        let t = two_pairs(&[]);
        let mac = MacConfig::default();
        let p = path_capacity_probe(&t, &[LinkId(0)], &[], 200, &mac, &AccessPolicy::DcfBasic, 5)
            .unwrap();
        let expect = mac.solo_saturation_pps(&t.links[0]);
        assert!(
            (p.capacity - expect).abs() / expect < 0.05,
            "{}",
            p.capacity
        );
        assert!(!p.truncated);
    }

    #[test]
    fn probe_rejects_broken_path() {
        let t = two_pairs(&[]);
        let err = path_capacity_probe(
            &t,
            &[LinkId(0), LinkId(1)],
            &[],
            10,
            &MacConfig::default(),
            &AccessPolicy::DcfBasic,
            0,
        );
        assert!(err.is_err());
    }
}
