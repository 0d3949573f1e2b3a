use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::topo::Topology;

use super::{
    AccessPolicy, ArrivalProcess, IterationMeasurements, LinkLoad, LinkMeasurements, MacConfig,
    PacketOutcome, StopRule,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Arrival(usize),
    TxStart(usize, u64),
    DataEnd(usize),
    AckStart(usize),
    /// The named node stopped occupying the medium around it.
    Release(usize),
    ExchangeEnd(usize),
    Sample,
}

#[derive(Clone, Copy, Debug)]
enum Phase {
    Idle,
    /// Holding a packet, medium busy, backoff frozen.
    Waiting {
        remaining: u32,
    },
    /// Medium idle: DIFS until `difs_end`, then counting down to `expiry`.
    Counting {
        remaining: u32,
        difs_end: u64,
        expiry: u64,
    },
    Transmitting,
}

#[derive(Clone, Copy, Debug)]
struct InMac {
    link: usize,
    enqueued: u64,
    dequeued: u64,
    attempts: u32,
    stage: u32,
}

#[derive(Clone, Copy, Debug)]
struct ActiveTx {
    rx: usize,
    data_end: u64,
    corrupted: bool,
    acked: bool,
}

struct NodeState {
    links: Vec<usize>,
    rr: usize,
    busy: u32,
    busy_since: u64,
    busy_total: u64,
    phase: Phase,
    gen: u64,
    rng: ChaCha8Rng,
    pkt: Option<InMac>,
    tx: Option<ActiveTx>,
}

struct LinkState {
    tx: usize,
    rx: usize,
    bytes: u32,
    rate_bps: f64,
    data_us: u64,
    ack_us: u64,
    exchange_us: u64,
    load: Option<LinkLoad>,
    queue: VecDeque<u64>,
    next_arrival: f64,
    rng: ChaCha8Rng,
    attempt_index: u64,
    done: bool,
    meas: LinkMeasurements,
}

struct Sim<'a> {
    mac: &'a MacConfig,
    policy: &'a AccessPolicy,
    stop: StopRule,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    nodes: Vec<NodeState>,
    links: Vec<LinkState>,
    sense: Vec<Vec<usize>>,
    coupled: Vec<bool>,
    n_nodes: usize,
    /// (node, end) of frames currently on the air.
    on_air: Vec<(usize, u64)>,
    pending: usize,
}

/// Runs one measurement iteration and returns per-link results.
///
/// Links without a load stay silent. Deterministic for a fixed seed.
pub fn run_iteration(
    topo: &Topology,
    loads: &[LinkLoad],
    mac: &MacConfig,
    policy: &AccessPolicy,
    stop: StopRule,
    seed: u64,
) -> Result<IterationMeasurements> {
    mac.validate()?;
    policy.validate()?;
    if stop.per_link_quota == Some(0) {
        return Err(Error::Config("per-link quota must be at least 1".into()));
    }
    let mut sim = Sim::new(topo, loads, mac, policy, stop, seed)?;
    sim.run();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(
        topo: &Topology,
        loads: &[LinkLoad],
        mac: &'a MacConfig,
        policy: &'a AccessPolicy,
        stop: StopRule,
        seed: u64,
    ) -> Result<Self> {
        let index: BTreeMap<_, _> = topo
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let n_nodes = topo.nodes.len();

        let adjacency = topo.sensing_adjacency();
        let sense = topo
            .nodes
            .iter()
            .map(|n| adjacency[&n.id].iter().map(|m| index[m]).collect())
            .collect();
        let mut coupled = vec![false; n_nodes * n_nodes];
        for (i, a) in topo.nodes.iter().enumerate() {
            for (j, b) in topo.nodes.iter().enumerate() {
                coupled[i * n_nodes + j] = topo.coupled(a.id, b.id);
            }
        }

        let mut nodes: Vec<NodeState> = (0..n_nodes)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                NodeState {
                    links: Vec::new(),
                    rr: 0,
                    busy: 0,
                    busy_since: 0,
                    busy_total: 0,
                    phase: Phase::Idle,
                    gen: 0,
                    rng,
                    pkt: None,
                    tx: None,
                }
            })
            .collect();

        let mut links: Vec<LinkState> = topo
            .links
            .iter()
            .enumerate()
            .map(|(l, link)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((1 << 32) | l as u64);
                LinkState {
                    tx: index[&link.tx],
                    rx: index[&link.rx],
                    bytes: link.packet_size_bytes,
                    rate_bps: link.data_rate_bps,
                    data_us: mac.data_us(link),
                    ack_us: mac.ack_us(link),
                    exchange_us: mac.exchange_us(link),
                    load: None,
                    queue: VecDeque::new(),
                    next_arrival: 0.0,
                    rng,
                    attempt_index: 0,
                    done: false,
                    meas: LinkMeasurements::default(),
                }
            })
            .collect();
        for (l, link) in links.iter().enumerate() {
            nodes[link.tx].links.push(l);
        }

        for load in loads {
            let l = load.link.0;
            let Some(state) = links.get_mut(l) else {
                return Err(Error::InvalidLoad(format!(
                    "load names unknown link {}",
                    load.link
                )));
            };
            if state.load.is_some() {
                return Err(Error::InvalidLoad(format!(
                    "link {} loaded twice",
                    topo.link_name(load.link)
                )));
            }
            if !(load.rate >= 0.0) || !load.rate.is_finite() {
                return Err(Error::InvalidLoad(format!(
                    "link {} has arrival rate {}",
                    topo.link_name(load.link),
                    load.rate
                )));
            }
            if load.queue_capacity == 0 {
                return Err(Error::InvalidLoad(format!(
                    "link {} has zero queue capacity",
                    topo.link_name(load.link)
                )));
            }
            state.load = Some(load.clone());
        }

        let mut sim = Self {
            mac,
            policy,
            stop,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            nodes,
            links,
            sense,
            coupled,
            n_nodes,
            on_air: Vec::new(),
            pending: 0,
        };
        for l in 0..sim.links.len() {
            let Some(load) = sim.links[l].load.clone() else {
                continue;
            };
            if !load.is_active() {
                continue;
            }
            if load.in_quota {
                sim.pending += 1;
            }
            match load.process {
                ArrivalProcess::Backlogged => {}
                ArrivalProcess::Deterministic | ArrivalProcess::Jittered => {
                    let period = 1e6 / load.rate;
                    let phase = sim.links[l].rng.random::<f64>() * period;
                    sim.links[l].next_arrival = phase;
                    sim.push(phase.ceil() as u64, Ev::Arrival(l));
                }
                ArrivalProcess::Poisson => {
                    let first = Exp::new(load.rate / 1e6)
                        .expect("positive rate")
                        .sample(&mut sim.links[l].rng);
                    sim.links[l].next_arrival = first;
                    sim.push(first.ceil() as u64, Ev::Arrival(l));
                }
            }
        }
        if stop.queue_sample_us > 0 {
            sim.push(stop.warmup_us, Ev::Sample);
        }
        for n in 0..sim.n_nodes {
            sim.next_packet(n);
        }
        Ok(sim)
    }

    fn push(&mut self, at: u64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq, ev)));
    }

    fn in_window(&self) -> bool {
        self.now >= self.stop.warmup_us
    }

    fn run(&mut self) -> bool {
        while let Some(&Reverse((t, _, ev))) = self.heap.peek() {
            if t > self.stop.time_cap_us {
                break;
            }
            self.heap.pop();
            debug_assert!(t >= self.now, "event clock ran backwards");
            self.now = t;
            self.handle(ev);
            if self.stop.per_link_quota.is_some() && self.pending == 0 {
                return true;
            }
        }
        self.now = self.stop.time_cap_us;
        false
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Arrival(l) => self.arrival(l),
            Ev::TxStart(n, gen) => self.tx_start(n, gen),
            Ev::DataEnd(n) => {
                let tx = self.nodes[n]
                    .tx
                    .as_mut()
                    .expect("data end without transmission");
                if !tx.corrupted {
                    tx.acked = true;
                    let at = self.now + self.mac.sifs_us;
                    self.push(at, Ev::AckStart(n));
                }
            }
            Ev::AckStart(n) => self.ack_start(n),
            Ev::Release(n) => {
                for i in 0..self.sense[n].len() {
                    let m = self.sense[n][i];
                    self.busy_dec(m);
                }
            }
            Ev::ExchangeEnd(n) => self.exchange_end(n),
            Ev::Sample => {
                let now = self.now;
                for link in &mut self.links {
                    if link.load.as_ref().is_some_and(LinkLoad::is_active) {
                        let w = &mut link.meas.window;
                        w.queue_samples.push((now, link.queue.len()));
                        w.max_queue = w.max_queue.max(link.queue.len());
                    }
                }
                let next = now + self.stop.queue_sample_us;
                if next <= self.stop.time_cap_us {
                    self.push(next, Ev::Sample);
                }
            }
        }
    }

    fn arrival(&mut self, l: usize) {
        let in_window = self.in_window();
        let now = self.now;
        let link = &mut self.links[l];
        let load = link.load.as_ref().expect("arrival on unloaded link");
        let (capacity, rate, process) = (load.queue_capacity, load.rate, load.process);
        if in_window {
            link.meas.window.arrivals += 1;
        }
        if link.queue.len() < capacity {
            link.queue.push_back(now);
            link.meas.accepted += 1;
            if in_window {
                link.meas.window.max_queue = link.meas.window.max_queue.max(link.queue.len());
            }
        } else {
            link.meas.overflows += 1;
            if in_window {
                link.meas.window.overflows += 1;
            }
        }
        link.next_arrival += match process {
            ArrivalProcess::Poisson => Exp::new(rate / 1e6)
                .expect("positive rate")
                .sample(&mut link.rng),
            ArrivalProcess::Jittered => 1e6 / rate * link.rng.random_range(0.5..1.5),
            _ => 1e6 / rate,
        };
        let at = (link.next_arrival.ceil() as u64).max(now);
        self.push(at, Ev::Arrival(l));
        let n = self.links[l].tx;
        if matches!(self.nodes[n].phase, Phase::Idle) {
            self.next_packet(n);
        }
    }

    /// Moves the next queued packet (round-robin over the node's links) into the MAC.
    fn next_packet(&mut self, n: usize) {
        let count = self.nodes[n].links.len();
        for i in 0..count {
            let idx = (self.nodes[n].rr + i) % count;
            let l = self.nodes[n].links[idx];
            let link = &mut self.links[l];
            let enqueued = match link.load.as_ref().map(|d| d.process) {
                Some(ArrivalProcess::Backlogged) => {
                    link.meas.accepted += 1;
                    Some(self.now)
                }
                Some(_) => link.queue.pop_front(),
                None => None,
            };
            if let Some(enqueued) = enqueued {
                self.nodes[n].rr = (idx + 1) % count;
                self.nodes[n].pkt = Some(InMac {
                    link: l,
                    enqueued,
                    dequeued: self.now,
                    attempts: 0,
                    stage: 0,
                });
                let remaining = self.draw_backoff(n);
                self.begin_contention(n, remaining);
                return;
            }
        }
        self.nodes[n].pkt = None;
        self.nodes[n].phase = Phase::Idle;
    }

    fn draw_backoff(&mut self, n: usize) -> u32 {
        let pkt = self.nodes[n].pkt.expect("backoff without a packet");
        let link = &self.links[pkt.link];
        let backlog = match link.load.as_ref() {
            Some(load) if load.process == ArrivalProcess::Backlogged => load.queue_capacity,
            _ => link.queue.len(),
        };
        let cw = self.policy.window(self.mac, pkt.stage, backlog);
        self.nodes[n].rng.random_range(0..=cw)
    }

    fn begin_contention(&mut self, n: usize, remaining: u32) {
        if self.nodes[n].busy == 0 {
            self.start_counting(n, remaining);
        } else {
            self.nodes[n].phase = Phase::Waiting { remaining };
        }
    }

    fn start_counting(&mut self, n: usize, remaining: u32) {
        let difs_end = self.now + self.mac.difs_us;
        let expiry = difs_end + u64::from(remaining) * self.mac.slot_us;
        let node = &mut self.nodes[n];
        node.gen += 1;
        node.phase = Phase::Counting {
            remaining,
            difs_end,
            expiry,
        };
        let gen = node.gen;
        self.push(expiry, Ev::TxStart(n, gen));
    }

    fn busy_inc(&mut self, n: usize) {
        let now = self.now;
        let slot = self.mac.slot_us;
        let node = &mut self.nodes[n];
        node.busy += 1;
        if node.busy != 1 {
            return;
        }
        node.busy_since = now;
        if let Phase::Counting {
            remaining,
            difs_end,
            expiry,
        } = node.phase
        {
            // A countdown ending in this very instant cannot hear the other
            // frame in time: both transmit.
            if expiry == now {
                return;
            }
            let elapsed = if now > difs_end {
                ((now - difs_end) / slot) as u32
            } else {
                0
            };
            node.phase = Phase::Waiting {
                remaining: remaining - elapsed,
            };
            node.gen += 1;
        }
    }

    fn busy_dec(&mut self, n: usize) {
        let node = &mut self.nodes[n];
        node.busy -= 1;
        if node.busy != 0 {
            return;
        }
        node.busy_total += self.now - node.busy_since;
        if let Phase::Waiting { remaining } = node.phase {
            self.start_counting(n, remaining);
        }
    }

    fn coupled(&self, a: usize, b: usize) -> bool {
        self.coupled[a * self.n_nodes + b]
    }

    /// Marks receptions in progress that a new frame from `src` would corrupt.
    fn corrupt_receptions_from(&mut self, src: usize, skip: usize) {
        let now = self.now;
        for m in 0..self.n_nodes {
            if m == skip {
                continue;
            }
            if let Some(tx) = self.nodes[m].tx {
                if tx.data_end > now && self.coupled(src, tx.rx) {
                    self.nodes[m].tx.as_mut().unwrap().corrupted = true;
                }
            }
        }
    }

    fn tx_start(&mut self, n: usize, gen: u64) {
        if self.nodes[n].gen != gen || !matches!(self.nodes[n].phase, Phase::Counting { .. }) {
            return;
        }
        let now = self.now;
        let mut pkt = self.nodes[n].pkt.expect("transmission without a packet");
        pkt.attempts += 1;
        self.nodes[n].pkt = Some(pkt);
        let l = pkt.link;
        let (rx, data_us, exchange_us) = (
            self.links[l].rx,
            self.links[l].data_us,
            self.links[l].exchange_us,
        );
        let injected = self
            .mac
            .attempt_loss
            .is_some_and(|loss| loss.is_lost(self.links[l].attempt_index));
        self.links[l].attempt_index += 1;
        self.links[l].meas.attempts += 1;
        self.links[l].meas.tx_airtime_us += data_us;

        self.on_air.retain(|&(_, end)| end > now);
        let overlapped = self.on_air.iter().any(|&(y, _)| self.coupled(y, rx));
        self.corrupt_receptions_from(n, n);
        self.on_air.push((n, now + data_us));
        self.nodes[n].tx = Some(ActiveTx {
            rx,
            data_end: now + data_us,
            corrupted: injected || overlapped,
            acked: false,
        });
        self.nodes[n].phase = Phase::Transmitting;
        for i in 0..self.sense[n].len() {
            let m = self.sense[n][i];
            self.busy_inc(m);
        }
        self.push(now + data_us + self.mac.propagation_us, Ev::DataEnd(n));
        self.push(now + exchange_us, Ev::Release(n));
        self.push(now + exchange_us, Ev::ExchangeEnd(n));
    }

    fn ack_start(&mut self, n: usize) {
        let now = self.now;
        let l = self.nodes[n].pkt.expect("ack without a packet").link;
        let rx = self.links[l].rx;
        let end = now + self.links[l].ack_us;
        self.on_air.retain(|&(_, e)| e > now);
        self.corrupt_receptions_from(rx, n);
        self.on_air.push((rx, end));
        for i in 0..self.sense[rx].len() {
            let m = self.sense[rx][i];
            self.busy_inc(m);
        }
        self.push(end, Ev::Release(rx));
    }

    fn exchange_end(&mut self, n: usize) {
        let now = self.now;
        let tx = self.nodes[n]
            .tx
            .take()
            .expect("exchange end without transmission");
        let mut pkt = self.nodes[n].pkt.expect("exchange end without a packet");
        let l = pkt.link;
        let in_window = self.in_window();
        let outcome = if tx.acked {
            Some(PacketOutcome::Success {
                service_us: now - pkt.dequeued,
                queue_delay_us: pkt.dequeued - pkt.enqueued,
                bytes: self.links[l].bytes,
                rate_bps: self.links[l].rate_bps,
                attempts: pkt.attempts,
            })
        } else if self.mac.retransmit_limit.is_some_and(|m| pkt.attempts >= m) {
            Some(PacketOutcome::Drop {
                time_in_mac_us: now - pkt.dequeued,
                attempts: pkt.attempts,
            })
        } else {
            None
        };
        match outcome {
            Some(outcome) => {
                let meas = &mut self.links[l].meas;
                match outcome {
                    PacketOutcome::Success { .. } => {
                        meas.successes += 1;
                        if in_window {
                            meas.window.delivered += 1;
                        }
                    }
                    PacketOutcome::Drop { .. } => {
                        meas.mac_drops += 1;
                        if in_window {
                            meas.window.drops += 1;
                        }
                    }
                }
                if in_window {
                    meas.outcomes.push(outcome);
                }
                if let Some(quota) = self.stop.per_link_quota {
                    let link = &mut self.links[l];
                    let active = link
                        .load
                        .as_ref()
                        .is_some_and(|d| d.is_active() && d.in_quota);
                    if active && !link.done && link.meas.outcomes.len() as u64 >= quota {
                        link.done = true;
                        self.pending -= 1;
                    }
                }
                self.nodes[n].pkt = None;
                self.next_packet(n);
            }
            None => {
                pkt.stage += 1;
                self.nodes[n].pkt = Some(pkt);
                let remaining = self.draw_backoff(n);
                self.begin_contention(n, remaining);
            }
        }
    }

    fn finish(mut self) -> IterationMeasurements {
        let end = self.now;
        let truncated = self.stop.per_link_quota.is_some() && self.pending > 0;
        for node in &mut self.nodes {
            if node.busy > 0 {
                node.busy_total += end - node.busy_since;
            }
        }
        for n in 0..self.n_nodes {
            if let Some(pkt) = self.nodes[n].pkt {
                self.links[pkt.link].meas.residual += 1;
            }
        }
        let links = self
            .links
            .into_iter()
            .map(|mut link| {
                link.meas.residual += link.queue.len() as u64;
                link.meas.busy_us = self.nodes[link.tx].busy_total;
                link.meas
            })
            .collect();
        IterationMeasurements {
            links,
            duration_us: end,
            truncated,
            window_us: end.saturating_sub(self.stop.warmup_us),
        }
    }
}
