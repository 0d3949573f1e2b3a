//! Discrete-event simulator of a CSMA/CA MAC over a [`Topology`].
//!
//! Time is an integer count of microseconds. Each node runs one MAC that
//! serves its outgoing links' FIFO queues round-robin; the packet at the
//! head of the MAC contends with slotted backoff, defers while any sensed
//! node is on the air, and is acknowledged unless a coupled transmitter
//! overlapped the data frame at the receiver.

mod config;
mod engine;
mod probes;

use serde::{Deserialize, Serialize};

use crate::topo::LinkId;

pub use config::{AccessPolicy, AttemptLoss, MacConfig, PriorityLevel};
pub use engine::run_iteration;
pub use probes::{
    backlogged_pair_run, lir_measurement, path_capacity_probe, PairMode, PairThroughput, PathProbe,
    PathProbeLink,
};

pub const DEFAULT_QUEUE_CAPACITY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Evenly spaced arrivals with a random initial phase.
    #[default]
    Deterministic,
    Poisson,
    /// Gaps drawn uniformly between half and one and a half periods.
    Jittered,
    /// The queue never runs dry; `rate` is ignored.
    Backlogged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkLoad {
    pub link: LinkId,
    /// Packets per second.
    pub rate: f64,
    pub process: ArrivalProcess,
    pub queue_capacity: usize,
    /// Whether this link's packets count towards a per-link quota.
    pub in_quota: bool,
}

impl LinkLoad {
    pub fn new(link: LinkId, rate: f64) -> Self {
        Self {
            link,
            rate,
            process: ArrivalProcess::Deterministic,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            in_quota: true,
        }
    }

    pub fn backlogged(link: LinkId) -> Self {
        Self {
            process: ArrivalProcess::Backlogged,
            ..Self::new(link, 0.0)
        }
    }

    pub fn with_process(mut self, process: ArrivalProcess) -> Self {
        self.process = process;
        self
    }

    /// Keep the link loaded without waiting for it to meet a quota.
    pub fn background(mut self) -> Self {
        self.in_quota = false;
        self
    }

    pub(crate) fn is_active(&self) -> bool {
        self.process == ArrivalProcess::Backlogged || self.rate > 0.0
    }
}

/// When a run ends, and which part of it is observed for feasibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopRule {
    /// Stop once every loaded link has finished this many packets
    /// (successes plus MAC drops) inside the observation window.
    pub per_link_quota: Option<u64>,
    /// Hard end of the run. Reaching it with quotas unmet marks the run truncated.
    pub time_cap_us: u64,
    /// Start of the observation window.
    pub warmup_us: u64,
    /// Spacing of queue-occupancy samples inside the window; 0 disables them.
    pub queue_sample_us: u64,
}

impl StopRule {
    pub fn quota(per_link_quota: u64, time_cap_us: u64) -> Self {
        Self {
            per_link_quota: Some(per_link_quota),
            time_cap_us,
            warmup_us: 0,
            queue_sample_us: 0,
        }
    }

    /// Packets finishing before `warmup_us` are neither recorded nor counted
    /// towards the quota.
    pub fn with_warmup(mut self, warmup_us: u64) -> Self {
        self.warmup_us = warmup_us;
        self
    }

    /// A fixed-length run observed after `warmup_us`.
    pub fn horizon(horizon_us: u64, warmup_us: u64) -> Self {
        Self {
            per_link_quota: None,
            time_cap_us: horizon_us,
            warmup_us,
            queue_sample_us: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PacketOutcome {
    Success {
        /// Dequeue into the MAC through receipt of the acknowledgment.
        service_us: u64,
        queue_delay_us: u64,
        bytes: u32,
        rate_bps: f64,
        attempts: u32,
    },
    Drop {
        /// Dequeue into the MAC through the end of the last failed attempt.
        time_in_mac_us: u64,
        attempts: u32,
    },
}

/// Counts restricted to the observation window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowStats {
    pub arrivals: u64,
    pub delivered: u64,
    pub drops: u64,
    pub overflows: u64,
    /// (time µs, packets waiting) samples.
    pub queue_samples: Vec<(u64, usize)>,
    pub max_queue: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkMeasurements {
    /// Chronological per-packet results inside the observation window.
    pub outcomes: Vec<PacketOutcome>,
    pub successes: u64,
    pub mac_drops: u64,
    pub attempts: u64,
    /// Arrivals admitted to the queue (for backlogged links: packets taken).
    pub accepted: u64,
    /// Arrivals discarded because the queue was full.
    pub overflows: u64,
    /// Packets still queued or inside the MAC when the run ended.
    pub residual: u64,
    /// Airtime spent sending data frames.
    pub tx_airtime_us: u64,
    /// Time the transmitter sensed the medium busy.
    pub busy_us: u64,
    pub window: WindowStats,
}

impl LinkMeasurements {
    /// Service times of successful packets, µs.
    pub fn service_samples(&self) -> impl Iterator<Item = u64> + '_ {
        self.outcomes.iter().filter_map(|o| match o {
            PacketOutcome::Success { service_us, .. } => Some(*service_us),
            PacketOutcome::Drop { .. } => None,
        })
    }

    pub fn finished(&self) -> u64 {
        self.successes + self.mac_drops
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationMeasurements {
    pub links: Vec<LinkMeasurements>,
    pub duration_us: u64,
    pub truncated: bool,
    pub window_us: u64,
}

impl IterationMeasurements {
    pub fn link(&self, id: LinkId) -> &LinkMeasurements {
        &self.links[id.0]
    }

    /// Delivered packets per second over the whole run.
    pub fn throughput(&self, id: LinkId) -> f64 {
        if self.duration_us == 0 {
            return 0.0;
        }
        self.link(id).successes as f64 * 1e6 / self.duration_us as f64
    }
}
