use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topo::Link;

/// MAC timing and contention parameters. Durations in microseconds,
/// windows in slots, headers in bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Total transmission attempts per packet before a MAC drop; `None` retries forever.
    pub retransmit_limit: Option<u32>,
    pub phy_header_bytes: u32,
    pub mac_header_bytes: u32,
    pub ack_bytes: u32,
    pub propagation_us: u64,
    /// Deterministic injected loss of data attempts, applied to every link.
    pub attempt_loss: Option<AttemptLoss>,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            slot_us: 20,
            sifs_us: 10,
            difs_us: 50,
            cw_min: 31,
            cw_max: 1023,
            retransmit_limit: None,
            phy_header_bytes: 16,
            mac_header_bytes: 34,
            ack_bytes: 14 + 16,
            propagation_us: 1,
            attempt_loss: None,
        }
    }
}

/// Of every `period` consecutive attempts on a link, the first `burst` fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptLoss {
    pub period: u32,
    pub burst: u32,
}

impl AttemptLoss {
    pub fn is_lost(&self, attempt_index: u64) -> bool {
        attempt_index % u64::from(self.period) < u64::from(self.burst)
    }

    pub fn fraction(&self) -> f64 {
        f64::from(self.burst) / f64::from(self.period)
    }
}

fn airtime_us(bytes: u32, rate_bps: f64) -> u64 {
    (f64::from(bytes) * 8.0 * 1e6 / rate_bps).ceil() as u64
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cw_min > self.cw_max {
            return Err(Error::InvalidMac(format!(
                "cw_min {} exceeds cw_max {}",
                self.cw_min, self.cw_max
            )));
        }
        if self.slot_us == 0 || self.sifs_us == 0 || self.difs_us == 0 || self.propagation_us == 0 {
            return Err(Error::InvalidMac("durations must be positive".into()));
        }
        if self.retransmit_limit == Some(0) {
            return Err(Error::InvalidMac(
                "retransmit limit must allow one attempt".into(),
            ));
        }
        if let Some(loss) = self.attempt_loss {
            if loss.period == 0 || loss.burst >= loss.period {
                return Err(Error::InvalidMac(format!(
                    "attempt loss burst {} must be below period {}",
                    loss.burst, loss.period
                )));
            }
        }
        Ok(())
    }

    /// Data frame airtime including PHY and MAC headers.
    pub fn data_us(&self, link: &Link) -> u64 {
        airtime_us(
            self.phy_header_bytes + self.mac_header_bytes + link.packet_size_bytes,
            link.data_rate_bps,
        )
    }

    pub fn ack_us(&self, link: &Link) -> u64 {
        airtime_us(self.ack_bytes, link.data_rate_bps)
    }

    /// DATA, propagation, SIFS, ACK, propagation.
    pub fn exchange_us(&self, link: &Link) -> u64 {
        self.data_us(link) + self.sifs_us + self.ack_us(link) + 2 * self.propagation_us
    }

    /// Contention window for a retry stage under plain binary exponential backoff.
    pub fn window(&self, stage: u32) -> u32 {
        window(self.cw_min, self.cw_max, stage)
    }

    /// Expected service time of a packet that succeeds first time with no
    /// competing traffic: DIFS, mean initial backoff and one exchange.
    pub fn uncontended_service_us(&self, link: &Link) -> f64 {
        self.difs_us as f64
            + f64::from(self.cw_min) / 2.0 * self.slot_us as f64
            + self.exchange_us(link) as f64
    }

    /// Saturation throughput of a lone station, packets/s.
    pub fn solo_saturation_pps(&self, link: &Link) -> f64 {
        1e6 / self.uncontended_service_us(link)
    }

    /// Largest backoff window in slots, the W_m of lost-packet accounting.
    pub fn largest_window(&self) -> u32 {
        self.cw_max
    }
}

pub(crate) fn window(cw_min: u32, cw_max: u32, stage: u32) -> u32 {
    let grown = (u64::from(cw_min) + 1) << stage.min(32);
    (grown - 1).min(u64::from(cw_max)) as u32
}

/// How a node picks its contention window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AccessPolicy {
    /// Binary exponential backoff from the MAC configuration's window pair.
    #[default]
    DcfBasic,
    /// Window pair chosen by the queue length behind the head-of-line
    /// packet; deeper queues map to more aggressive windows.
    PriorityRandomAccess { levels: Vec<PriorityLevel> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityLevel {
    /// Smallest backlog (packets waiting behind the head) that selects this level.
    pub min_queue: usize,
    pub cw_min: u32,
    pub cw_max: u32,
}

impl AccessPolicy {
    pub fn priority_default() -> Self {
        Self::PriorityRandomAccess {
            levels: vec![
                PriorityLevel {
                    min_queue: 0,
                    cw_min: 63,
                    cw_max: 1023,
                },
                PriorityLevel {
                    min_queue: 4,
                    cw_min: 31,
                    cw_max: 1023,
                },
                PriorityLevel {
                    min_queue: 16,
                    cw_min: 15,
                    cw_max: 1023,
                },
            ],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DcfBasic => "dcf_basic",
            Self::PriorityRandomAccess { .. } => "priority_random_access",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self::PriorityRandomAccess { levels } = self else {
            return Ok(());
        };
        if levels.first().map(|l| l.min_queue) != Some(0) {
            return Err(Error::InvalidMac(
                "priority levels must start at min_queue 0".into(),
            ));
        }
        for pair in levels.windows(2) {
            if pair[1].min_queue <= pair[0].min_queue {
                return Err(Error::InvalidMac(
                    "priority levels must have increasing min_queue".into(),
                ));
            }
        }
        for l in levels {
            if l.cw_min > l.cw_max {
                return Err(Error::InvalidMac(format!(
                    "priority level at {} has cw_min {} above cw_max {}",
                    l.min_queue, l.cw_min, l.cw_max
                )));
            }
        }
        Ok(())
    }

    /// Window for the given retry stage when `backlog` packets wait behind the head.
    pub fn window(&self, mac: &MacConfig, stage: u32, backlog: usize) -> u32 {
        match self {
            Self::DcfBasic => mac.window(stage),
            Self::PriorityRandomAccess { levels } => {
                let level = levels
                    .iter()
                    .rev()
                    .find(|l| backlog >= l.min_queue)
                    .unwrap_or(&levels[0]);
                window(level.cw_min, level.cw_max, stage)
            }
        }
    }
}
